"""Shared iteration driver for IVA-G-V and the four constrained variants."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .constraints import (
    LAGRANGIAN_VARIANTS,
    VARIANTS,
    ConstraintSettings,
    ConstraintState,
    RegularizerSettings,
    j_ref_value,
    paired_eps,
    eps_matrix,
    penalty_value,
)
from .core import (
    CrossCovarianceCache,
    DatasetCollection,
    DemixingSet,
    ProjectedReferences,
    ReferenceSet,
    build_cross_covariance_cache,
    center_datasets,
    random_init,
    scv_covariances,
)
from .errors import (
    ConfigError,
    DegenerateDemixingError,
    IllConditionedModelError,
    NumericalFailureError,
)
from .iva_g import LOG_2PI, SolverSettings, convergence_value, logabsdet_W, sigma_inverses
from .report import RunReport

logger = logging.getLogger(__name__)

VARIANT_CODES = {
    "iva-g-v": kernels.IVA_G,
    "civa-fixed": kernels.FIXED,
    "pt-civa": kernels.PT,
    "ar-civa": kernels.AR,
    "tf-civa": kernels.TF,
}


@dataclass(frozen=True)
class Problem:
    """Centered data plus everything precomputed from the samples."""

    data: DatasetCollection
    cache: CrossCovarianceCache
    proj: ProjectedReferences
    refs: Optional[ReferenceSet]
    cache_time: float = 0.0

    @property
    def dims(self):
        return self.data.dims

    def with_references(self, refs: Optional[ReferenceSet]) -> "Problem":
        N, K, _ = self.data.dims
        t0 = time.perf_counter()
        proj = refs.project(self.data) if refs is not None and refs.M else ProjectedReferences.empty(K, N)
        return Problem(self.data, self.cache, proj, refs, self.cache_time + time.perf_counter() - t0)


def make_problem(data: DatasetCollection, refs: Optional[ReferenceSet] = None) -> Problem:
    t0 = time.perf_counter()
    if not data.centered:
        data = center_datasets(data)
    cache = build_cross_covariance_cache(data)
    N, K, _ = data.dims
    proj = refs.project(data) if refs is not None and refs.M else ProjectedReferences.empty(K, N)
    return Problem(data, cache, proj, refs, time.perf_counter() - t0)


def iva_cost_at_ml(W: np.ndarray, S: np.ndarray, ridge_rel: float) -> float:
    """Gaussian IVA cost when ``S`` is the ML covariance of ``W``; skips the
    cache contraction because the quadratic term is ``trace(S^-1 S)``."""
    N, K, _ = S.shape
    inv, logdet, _ = sigma_inverses(S, ridge_rel)
    quad = np.einsum("nkl,nkl->", inv, S)
    return float(0.5 * N * K * LOG_2PI + 0.5 * logdet.sum() + 0.5 * quad - logabsdet_W(W).sum())


def full_objective(variant, W, S, problem: Problem, state=None, lam=0.0, ridge_rel=1e-9) -> float:
    J = iva_cost_at_ml(W, S, ridge_rel)
    if variant in LAGRANGIAN_VARIANTS:
        J += penalty_value(state, paired_eps(W, problem.cache, problem.proj))
    elif variant == "tf-civa":
        J += 0.5 * lam * j_ref_value(W, problem.cache, problem.proj)
    return J


def initial_thresholds(variant: str, state: ConstraintState, eps: np.ndarray) -> None:
    """First threshold selection, made before any gradient uses ``rho``."""
    P = state.thresholds
    sel = kernels._numpy
    M, K = eps.shape
    if variant == "pt-civa":
        for n in range(M):
            state.rho[n, :] = sel.select_pt(P, eps[n])
    elif variant == "ar-civa":
        for n in range(M):
            for k in range(K):
                state.rho[n, k] = sel.select_argmin(P, eps[n, k])


def solve(
    variant: str,
    data,
    refs: Optional[ReferenceSet] = None,
    settings: Optional[SolverSettings] = None,
    constraint: Optional[ConstraintSettings] = None,
    regularizer: Optional[RegularizerSettings] = None,
    init: Optional[DemixingSet] = None,
    backend: Optional[str] = None,
    record_traces: bool = True,
) -> RunReport:
    """Run ``variant`` on ``data`` (a :class:`DatasetCollection` or a prepared
    :class:`Problem`) and return the report.

    Numerical failures raise; running out of iterations does not, it is
    flagged through ``converged=False``.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    settings = settings or SolverSettings()
    settings.validate()
    t_start = time.perf_counter()

    if isinstance(data, Problem):
        problem = data if refs is None or refs is data.refs else data.with_references(refs)
    else:
        problem = make_problem(data, refs)
    N, K, V = problem.dims
    M = problem.proj.M
    if variant != "iva-g-v" and M < 1:
        raise ConfigError(f"{variant} needs at least one reference signal")

    if init is None:
        init = random_init(N, K, settings.seed)
    if init.matrices.shape != (K, N, N):
        raise ConfigError(f"initial demixing set has shape {init.matrices.shape}, want {(K, N, N)}")
    W = np.ascontiguousarray(init.matrices, dtype=np.float64).copy()
    S = np.ascontiguousarray(scv_covariances(DemixingSet(W), problem.cache).covariances).copy()

    lagrangian = variant in LAGRANGIAN_VARIANTS
    if lagrangian:
        constraint = constraint or ConstraintSettings.defaults(variant)
        state = ConstraintState.initial(M, K, constraint)
        initial_thresholds(variant, state, paired_eps(W, problem.cache, problem.proj))
    else:
        state = ConstraintState.initial(0 if variant == "iva-g-v" else M, K, ConstraintSettings())
    lam = 0.0
    if variant == "tf-civa":
        regularizer = regularizer or RegularizerSettings()
        lam = float(regularizer.lam)

    kern = kernels.get_backend(backend)
    backend_name = "numba" if kern is getattr(kernels, "_numba", None) else "numpy"
    R = problem.cache.blocks
    B = np.ascontiguousarray(problem.proj.B) if variant != "iva-g-v" else np.zeros((K, 0, N))
    rr = np.ascontiguousarray(problem.proj.rr) if variant != "iva-g-v" else np.zeros(0)
    grid = np.ascontiguousarray(state.thresholds)
    code = VARIANT_CODES[variant]

    eta = float(settings.eta0)
    obj_prev = full_objective(variant, W, S, problem, state, lam, settings.ridge_rel)
    objectives = [obj_prev]
    etas = [eta]
    decay_events = []
    mu_tr, rho_tr, sch_tr = [], [], []
    ridge_events = 0
    switch_events = 0
    converged = False
    sweep_time = 0.0
    it = 0
    for it in range(1, int(settings.max_iters) + 1):
        W_prev = W.copy()
        t0 = time.perf_counter()
        try:
            status, n_ridge, n_switch = kern.sweep(
                W, S, R, B, rr, code, eta, state.gamma, state.mu_max, lam,
                state.mu, state.rho, state.scheme, grid, settings.ridge_rel,
            )
        except np.linalg.LinAlgError as exc:
            raise DegenerateDemixingError(f"singular demixing matrix at sweep {it}") from exc
        if status == kernels.STATUS_ILL_CONDITIONED:
            raise IllConditionedModelError(f"SCV covariance singular at sweep {it}")
        if status == kernels.STATUS_NONFINITE:
            raise NumericalFailureError(f"non-finite gradient at sweep {it}")
        ridge_events += int(n_ridge)
        switch_events += int(n_switch)
        obj = full_objective(variant, W, S, problem, state, lam, settings.ridge_rel)
        sweep_time += time.perf_counter() - t0
        if not np.isfinite(obj):
            raise NumericalFailureError(f"non-finite objective at sweep {it}")
        if not obj < obj_prev:
            eta *= settings.decay
            decay_events.append(it)
        obj_prev = obj
        objectives.append(obj)
        etas.append(eta)
        if record_traces and M and variant != "iva-g-v" and lagrangian:
            mu_tr.append(state.mu.copy())
            rho_tr.append(state.rho.copy())
            sch_tr.append(state.scheme.copy())
        if convergence_value(W_prev, W) < settings.tol:
            converged = True
            break

    if not converged:
        logger.info("%s did not converge in %d sweeps", variant, settings.max_iters)

    report = RunReport(
        variant=variant,
        seed=int(settings.seed),
        iterations=it,
        converged=converged,
        status="converged" if converged else "max_iters",
        W=W,
        Sigma=S,
        objective_trace=np.asarray(objectives),
        eta_trace=np.asarray(etas),
        decay_events=decay_events,
        final_objective=float(objectives[-1]),
        cache_time=float(problem.cache_time),
        time_per_iter=sweep_time / max(it, 1),
        backend=backend_name,
        ridge_events=ridge_events,
        switch_events=switch_events,
        config={
            "solver": settings.to_dict(),
            "constraint": constraint.to_dict() if lagrangian else None,
            "regularizer": regularizer.to_dict() if variant == "tf-civa" else None,
            "N": N, "K": K, "V": V, "M": M,
        },
    )
    if variant != "iva-g-v":
        E = eps_matrix(W, problem.cache, problem.proj)
        idx = np.arange(M)
        eps = E[idx, idx, :]
        report.eps_final = eps
        if M > 1:
            # eps(r_n, y_m) for m != n, m < M
            cross = E[:, :M, :].copy()
            cross[idx, idx, :] = -np.inf
            report.ordering_satisfied = eps > cross.max(axis=1)
        else:
            report.ordering_satisfied = np.ones_like(eps, dtype=bool)
        if lagrangian:
            report.constraint_satisfied = eps >= state.rho
            if record_traces:
                report.mu_trace = np.asarray(mu_tr).reshape(-1, M, K)
                report.rho_trace = np.asarray(rho_tr).reshape(-1, M, K)
                report.scheme_trace = np.asarray(sch_tr).reshape(-1, M, K)
    report.wall_time = time.perf_counter() - t_start
    return report


__all__ = ["Problem", "make_problem", "solve", "full_objective", "iva_cost_at_ml", "VARIANT_CODES"]
