"""Gaussian IVA: cost, SCV covariance update, decoupled row gradient and the
projected vector-gradient step shared by every solver variant."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .core import CrossCovarianceCache, DemixingSet, SCVCovarianceSet
from .errors import (
    ConfigError,
    DegenerateDemixingError,
    IllConditionedModelError,
    NumericalFailureError,
)
from .kernels import STEP_FLOOR

LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class SolverSettings:
    """Step-size schedule, stopping rule and initialization seed.

    ``decay`` multiplies the step whenever a full sweep fails to decrease
    the objective. ``ridge_rel`` scales the diagonal loading
    ``ridge_rel * trace(Sigma_n) / K`` used only when a Cholesky
    factorization of an SCV covariance fails.
    """

    eta0: float = 1.0
    decay: float = 0.95
    tol: float = 1e-6
    max_iters: int = 2000
    ridge_rel: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.eta0 > 0:
            raise ConfigError(f"eta0 must be > 0, got {self.eta0}")
        if not 0 < self.decay < 1:
            raise ConfigError(f"decay must lie in (0, 1), got {self.decay}")
        if not self.tol > 0:
            raise ConfigError(f"tol must be > 0, got {self.tol}")
        if int(self.max_iters) < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.ridge_rel < 0:
            raise ConfigError("ridge_rel must be non-negative")

    def to_dict(self):
        return asdict(self)


def _as_sigma(Sigma) -> np.ndarray:
    if isinstance(Sigma, SCVCovarianceSet):
        return Sigma.covariances
    return np.asarray(Sigma, dtype=np.float64)


def _as_w(W) -> np.ndarray:
    if isinstance(W, DemixingSet):
        return W.matrices
    return np.asarray(W, dtype=np.float64)


def _blocks(cache) -> np.ndarray:
    if isinstance(cache, CrossCovarianceCache):
        return cache.blocks
    return np.asarray(cache, dtype=np.float64)


def cholesky_with_ridge(S: np.ndarray, ridge_rel: float = 1e-9):
    """Cholesky factor of ``S``, retried once with diagonal loading.

    Returns ``(L, ridge)``; raises :class:`IllConditionedModelError` if the
    loaded matrix is still not positive definite.
    """
    try:
        return np.linalg.cholesky(S), 0.0
    except np.linalg.LinAlgError:
        K = S.shape[0]
        ridge = ridge_rel * np.trace(S) / K
        try:
            return np.linalg.cholesky(S + ridge * np.eye(K)), ridge
        except np.linalg.LinAlgError:
            raise IllConditionedModelError("SCV covariance is singular after diagonal loading")


def sigma_inverses(Sigma, ridge_rel: float = 1e-9):
    """Inverses and log-determinants of every ``Sigma_n``: ``(inv, logdet, ridge)``."""
    S = _as_sigma(Sigma)
    N, K, _ = S.shape
    inv = np.empty_like(S)
    logdet = np.empty(N)
    ridge = 0.0
    eye = np.eye(K)
    for n in range(N):
        L, r = cholesky_with_ridge(S[n], ridge_rel)
        ridge = max(ridge, r)
        Linv = np.linalg.solve(L, eye)
        inv[n] = Linv.T @ Linv
        logdet[n] = 2.0 * np.sum(np.log(np.diag(L)))
    return inv, logdet, ridge


def logabsdet_W(W) -> np.ndarray:
    Wm = _as_w(W)
    sign, logabs = np.linalg.slogdet(Wm)
    if np.any(sign == 0) or not np.all(np.isfinite(logabs)):
        raise DegenerateDemixingError("singular demixing matrix")
    return logabs


def update_scv_covariance(W, cache, n: int) -> np.ndarray:
    """Maximum-likelihood covariance of the n-th estimated SCV, ``(K, K)``.

    Entry ``(k, l)`` is ``w_n^[k] . R[k, l] . w_n^[l]``, i.e. the sample
    covariance of ``y_n`` computed without touching the samples.
    """
    Wm = _as_w(W)
    R = _blocks(cache)
    if not 0 <= n < Wm.shape[1]:
        raise IndexError(f"component index {n} out of range")
    wn = Wm[:, n, :]
    S = np.einsum("ki,klij,lj->kl", wn, R, wn)
    return 0.5 * (S + S.T)


def iva_g_cost(W, Sigma, cache, ridge_rel: float = 1e-9) -> float:
    """Gaussian IVA negative log-likelihood, evaluated from the cache only."""
    Wm = _as_w(W)
    R = _blocks(cache)
    S = _as_sigma(Sigma)
    N, K, _ = S.shape
    inv, logdet, _ = sigma_inverses(S, ridge_rel)
    Shat = np.einsum("kni,klij,lnj->nkl", Wm, R, Wm)
    quad = np.einsum("nkl,nkl->", inv, Shat)
    return float(0.5 * N * K * LOG_2PI + 0.5 * logdet.sum() + 0.5 * quad - logabsdet_W(Wm).sum())


@dataclass(frozen=True)
class DecouplingVector:
    d: np.ndarray
    dot: float


def decoupling_vector(Wk: np.ndarray, n: int, rank_tol: float = 1e-12) -> DecouplingVector:
    """Unit vector orthogonal to every row of ``Wk`` except row ``n``.

    Taken as the last column of the complete QR factor of the row-deleted
    matrix's transpose; the sign is chosen so that ``d . w_n > 0``.
    """
    Wk = np.asarray(Wk, dtype=np.float64)
    N = Wk.shape[0]
    if not 0 <= n < N:
        raise IndexError(f"component index {n} out of range")
    Wt = np.delete(Wk, n, axis=0)
    if N == 1:
        d = np.ones(1)
    else:
        Q, Rq = np.linalg.qr(Wt.T, mode="complete")
        diag = np.abs(np.diag(Rq))
        if diag.min() <= rank_tol * max(diag.max(), 1.0):
            raise DegenerateDemixingError(f"row-deleted demixing matrix (n={n}) is rank deficient")
        d = Q[:, -1]
    dot = float(d @ Wk[n])
    if dot == 0.0:
        raise DegenerateDemixingError(f"demixing row {n} lies in the span of the others")
    if dot < 0:
        d, dot = -d, -dot
    return DecouplingVector(d, dot)


def grad_iva_g(W, Sigma, cache, n: int, k: int, ridge_rel: float = 1e-9) -> np.ndarray:
    """Gradient of :func:`iva_g_cost` with respect to ``w_n^[k]``."""
    Wm = _as_w(W)
    R = _blocks(cache)
    S = _as_sigma(Sigma)
    L, _ = cholesky_with_ridge(S[n], ridge_rel)
    K = S.shape[1]
    e = np.zeros(K)
    e[k] = 1.0
    col = np.linalg.solve(L.T, np.linalg.solve(L, e))
    g = np.einsum("lij,lj,l->i", R[k], Wm[:, n, :], col)
    dv = decoupling_vector(Wm[k], n)
    return g - dv.d / dv.dot


def gradient_step(w: np.ndarray, g: np.ndarray, eta: float) -> np.ndarray:
    """Move ``w`` by ``eta`` along the normalized tangent-space descent direction."""
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NumericalFailureError("non-finite gradient")
    gt = g - (w @ g) * w
    nrm = np.linalg.norm(gt)
    if nrm < STEP_FLOOR:
        return w.copy()
    w_new = w - eta * gt / nrm
    return w_new / np.linalg.norm(w_new)


def convergence_value(W_prev, W_next) -> float:
    """``max_{k,n} 1 - |<w_prev, w_next>|`` over all demixing rows."""
    A = _as_w(W_prev)
    B = _as_w(W_next)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    return float(np.max(1.0 - np.abs(np.einsum("kni,kni->kn", A, B))))


def has_converged(W_prev, W_next, tol: float) -> bool:
    return convergence_value(W_prev, W_next) < tol


def run_iva_g_v(data, settings: SolverSettings = None, init=None, **kwargs):
    """Unconstrained IVA-G with vector-gradient row updates.

    Thin wrapper over :func:`civa.solver.solve` with ``variant="iva-g-v"``.
    """
    from .solver import solve

    return solve("iva-g-v", data, None, settings or SolverSettings(), init=init, **kwargs)


__all__ = [
    "SolverSettings",
    "DecouplingVector",
    "iva_g_cost",
    "update_scv_covariance",
    "decoupling_vector",
    "grad_iva_g",
    "gradient_step",
    "convergence_value",
    "has_converged",
    "run_iva_g_v",
    "sigma_inverses",
    "cholesky_with_ridge",
    "logabsdet_W",
]
