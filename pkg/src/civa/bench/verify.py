"""Fast invariant suite behind ``civa verify``.

Every check returns ``(passed, detail)``. Gradient functions can be swapped
out through ``overrides`` so that a deliberately broken implementation can
be shown to fail (mutation testing).
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .. import constraints as C
from .. import iva_g as G
from ..core import DatasetCollection, DemixingSet, build_cross_covariance_cache, center_datasets, random_init
from ..core import ReferenceSet, scv_covariances
from ..hybrid import build_sigma_z, build_sources, sample_latent, synthesize_references
from ..metrics import cross_joint_isi, isi

FD_STEP = 1e-6
FD_RTOL = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def relative_error(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def small_instance(seed, N=4, K=3, M=2, V=500):
    """Random centered data, references and a (non-normalized) demixing set."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((K, N, N))
    S = rng.standard_normal((K, N, V))
    S[:, :, :] += 0.5 * rng.standard_normal((1, N, V))  # dependence across datasets
    data = center_datasets(DatasetCollection(np.einsum("kij,kjv->kiv", A, S)))
    cache = build_cross_covariance_cache(data)
    refs = ReferenceSet(S[0, :M] + 0.5 * rng.standard_normal((M, V)))
    proj = refs.project(data)
    W = rng.standard_normal((K, N, N))
    return data, cache, refs, proj, W


def _with_row(W, k, n, w):
    W2 = W.copy()
    W2[k, n] = w
    return W2


def fd_gradient_error(value, grad, W, k, n) -> float:
    """Relative error between ``grad(W, n, k)`` and central differences of
    ``value`` with respect to ``w_n^[k]``."""
    fd = central_difference(lambda w: value(_with_row(W, k, n, w)), W[k, n].copy())
    return relative_error(grad(W, n, k), fd)


def gradient_errors(instances: int = 20, seed: int = 0, overrides: Optional[Dict[str, Callable]] = None):
    """Worst FD relative error per objective over random instances.

    Covers the IVA cost, the Lagrangian with active and with inactive
    constraints, and the regularized cost. The SCV covariances are held
    fixed at their value for the starting point.
    """
    ov = overrides or {}
    grad_j_ref = ov.get("grad_j_ref", C.grad_j_ref)
    grad_iva = ov.get("grad_iva_g", G.grad_iva_g)
    grad_pen = ov.get("grad_constraint_term", C.grad_constraint_term)
    worst = {"iva": 0.0, "lagrangian_active": 0.0, "lagrangian_inactive": 0.0, "tf": 0.0}
    rng = np.random.default_rng(seed)
    for i in range(instances):
        data, cache, refs, proj, W = small_instance(seed * 1000 + i)
        Sig = scv_covariances(DemixingSet(W), cache).covariances
        K, N, _ = W.shape
        M = proj.M
        k = int(rng.integers(K))
        n = int(rng.integers(M))  # a constrained row so every term is exercised
        worst["iva"] = max(worst["iva"], fd_gradient_error(
            lambda X: G.iva_g_cost(X, Sig, cache),
            lambda X, n_, k_: grad_iva(X, Sig, cache, n_, k_), W, k, n))

        eps = C.paired_eps(W, cache, proj)
        # active: thresholds above the current similarity, positive multipliers;
        # inactive: thresholds well below it and zero multipliers
        cases = (
            ("lagrangian_active", np.minimum(eps + 0.3, 0.99), rng.uniform(0.0, 0.5, size=(M, K))),
            ("lagrangian_inactive", np.maximum(eps - 0.3, 0.0), np.zeros((M, K))),
        )
        for label, rho, mu in cases:
            st = C.ConstraintState.initial(M, K, C.ConstraintSettings(gamma=3.0))
            st.rho[:] = rho
            st.mu[:] = mu

            def val(X, st=st):
                return G.iva_g_cost(X, Sig, cache) + C.penalty_value(st, C.paired_eps(X, cache, proj))

            def grd(X, n_, k_, st=st):
                return grad_iva(X, Sig, cache, n_, k_) + grad_pen(st, X, cache, proj, n_, k_)

            worst[label] = max(worst[label], fd_gradient_error(val, grd, W, k, n))

        lam = float(rng.uniform(0.5, 2.0))
        worst["tf"] = max(worst["tf"], fd_gradient_error(
            lambda X: G.iva_g_cost(X, Sig, cache) + 0.5 * lam * C.j_ref_value(X, cache, proj),
            lambda X, n_, k_: grad_iva(X, Sig, cache, n_, k_) + 0.5 * lam * grad_j_ref(X, cache, proj, n_, k_),
            W, k, n))
    return worst


def per_sample_nll(W, data: DatasetCollection, Sigma) -> float:
    """Direct Gaussian negative log-likelihood, averaged over samples:
    ``(1/V) sum_v sum_n -log N(y_n(v); 0, Sigma_n) - sum_k log|det W_k|``."""
    Wm = np.asarray(W)
    X = data.datasets
    K, N, V = X.shape
    Y = np.einsum("kni,kiv->nkv", Wm, X)
    total = 0.0
    for n in range(N):
        Sn = Sigma[n]
        sign, logdet = np.linalg.slogdet(Sn)
        Sinv = np.linalg.inv(Sn)
        for v in range(V):
            y = Y[n, :, v]
            total += 0.5 * (K * np.log(2 * np.pi) + logdet + y @ Sinv @ y)
    return total / V - sum(np.linalg.slogdet(Wm[k])[1] for k in range(K))


def likelihood_oracle_error(seed: int = 0, N=3, K=2, V=200) -> float:
    data, cache, _, _, W = small_instance(seed, N=N, K=K, M=1, V=V)
    rng = np.random.default_rng(seed + 7)
    B = rng.standard_normal((N, K, K))
    Sig = np.einsum("nij,nkj->nik", B, B) + K * np.eye(K)
    return abs(G.iva_g_cost(W, Sig, cache) - per_sample_nll(W, data, Sig))


def covariance_oracle_error(seed: int = 0, N=4, K=3, V=500) -> float:
    data, cache, _, _, W = small_instance(seed, N=N, K=K, M=1, V=V)
    worst = 0.0
    for n in range(N):
        Y = np.einsum("ki,kiv->kv", W[:, n, :], data.datasets)
        direct = Y @ Y.T / V
        worst = max(worst, float(np.max(np.abs(G.update_scv_covariance(W, cache, n) - direct))))
    return worst


def metric_property_failures(seed: int = 0) -> List[str]:
    rng = np.random.default_rng(seed)
    bad = []
    for N in (2, 3, 5, 8):
        P = np.eye(N)[rng.permutation(N)]
        D1 = np.diag(rng.uniform(0.5, 2, N) * rng.choice([-1, 1], N))
        D2 = np.diag(rng.uniform(0.5, 2, N) * rng.choice([-1, 1], N))
        if isi(D1 @ P @ D2) != 0.0:
            bad.append(f"scaled permutation N={N}")
        if abs(isi(np.ones((N, N))) - 1.0) > 1e-12:
            bad.append(f"all-ones N={N}")
        Gm = rng.standard_normal((N, N))
        base = isi(Gm)
        # general diagonal scalings change the value; sign flips and a common
        # scale factor do not
        S1 = np.diag(rng.choice([-1.0, 1.0], N))
        S2 = np.diag(rng.choice([-1.0, 1.0], N))
        c = float(rng.uniform(0.1, 10.0))
        if abs(isi(c * S1 @ Gm @ S2) - base) > 1e-12:
            bad.append(f"sign/scale invariance N={N}")
        Q = np.eye(N)[rng.permutation(N)]
        if abs(isi(Q @ Gm @ Q.T) - base) > 1e-12:
            bad.append(f"simultaneous permutation N={N}")
    K, N = 3, 4
    W = rng.standard_normal((K, N, N))
    P = np.eye(N)[rng.permutation(N)] * rng.choice([-1, 1], N)[:, None]
    runs = [W, np.einsum("ij,kjl->kil", P, W), W.copy()]
    if np.max(np.abs(cross_joint_isi(runs))) > 1e-12:
        bad.append("cross-joint-ISI of equivalent runs")
    return bad


def generator_statistics(V: int = 50000, seed: int = 0, N: int = 2, K: int = 4):
    """Within-SCV off-diagonal covariance and source/reference correlation
    for phi = 0.9 and phi = 0.3 (mu1 = 0.2)."""
    out = {}
    refs = synthesize_references(N, V, 25, 0.1, seed)
    Z = sample_latent(build_sigma_z(N, K, 0.1, 0.2), N, K, V, seed + 1)
    for phi in (0.9, 0.3):
        S = build_sources(Z, refs, np.full(N, phi))
        offs, corrs = [], []
        for n in range(N):
            Cn = np.cov(S[n])
            offs.append(Cn[~np.eye(K, dtype=bool)].mean())
            corrs += [abs(np.corrcoef(S[n, k], refs.references[n])[0, 1]) for k in range(K)]
        out[phi] = (float(np.mean(offs)), float(np.mean(corrs)))
    return out


def decoupling_identity_error(seed: int = 0, N: int = 6) -> float:
    rng = np.random.default_rng(seed)
    Wk = rng.standard_normal((N, N))
    worst = 0.0
    inv_t = np.linalg.inv(Wk).T
    for n in range(N):
        dv = G.decoupling_vector(Wk, n)
        worst = max(worst, float(np.max(np.abs(dv.d / dv.dot - inv_t[n]))))
    return worst


def backend_agreement(seed: int = 0) -> float:
    from .. import kernels
    from ..solver import solve

    if not kernels.HAS_NUMBA:
        return 0.0
    data, _, refs, _, _ = small_instance(seed, N=4, K=3, M=2, V=500)
    init = random_init(4, 3, seed)
    s = G.SolverSettings(max_iters=10)
    worst = 0.0
    for v in C.VARIANTS:
        a = solve(v, data, refs, s, init=init, backend="numba").W
        b = solve(v, data, refs, s, init=init, backend="numpy").W
        worst = max(worst, float(np.max(np.abs(a - b))))
    return worst


def default_checks(overrides=None) -> List[Tuple[str, Callable[[], Tuple[bool, str]]]]:
    def grads():
        w = gradient_errors(20, 0, overrides)
        return all(v < FD_RTOL for v in w.values()), ", ".join(f"{k}={v:.1e}" for k, v in w.items())

    def lik():
        e = likelihood_oracle_error()
        return e < 1e-9, f"abs err {e:.1e}"

    def cov():
        e = covariance_oracle_error()
        return e < 1e-10, f"max abs err {e:.1e}"

    def met():
        bad = metric_property_failures()
        return not bad, "ok" if not bad else "; ".join(bad)

    def gen():
        st = generator_statistics(V=20000)
        (o9, c9), (o3, _) = st[0.9], st[0.3]
        ok = abs(o9 - 0.28) < 0.03 and abs(c9 - 0.316) < 0.04 and abs(o3 - 0.76) < 0.03
        return ok, f"phi=.9 cov={o9:.3f} corr={c9:.3f}; phi=.3 cov={o3:.3f}"

    def dec():
        e = decoupling_identity_error()
        return e < 1e-10, f"max abs err {e:.1e}"

    def be():
        e = backend_agreement()
        return e < 1e-6, f"max |W_numba - W_numpy| {e:.1e}"

    def cfg():
        from ..errors import ConfigError

        try:
            G.SolverSettings(tol=0.0)
        except ConfigError:
            return True, "tol=0 rejected"
        return False, "tol=0 accepted"

    return [
        ("gradient finite differences", grads),
        ("likelihood oracle", lik),
        ("covariance oracle", cov),
        ("metric properties", met),
        ("generator statistics", gen),
        ("decoupling vector identity", dec),
        ("backend agreement", be),
        ("config validation", cfg),
    ]


def run_checks(checks=None, overrides=None) -> List[CheckResult]:
    results = []
    for name, fn in checks or default_checks(overrides):
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return results


def format_table(results: List[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  result  time(s)  detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.seconds:7.2f}  {r.detail}")
    return "\n".join(lines)


__all__ = [
    "CheckResult",
    "central_difference",
    "fd_gradient_error",
    "gradient_errors",
    "per_sample_nll",
    "likelihood_oracle_error",
    "covariance_oracle_error",
    "metric_property_failures",
    "generator_statistics",
    "run_checks",
    "format_table",
]
