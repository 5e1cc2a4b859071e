"""Reference-driven terms: similarity, augmented-Lagrangian penalty and
multiplier dynamics, threshold selection strategies and the threshold-free
regularizer.

All quantities that depend on the estimated sources are evaluated through
the cross-covariance cache and the projected references
``B[k, m] = X[k] r_m / V``. With zero-mean data and references the Pearson
similarity reduces to::

    eps(r_m, y_n^[k]) = |w . B[k, m]| / sqrt(rr_m * w . R[k, k] . w)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ProjectedReferences
from .errors import ConfigError, DegenerateSignalError
from .iva_g import _as_w, _blocks, grad_iva_g, iva_g_cost
from .kernels import ARGMAX, ARGMIN
from .kernels import _numpy as _sel

PT_THRESHOLDS = np.array([0.001, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
AR_THRESHOLDS = np.arange(1, 100) / 100.0

LAGRANGIAN_VARIANTS = ("civa-fixed", "pt-civa", "ar-civa")
VARIANTS = ("iva-g-v",) + LAGRANGIAN_VARIANTS + ("tf-civa",)

_DEGENERATE = 1e-300


# ---------------------------------------------------------------------------
# similarity


def similarity(a, b, center: bool = True) -> float:
    """Absolute Pearson correlation of two sample vectors.

    With ``center=False`` the raw cosine ``|a.b| / (|a| |b|)`` is returned.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if center:
        a = a - a.mean()
        b = b - b.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na <= _DEGENERATE or nb <= _DEGENERATE:
        raise DegenerateSignalError("similarity of a zero-variance signal")
    return float(min(1.0, abs(a @ b) / (na * nb)))


def similarity_grad_y(r, y, center: bool = True) -> np.ndarray:
    """Derivative of :func:`similarity` with respect to the sample vector ``y``."""
    r = np.asarray(r, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if center:
        r = r - r.mean()
        y = y - y.mean()
    nr, ny = np.linalg.norm(r), np.linalg.norm(y)
    if nr <= _DEGENERATE or ny <= _DEGENERATE:
        raise DegenerateSignalError("similarity gradient of a zero-variance signal")
    c = r @ y
    g = np.sign(c) / (nr * ny) * (r - (c / ny**2) * y)
    if center:
        # chain rule through the centering projection
        g = g - g.mean()
    return g


def _eps_and_grad(w, Rkk, b, rr):
    Rw = Rkk @ w
    q = w @ Rw
    if q <= _DEGENERATE:
        raise DegenerateSignalError("estimated source has zero variance")
    c = w @ b
    root = np.sqrt(rr * q)
    eps = abs(c) / root
    grad = np.sign(c) / root * (b - (c / q) * Rw)
    return eps, grad


def similarity_from_cache(w, cache, proj: ProjectedReferences, m: int, k: int) -> float:
    """``eps(r_m, w . X[k])`` evaluated V-free."""
    R = _blocks(cache)
    return float(_eps_and_grad(np.asarray(w, float), R[k, k], proj.B[k, m], proj.rr[m])[0])


def similarity_gradient(m: int, w, cache, proj: ProjectedReferences, k: int) -> np.ndarray:
    """Gradient of ``eps(r_m, w . X[k])`` with respect to ``w``, computed V-free."""
    R = _blocks(cache)
    return _eps_and_grad(np.asarray(w, float), R[k, k], proj.B[k, m], proj.rr[m])[1]


def eps_matrix(W, cache, proj: ProjectedReferences) -> np.ndarray:
    """``E[m, n, k] = eps(r_m, y_n^[k])`` for every reference/component/dataset."""
    Wm = _as_w(W)
    R = _blocks(cache)
    K = Wm.shape[0]
    idx = np.arange(K)
    q = np.einsum("kni,kij,knj->nk", Wm, R[idx, idx], Wm)
    if np.any(q <= _DEGENERATE):
        raise DegenerateSignalError("estimated source has zero variance")
    c = np.einsum("kni,kmi->mnk", Wm, proj.B)
    return np.abs(c) / np.sqrt(proj.rr[:, None, None] * q[None])


def paired_eps(W, cache, proj: ProjectedReferences) -> np.ndarray:
    """``eps(r_n, y_n^[k])`` for ``n < M``, shape ``(M, K)``."""
    E = eps_matrix(W, cache, proj)
    M = proj.M
    return E[np.arange(M), np.arange(M), :]


# ---------------------------------------------------------------------------
# augmented Lagrangian


@dataclass
class ConstraintSettings:
    """Hyper-parameters of the augmented-Lagrangian variants.

    ``rho`` is only used by the fixed-threshold variant.
    """

    gamma: float = 100.0
    mu_max: float = 1.0
    thresholds: np.ndarray = field(default_factory=lambda: AR_THRESHOLDS.copy())
    rho: float = 0.5

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        self.validate()

    def validate(self):
        P = self.thresholds
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        if not self.mu_max > 0:
            raise ConfigError(f"mu_max must be > 0, got {self.mu_max}")
        if P.ndim != 1 or P.size == 0:
            raise ConfigError("threshold set must be a non-empty vector")
        if np.any(np.diff(P) <= 0) or P[0] <= 0 or P[-1] >= 1:
            raise ConfigError("thresholds must be strictly ascending inside (0, 1)")
        if not 0 <= self.rho <= 1:
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho}")

    @classmethod
    def defaults(cls, variant: str) -> "ConstraintSettings":
        if variant == "pt-civa":
            return cls(gamma=3.0, mu_max=1.0, thresholds=PT_THRESHOLDS.copy())
        if variant == "ar-civa":
            return cls(gamma=100.0, mu_max=1.0, thresholds=AR_THRESHOLDS.copy())
        if variant == "civa-fixed":
            return cls(gamma=100.0, mu_max=1.0, rho=0.5)
        raise ConfigError(f"{variant!r} has no constraint settings")

    def to_dict(self):
        return {
            "gamma": self.gamma,
            "mu_max": self.mu_max,
            "thresholds": self.thresholds.tolist(),
            "rho": self.rho,
        }


@dataclass
class RegularizerSettings:
    lam: float = 1.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError(f"lambda must be > 0, got {self.lam}")

    def to_dict(self):
        return {"lam": self.lam}


@dataclass
class ConstraintState:
    """Per-(reference, dataset) thresholds, multipliers and scheme flags."""

    rho: np.ndarray  # (M, K)
    mu: np.ndarray  # (M, K)
    scheme: np.ndarray  # (M, K) ints, ARGMIN / ARGMAX
    gamma: float
    mu_max: float
    thresholds: np.ndarray

    @classmethod
    def initial(cls, M: int, K: int, settings: ConstraintSettings) -> "ConstraintState":
        return cls(
            rho=np.full((M, K), float(settings.rho)),
            mu=np.zeros((M, K)),
            scheme=np.full((M, K), ARGMIN, dtype=np.int64),
            gamma=float(settings.gamma),
            mu_max=float(settings.mu_max),
            thresholds=np.asarray(settings.thresholds, dtype=np.float64),
        )

    def copy(self) -> "ConstraintState":
        return ConstraintState(
            self.rho.copy(), self.mu.copy(), self.scheme.copy(),
            self.gamma, self.mu_max, self.thresholds.copy(),
        )


def penalty_value(state: ConstraintState, eps) -> float:
    """``(1/2g) sum [max(0, mu + g (rho - eps))^2 - mu^2]`` over all constraints."""
    eps = np.asarray(eps, dtype=np.float64)
    a = np.maximum(0.0, state.mu + state.gamma * (state.rho - eps))
    return float(np.sum(a**2 - state.mu**2) / (2.0 * state.gamma))


def update_multiplier(mu, gamma, rho, eps):
    """Returns ``(alpha, mu_new)`` with ``alpha = mu + gamma (rho - eps)``."""
    alpha = np.asarray(mu) + gamma * (np.asarray(rho) - np.asarray(eps))
    mu_new = np.maximum(0.0, alpha)
    if np.ndim(alpha) == 0:
        return float(alpha), float(mu_new)
    return alpha, mu_new


def select_threshold(strategy: str, state: ConstraintState, eps, n: int, k: int) -> float:
    """Threshold for constraint ``(n, k)``.

    ``strategy`` is ``"fixed"`` (keep the configured value), ``"pt"``
    (candidate nearest to any ``eps[n, :]``, shared over datasets) or ``"ar"``
    (smallest unmet / largest met candidate, by the current scheme flag).
    """
    P = state.thresholds
    eps = np.asarray(eps, dtype=np.float64)
    if strategy == "fixed":
        return float(state.rho[n, k])
    if strategy == "pt":
        row = eps[n] if eps.ndim == 2 else np.atleast_1d(eps)
        return float(_sel.select_pt(P, row))
    if strategy == "ar":
        e = float(eps[n, k]) if eps.ndim == 2 else float(eps)
        if state.scheme[n, k] == ARGMIN:
            return float(_sel.select_argmin(P, e))
        return float(_sel.select_argmax(P, e))
    raise ConfigError(f"unknown threshold strategy {strategy!r}")


def maybe_switch_scheme(state: ConstraintState, n: int, k: int) -> int:
    """Flip the scheme flag of ``(n, k)`` when its multiplier leaves ``(0, mu_max)``."""
    mu = state.mu[n, k]
    if mu >= state.mu_max:
        state.scheme[n, k] = ARGMAX
    elif mu <= 0.0:
        state.scheme[n, k] = ARGMIN
    return int(state.scheme[n, k])


def grad_constraint_term(state: ConstraintState, W, cache, proj, n: int, k: int) -> np.ndarray:
    """Gradient of :func:`penalty_value` with respect to ``w_n^[k]``."""
    Wm = _as_w(W)
    N = Wm.shape[1]
    if n >= proj.M:
        return np.zeros(N)
    R = _blocks(cache)
    eps, de = _eps_and_grad(Wm[k, n], R[k, k], proj.B[k, n], proj.rr[n])
    coef = max(0.0, state.mu[n, k] + state.gamma * (state.rho[n, k] - eps))
    return -coef * de


def lagrangian_value(W, Sigma, cache, proj, state: ConstraintState, ridge_rel=1e-9) -> float:
    return iva_g_cost(W, Sigma, cache, ridge_rel) + penalty_value(state, paired_eps(W, cache, proj))


def grad_lagrangian(W, Sigma, cache, proj, state, n, k, ridge_rel=1e-9) -> np.ndarray:
    return grad_iva_g(W, Sigma, cache, n, k, ridge_rel) + grad_constraint_term(
        state, W, cache, proj, n, k
    )


# ---------------------------------------------------------------------------
# threshold-free regularizer


def j_ref_value(W, cache, proj: ProjectedReferences) -> float:
    """Cross-component minus corresponding-component squared similarity,
    summed over references ``n < M``, components ``m < M`` and datasets."""
    M = proj.M
    if M < 1:
        raise ConfigError("regularizer needs at least one reference")
    E2 = eps_matrix(W, cache, proj)[:, :M, :] ** 2  # (ref n, comp m, k)
    diag = E2[np.arange(M), np.arange(M), :].sum()
    return float(E2.sum() - 2.0 * diag)


def grad_j_ref(W, cache, proj: ProjectedReferences, n: int, k: int) -> np.ndarray:
    """Gradient of :func:`j_ref_value` with respect to ``w_n^[k]``."""
    Wm = _as_w(W)
    N = Wm.shape[1]
    M = proj.M
    if n >= M:
        return np.zeros(N)
    R = _blocks(cache)
    w = Wm[k, n]
    g = np.zeros(N)
    for m in range(M):
        eps, de = _eps_and_grad(w, R[k, k], proj.B[k, m], proj.rr[m])
        g += (-eps if m == n else eps) * de
    return 2.0 * g


def tf_objective(W, Sigma, cache, proj, lam: float, ridge_rel=1e-9) -> float:
    return iva_g_cost(W, Sigma, cache, ridge_rel) + 0.5 * lam * j_ref_value(W, cache, proj)


def grad_tf(W, Sigma, cache, proj, lam, n, k, ridge_rel=1e-9) -> np.ndarray:
    return grad_iva_g(W, Sigma, cache, n, k, ridge_rel) + 0.5 * lam * grad_j_ref(
        W, cache, proj, n, k
    )


def run_constrained(
    variant: str,
    data,
    refs,
    settings=None,
    constraint: Optional[ConstraintSettings] = None,
    regularizer: Optional[RegularizerSettings] = None,
    **kwargs,
):
    """Run one of ``civa-fixed``, ``pt-civa``, ``ar-civa`` or ``tf-civa``."""
    from .solver import solve

    if variant not in VARIANTS[1:]:
        raise ConfigError(f"unknown constrained variant {variant!r}")
    return solve(variant, data, refs, settings, constraint=constraint, regularizer=regularizer, **kwargs)


__all__ = [
    "similarity",
    "similarity_grad_y",
    "similarity_from_cache",
    "similarity_gradient",
    "eps_matrix",
    "paired_eps",
    "ConstraintSettings",
    "RegularizerSettings",
    "ConstraintState",
    "penalty_value",
    "update_multiplier",
    "select_threshold",
    "maybe_switch_scheme",
    "grad_constraint_term",
    "lagrangian_value",
    "grad_lagrangian",
    "j_ref_value",
    "grad_j_ref",
    "tf_objective",
    "grad_tf",
    "run_constrained",
    "VARIANTS",
    "LAGRANGIAN_VARIANTS",
    "PT_THRESHOLDS",
    "AR_THRESHOLDS",
]
