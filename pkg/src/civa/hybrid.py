"""fMRI-like hybrid data: references plus structured Gaussian latents,
mixed by random well-conditioned matrices, with the ground truth retained.
"""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import uniform_filter1d

from .core import DatasetCollection, ReferenceSet
from .errors import ConfigError, DimensionError, InfeasibleCorrelationError, NumericalFailureError


class SourceForm(str, enum.Enum):
    """How the reference and the latent are weighted in each source.

    ``VARIANCE_FRACTION``: ``sqrt(1-phi) r + sqrt(phi) z``; ``phi`` is the
    share of variance coming from the latent.
    ``AMPLITUDE``: ``sqrt(1-phi^2) r + phi z``.
    """

    VARIANCE_FRACTION = "variance_fraction"
    AMPLITUDE = "amplitude"


def source_weights(phi, form=SourceForm.VARIANCE_FRACTION) -> Tuple[np.ndarray, np.ndarray]:
    """Reference and latent weights ``(a, b)`` with ``a^2 + b^2 = 1``."""
    phi = np.asarray(phi, dtype=np.float64)
    form = SourceForm(form)
    if form is SourceForm.VARIANCE_FRACTION:
        return np.sqrt(1.0 - phi), np.sqrt(phi)
    return np.sqrt(1.0 - phi**2), phi


@dataclass
class HybridConfig:
    N: int = 20
    K: int = 20
    V: int = 58515
    M: Optional[int] = None
    mu0: float = 0.1
    mu1: float = 0.2
    phi: Optional[Sequence[float]] = None
    form: str = SourceForm.VARIANCE_FRACTION.value
    ref_path: Optional[str] = None
    smoothing_window: int = 25
    ref_corr: float = 0.1
    cond_limit: float = 1e3
    seed: int = 0

    def __post_init__(self):
        if self.M is None:
            self.M = self.N
        if self.phi is None:
            self.phi = np.linspace(0.3, 0.9, self.N).tolist()
        self.phi = [float(p) for p in self.phi]
        self.form = SourceForm(self.form).value
        self.validate()

    def validate(self):
        if self.N < 2 or self.K < 1 or self.V <= self.N:
            raise ConfigError(f"invalid dims N={self.N}, K={self.K}, V={self.V}")
        if not 0 <= self.M <= self.N:
            raise ConfigError(f"M={self.M} must lie in [0, N]")
        if not 0 <= self.mu0 <= self.mu1 <= 1:
            raise ConfigError(f"need 0 <= mu0 <= mu1 <= 1, got {self.mu0}, {self.mu1}")
        if len(self.phi) != self.N or any(not 0 <= p <= 1 for p in self.phi):
            raise ConfigError("phi must hold N values in [0, 1]")
        if not 0 <= self.ref_corr < 1:
            raise ConfigError("ref_corr must lie in [0, 1)")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class GroundTruth:
    sources: np.ndarray  # (N, K, V): row k of S_n is sources[n, k]
    mixing: np.ndarray  # (K, N, N)
    references: Optional[np.ndarray] = field(default=None)  # (N, V)

    def source_matrix(self, k: int) -> np.ndarray:
        """``S^[k]`` with row ``n`` equal to row ``k`` of ``S_n``."""
        return self.sources[:, k, :]


def build_sigma_z(N: int, K: int, mu0: float, mu1: float) -> np.ndarray:
    """Latent covariance: unit diagonal, ``mu1`` within an SCV, ``mu0`` across SCVs."""
    if not 0 <= mu0 <= mu1 <= 1:
        raise ConfigError(f"need 0 <= mu0 <= mu1 <= 1, got mu0={mu0}, mu1={mu1}")
    inner = mu0 * np.ones((N, N)) + (mu1 - mu0) * np.eye(N)
    return np.kron(inner, np.ones((K, K))) + (1.0 - mu1) * np.eye(N * K)


def _psd_factor(C: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(C)
        if vals.min() < -1e-10 * max(1.0, vals.max()):
            raise NumericalFailureError("latent covariance is not positive semidefinite")
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def sample_latent(sigma_z: np.ndarray, N: int, K: int, V: int, seed) -> np.ndarray:
    """V iid draws of the latent vector, partitioned as ``(N, K, V)``."""
    if sigma_z.shape != (N * K, N * K):
        raise DimensionError(f"sigma_z has shape {sigma_z.shape}, want {(N * K, N * K)}")
    rng = np.random.default_rng(seed)
    L = _psd_factor(sigma_z)
    Z = L @ rng.standard_normal((N * K, V))
    return Z.reshape(N, K, V)


def synthesize_references(
    M: int, V: int, smoothing_window: int = 25, pairwise_corr: float = 0.0, seed=0
) -> ReferenceSet:
    """Smooth pseudo-spatial maps with a prescribed pairwise correlation.

    Moving-average filtered white noise is whitened exactly, mixed by the
    Cholesky factor of the target correlation matrix and standardized.
    """
    if M < 1:
        raise ConfigError("need at least one reference")
    if not 0 <= pairwise_corr < 1:
        raise ConfigError("pairwise_corr must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((M, V))
    if smoothing_window > 1:
        U = uniform_filter1d(U, size=int(smoothing_window), axis=1, mode="wrap")
    U = U - U.mean(axis=1, keepdims=True)
    C = U @ U.T / V
    U = np.linalg.solve(np.linalg.cholesky(C), U)
    target = (1.0 - pairwise_corr) * np.eye(M) + pairwise_corr * np.ones((M, M))
    try:
        L = np.linalg.cholesky(target)
    except np.linalg.LinAlgError:
        raise InfeasibleCorrelationError("target reference correlation is not positive definite")
    return ReferenceSet(L @ U)


def load_references(path, M: Optional[int] = None) -> ReferenceSet:
    from .io import read_matrix

    r = read_matrix(path)
    if M is not None:
        r = r[:M]
    return ReferenceSet(r)


def build_sources(latents: np.ndarray, refs, phi, form=SourceForm.VARIANCE_FRACTION) -> np.ndarray:
    """Sources ``S_n = a_n 1_K r_n^T + b_n Z_n`` stacked as ``(N, K, V)``."""
    r = refs.references if isinstance(refs, ReferenceSet) else np.asarray(refs, dtype=np.float64)
    N, K, V = latents.shape
    if r.shape != (N, V):
        raise DimensionError(f"need {N} references of length {V}, got {r.shape}")
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (N,) or np.any((phi < 0) | (phi > 1)):
        raise ConfigError("phi must hold N values in [0, 1]")
    a, b = source_weights(phi, form)
    return a[:, None, None] * r[:, None, :] + b[:, None, None] * latents


def generate_mixing(N: int, K: int, cond_limit: float = 1e3, seed=0, max_tries: int = 1000):
    """K standard-normal mixing matrices, each redrawn until its condition
    number is below ``cond_limit``."""
    if not cond_limit > 1:
        raise ConfigError("cond_limit must exceed 1")
    rng = np.random.default_rng(seed)
    A = np.empty((K, N, N))
    for k in range(K):
        for _ in range(max_tries):
            cand = rng.standard_normal((N, N))
            if np.linalg.cond(cand) < cond_limit:
                A[k] = cand
                break
        else:
            raise NumericalFailureError(f"no mixing matrix with cond < {cond_limit} in {max_tries} draws")
    return A


def assemble_datasets(sources: np.ndarray, mixing: np.ndarray, references=None):
    """``X^[k] = A^[k] S^[k]``; returns ``(DatasetCollection, GroundTruth)``."""
    N, K, V = sources.shape
    if mixing.shape != (K, N, N):
        raise DimensionError(f"mixing has shape {mixing.shape}, want {(K, N, N)}")
    X = np.einsum("kij,jkv->kiv", mixing, sources)
    return DatasetCollection(X), GroundTruth(sources, mixing, references)


def generate_hybrid(
    config: HybridConfig, source_seed=None, mixing_seed=None, ref_seed=None
):
    """Full pipeline. Returns ``(data, truth, refs)`` where ``refs`` holds the
    first ``M`` references handed to the constrained solvers."""
    cfg = config
    base = np.random.SeedSequence(cfg.seed)
    s_src, s_mix, s_ref = base.spawn(3)
    source_seed = s_src if source_seed is None else source_seed
    mixing_seed = s_mix if mixing_seed is None else mixing_seed
    ref_seed = s_ref if ref_seed is None else ref_seed
    if cfg.ref_path:
        all_refs = load_references(cfg.ref_path)
        if all_refs.M < cfg.N or all_refs.V != cfg.V:
            raise DimensionError(
                f"reference file holds {all_refs.M}x{all_refs.V}, need at least {cfg.N}x{cfg.V}"
            )
        all_refs = ReferenceSet(all_refs.references[: cfg.N])
    else:
        all_refs = synthesize_references(cfg.N, cfg.V, cfg.smoothing_window, cfg.ref_corr, ref_seed)
    Z = sample_latent(build_sigma_z(cfg.N, cfg.K, cfg.mu0, cfg.mu1), cfg.N, cfg.K, cfg.V, source_seed)
    S = build_sources(Z, all_refs, cfg.phi, cfg.form)
    A = generate_mixing(cfg.N, cfg.K, cfg.cond_limit, mixing_seed)
    data, truth = assemble_datasets(S, A, all_refs.references)
    return data, truth, ReferenceSet(all_refs.references[: cfg.M]) if cfg.M else None
