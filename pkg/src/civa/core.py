"""Shared data model: datasets, demixing sets, references and the
cross-covariance cache that makes solver iterations independent of the
number of samples.

Arrays use a stacked layout throughout:

* datasets ``X``: ``(K, N, V)``
* cache blocks ``R``: ``(K, K, N, N)`` with ``R[k, l] = X[k] @ X[l].T / V``
* demixing matrices ``W``: ``(K, N, N)``, row ``n`` of ``W[k]`` is ``w_n^[k]``
* SCV covariances ``Sigma``: ``(N, K, K)``
* references ``r``: ``(M, V)``

Component and dataset indices are zero-based.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import DegenerateSignalError, DimensionError, NotCenteredError

CENTER_TOL = 1e-10
UNIT_TOL = 1e-10


@dataclass(frozen=True)
class DatasetCollection:
    """K observation matrices of shape ``(N, V)`` stacked as ``(K, N, V)``."""

    datasets: np.ndarray
    centered: bool = False

    def __post_init__(self):
        X = np.asarray(self.datasets, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        if X.ndim != 3:
            raise DimensionError(f"datasets must be (K, N, V), got shape {X.shape}")
        K, N, V = X.shape
        if N < 2 or K < 1 or V <= N:
            raise DimensionError(f"need N >= 2, K >= 1, V > N; got N={N}, K={K}, V={V}")
        if self.centered:
            scale = max(1.0, float(np.max(np.abs(X))))
            if np.max(np.abs(X.mean(axis=2))) > CENTER_TOL * scale:
                raise NotCenteredError("centered=True but some row mean is nonzero")
        X.setflags(write=False)
        object.__setattr__(self, "datasets", X)

    @classmethod
    def from_list(cls, matrices, centered=False) -> "DatasetCollection":
        shapes = {np.shape(m) for m in matrices}
        if len(shapes) != 1:
            raise DimensionError(f"datasets have mismatched shapes: {sorted(shapes)}")
        return cls(np.stack([np.asarray(m, dtype=np.float64) for m in matrices]), centered)

    @property
    def dims(self) -> Tuple[int, int, int]:
        """``(N, K, V)``."""
        K, N, V = self.datasets.shape
        return N, K, V

    def __len__(self):
        return self.datasets.shape[0]


def center_datasets(raw):
    """Remove the per-row mean of every dataset. The input is left untouched.

    A plain ``(K, N, V)`` (or ``(N, V)``) array is accepted too and returned
    as an array; this path skips the dimension invariants of
    :class:`DatasetCollection`.
    """
    if isinstance(raw, DatasetCollection):
        X = raw.datasets
        return DatasetCollection(X - X.mean(axis=2, keepdims=True), centered=True)
    X = np.asarray(raw, dtype=np.float64)
    return X - X.mean(axis=-1, keepdims=True)


@dataclass(frozen=True)
class CrossCovarianceCache:
    blocks: np.ndarray  # (K, K, N, N)

    def block(self, k: int, l: int) -> np.ndarray:
        return self.blocks[k, l]

    @property
    def K(self) -> int:
        return self.blocks.shape[0]

    @property
    def N(self) -> int:
        return self.blocks.shape[2]


def build_cross_covariance_cache(data) -> CrossCovarianceCache:
    """All pairwise blocks ``X[k] @ X[l].T / V``.

    This is the only pass over the samples on the solver path. The lower
    triangle is filled by transposition so ``block(l, k) == block(k, l).T``
    holds exactly.
    """
    if isinstance(data, DatasetCollection):
        if not data.centered:
            raise NotCenteredError("cross-covariance cache requires centered data")
        X = data.datasets
    else:
        X = np.asarray(data, dtype=np.float64)
        X = X[None] if X.ndim == 2 else X
        scale = max(1.0, float(np.max(np.abs(X))))
        if np.max(np.abs(X.mean(axis=2))) > CENTER_TOL * scale:
            raise NotCenteredError("cross-covariance cache requires centered data")
    K, N, V = X.shape
    R = np.empty((K, K, N, N))
    for k in range(K):
        for l in range(k, K):
            R[k, l] = X[k] @ X[l].T / V
            if l != k:
                R[l, k] = R[k, l].T
        # kill round-off asymmetry on the diagonal blocks
        R[k, k] = 0.5 * (R[k, k] + R[k, k].T)
    R.setflags(write=False)
    return CrossCovarianceCache(R)


def normalize_rows(W: np.ndarray) -> np.ndarray:
    return W / np.linalg.norm(W, axis=-1, keepdims=True)


@dataclass(frozen=True)
class DemixingSet:
    matrices: np.ndarray  # (K, N, N)

    def __post_init__(self):
        W = np.array(self.matrices, dtype=np.float64)
        if W.ndim == 2:
            W = W[None]
        if W.ndim != 3 or W.shape[1] != W.shape[2]:
            raise DimensionError(f"demixing matrices must be (K, N, N), got {W.shape}")
        W.setflags(write=False)
        object.__setattr__(self, "matrices", W)

    @property
    def K(self) -> int:
        return self.matrices.shape[0]

    @property
    def N(self) -> int:
        return self.matrices.shape[1]

    def has_unit_rows(self, tol: float = UNIT_TOL) -> bool:
        return bool(np.all(np.abs(np.linalg.norm(self.matrices, axis=2) - 1.0) <= tol))

    def normalized(self) -> "DemixingSet":
        return DemixingSet(normalize_rows(self.matrices))


def random_init(N: int, K: int, seed) -> DemixingSet:
    """Orthonormalized standard-normal draws, one per dataset.

    Rows of an orthogonal matrix already have unit norm, so the result
    satisfies the unit-row invariant without further scaling.
    """
    rng = np.random.default_rng(seed)
    W = np.empty((K, N, N))
    for k in range(K):
        Q, Rq = np.linalg.qr(rng.standard_normal((N, N)))
        # sign fix makes the factorization unique
        W[k] = Q * np.sign(np.diag(Rq))
    return DemixingSet(normalize_rows(W))


@dataclass(frozen=True)
class SCVCovarianceSet:
    covariances: np.ndarray  # (N, K, K)
    ridge: float = 0.0


def scv_covariances(W: DemixingSet, cache: CrossCovarianceCache) -> SCVCovarianceSet:
    """``Sigma[n][k, l] = w_n^[k] . R[k, l] . w_n^[l]`` for every component."""
    S = np.einsum("kni,klij,lnj->nkl", W.matrices, cache.blocks, W.matrices)
    S = 0.5 * (S + S.transpose(0, 2, 1))
    return SCVCovarianceSet(S)


@dataclass(frozen=True)
class ReferenceSet:
    """M reference signals of length V, stored zero-mean and unit-variance.

    Inputs are re-normalized on construction rather than trusted.
    """

    references: np.ndarray  # (M, V)

    def __post_init__(self):
        r = np.array(self.references, dtype=np.float64)
        if r.ndim == 1:
            r = r[None]
        if r.ndim != 2:
            raise DimensionError(f"references must be (M, V), got {r.shape}")
        r = r - r.mean(axis=1, keepdims=True)
        sd = r.std(axis=1, keepdims=True)
        if np.any(sd <= 0):
            raise DegenerateSignalError("reference with zero variance")
        r = r / sd
        r.setflags(write=False)
        object.__setattr__(self, "references", r)

    @property
    def M(self) -> int:
        return self.references.shape[0]

    @property
    def V(self) -> int:
        return self.references.shape[1]

    def project(self, data: DatasetCollection) -> "ProjectedReferences":
        """Cache ``X[k] @ r_m / V`` so that similarity terms never touch V samples."""
        N, K, V = data.dims
        if V != self.V:
            raise DimensionError(f"reference length {self.V} != sample count {V}")
        if self.M > N:
            raise DimensionError(f"more references ({self.M}) than components ({N})")
        r = self.references
        B = np.einsum("knv,mv->kmn", data.datasets, r) / V
        rr = np.einsum("mv,mv->m", r, r) / V
        B.setflags(write=False)
        rr.setflags(write=False)
        return ProjectedReferences(B, rr)


@dataclass(frozen=True)
class ProjectedReferences:
    """``B[k, m] = X[k] @ r_m / V`` and ``rr[m] = |r_m|^2 / V``."""

    B: np.ndarray  # (K, M, N)
    rr: np.ndarray  # (M,)

    @property
    def M(self) -> int:
        return self.B.shape[1]

    @classmethod
    def empty(cls, K: int, N: int) -> "ProjectedReferences":
        return cls(np.zeros((K, 0, N)), np.zeros(0))


def estimate_sources(
    W: DemixingSet, data: DatasetCollection, n: int, strict: bool = False
) -> np.ndarray:
    """Estimated sources ``y_n^[k] = w_n^[k] . X[k]`` for all datasets, ``(K, V)``.

    Only meant for metrics and diagnostics; solvers work on the cache.
    """
    N = W.N
    if not 0 <= n < N:
        raise IndexError(f"component index {n} out of range for N={N}")
    w = W.matrices[:, n, :]
    if strict:
        norms = np.linalg.norm(w, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOL):
            raise ValueError(f"demixing rows for component {n} are not unit-norm: {norms}")
    return np.einsum("ki,kiv->kv", w, data.datasets)


def all_sources(W: DemixingSet, data: DatasetCollection) -> np.ndarray:
    """``Y[k] = W[k] @ X[k]`` stacked as ``(K, N, V)``."""
    return np.einsum("kij,kjv->kiv", W.matrices, data.datasets)


def prepare(
    data: DatasetCollection, refs: Optional[ReferenceSet] = None
) -> Tuple[DatasetCollection, CrossCovarianceCache, ProjectedReferences]:
    """Center (if needed), build the cache and project the references."""
    if not data.centered:
        data = center_datasets(data)
    cache = build_cross_covariance_cache(data)
    N, K, _ = data.dims
    proj = refs.project(data) if refs is not None and refs.M > 0 else ProjectedReferences.empty(K, N)
    return data, cache, proj


__all__ = [
    "DatasetCollection",
    "CrossCovarianceCache",
    "DemixingSet",
    "SCVCovarianceSet",
    "ReferenceSet",
    "ProjectedReferences",
    "center_datasets",
    "build_cross_covariance_cache",
    "estimate_sources",
    "all_sources",
    "scv_covariances",
    "random_init",
    "normalize_rows",
    "prepare",
]
