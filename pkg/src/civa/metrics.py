"""Separation quality (ISI, joint-ISI, similarity factor) and run-to-run
consistency (cross-joint-ISI)."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .core import DatasetCollection, DemixingSet, all_sources
from .errors import DegenerateDemixingError, DegenerateSignalError, UndefinedMetricError


def _mats(W) -> np.ndarray:
    if isinstance(W, DemixingSet):
        return W.matrices
    return np.asarray(W, dtype=np.float64)


def isi(G) -> float:
    """Normalized inter-symbol interference of a square matrix; 0 for a
    scaled permutation, 1 for a matrix of equal magnitudes."""
    A = np.abs(np.asarray(G, dtype=np.float64))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"ISI needs a square matrix, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise UndefinedMetricError("non-finite entries")
    N = A.shape[0]
    row_max = A.max(axis=1)
    col_max = A.max(axis=0)
    if np.any(row_max == 0) or np.any(col_max == 0):
        raise UndefinedMetricError("ISI undefined for a zero row or column")
    if N == 1:
        return 0.0
    rows = np.sum(A.sum(axis=1) / row_max - 1.0)
    cols = np.sum(A.sum(axis=0) / col_max - 1.0)
    return float((rows + cols) / (2.0 * N * (N - 1)))


def global_matrices(W, A) -> np.ndarray:
    """``G^[k] = W^[k] A^[k]``."""
    return np.einsum("kij,kjl->kil", _mats(W), np.asarray(A, dtype=np.float64))


def joint_isi(G) -> float:
    """ISI of the mean absolute global matrix over datasets."""
    G = np.asarray(G, dtype=np.float64)
    if G.ndim == 2:
        G = G[None]
    return isi(np.abs(G).mean(axis=0))


def joint_isi_from(W, A) -> float:
    return joint_isi(global_matrices(W, A))


def _pair_product(Ai, Wi, Wj, order):
    # "global": W_j A_i, the analogue of G = W A, which is a scaled
    # permutation whenever the two runs agree up to order, sign and scale.
    # "printed": A_i W_j, a similarity transform of that permutation.
    if order == "global":
        return Wj @ Ai
    if order == "printed":
        return Ai @ Wj
    raise ValueError(f"unknown product order {order!r}")


def _inverses(W) -> np.ndarray:
    try:
        return np.linalg.inv(W)
    except np.linalg.LinAlgError as exc:
        raise DegenerateDemixingError("singular demixing matrix in cross-joint-ISI") from exc


def cross_joint_isi_pair(Wi, Wj, order: str = "global") -> float:
    Wi = _mats(Wi)
    Wj = _mats(Wj)
    return joint_isi(_pair_product(_inverses(Wi), Wi, Wj, order))


def cross_joint_isi(runs: Sequence, order: str = "global") -> np.ndarray:
    """Per-run consistency ``(1/R) sum_{j != i} joint-ISI(P_ij)``. Needs no
    ground truth.

    ``P_ij^[k] = W_j^[k] A_i^[k]`` with ``A_i^[k] = (W_i^[k])^-1`` by default;
    ``order="printed"`` uses ``A_i^[k] W_j^[k]`` instead, which is not zero for
    runs that differ only by a permutation of the components.
    """
    mats = [_mats(W) for W in runs]
    R = len(mats)
    if R == 0:
        return np.zeros(0)
    shapes = {m.shape for m in mats}
    if len(shapes) != 1:
        raise ValueError(f"runs have different shapes: {shapes}")
    inv = [_inverses(m) for m in mats]
    out = np.zeros(R)
    for i in range(R):
        out[i] = sum(
            joint_isi(_pair_product(inv[i], mats[i], mats[j], order)) for j in range(R) if j != i
        ) / R
    return out


def _abs_corr_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Absolute Pearson correlation between matching rows of two arrays."""
    a = a - a.mean(axis=-1, keepdims=True)
    b = b - b.mean(axis=-1, keepdims=True)
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    if np.any(na == 0) or np.any(nb == 0):
        raise DegenerateSignalError("zero-variance signal in correlation")
    return np.abs(np.sum(a * b, axis=-1)) / (na * nb)


def correlation_table(truth, W, data: DatasetCollection) -> np.ndarray:
    """``C[n, m, k] = |corr(s_n^[k], y_m^[k])|`` for all pairs."""
    Y = all_sources(W if isinstance(W, DemixingSet) else DemixingSet(W), data)  # (K, N, V)
    S = truth.sources.transpose(1, 0, 2)  # (K, N, V)
    S = S - S.mean(axis=-1, keepdims=True)
    Y = Y - Y.mean(axis=-1, keepdims=True)
    S = S / np.linalg.norm(S, axis=-1, keepdims=True)
    Yn = np.linalg.norm(Y, axis=-1, keepdims=True)
    if np.any(Yn == 0):
        raise DegenerateSignalError("estimated source with zero variance")
    Y = Y / Yn
    return np.abs(np.einsum("knv,kmv->nmk", S, Y))


def similarity_factor(
    truth, W, data: DatasetCollection, M: int, perm: Optional[np.ndarray] = None
) -> float:
    """Root-mean-square |corr| between the first ``M`` true sources and their
    estimates. ``perm[n]`` names the estimated component paired with true
    source ``n`` (identity by default, i.e. index pairing)."""
    N = truth.sources.shape[0]
    perm = np.arange(N) if perm is None else np.asarray(perm)
    Wm = _mats(W)
    K = Wm.shape[0]
    if M < 1:
        raise ValueError("similarity factor needs M >= 1")
    sq = 0.0
    for n in range(M):
        y = np.einsum("ki,kiv->kv", Wm[:, perm[n], :], data.datasets)
        s = truth.sources[n]
        sq += np.sum(_abs_corr_rows(s, y) ** 2)
    return float(np.sqrt(sq / (M * K)))


def similarity_factor_from_eps(eps) -> float:
    eps = np.asarray(eps, dtype=np.float64)
    return float(np.sqrt(np.mean(eps**2)))


def greedy_assignment(C: np.ndarray) -> np.ndarray:
    """Repeatedly pair the largest remaining entry of ``C``; ``perm[row] = col``."""
    C = np.array(C, dtype=np.float64)
    N = C.shape[0]
    perm = np.full(N, -1)
    for _ in range(N):
        i, j = np.unravel_index(np.argmax(C), C.shape)
        perm[i] = j
        C[i, :] = -np.inf
        C[:, j] = -np.inf
    return perm


def match_components(truth, W, data: DatasetCollection) -> np.ndarray:
    """Greedy max-|corr| pairing of true sources to estimated components,
    using the correlation averaged over datasets. ``perm[n]`` is the
    estimated component matched to true source ``n``."""
    return greedy_assignment(correlation_table(truth, W, data).mean(axis=2))


__all__ = [
    "isi",
    "joint_isi",
    "joint_isi_from",
    "global_matrices",
    "cross_joint_isi",
    "cross_joint_isi_pair",
    "similarity_factor",
    "similarity_factor_from_eps",
    "correlation_table",
    "greedy_assignment",
    "match_components",
]
