"""Matrix files shared by every command.

Two encodings are accepted:

* CSV, one matrix row (channel) per line;
* binary: the 8-byte magic ``IVAMAT01``, little-endian u64 rows and cols,
  then row-major little-endian float64 values.

Stacks of square matrices (demixing/mixing sets) are stored as one
``(K*N, N)`` matrix.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"IVAMAT01"
_HEADER = struct.Struct("<8sQQ")


def write_matrix(path, A, fmt=None) -> Path:
    path = Path(path)
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A[None]
    if A.ndim != 2:
        raise ValueError(f"matrix files hold 2-D arrays, got shape {A.shape}")
    fmt = fmt or ("csv" if path.suffix.lower() == ".csv" else "bin")
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        np.savetxt(path, A, delimiter=",", fmt="%.17g")
    elif fmt == "bin":
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, A.shape[0], A.shape[1]))
            fh.write(np.ascontiguousarray(A, dtype="<f8").tobytes())
    else:
        raise ValueError(f"unknown matrix format {fmt!r}")
    return path


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if head[:8] == MAGIC:
            if len(head) < _HEADER.size:
                raise ValueError(f"{path}: truncated header")
            _, rows, cols = _HEADER.unpack(head)
            body = fh.read()
            if len(body) != 8 * rows * cols:
                raise ValueError(f"{path}: expected {rows * cols} values, found {len(body) // 8}")
            return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(np.float64)
    A = np.loadtxt(path, delimiter=",", ndmin=2)
    return A.astype(np.float64)


def write_stack(path, stack, fmt=None) -> Path:
    stack = np.asarray(stack, dtype=np.float64)
    K, N, C = stack.shape
    return write_matrix(path, stack.reshape(K * N, C), fmt)


def read_stack(path, N: int) -> np.ndarray:
    A = read_matrix(path)
    if A.shape[0] % N:
        raise ValueError(f"{path}: {A.shape[0]} rows is not a multiple of N={N}")
    return A.reshape(-1, N, A.shape[1])
