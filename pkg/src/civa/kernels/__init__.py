"""Backend selection for the hot sweep kernels.

The compiled numba path is used by default. Set ``CIVA_BACKEND=numpy`` to
force the pure-numpy path (it is also used automatically when numba cannot
be imported).
"""
import logging
import os

from . import _numpy
from ._codes import (  # noqa: F401
    AR,
    ARGMAX,
    ARGMIN,
    FIXED,
    IVA_G,
    OK,
    PT,
    STATUS_ILL_CONDITIONED,
    STATUS_NONFINITE,
    STEP_FLOOR,
    TF,
)

logger = logging.getLogger(__name__)

ENV_FLAG = "CIVA_BACKEND"

try:
    from . import _numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None
    HAS_NUMBA = False


def requested_backend() -> str:
    name = os.environ.get(ENV_FLAG, "numba").strip().lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"{ENV_FLAG} must be 'numba' or 'numpy', got {name!r}")
    if name == "numba" and not HAS_NUMBA:
        logger.warning("numba unavailable, falling back to numpy kernels")
        return "numpy"
    return name


def get_backend(name=None):
    """Return the kernel module for ``name`` (or the env-selected one)."""
    name = requested_backend() if name is None else name
    if name == "numba":
        if not HAS_NUMBA:
            raise RuntimeError("numba backend requested but numba is not importable")
        return _numba
    if name == "numpy":
        return _numpy
    raise ValueError(f"unknown backend {name!r}")
