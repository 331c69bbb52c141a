"""Backend switch for the hot kernels.

Kernels are written twice: a loop version compiled with numba and a
vectorised numpy version.  ``PSSMP_DISABLE_NUMBA=1`` forces the numpy path;
without numba installed the numpy path is the only one.
"""
from __future__ import annotations

import os

_FLAG = "PSSMP_DISABLE_NUMBA"

# an outdated TBB otherwise triggers a warning on first parallel launch
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp workqueue tbb")

try:  # pragma: no cover - depends on the environment
    import numba as _numba
except ImportError:  # pragma: no cover
    _numba = None

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get(_FLAG, "").strip().lower() not in {
    "1",
    "true",
    "yes",
    "on",
}

numba_default = {"nogil": True, "cache": True, "fastmath": False, "error_model": "numpy"}


def njit(**kwargs):
    """``numba.njit`` with the package defaults; identity without numba."""
    opts = dict(numba_default)
    opts.update(kwargs)

    def wrap(fn):
        if not HAVE_NUMBA:
            return fn
        return _numba.njit(**opts)(fn)

    return wrap


prange = _numba.prange if HAVE_NUMBA else range


def set_num_threads(n: int | None) -> None:
    """Apply a thread count to numba's parallel backend (no-op otherwise)."""
    if n is None or not HAVE_NUMBA:
        return
    n = max(1, min(int(n), _numba.config.NUMBA_NUM_THREADS))
    _numba.set_num_threads(n)


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
