"""Compiled-kernel dispatch.

Hot loops are written twice: a numba ``@njit`` version and a vectorized
NumPy version. The NumPy path is used when numba is missing or when the
environment variable ``TEXRO_PURE_NUMPY`` is set to a truthy value. The
flag is read on every dispatch so tests can flip it with ``monkeypatch``.
"""

from __future__ import annotations

import os

try:
    import numba
    from numba import prange

    HAVE_NUMBA = True
    if "NUMBA_THREADING_LAYER" not in os.environ:
        # skip the TBB probe, which only warns on systems with an old TBB
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False
    prange = range

ENV_FLAG = "TEXRO_PURE_NUMPY"


def use_numba() -> bool:
    if not HAVE_NUMBA:
        return False
    return os.environ.get(ENV_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` with on-disk caching, or a no-op decorator without numba."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        kwargs.setdefault("error_model", "numpy")
        return numba.njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda fn: fn
