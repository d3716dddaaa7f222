"""Kernel backend selection.

The compiled extension is used when it imports cleanly; setting the
environment variable ``GCDG_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

import numpy as np

from . import _kernels_py

_compiled = None
if os.environ.get("GCDG_PURE_PYTHON", "0") in ("", "0"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "numpy"
_impl = _compiled if _compiled is not None else _kernels_py


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def log_density(Z, means, log_var):
    return _impl.log_density(_c(Z), _c(means), _c(log_var))


def density_backward(Z, means, log_var, U):
    return _impl.density_backward(_c(Z), _c(means), _c(log_var), _c(U))


def sinkhorn_scale(Q, col_target, iterations):
    return _impl.sinkhorn_scale(_c(Q), float(col_target), int(iterations))


def backends():
    """Mapping of available backend name to kernel module (for benchmarks and tests)."""
    out = {"numpy": _kernels_py}
    if _compiled is not None:
        out["cython"] = _compiled
    return out
