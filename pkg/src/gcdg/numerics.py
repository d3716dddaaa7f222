"""Low-level numerical helpers shared by the rest of the package.

Vectors and matrices are plain ``numpy.float64`` arrays. Randomness comes
from ``numpy.random.Generator`` (PCG64) seeded through ``SeedSequence`` so
that every logical stage (data, init, batching, shuffling, ...) draws from
its own reproducible stream.
"""

import math

import numpy as np


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class ShapeError(ValueError):
    """Array shapes are inconsistent."""


# Independent stream ids; toggling one stage never perturbs another.
STREAM_DATA = 0
STREAM_INIT = 1
STREAM_BATCH = 2
STREAM_SCB = 3
STREAM_SPLIT = 4
STREAM_LANDSCAPE = 5


def make_rng(seed, stream=0):
    """Return a generator for ``(seed, stream)``; equal pairs replay equal draws."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


def as_vec(xs, name="xs"):
    v = np.asarray(xs, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {v.shape}")
    return v


def check_finite(arr, name="array"):
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")


def log_sum_exp(xs, axis=None):
    """Stable ``log(sum(exp(xs)))``.

    With ``axis=None`` the input must be a non-empty 1-D sequence and a float
    is returned. With an integer ``axis`` the reduction is applied along that
    axis of an n-d array (used by the batched classifier code).
    """
    if axis is None:
        a = as_vec(xs)
        if a.size == 0:
            raise DomainError("log_sum_exp of an empty sequence")
        check_finite(a, "xs")
        m = a.max()
        return float(m + math.log(np.exp(a - m).sum()))
    a = np.asarray(xs, dtype=np.float64)
    m = a.max(axis=axis, keepdims=True)
    out = m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def nearest_rank(q, n):
    """1-based rank ``ceil(q*n/100)``, immune to float round-up like 3.0000000000000004."""
    if not 0.0 < q < 100.0:
        raise DomainError(f"percentile q must lie in (0, 100), got {q}")
    return max(1, math.ceil(q * n / 100.0 - 1e-9))


def percentile_nearest_rank(xs, q):
    """Nearest-rank percentile: the ``ceil(q*n/100)``-th smallest element."""
    v = as_vec(xs)
    if v.size == 0:
        raise DomainError("percentile of an empty sequence")
    rank = nearest_rank(q, v.size)
    return float(np.sort(v, kind="stable")[rank - 1])


def gaussian_draw(rng, mean, std):
    if std < 0:
        raise DomainError(f"std must be non-negative, got {std}")
    return mean + std * float(rng.standard_normal())
