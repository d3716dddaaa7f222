"""Balanced component assignment via entropic optimal transport.

For the ``N_c`` samples of one class the posterior matrix ``gamma`` (N_c x K)
is constrained to have unit row sums and column sums ``N_c / K``. It is
obtained by Sinkhorn-Knopp scaling of the kernel ``exp(-lambda * O)``, where
``O`` holds negative component log-densities.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .numerics import DomainError, softmax


class SinkhornUnderflowError(FloatingPointError):
    """The transport kernel has an all-zero row or column."""

    def __init__(self, axis, index):
        self.axis = axis
        self.index = index
        super().__init__(f"transport kernel {axis} {index} underflowed to zero; costs too large for lambda")


@dataclass
class DcbConfig:
    lam: float = 1.0
    iterations: int = 3
    enabled: bool = True

    def __post_init__(self):
        if not self.lam > 0:
            raise DomainError(f"dcb.lambda must be positive, got {self.lam}")
        if self.iterations < 1:
            raise DomainError(f"dcb.iterations must be >= 1, got {self.iterations}")


@dataclass
class TransportPlan:
    gamma: np.ndarray
    iterations_run: int
    marginal_violation: float


def build_cost(clf, c, batch_z):
    """Cost ``O[n, i] = -log N(z_n | c, i)`` with each row shifted to a zero minimum."""
    Z = np.atleast_2d(np.asarray(batch_z, dtype=np.float64))
    if Z.shape[0] == 0:
        raise DomainError(f"no samples of class {c} to build a cost matrix from")
    clf._check_class(c)
    ld = kernels.log_density(Z, clf.means[c:c + 1], clf.log_var[c:c + 1])[:, 0, :]
    cost = -ld
    return cost - cost.min(axis=1, keepdims=True)


def sinkhorn(cost, cfg=None, iterations=None):
    """Scale ``exp(-lambda * cost)`` towards unit rows and ``N/K`` columns.

    ``iterations`` overrides ``cfg.iterations``. The last operation is always a
    row rescale, so every row of the plan is an exact probability vector; the
    residual column error is reported in ``marginal_violation``.
    """
    cfg = cfg or DcbConfig()
    iters = cfg.iterations if iterations is None else int(iterations)
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] < 1:
        raise DomainError(f"cost must be a non-empty matrix, got shape {cost.shape}")
    N, K = cost.shape
    Q = np.exp(-cfg.lam * cost)
    dead_rows = np.flatnonzero(Q.sum(axis=1) == 0.0)
    if dead_rows.size:
        raise SinkhornUnderflowError("row", int(dead_rows[0]))
    dead_cols = np.flatnonzero(Q.sum(axis=0) == 0.0)
    if dead_cols.size:
        raise SinkhornUnderflowError("column", int(dead_cols[0]))
    gamma, _, _ = kernels.sinkhorn_scale(Q, N / K, iters)
    violation = float(np.abs(gamma.sum(axis=0) - N / K).max())
    return TransportPlan(gamma, iters, violation)


def assign(plan):
    """Most probable component per sample (lowest index on ties)."""
    gamma = plan.gamma if isinstance(plan, TransportPlan) else np.asarray(plan)
    return np.argmax(gamma, axis=1)


def class_plan(clf, c, batch_z, cfg):
    """Posterior for one class: the transport plan, or plain responsibilities when disabled."""
    if cfg.enabled:
        return sinkhorn(build_cost(clf, c, batch_z), cfg)
    Z = np.atleast_2d(np.asarray(batch_z, dtype=np.float64))
    ld = kernels.log_density(Z, clf.means[c:c + 1], clf.log_var[c:c + 1])[:, 0, :]
    gamma = softmax(ld, axis=1)
    N, K = gamma.shape
    return TransportPlan(gamma, 0, float(np.abs(gamma.sum(axis=0) - N / K).max()))
