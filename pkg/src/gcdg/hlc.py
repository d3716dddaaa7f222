"""Per-class Gaussian-mixture classifier with diagonal covariances.

Every class owns ``K`` components. Mixing coefficients are pinned at ``1/K``
and never trained; balance between components is enforced through the
transport-based assignments in :mod:`gcdg.dcb` instead.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .numerics import ShapeError, as_vec, log_sum_exp, softmax

LOG_VAR_MIN = -12.0
LOG_VAR_MAX = 12.0
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class GmmComponent:
    mean: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        self.mean = as_vec(self.mean, "mean")
        self.log_var = np.clip(as_vec(self.log_var, "log_var"), LOG_VAR_MIN, LOG_VAR_MAX)
        if self.mean.shape != self.log_var.shape:
            raise ShapeError("mean and log_var must have equal length")

    @property
    def dim(self):
        return self.mean.size


class GmmClassifier:
    """``C`` classes x ``K`` components x ``D`` dimensions.

    ``means`` and ``log_var`` are (C, K, D) arrays and are the trainable
    parameters. Component views returned by :meth:`component` share memory
    with them.
    """

    def __init__(self, means, log_var):
        means = np.array(means, dtype=np.float64)
        log_var = np.array(log_var, dtype=np.float64)
        if means.ndim != 3 or means.shape != log_var.shape:
            raise ShapeError(f"means/log_var must share a (C, K, D) shape, got {means.shape} and {log_var.shape}")
        self.means = means
        self.log_var = np.clip(log_var, LOG_VAR_MIN, LOG_VAR_MAX)

    @classmethod
    def init_random(cls, classes, components, dim, rng, mean_std=0.5):
        means = mean_std * rng.standard_normal((classes, components, dim))
        return cls(means, np.zeros((classes, components, dim)))

    @classmethod
    def from_components(cls, comps):
        """Build from a nested list ``comps[c][i]`` of :class:`GmmComponent`."""
        means = [[comp.mean for comp in row] for row in comps]
        log_var = [[comp.log_var for comp in row] for row in comps]
        return cls(means, log_var)

    @property
    def n_classes(self):
        return self.means.shape[0]

    @property
    def n_components(self):
        return self.means.shape[1]

    @property
    def dim(self):
        return self.means.shape[2]

    @property
    def mix_log(self):
        """(C, K) log mixing coefficients, all equal to ``-log K``."""
        return np.full(self.means.shape[:2], -math.log(self.n_components))

    def component(self, c, i):
        # Bypass __post_init__ so the view aliases the parameter arrays.
        comp = object.__new__(GmmComponent)
        comp.mean = self.means[c, i]
        comp.log_var = self.log_var[c, i]
        return comp

    def params(self):
        return {"means": self.means, "log_var": self.log_var}

    def clamp_(self):
        np.clip(self.log_var, LOG_VAR_MIN, LOG_VAR_MAX, out=self.log_var)

    def copy(self):
        return GmmClassifier(self.means.copy(), self.log_var.copy())

    def n_params(self):
        return self.means.size + self.log_var.size

    def _check_class(self, c):
        if not 0 <= c < self.n_classes:
            raise IndexError(f"class id {c} out of range for {self.n_classes} classes")

    def _check_dim(self, z):
        if z.shape[-1] != self.dim:
            raise ShapeError(f"feature dimension {z.shape[-1]} != classifier dimension {self.dim}")

    # Batched scoring --------------------------------------------------

    def log_joint(self, Z):
        """``mix_log + log N(z | c, i)`` for every sample, class and component: (N, C, K)."""
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        self._check_dim(Z)
        return kernels.log_density(Z, self.means, self.log_var) - math.log(self.n_components)

    def class_scores(self, Z, mode="max_component"):
        """Per-class scores (N, C): max component score or full log marginal."""
        lj = self.log_joint(Z)
        if mode == "max_component":
            return lj.max(axis=-1)
        if mode == "marginal":
            return log_sum_exp(lj, axis=-1)
        raise ValueError(f"unknown inference mode {mode!r}")

    def predict_batch(self, Z, mode="max_component"):
        # np.argmax returns the first maximum: ties go to the lowest class id.
        return np.argmax(self.class_scores(Z, mode), axis=1)


def component_log_density(comp, z):
    z = as_vec(z, "z")
    if z.shape != comp.mean.shape:
        raise ShapeError(f"z has length {z.size}, component has dimension {comp.mean.size}")
    diff = z - comp.mean
    return float(-0.5 * np.sum(LOG_2PI + comp.log_var + diff * diff * np.exp(-comp.log_var)))


def _component_scores(clf, c, z):
    clf._check_class(c)
    z = as_vec(z, "z")
    clf._check_dim(z)
    mix = -math.log(clf.n_components)
    return np.array([mix + component_log_density(clf.component(c, i), z)
                     for i in range(clf.n_components)])


def class_log_marginal(clf, c, z):
    return log_sum_exp(_component_scores(clf, c, z))


def class_log_max_component(clf, c, z):
    """Best component score for class ``c`` and its index (lowest index on ties)."""
    s = _component_scores(clf, c, z)
    i = int(np.argmax(s))
    return float(s[i]), i


def responsibilities(clf, c, z):
    return softmax(_component_scores(clf, c, z))


def predict(clf, z, mode="max_component"):
    """Class with the highest score under a uniform class prior."""
    z = as_vec(z, "z")
    if mode == "max_component":
        scores = [class_log_max_component(clf, c, z)[0] for c in range(clf.n_classes)]
    elif mode == "marginal":
        scores = [class_log_marginal(clf, c, z) for c in range(clf.n_classes)]
    else:
        raise ValueError(f"unknown inference mode {mode!r}")
    return int(np.argmax(scores))


@dataclass
class HlcGrads:
    d_mean: np.ndarray
    d_log_var: np.ndarray
    d_feature: np.ndarray


def hlc_backward(clf, z, upstream):
    """Gradient of ``sum_ci upstream[c, i] * log N(z | mu_ci, var_ci)``.

    ``z`` may be a single vector with ``upstream`` of shape (C, K), or a batch
    (N, D) with ``upstream`` of shape (N, C, K); ``d_feature`` follows ``z``.
    """
    z = np.asarray(z, dtype=np.float64)
    U = np.asarray(upstream, dtype=np.float64)
    single = z.ndim == 1
    Z = z[None] if single else z
    if single:
        U = U[None]
    clf._check_dim(Z)
    if U.shape != (Z.shape[0], clf.n_classes, clf.n_components):
        raise ShapeError(f"upstream shape {U.shape[1:] if single else U.shape} does not match classifier")
    d_mean, d_log_var, d_z = kernels.density_backward(Z, clf.means, clf.log_var, U)
    return HlcGrads(d_mean, d_log_var, d_z[0] if single else d_z)
