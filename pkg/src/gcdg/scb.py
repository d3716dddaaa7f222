"""Spurious-correlation blocking: exchange low-activation feature dimensions
between randomly paired samples of the same class.

A dimension's activation is its diagonal-Gaussian log-density (without the
``-log(2 pi)/2`` constant) under the sample's assigned component. Dimensions at
or below the per-sample ``q``-th nearest-rank percentile are treated as
carrying spurious signal and are swapped with the partner's.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import DomainError, ShapeError, as_vec, nearest_rank, percentile_nearest_rank


@dataclass
class ScbConfig:
    q: float = 20.0
    enabled: bool = True

    def __post_init__(self):
        if not 0.0 < self.q < 100.0:
            raise DomainError(f"scb.q must lie in (0, 100), got {self.q}")


@dataclass
class ScbMask:
    bits: np.ndarray  # 1 keeps the unit, 0 marks it for exchange
    q: float

    @property
    def n_masked(self):
        return int(self.bits.size - self.bits.sum())


def activation(comp, z):
    z = as_vec(z, "z")
    if z.shape != comp.mean.shape:
        raise ShapeError(f"z has length {z.size}, component has dimension {comp.mean.size}")
    diff = z - comp.mean
    return -comp.log_var - 0.5 * diff * diff * np.exp(-comp.log_var)


def build_mask(a, q):
    a = as_vec(a, "a")
    if a.size < 1:
        raise DomainError("activation vector is empty")
    thr = percentile_nearest_rank(a, q)
    return ScbMask((a > thr).astype(np.int8), q)


def shuffle_pair(z_m, z_n, mask_m, mask_n):
    """Return both samples after exchanging their low-activation units.

    Each sample keeps the units its own mask marks high and receives the
    partner's masked (low) units:
    ``z_m' = z_m * M_m + z_n * (1 - M_n)`` and symmetrically for ``z_n'``.
    When the masks differ the two terms can overlap or leave gaps; this is
    the formula as stated, not a permutation.
    """
    z_m, z_n = as_vec(z_m, "z_m"), as_vec(z_n, "z_n")
    m_m = np.asarray(getattr(mask_m, "bits", mask_m), dtype=np.float64)
    m_n = np.asarray(getattr(mask_n, "bits", mask_n), dtype=np.float64)
    if not (z_m.shape == z_n.shape == m_m.shape == m_n.shape):
        raise ShapeError("shuffle_pair arguments must share one length")
    return z_m * m_m + z_n * (1.0 - m_n), z_n * m_n + z_m * (1.0 - m_m)


def batch_activations(clf, Z, labels, comps):
    mu = clf.means[labels, comps]
    lv = clf.log_var[labels, comps]
    diff = Z - mu
    return -lv - 0.5 * diff * diff * np.exp(-lv)


def batch_masks(A, q):
    """Row-wise masks for an (N, D) activation matrix."""
    rank = nearest_rank(q, A.shape[1])
    thr = np.sort(A, axis=1, kind="stable")[:, rank - 1:rank]
    return (A > thr).astype(np.float64)


class ScbRoute:
    """Records how a shuffled batch was assembled so gradients can be routed back.

    The masks and pairing are treated as constants; only the linear
    selection of values is differentiated.
    """

    def __init__(self, masks, left, right):
        self.masks = masks
        self.left = left
        self.right = right

    def forward(self, Z):
        out = Z * self.masks
        if self.left.size:
            out[self.left] += Z[self.right] * (1.0 - self.masks[self.right])
            out[self.right] += Z[self.left] * (1.0 - self.masks[self.left])
        return out

    def backward(self, G):
        dZ = G * self.masks
        if self.left.size:
            dZ[self.right] += G[self.left] * (1.0 - self.masks[self.right])
            dZ[self.left] += G[self.right] * (1.0 - self.masks[self.left])
        return dZ


def plan_scb(Z, labels, clf, assignments, cfg, rng):
    """Draw pairs and masks for a batch; returns a :class:`ScbRoute`.

    Samples of each class (visited in ascending class order) are put in a
    random order and paired consecutively; an odd sample out keeps an all-ones
    mask and is passed through.
    """
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels)
    assignments = np.asarray(assignments)
    if Z.ndim != 2 or labels.shape != (Z.shape[0],) or assignments.shape != labels.shape:
        raise ShapeError("features, labels and assignments disagree in length")
    left, right = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        half = idx.size // 2
        left.extend(idx[0:2 * half:2])
        right.extend(idx[1:2 * half:2])
    left = np.asarray(left, dtype=np.intp)
    right = np.asarray(right, dtype=np.intp)
    masks = np.ones_like(Z)
    paired = np.concatenate([left, right])
    if paired.size:
        A = batch_activations(clf, Z[paired], labels[paired], assignments[paired])
        masks[paired] = batch_masks(A, cfg.q)
    return ScbRoute(masks, left, right)


def apply_scb(batch_features, class_labels, clf, assignments, cfg, rng):
    """Shuffle a batch; identity (a copy) when ``cfg.enabled`` is false."""
    Z = np.asarray(batch_features, dtype=np.float64)
    if not cfg.enabled:
        return Z.copy()
    return plan_scb(Z, class_labels, clf, assignments, cfg, rng).forward(Z)
