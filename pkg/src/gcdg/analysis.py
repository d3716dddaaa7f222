"""Evaluation and diagnostics: leave-one-domain-out accuracy, feature entropy,
two-direction loss landscapes and the information-gap demonstration on finite
alphabets.
"""

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import data as data_mod
from .data import SchemaError
from .numerics import STREAM_LANDSCAPE, DomainError, make_rng
from .train import RunMetrics, accuracy, objective, train

__all__ = [
    "RunMetrics", "evaluate", "leave_one_domain_out", "feature_entropy", "LandscapeGrid",
    "loss_landscape", "param_hash", "DiscreteJoint", "mutual_information",
    "conditional_entropy", "InfoGapReport", "information_gap",
]


# Accuracy ---------------------------------------------------------------

def _check_compatible(model, ds):
    if ds.n_features != model.net.in_dim:
        raise SchemaError(f"dataset has {ds.n_features} features, model expects {model.net.in_dim}")
    n_classes = (model.head.clf.n_classes if model.kind == "generative"
                 else next(iter(reversed(model.head.params().values()))).shape[0])
    if ds.n_classes > n_classes:
        raise SchemaError(f"dataset has {ds.n_classes} classes, model predicts {n_classes}")


def evaluate(ckpt, ds, plan):
    """Target-domain and source-validation accuracy of a trained checkpoint."""
    model = getattr(ckpt, "model", ckpt)
    _check_compatible(model, ds)
    m = RunMetrics()
    m.per_domain_acc[plan.target_domain] = accuracy(model, ds.x[plan.target], ds.y[plan.target])
    val = plan.val_indices()
    m.source_val_acc = accuracy(model, ds.x[val], ds.y[val])
    return m


def leave_one_domain_out(ds, cfg, split_seed=None):
    """Train once per held-out domain; returns RunMetrics with per-domain target accuracy."""
    split_seed = cfg.seed if split_seed is None else split_seed
    out = RunMetrics()
    vals = []
    for target in range(ds.n_domains):
        plan = data_mod.split(ds, target, split_seed)
        ckpt, _ = train(ds, plan, cfg)
        m = evaluate(ckpt, ds, plan)
        out.per_domain_acc[target] = m.per_domain_acc[target]
        vals.append(m.source_val_acc)
    out.source_val_acc = float(np.mean(vals))
    return out


# Feature entropy --------------------------------------------------------

VAR_FLOOR = 1e-6


def feature_entropy(feats):
    """Diagonal-Gaussian differential entropy (nats) of a feature sample.

    Uses per-dimension unbiased sample variances with a ``1e-6`` floor, so
    constant features give a finite value.
    """
    F = np.atleast_2d(np.asarray(feats, dtype=np.float64))
    if F.shape[0] < 2:
        raise DomainError("feature_entropy needs at least two samples")
    var = F.var(axis=0, ddof=1)
    return float(0.5 * np.sum(np.log(2.0 * math.pi * math.e * (var + VAR_FLOOR))))


# Loss landscape ---------------------------------------------------------

@dataclass
class LandscapeGrid:
    directions: tuple          # two dicts block name -> array
    radius: int
    step: float
    losses: np.ndarray         # (2R+1, 2R+1), index [i, j] <-> alpha=(i-R)*s, beta=(j-R)*s

    @property
    def center(self):
        return float(self.losses[self.radius, self.radius])

    def rows(self):
        R, s = self.radius, self.step
        for i in range(2 * R + 1):
            for j in range(2 * R + 1):
                yield (i - R) * s, (j - R) * s, float(self.losses[i, j])

    def to_csv(self, header=""):
        lines = [header + "alpha,beta,loss"]
        lines += [f"{a!r},{b!r},{loss!r}" for a, b, loss in self.rows()]
        return "\n".join(lines) + "\n"


def param_hash(model):
    h = hashlib.sha256()
    for name, arr in model.param_blocks().items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def filter_normalized_direction(blocks, rng):
    """Random direction with every block rescaled to that block's parameter norm."""
    out = {}
    for name, p in blocks.items():
        d = rng.standard_normal(p.shape)
        dn = np.linalg.norm(d)
        out[name] = d * (np.linalg.norm(p) / dn) if dn > 0 else d
    return out


def loss_landscape(ckpt, X, y, cfg=None, radius=10, step=0.1, seed=0, loss_fn=None):
    """Loss on ``(X, y)`` over the grid ``theta + alpha*d1 + beta*d2``.

    Parameters are restored bit-exactly afterwards. ``loss_fn(model)``
    overrides the default validation objective (used for synthetic checks).
    """
    if radius < 1:
        raise DomainError("radius must be >= 1")
    if not step > 0:
        raise DomainError("step must be positive")
    model = getattr(ckpt, "model", ckpt)
    cfg = cfg if cfg is not None else getattr(ckpt, "config", None)
    if loss_fn is None:
        def loss_fn(m):
            return objective(m, X, y, cfg)
    rng = make_rng(seed, STREAM_LANDSCAPE)
    blocks = model.param_blocks()
    saved = {k: v.copy() for k, v in blocks.items()}
    d1 = filter_normalized_direction(blocks, rng)
    d2 = filter_normalized_direction(blocks, rng)
    n = 2 * radius + 1
    losses = np.empty((n, n))
    try:
        for i in range(n):
            a = (i - radius) * step
            for j in range(n):
                b = (j - radius) * step
                for k, p in blocks.items():
                    p[...] = saved[k] + a * d1[k] + b * d2[k]
                model.net.mark_updated()
                losses[i, j] = loss_fn(model)
    finally:
        for k, p in blocks.items():
            p[...] = saved[k]
        model.net.mark_updated()
    return LandscapeGrid((d1, d2), radius, step, losses)


# Information gap ---------------------------------------------------------

class DiscreteJoint:
    """Joint distribution over a finite ``X x Y`` alphabet (rows: x, columns: y)."""

    def __init__(self, probs, tol=1e-12):
        p = np.asarray(probs, dtype=np.float64)
        if p.ndim != 2 or p.size == 0:
            raise DomainError("joint must be a non-empty 2-D table")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise DomainError("joint probabilities must be finite and non-negative")
        if abs(p.sum() - 1.0) > tol:
            raise DomainError(f"joint probabilities sum to {p.sum()!r}, not 1")
        self.p = p

    @classmethod
    def from_counts(cls, counts):
        c = np.asarray(counts, dtype=np.float64)
        if np.any(c < 0) or c.sum() <= 0:
            raise DomainError("counts must be non-negative with a positive total")
        return cls(c / c.sum())

    @property
    def shape(self):
        return self.p.shape

    def encode(self, phi):
        """Push X through a deterministic map ``phi`` (array: x index -> z index)."""
        phi = np.asarray(phi, dtype=np.int64)
        if phi.shape != (self.p.shape[0],) or np.any(phi < 0):
            raise SchemaError("encoding must map every x to a non-negative index")
        q = np.zeros((int(phi.max()) + 1, self.p.shape[1]))
        np.add.at(q, phi, self.p)
        return DiscreteJoint(q, tol=1e-9)


def _xlogy_sum(a, b):
    mask = a > 0
    return float(np.sum(a[mask] * np.log2(b[mask])))


def mutual_information(j):
    """I(X;Y) in bits, with 0 log 0 = 0."""
    p = j.p
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    mask = p > 0
    return float(np.sum(p[mask] * np.log2(p[mask] / (px * py)[mask])))


def conditional_entropy(j):
    """H(Y|X) in bits."""
    p = j.p
    px = p.sum(axis=1, keepdims=True)
    return -_xlogy_sum(p, p / np.where(px > 0, px, 1.0))


@dataclass
class InfoGapReport:
    mutual_info: list                    # I(X_i; Y) per domain, bits
    min_domain: int
    gap: float                           # sum of I(X_i;Y) - min_j I(X_j;Y)
    h_y_given_x: list = field(default_factory=list)
    h_y_given_z: list = field(default_factory=list)
    risk_increase: float = float("nan")  # sum H(Y|Z_i) - sum H(Y|X_i)
    margin: float = float("nan")         # risk_increase - gap
    invariance_deviation: float = float("nan")  # max |p(Z_i, Y) - p(Z_1, Y)|

    @property
    def encoding_invariant(self):
        return self.invariance_deviation <= 1e-12


def information_gap(joints, encoding=None):
    """Information gap across domains and, given an encoding, the source-risk check.

    With a deterministic encoding ``z = phi(x)`` shared by all domains, the
    exact increase of the optimal cross-entropy risk ``sum_i H(Y|Z_i) -
    sum_i H(Y|X_i)`` is reported next to the gap; when the encoded joints are
    identical across domains the increase is at least the gap.
    """
    joints = [j if isinstance(j, DiscreteJoint) else DiscreteJoint(j) for j in joints]
    if len(joints) < 2:
        raise DomainError("the information gap needs at least two domains")
    if len({j.shape for j in joints}) != 1:
        raise SchemaError("all domain joints must share one X x Y alphabet")
    mi = [mutual_information(j) for j in joints]
    m_star = int(np.argmin(mi))
    gap = float(sum(v - mi[m_star] for i, v in enumerate(mi) if i != m_star))
    report = InfoGapReport(mi, m_star, gap)
    if encoding is not None:
        enc = [j.encode(encoding) for j in joints]
        width = max(e.shape[0] for e in enc)
        padded = [np.vstack([e.p, np.zeros((width - e.shape[0], e.shape[1]))]) for e in enc]
        report.h_y_given_x = [conditional_entropy(j) for j in joints]
        report.h_y_given_z = [conditional_entropy(e) for e in enc]
        report.risk_increase = float(sum(report.h_y_given_z) - sum(report.h_y_given_x))
        report.margin = report.risk_increase - gap
        report.invariance_deviation = float(max(np.abs(q - padded[0]).max() for q in padded))
    return report


def collapsing_encoding(n_x):
    """Map every input symbol to a single code (the default encoding)."""
    return np.zeros(n_x, dtype=np.int64)
