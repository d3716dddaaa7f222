"""Synthetic multi-domain tasks, dataset files and the leave-one-domain-out split."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import STREAM_DATA, STREAM_SPLIT, DomainError, make_rng


class ParseError(ValueError):
    pass


class SchemaError(ValueError):
    pass


@dataclass
class TaskSpec:
    domains: int
    classes: int
    raw_dim: int
    centers: np.ndarray  # (domains, classes, raw_dim)
    mode_std: float
    samples_per_cell: int
    seed: int = 0

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)
        if min(self.domains, self.classes, self.raw_dim, self.samples_per_cell) < 1:
            raise DomainError("task counts must be positive")
        if self.centers.shape != (self.domains, self.classes, self.raw_dim):
            raise DomainError(
                f"centers shape {self.centers.shape} != ({self.domains}, {self.classes}, {self.raw_dim})")
        if not self.mode_std >= 0:
            raise DomainError(f"mode_std must be non-negative, got {self.mode_std}")

    def to_dict(self):
        return {"domains": self.domains, "classes": self.classes, "raw_dim": self.raw_dim,
                "centers": self.centers.tolist(), "mode_std": self.mode_std,
                "samples_per_cell": self.samples_per_cell, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(int(d["domains"]), int(d["classes"]), int(d["raw_dim"]), d["centers"],
                       float(d["mode_std"]), int(d["samples_per_cell"]), int(d.get("seed", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"invalid task spec: {exc}") from exc

    @classmethod
    def from_file(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise DomainError(f"{path}: not valid JSON ({exc})") from exc


def _bimodal1d(seed=0, samples_per_cell=100):
    # Class 0 sits at -2 or +2 depending on the domain; class 1 always at 0.
    centers = [[[-2.0], [0.0]], [[2.0], [0.0]], [[-2.0], [0.0]]]
    return TaskSpec(3, 2, 1, centers, 0.3, samples_per_cell, seed)


def _ring2d(seed=0, samples_per_cell=100):
    # Class 1 at the origin; classes 0 and 2 switch sides across domains, so
    # pooled sources are multi-modal and not linearly separable.
    centers = [
        [[-2.0, 0.0], [0.0, 0.0], [0.0, 2.0]],
        [[2.0, 0.0], [0.0, 0.0], [0.0, 2.0]],
        [[-2.0, 0.0], [0.0, 0.0], [0.0, -2.0]],
    ]
    return TaskSpec(3, 3, 2, centers, 0.4, samples_per_cell, seed)


NAMED_TASKS = {"bimodal1d": _bimodal1d, "ring2d": _ring2d}


def named_task(name, seed=0, samples_per_cell=100):
    try:
        return NAMED_TASKS[name](seed=seed, samples_per_cell=samples_per_cell)
    except KeyError:
        raise DomainError(f"unknown task {name!r}; known: {', '.join(sorted(NAMED_TASKS))}") from None


@dataclass
class Dataset:
    x: np.ndarray  # (N, F)
    y: np.ndarray  # class ids
    domain: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.int64)
        self.domain = np.asarray(self.domain, dtype=np.int64)
        if not (self.x.shape[0] == self.y.size == self.domain.size):
            raise SchemaError("x, y and domain lengths differ")

    def __len__(self):
        return self.y.size

    @property
    def n_features(self):
        return self.x.shape[1]

    @property
    def n_domains(self):
        return int(self.domain.max()) + 1 if len(self) else 0

    @property
    def n_classes(self):
        return int(self.y.max()) + 1 if len(self) else 0

    def subset(self, idx):
        return Dataset(self.x[idx], self.y[idx], self.domain[idx])

    def cell_counts(self):
        """{(domain, class): count} in sorted key order."""
        keys, counts = np.unique(np.stack([self.domain, self.y], axis=1), axis=0, return_counts=True)
        return {(int(d), int(c)): int(n) for (d, c), n in zip(keys, counts)}

    def equals(self, other):
        return (np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y)
                and np.array_equal(self.domain, other.domain))


def generate(spec):
    """Draw ``samples_per_cell`` points from N(center, mode_std^2 I) for every cell.

    Cells are emitted domain-major, class-minor.
    """
    rng = make_rng(spec.seed, STREAM_DATA)
    xs, ys, ds = [], [], []
    n = spec.samples_per_cell
    for m in range(spec.domains):
        for c in range(spec.classes):
            xs.append(spec.centers[m, c] + spec.mode_std * rng.standard_normal((n, spec.raw_dim)))
            ys.append(np.full(n, c))
            ds.append(np.full(n, m))
    return Dataset(np.concatenate(xs), np.concatenate(ys), np.concatenate(ds))


@dataclass
class SplitPlan:
    target_domain: int
    train: dict = field(default_factory=dict)  # source domain -> sample indices
    val: dict = field(default_factory=dict)
    target: np.ndarray = None

    def train_indices(self):
        return np.concatenate([self.train[d] for d in sorted(self.train)])

    def val_indices(self):
        return np.concatenate([self.val[d] for d in sorted(self.val)])

    @property
    def source_domains(self):
        return sorted(self.train)


def split(ds, target, seed):
    """Hold out ``target`` whole; split each source domain 8:2 by a seeded permutation."""
    n_dom = ds.n_domains
    if not 0 <= target < n_dom:
        raise IndexError(f"target domain {target} out of range for {n_dom} domains")
    rng = make_rng(seed, STREAM_SPLIT)
    plan = SplitPlan(int(target), target=np.flatnonzero(ds.domain == target))
    for d in range(n_dom):
        if d == target:
            continue
        idx = rng.permutation(np.flatnonzero(ds.domain == d))
        n_val = idx.size // 5
        plan.val[d] = np.sort(idx[:n_val])
        plan.train[d] = np.sort(idx[n_val:])
    return plan


def save(ds, path):
    """Write ``domain,class,x0,...`` rows; floats use ``repr`` so they round-trip exactly."""
    header = ",".join(["domain", "class"] + [f"x{j}" for j in range(ds.n_features)])
    lines = [header]
    for d, c, row in zip(ds.domain, ds.y, ds.x):
        lines.append(",".join([str(int(d)), str(int(c))] + [repr(float(v)) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def load(path):
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise SchemaError(f"{path}: empty dataset file")
    header = lines[0].strip().split(",")
    if header[:2] != ["domain", "class"] or len(header) < 3:
        raise SchemaError(f"{path}: header must be 'domain,class,x0,...'")
    n_feat = len(header) - 2
    if header[2:] != [f"x{j}" for j in range(n_feat)]:
        raise SchemaError(f"{path}: feature columns must be named x0..x{n_feat - 1}")
    xs, ys, ds = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cols = line.split(",")
        if len(cols) != n_feat + 2:
            raise ParseError(f"{path}:{lineno}: expected {n_feat + 2} columns, got {len(cols)}")
        try:
            d, c = int(cols[0]), int(cols[1])
            row = [float(v) for v in cols[2:]]
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        if d < 0 or c < 0:
            raise ParseError(f"{path}:{lineno}: negative domain or class id")
        ds.append(d)
        ys.append(c)
        xs.append(row)
    if not xs:
        raise SchemaError(f"{path}: no data rows")
    return Dataset(np.array(xs), np.array(ys), np.array(ds))
