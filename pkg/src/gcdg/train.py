"""End-to-end training: batch assembly, feature shuffling, balanced assignment,
loss and Adam updates of both the extractor and the classifier head.

Three heads share the loop: the generative mixture classifier and two
discriminative baselines (linear and one-hidden-layer MLP softmax heads).
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dcb, features, scb
from .dcb import DcbConfig
from .hlc import GmmClassifier, hlc_backward
from .numerics import (STREAM_BATCH, STREAM_INIT, STREAM_SCB, DomainError, ShapeError,
                       log_sum_exp, make_rng, softmax)
from .scb import ScbConfig

MAGIC = "GCDG1"
KINDS = ("generative", "linear", "mlp")


class ConfigError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    def __init__(self, iteration, detail):
        self.iteration = iteration
        super().__init__(f"training diverged at iteration {iteration}: {detail}")


class CheckpointError(ValueError):
    pass


# Configuration ----------------------------------------------------------

def _parse_bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# flat key -> (attribute path, parser)
CONFIG_KEYS = {
    "train.lr": ("lr", float),
    "train.iterations": ("iterations", int),
    "train.batch_per_domain": ("batch_per_domain", int),
    "train.nll_weight": ("nll_weight", float),
    "train.assignment": ("assignment", str),
    "train.seed": ("seed", int),
    "train.log_every": ("log_every", int),
    "model.kind": ("classifier_kind", str),
    "model.k": ("k", int),
    "model.inference": ("inference", str),
    "model.mlp_hidden": ("mlp_hidden", int),
    "net.identity": ("identity", _parse_bool),
    "net.hidden": ("hidden", int),
    "net.dim_d": ("dim_d", int),
    "scb.enabled": ("scb.enabled", _parse_bool),
    "scb.q": ("scb.q", float),
    "dcb.enabled": ("dcb.enabled", _parse_bool),
    "dcb.lambda": ("dcb.lam", float),
    "dcb.iterations": ("dcb.iterations", int),
    "data.task": ("data_task", str),
    "data.spec_path": ("data_spec_path", str),
    "data.samples_per_cell": ("samples_per_cell", int),
}


@dataclass
class RunConfig:
    lr: float = 1e-3
    iterations: int = 2000
    batch_per_domain: int = 32
    k: int = 2
    dim_d: int = 8
    hidden: int = 16
    identity: bool = False
    scb: ScbConfig = field(default_factory=ScbConfig)
    dcb: DcbConfig = field(default_factory=DcbConfig)
    classifier_kind: str = "generative"
    nll_weight: float = 1.0
    assignment: str = "hard"
    inference: str = "max_component"
    mlp_hidden: int = 0  # 0 picks the smallest width matching the generative head's size
    seed: int = 0
    log_every: int = 50
    data_task: str = ""
    data_spec_path: str = ""
    samples_per_cell: int = 100

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("iterations",):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("batch_per_domain", "k", "dim_d", "hidden", "log_every", "samples_per_cell"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not self.lr > 0:
            raise ConfigError("train.lr must be positive")
        if self.nll_weight < 0:
            raise ConfigError("train.nll_weight must be >= 0")
        if self.classifier_kind not in KINDS:
            raise ConfigError(f"model.kind must be one of {KINDS}, got {self.classifier_kind!r}")
        if self.assignment not in ("hard", "soft"):
            raise ConfigError("train.assignment must be 'hard' or 'soft'")
        if self.inference not in ("max_component", "marginal"):
            raise ConfigError("model.inference must be 'max_component' or 'marginal'")
        if self.mlp_hidden < 0:
            raise ConfigError("model.mlp_hidden must be >= 0")

    def get(self, key):
        attr = CONFIG_KEYS[key][0]
        obj = self
        *head, last = attr.split(".")
        for part in head:
            obj = getattr(obj, part)
        return getattr(obj, last)

    def set(self, key, raw):
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        attr, parse = CONFIG_KEYS[key]
        try:
            value = parse(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
        obj = self
        *head, last = attr.split(".")
        for part in head:
            obj = getattr(obj, part)
        setattr(obj, last, value)

    def to_flat(self):
        return {key: self.get(key) for key in CONFIG_KEYS}

    def with_overrides(self, **flat):
        cfg = RunConfig.from_flat(self.to_flat())
        for k, v in flat.items():
            cfg.set(k, v)
        cfg._revalidate()
        return cfg

    def _revalidate(self):
        try:
            self.validate()
            ScbConfig(self.scb.q, self.scb.enabled)
            DcbConfig(self.dcb.lam, self.dcb.iterations, self.dcb.enabled)
        except DomainError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_flat(cls, flat):
        cfg = cls()
        for k, v in flat.items():
            cfg.set(k, v)
        cfg._revalidate()
        return cfg

    @classmethod
    def parse(cls, text, source="<config>"):
        """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
        flat = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
            flat[key] = value
        return cls.from_flat(flat)

    @classmethod
    def from_file(cls, path):
        return cls.parse(Path(path).read_text(), str(path))

    def dumps(self, prefix=""):
        return "".join(f"{prefix}{k} = {_fmt(v)}\n" for k, v in self.to_flat().items())


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


# Classifier heads -------------------------------------------------------

class GenerativeHead:
    kind = "generative"

    def __init__(self, clf, inference="max_component"):
        self.clf = clf
        self.inference = inference

    def params(self):
        return self.clf.params()

    def after_update(self):
        self.clf.clamp_()

    def predict(self, Z):
        return self.clf.predict_batch(Z, self.inference)


class LinearHead:
    """Affine softmax head ``logits = W z + b``."""

    kind = "linear"

    def __init__(self, W, b):
        self.W = np.array(W, dtype=np.float64)
        self.b = np.array(b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeError("linear head needs W (C, D) and b (C,)")

    @classmethod
    def init_random(cls, classes, dim, rng):
        return cls(rng.standard_normal((classes, dim)) / np.sqrt(dim), np.zeros(classes))

    def params(self):
        return {"W": self.W, "b": self.b}

    def after_update(self):
        pass

    def logits(self, Z):
        if Z.shape[1] != self.W.shape[1]:
            raise ShapeError(f"feature dimension {Z.shape[1]} != head input {self.W.shape[1]}")
        return Z @ self.W.T + self.b, None

    def logits_backward(self, Z, cache, G):
        return {"W": G.T @ Z, "b": G.sum(axis=0)}, G @ self.W

    def predict(self, Z):
        return np.argmax(self.logits(Z)[0], axis=1)


class MlpHead:
    """Two fully connected layers with a tanh in between."""

    kind = "mlp"

    def __init__(self, W1, b1, W2, b2):
        self.W1 = np.array(W1, dtype=np.float64)
        self.b1 = np.array(b1, dtype=np.float64)
        self.W2 = np.array(W2, dtype=np.float64)
        self.b2 = np.array(b2, dtype=np.float64)
        if self.W2.shape[1] != self.W1.shape[0] or self.b1.shape != (self.W1.shape[0],) \
                or self.b2.shape != (self.W2.shape[0],):
            raise ShapeError("inconsistent MLP head shapes")

    @staticmethod
    def min_hidden(classes, dim, k):
        """Smallest width whose parameter count reaches the generative head's ``2*C*K*D``."""
        target = 2 * classes * k * dim
        return max(1, math.ceil((target - classes) / (dim + 1 + classes)))

    @classmethod
    def init_random(cls, classes, dim, hidden, rng):
        W1 = rng.standard_normal((hidden, dim)) / np.sqrt(dim)
        W2 = rng.standard_normal((classes, hidden)) / np.sqrt(hidden)
        return cls(W1, np.zeros(hidden), W2, np.zeros(classes))

    def params(self):
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def after_update(self):
        pass

    def logits(self, Z):
        if Z.shape[1] != self.W1.shape[1]:
            raise ShapeError(f"feature dimension {Z.shape[1]} != head input {self.W1.shape[1]}")
        H = np.tanh(Z @ self.W1.T + self.b1)
        return H @ self.W2.T + self.b2, H

    def logits_backward(self, Z, H, G):
        dpre = (G @ self.W2) * (1.0 - H * H)
        grads = {"W1": dpre.T @ Z, "b1": dpre.sum(axis=0), "W2": G.T @ H, "b2": G.sum(axis=0)}
        return grads, dpre @ self.W1

    def predict(self, Z):
        return np.argmax(self.logits(Z)[0], axis=1)


def n_params(head):
    return sum(p.size for p in head.params().values())


class Model:
    """Feature extractor plus classifier head."""

    def __init__(self, net, head):
        self.net = net
        self.head = head

    @property
    def kind(self):
        return self.head.kind

    def features(self, X):
        return features.forward(self.net, X)[0]

    def predict(self, X):
        return self.head.predict(np.atleast_2d(self.features(X)))

    def param_blocks(self):
        """Ordered mapping ``"net.W1" -> array`` of every trainable array (views, not copies)."""
        out = {f"net.{k}": v for k, v in self.net.params().items()}
        out.update({f"clf.{k}": v for k, v in self.head.params().items()})
        return out

    def after_update(self):
        self.head.after_update()
        self.net.mark_updated()

    def copy(self):
        return _model_from_arrays(self.kind, self.net.identity, self.net.in_dim,
                                  {k: v.copy() for k, v in self.param_blocks().items()},
                                  getattr(self.head, "inference", "max_component"))


def build_model(cfg, n_features, n_classes, rng=None):
    rng = rng if rng is not None else make_rng(cfg.seed, STREAM_INIT)
    if cfg.identity:
        net = features.FeatureNet.identity_net(n_features)
    else:
        net = features.FeatureNet.init_random(n_features, cfg.hidden, cfg.dim_d, rng)
    D = net.out_dim
    if cfg.classifier_kind == "generative":
        head = GenerativeHead(GmmClassifier.init_random(n_classes, cfg.k, D, rng), cfg.inference)
    elif cfg.classifier_kind == "linear":
        head = LinearHead.init_random(n_classes, D, rng)
    else:
        hidden = cfg.mlp_hidden or MlpHead.min_hidden(n_classes, D, cfg.k)
        head = MlpHead.init_random(n_classes, D, hidden, rng)
        gen_count = 2 * n_classes * cfg.k * D
        if n_params(head) < gen_count:
            raise ConfigError(f"MLP head has {n_params(head)} parameters, fewer than the "
                              f"generative head's {gen_count}; raise model.mlp_hidden")
    return Model(net, head)


def _model_from_arrays(kind, identity, in_dim, arrays, inference="max_component"):
    if identity:
        net = features.FeatureNet.identity_net(in_dim)
    else:
        net = features.FeatureNet(arrays["net.W1"], arrays["net.b1"], arrays["net.W2"], arrays["net.b2"])
    if kind == "generative":
        head = GenerativeHead(GmmClassifier(arrays["clf.means"], arrays["clf.log_var"]), inference)
    elif kind == "linear":
        head = LinearHead(arrays["clf.W"], arrays["clf.b"])
    elif kind == "mlp":
        head = MlpHead(arrays["clf.W1"], arrays["clf.b1"], arrays["clf.W2"], arrays["clf.b2"])
    else:
        raise CheckpointError(f"unknown classifier kind {kind!r}")
    return Model(net, head)


# Loss -------------------------------------------------------------------

def class_plans(clf, Z, y, dcb_cfg):
    """Per-class posterior plans ``{c: TransportPlan}`` for the classes present in ``y``."""
    plans = {}
    for c in np.unique(y):
        plans[int(c)] = dcb.class_plan(clf, int(c), Z[y == c], dcb_cfg)
    return plans


def component_weights(plans, y, K, assignment="hard"):
    """(N, K) weights of the true-class components, from per-class plans."""
    W = np.zeros((y.size, K))
    for c, plan in plans.items():
        rows = np.flatnonzero(y == c)
        if assignment == "hard":
            W[rows, dcb.assign(plan)] = 1.0
        else:
            W[rows] = plan.gamma
    return W


def generative_loss(clf, Z, y, weights, nll_weight, need_grad=True):
    """Mean of ``CE + beta * NLL`` and its gradients.

    CE is the cross-entropy of a softmax over per-class log marginals; NLL is
    the negative log joint of the true class's components weighted by
    ``weights`` (one-hot for hard assignment). ``weights`` are constants.
    Returns ``(loss, HlcGrads or None)``.
    """
    N = y.size
    if np.any(y >= clf.n_classes) or np.any(y < 0):
        raise IndexError("label outside the classifier's class range")
    LJ = clf.log_joint(Z)                       # (N, C, K)
    L = log_sum_exp(LJ, axis=-1)                # (N, C)
    lse = log_sum_exp(L, axis=-1)               # (N,)
    rows = np.arange(N)
    ce = lse - L[rows, y]
    nll = -(weights * LJ[rows, y]).sum(axis=1)
    loss = float(np.mean(ce + nll_weight * nll))
    if not need_grad:
        return loss, None
    P = np.exp(L - lse[:, None])                # class posteriors
    R = np.exp(LJ - L[..., None])               # within-class responsibilities
    delta = np.zeros_like(P)
    delta[rows, y] = 1.0
    U = (P - delta)[..., None] * R
    U[rows, y] -= nll_weight * weights
    U /= N
    return loss, hlc_backward(clf, Z, U)


def discriminative_loss(head, Z, y, need_grad=True):
    N = y.size
    logits, cache = head.logits(Z)
    lse = log_sum_exp(logits, axis=-1)
    rows = np.arange(N)
    loss = float(np.mean(lse - logits[rows, y]))
    if not need_grad:
        return loss, None, None
    G = softmax(logits, axis=1)
    G[rows, y] -= 1.0
    G /= N
    grads, dZ = head.logits_backward(Z, cache, G)
    return loss, grads, dZ


def loss_and_grads(X, y, model, cfg, plans=None, route=None):
    """Loss on a batch and gradients for every parameter block.

    ``X`` is the raw input batch. For the generative head, ``plans`` maps each
    present class to its posterior plan over the (possibly shuffled) features;
    they are computed here when omitted. ``route`` is an optional
    :class:`~gcdg.scb.ScbRoute` applied to the features before the head.
    Returns ``(loss, grads)`` with ``grads`` keyed like ``model.param_blocks()``.
    """
    y = np.asarray(y)
    Z, cache = features.forward(model.net, X)
    Z = np.atleast_2d(Z)
    Zs = route.forward(Z) if route is not None else Z
    if model.kind == "generative":
        clf = model.head.clf
        if plans is None:
            plans = class_plans(clf, Zs, y, cfg.dcb)
        W = component_weights(plans, y, clf.n_components, cfg.assignment)
        loss, g = generative_loss(clf, Zs, y, W, cfg.nll_weight)
        head_grads = {"means": g.d_mean, "log_var": g.d_log_var}
        dZs = g.d_feature
    else:
        loss, head_grads, dZs = discriminative_loss(model.head, Zs, y)
    dZ = route.backward(dZs) if route is not None else dZs
    net_grads = features.backward(model.net, cache, dZ)
    net_grads.pop("x")
    grads = {f"net.{k}": v for k, v in net_grads.items()}
    grads.update({f"clf.{k}": v for k, v in head_grads.items()})
    return loss, grads


def objective(model, X, y, cfg):
    """Loss without gradients and without shuffling (validation / landscape probes)."""
    y = np.asarray(y)
    Z = np.atleast_2d(model.features(X))
    if model.kind == "generative":
        clf = model.head.clf
        W = component_weights(class_plans(clf, Z, y, cfg.dcb), y, clf.n_components, cfg.assignment)
        return generative_loss(clf, Z, y, W, cfg.nll_weight, need_grad=False)[0]
    return discriminative_loss(model.head, Z, y, need_grad=False)[0]


# Optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params, grads, state, lr):
    """Bias-corrected Adam update, in place on the arrays in ``params``."""
    if set(params) != set(grads):
        raise ShapeError(f"parameter and gradient keys differ: {sorted(set(params) ^ set(grads))}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for k in params:
        p, g = params[k], grads[k]
        if p.shape != g.shape:
            raise ShapeError(f"{k}: gradient shape {g.shape} != parameter shape {p.shape}")
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


def lr_at(it, total, base_lr):
    """Step schedule: x0.1 from 60% of training, x0.01 from 80%."""
    if it < 0.6 * total:
        return base_lr
    if it < 0.8 * total:
        return 0.1 * base_lr
    return 0.01 * base_lr


# Checkpoints ------------------------------------------------------------

@dataclass
class Checkpoint:
    model: Model
    adam: AdamState
    iteration: int
    config: RunConfig
    rng_states: dict = field(default_factory=dict)

    def save(self, path):
        Path(path).write_text(self.dumps())

    def dumps(self):
        lines = [MAGIC,
                 f"iteration {self.iteration}",
                 f"kind {self.model.kind}",
                 f"identity {int(self.model.net.identity)}",
                 f"in_dim {self.model.net.in_dim}",
                 f"config {json.dumps(self.config.to_flat(), sort_keys=True)}",
                 f"adam_step {self.adam.step}"]
        for name, st in sorted(self.rng_states.items()):
            lines.append(f"rng {name} {json.dumps(st, sort_keys=True)}")
        blocks = self.model.param_blocks()
        for name, arr in blocks.items():
            lines.append(_array_line(name, arr))
        for name in blocks:
            if name in self.adam.m:
                lines.append(_array_line(f"adam.m.{name}", self.adam.m[name]))
                lines.append(_array_line(f"adam.v.{name}", self.adam.v[name]))
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, path):
        return cls.loads(Path(path).read_text(), str(path))

    @classmethod
    def loads(cls, text, source="<checkpoint>"):
        lines = text.splitlines()
        if not lines or lines[0].strip() != MAGIC:
            raise CheckpointError(f"{source}: missing {MAGIC} header")
        meta, arrays, rng_states = {}, {}, {}
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            tag, _, rest = line.partition(" ")
            try:
                if tag == "array":
                    name, shape, *vals = rest.split(" ")
                    dims = tuple(int(s) for s in shape.split(",") if s)
                    arrays[name] = np.array([float(v) for v in vals], dtype=np.float64).reshape(dims)
                elif tag == "rng":
                    name, _, js = rest.partition(" ")
                    rng_states[name] = json.loads(js)
                else:
                    meta[tag] = rest
            except ValueError as exc:
                raise CheckpointError(f"{source}:{lineno}: {exc}") from None
        try:
            cfg = RunConfig.from_flat(json.loads(meta["config"]))
            params = {k: v for k, v in arrays.items() if not k.startswith("adam.")}
            model = _model_from_arrays(meta["kind"], meta["identity"] == "1", int(meta["in_dim"]),
                                       params, cfg.inference)
            adam = AdamState(step=int(meta["adam_step"]))
            for k, v in arrays.items():
                if k.startswith("adam.m."):
                    adam.m[k[len("adam.m."):]] = v
                elif k.startswith("adam.v."):
                    adam.v[k[len("adam.v."):]] = v
            iteration = int(meta["iteration"])
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"{source}: incomplete checkpoint ({exc})") from None
        for k, p in model.param_blocks().items():
            if k in adam.m and (adam.m[k].shape != p.shape or adam.v[k].shape != p.shape):
                raise CheckpointError(f"{source}: optimizer moment shape mismatch for {k}")
        return cls(model, adam, iteration, cfg, rng_states)


def _array_line(name, arr):
    shape = ",".join(str(s) for s in arr.shape)
    return f"array {name} {shape} " + " ".join(repr(float(v)) for v in arr.ravel())


# Training loop ----------------------------------------------------------

@dataclass
class RunMetrics:
    trace: list = field(default_factory=list)        # (iter, split, loss, acc)
    per_domain_acc: dict = field(default_factory=dict)
    source_val_acc: float = float("nan")
    feature_entropy: float = float("nan")
    landscape: object = None

    @property
    def avg_acc(self):
        if not self.per_domain_acc:
            return float("nan")
        return float(np.mean(list(self.per_domain_acc.values())))

    def trace_csv(self, header=""):
        rows = [header + "iter,split,loss,acc"]
        rows += [f"{it},{split},{loss!r},{acc!r}" for it, split, loss, acc in self.trace]
        return "\n".join(rows) + "\n"


def sample_batch(ds, plan, per_domain, rng):
    """Indices of ``per_domain`` training samples from every source domain, domains ascending."""
    idx = []
    for d in plan.source_domains:
        pool = plan.train[d]
        idx.append(rng.choice(pool, size=per_domain, replace=per_domain > pool.size))
    return np.concatenate(idx)


def accuracy(model, X, y):
    if len(y) == 0:
        return float("nan")
    return float(np.mean(model.predict(X) == y))


def train(ds, plan, cfg, resume=None, stop_at=None, model=None):
    """Run the training loop; returns ``(Checkpoint, RunMetrics)``.

    ``resume`` continues from a checkpoint (model, optimizer and RNG streams
    restored, so the continuation is bit-identical to an uninterrupted run).
    ``stop_at`` ends the loop early at that iteration while keeping the
    learning-rate schedule of the full ``cfg.iterations``.
    """
    n_classes = ds.n_classes
    batch_rng = make_rng(cfg.seed, STREAM_BATCH)
    scb_rng = make_rng(cfg.seed, STREAM_SCB)
    if resume is not None:
        model = resume.model
        adam = resume.adam
        start = resume.iteration
        if "batch" in resume.rng_states:
            batch_rng.bit_generator.state = resume.rng_states["batch"]
            scb_rng.bit_generator.state = resume.rng_states["scb"]
    else:
        model = model or build_model(cfg, ds.n_features, n_classes)
        adam = AdamState()
        start = 0
    end = cfg.iterations if stop_at is None else min(stop_at, cfg.iterations)
    metrics = RunMetrics()
    val_idx = plan.val_indices()
    Xv, yv = ds.x[val_idx], ds.y[val_idx]
    use_scb = model.kind == "generative" and cfg.scb.enabled

    for it in range(start, end):
        idx = sample_batch(ds, plan, cfg.batch_per_domain, batch_rng)
        X, y = ds.x[idx], ds.y[idx]
        # Non-finite values are caught below and reported as divergence.
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            try:
                route = None
                if use_scb:
                    clf = model.head.clf
                    Z = np.atleast_2d(model.features(X))
                    # Components for the activations come from the pre-update
                    # parameters on unshuffled features.
                    comps = component_weights(class_plans(clf, Z, y, cfg.dcb), y,
                                              clf.n_components).argmax(axis=1)
                    route = scb.plan_scb(Z, y, clf, comps, cfg.scb, scb_rng)
                loss, grads = loss_and_grads(X, y, model, cfg, route=route)
            except (FloatingPointError, dcb.SinkhornUnderflowError) as exc:
                raise DivergenceError(it, str(exc)) from exc
        if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise DivergenceError(it, f"non-finite loss {loss}")
        if it % cfg.log_every == 0 or it == end - 1:
            metrics.trace.append((it, "train", loss, accuracy(model, X, y)))
            if val_idx.size:
                metrics.trace.append((it, "val", objective(model, Xv, yv, cfg), accuracy(model, Xv, yv)))
        adam_step(model.param_blocks(), grads, adam, lr_at(it, cfg.iterations, cfg.lr))
        model.after_update()

    if val_idx.size:
        metrics.source_val_acc = accuracy(model, Xv, yv)
    ckpt = Checkpoint(model, adam, max(start, end), cfg,
                      {"batch": batch_rng.bit_generator.state, "scb": scb_rng.bit_generator.state})
    return ckpt, metrics
