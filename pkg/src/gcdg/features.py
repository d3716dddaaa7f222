"""Trainable feature pathway: ``z = W2 tanh(W1 x + b1) + b2``.

The second affine map plays the role of the dimension-compression layer that
produces the D-dimensional features fed to the classifier. An identity mode
(``z = x``, no parameters) exists for experiments that need exact control of
the feature geometry.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import ShapeError


class StaleCacheError(RuntimeError):
    """A forward cache was used after the parameters it was computed with changed."""


@dataclass
class ForwardCache:
    x: np.ndarray
    h: np.ndarray  # tanh activations
    version: int
    single: bool


class FeatureNet:
    def __init__(self, W1=None, b1=None, W2=None, b2=None, identity_dim=None):
        self.version = 0
        if identity_dim is not None:
            self.identity = True
            self.in_dim = self.out_dim = int(identity_dim)
            self.W1 = self.b1 = self.W2 = self.b2 = None
            return
        self.identity = False
        self.W1 = np.array(W1, dtype=np.float64)
        self.b1 = np.array(b1, dtype=np.float64)
        self.W2 = np.array(W2, dtype=np.float64)
        self.b2 = np.array(b2, dtype=np.float64)
        hidden, self.in_dim = self.W1.shape
        self.out_dim = self.W2.shape[0]
        if self.b1.shape != (hidden,) or self.W2.shape != (self.out_dim, hidden) or self.b2.shape != (self.out_dim,):
            raise ShapeError("inconsistent FeatureNet parameter shapes")

    @classmethod
    def init_random(cls, in_dim, hidden, out_dim, rng):
        # Entries drawn with std 1/sqrt(fan_in); biases start at zero.
        W1 = rng.standard_normal((hidden, in_dim)) / np.sqrt(in_dim)
        W2 = rng.standard_normal((out_dim, hidden)) / np.sqrt(hidden)
        return cls(W1, np.zeros(hidden), W2, np.zeros(out_dim))

    @classmethod
    def identity_net(cls, dim):
        return cls(identity_dim=dim)

    def params(self):
        if self.identity:
            return {}
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def n_params(self):
        return sum(p.size for p in self.params().values())

    def mark_updated(self):
        self.version += 1

    def copy(self):
        if self.identity:
            return FeatureNet.identity_net(self.in_dim)
        return FeatureNet(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy())


def forward(net, x):
    """Features for one sample (1-D ``x``) or a batch (N, F); returns ``(z, cache)``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None] if single else x
    if X.ndim != 2 or X.shape[1] != net.in_dim:
        raise ShapeError(f"input dimension {X.shape[-1]} != network input {net.in_dim}")
    if net.identity:
        Z = X.copy()
        H = None
    else:
        H = np.tanh(X @ net.W1.T + net.b1)
        Z = H @ net.W2.T + net.b2
    cache = ForwardCache(X, H, net.version, single)
    return (Z[0] if single else Z), cache


def backward(net, cache, d_z):
    """Gradients of ``<d_z, z>`` w.r.t. the parameters, plus ``d_x``.

    Returns a dict keyed like :meth:`FeatureNet.params` with an extra ``"x"``
    entry for the input gradient.
    """
    if cache.version != net.version:
        raise StaleCacheError("forward cache predates the latest parameter update")
    G = np.asarray(d_z, dtype=np.float64)
    if cache.single:
        G = G[None]
    if G.shape != (cache.x.shape[0], net.out_dim):
        raise ShapeError(f"d_z shape {G.shape} does not match forward output")
    if net.identity:
        dx = G.copy()
        return {"x": dx[0] if cache.single else dx}
    H = cache.h
    dW2 = G.T @ H
    db2 = G.sum(axis=0)
    dpre = (G @ net.W2) * (1.0 - H * H)
    dW1 = dpre.T @ cache.x
    db1 = dpre.sum(axis=0)
    dx = dpre @ net.W1
    return {"W1": dW1, "b1": db1, "W2": dW2, "b2": db2, "x": dx[0] if cache.single else dx}
