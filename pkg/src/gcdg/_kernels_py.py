"""Pure numpy implementations of the hot kernels.

Signatures and semantics match the compiled ``_kernels`` module exactly; this
module is used when the extension is unavailable or ``GCDG_PURE_PYTHON`` is set.
"""

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


def log_density(Z, means, log_var):
    """Diagonal Gaussian log-densities, shape (N, C, K), for Z (N, D)."""
    D = Z.shape[1]
    diff = Z[:, None, None, :] - means[None]
    maha = (diff * diff * np.exp(-log_var)[None]).sum(axis=-1)
    return -0.5 * (D * LOG_2PI + log_var.sum(axis=-1)[None] + maha)


def density_backward(Z, means, log_var, U):
    """Gradients of ``sum(U * log_density(Z, means, log_var))``.

    Returns ``(d_means, d_log_var, d_Z)`` with the shapes of the inputs.
    """
    diff = Z[:, None, None, :] - means[None]
    s = diff * np.exp(-log_var)[None]
    d_means = np.einsum("nck,nckd->ckd", U, s)
    d_log_var = 0.5 * (np.einsum("nck,nckd->ckd", U, diff * s) - U.sum(axis=0)[..., None])
    d_Z = -np.einsum("nck,nckd->nd", U, s)
    return d_means, d_log_var, d_Z


def sinkhorn_scale(Q, col_target, iterations):
    """Alternate column/row rescaling of kernel Q; returns (gamma, a, b).

    Each of the ``iterations`` alternations rescales columns to sum to
    ``col_target`` and then rows to sum to one, so gamma = diag(a) Q diag(b)
    always ends row-stochastic.
    """
    N, K = Q.shape
    a = np.ones(N)
    b = np.ones(K)
    for _ in range(iterations):
        b = col_target / (a @ Q)
        a = 1.0 / (Q @ b)
    gamma = a[:, None] * Q * b[None, :]
    return gamma, a, b
