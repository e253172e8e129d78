"""Pure-numpy fallback for the compiled kernels in _speedups.pyx.

Used automatically when the extension is not built (or is disabled via the
DECPG_NO_EXT environment variable). Same call signatures and semantics.
"""

import numpy as np


def linear_forward(x, w, b):
    return x @ w + b


def linear_relu_forward(x, w, b):
    return np.maximum(x @ w + b, 0.0)


def linear_backward(x, w, dy):
    dw = x.T @ dy
    db = dy.sum(axis=0)
    dx = dy @ w.T
    return dw, db, dx


def linear_backward_masked(x, w, dy):
    """linear_backward with dx masked by the relu that produced x."""
    dw = x.T @ dy
    db = dy.sum(axis=0)
    dx = np.where(x > 0.0, dy @ w.T, 0.0)
    return dw, db, dx


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dy, h):
    return np.where(h > 0.0, dy, 0.0)


def rmsprop_step(p, g, v, lr, alpha, eps):
    if not np.all(np.isfinite(g)):
        return 1
    v *= alpha
    v += (1.0 - alpha) * g * g
    p -= lr * g / (np.sqrt(v) + eps)
    return 0
