"""Feed-forward networks with hand-derived backprop and an RMSProp optimizer.

Only what the trainers need: ReLU hidden layers, identity / absolute /
softmax output heads, gradients with respect to parameters and inputs, and
a finite-difference checker. Everything is float64 and deterministic given
the initialisation generator.
"""

from __future__ import annotations

import numpy as np

from . import _backend as K
from .errors import ShapeError, StateError, TrainingError

OUT_ACTIVATIONS = ("identity", "absolute", "softmax")


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class Grad:
    """Per-parameter gradient tensors mirroring a network's parameter list."""

    __slots__ = ("arrays",)

    def __init__(self, arrays):
        self.arrays = list(arrays)

    @classmethod
    def zeros_like(cls, params) -> "Grad":
        return cls([np.zeros_like(p) for p in params])

    def __iadd__(self, other: "Grad") -> "Grad":
        for a, b in zip(self.arrays, other.arrays):
            a += b
        return self

    def scale(self, c: float) -> "Grad":
        for a in self.arrays:
            a *= c
        return self

    def __neg__(self) -> "Grad":
        return Grad([-a for a in self.arrays])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays]) if self.arrays else np.zeros(0)


class Mlp:
    """Fully-connected net: ReLU hidden layers and a configurable output head.

    Parameters live in `params` as [W0, b0, W1, b1, ...] with W of shape
    (fan_in, fan_out). `forward` is pure; `forward_train` caches activations
    for a subsequent `backward`.
    """

    def __init__(self, sizes, out: str = "identity", rng: np.random.Generator | None = None):
        if len(sizes) < 2:
            raise ShapeError("need at least input and output widths")
        if out not in OUT_ACTIVATIONS:
            raise ShapeError(f"unknown output activation {out!r}")
        rng = rng if rng is not None else np.random.default_rng()
        self.sizes = list(sizes)
        self.out = out
        self.params: list[np.ndarray] = []
        for din, dout in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(din)
            self.params.append(rng.uniform(-bound, bound, size=(din, dout)))
            self.params.append(rng.uniform(-bound, bound, size=dout))
        self._cache = None

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ShapeError(f"expected input (B, {self.sizes[0]}), got {x.shape}")
        return x

    def _apply_out(self, z: np.ndarray) -> np.ndarray:
        if self.out == "identity":
            return z
        if self.out == "absolute":
            return np.abs(z)
        return softmax(z)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = self._check_input(x)
        h = x
        for layer in range(self.n_layers):
            if layer < self.n_layers - 1:
                h = K.linear_relu_forward(h, self.params[2 * layer],
                                          self.params[2 * layer + 1])
            else:
                h = K.linear_forward(h, self.params[2 * layer],
                                     self.params[2 * layer + 1])
        return self._apply_out(h)

    def forward_train(self, x: np.ndarray) -> np.ndarray:
        """Forward pass that caches activations for backward()."""
        x = self._check_input(x)
        acts = [x]
        h = x
        for layer in range(self.n_layers):
            if layer < self.n_layers - 1:
                h = K.linear_relu_forward(h, self.params[2 * layer],
                                          self.params[2 * layer + 1])
                acts.append(h)
            else:
                h = K.linear_forward(h, self.params[2 * layer],
                                     self.params[2 * layer + 1])
        y = self._apply_out(h)
        self._cache = (acts, h, y)
        return y

    def backward(self, dy: np.ndarray):
        """Backprop upstream gradient dy (w.r.t. the post-activation output).

        Returns (Grad, dx). Requires a prior forward_train on the same input.
        """
        if self._cache is None:
            raise StateError("backward() without a prior forward_train()")
        acts, z, y = self._cache
        dy = np.ascontiguousarray(dy, dtype=np.float64)
        if dy.shape != y.shape:
            raise ShapeError(f"upstream gradient {dy.shape} does not match output {y.shape}")
        if self.out == "identity":
            dz = dy
        elif self.out == "absolute":
            dz = dy * np.sign(z)  # subgradient 0 at z == 0
        else:
            dz = y * (dy - (dy * y).sum(axis=-1, keepdims=True))
        grads: list[np.ndarray] = [None] * (2 * self.n_layers)  # type: ignore[list-item]
        d = np.ascontiguousarray(dz)
        for layer in range(self.n_layers - 1, -1, -1):
            if layer > 0:
                # acts[layer] is post-relu, so the mask rides along with dx
                dw, db, d = K.linear_backward_masked(acts[layer],
                                                     self.params[2 * layer], d)
            else:
                dw, db, d = K.linear_backward(acts[layer],
                                              self.params[2 * layer], d)
            grads[2 * layer] = dw
            grads[2 * layer + 1] = db
        return Grad(grads), d

    def clone(self) -> "Mlp":
        other = Mlp.__new__(Mlp)
        other.sizes = list(self.sizes)
        other.out = self.out
        other.params = [p.copy() for p in self.params]
        other._cache = None
        return other

    def state_dict(self) -> dict[str, np.ndarray]:
        return {str(i): p for i, p in enumerate(self.params)}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for i in range(len(self.params)):
            src = state[str(i)]
            if src.shape != self.params[i].shape:
                raise ShapeError(f"parameter {i}: {src.shape} != {self.params[i].shape}")
            self.params[i] = np.ascontiguousarray(src, dtype=np.float64)


class RmsProp:
    """RMSProp without momentum or weight decay; updates params in place."""

    def __init__(self, params, lr: float, alpha: float = 0.99, eps: float = 1e-8,
                 maximize: bool = False):
        self.params = list(params)
        self.lr = float(lr)
        self.alpha = float(alpha)
        self.eps = float(eps)
        self.maximize = maximize
        self.sq_avg = [np.zeros_like(p) for p in self.params]

    def step(self, grad: Grad) -> None:
        sign = -1.0 if self.maximize else 1.0
        for i, (p, g, v) in enumerate(zip(self.params, grad.arrays, self.sq_avg)):
            g = np.ascontiguousarray(sign * g, dtype=np.float64)
            bad = K.rmsprop_step(p.ravel(), g.ravel(), v.ravel(),
                                 self.lr, self.alpha, self.eps)
            if bad:
                raise TrainingError(
                    f"non-finite gradient in parameter tensor {i} (shape {p.shape})")


def hard_sync(target_params, online_params) -> None:
    for t, p in zip(target_params, online_params):
        np.copyto(t, p)


def soft_sync(target_params, online_params, alpha: float) -> None:
    """target <- alpha * online + (1 - alpha) * target, per parameter."""
    for t, p in zip(target_params, online_params):
        t *= 1.0 - alpha
        t += alpha * p


def grad_check(net: Mlp, x: np.ndarray, h: float = 1e-5,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between backprop and central finite differences.

    Uses the scalar probe f(params) = sum(u * net(x)) with a fixed random u.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    y = net.forward_train(x)
    u = rng.standard_normal(y.shape)
    analytic, _ = net.backward(u)

    worst = 0.0
    for p, g in zip(net.params, analytic.arrays):
        flat_p = p.ravel()
        flat_g = g.ravel()
        for idx in range(flat_p.size):
            orig = flat_p[idx]
            flat_p[idx] = orig + h
            f_plus = float((u * net.forward(x)).sum())
            flat_p[idx] = orig - h
            f_minus = float((u * net.forward(x)).sum())
            flat_p[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            scale = max(abs(numeric), abs(flat_g[idx]), 1e-8)
            worst = max(worst, abs(numeric - flat_g[idx]) / scale)
    return worst
