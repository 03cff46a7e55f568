"""Bias-free fully connected networks with hand-written backprop.

Every learned function in the package (the per-user estimators and the FC
tails of the graph scorers) is an :class:`EstimatorNet`. Weights may carry
leading "stack" dimensions so that a bank of identically shaped networks
(one per user) is evaluated and trained with a single broadcasted matmul.

Flattened parameter order is layer-major, then row-major within each
``(in, out)`` weight matrix.
"""
from __future__ import annotations

import math
from collections import deque
from typing import Sequence

import numpy as np

__all__ = [
    "EstimatorNet",
    "TrainingDivergence",
    "ReplayBuffer",
    "fc_forward",
    "sgd_step",
    "gd_epochs",
    "grad_wrt_params",
    "per_sample_grads",
    "avg_pool",
    "pooled_length",
    "finite_difference_grad",
]


class TrainingDivergence(RuntimeError):
    """Raised when a training loss becomes NaN or infinite."""


def relu(z):
    return np.maximum(z, 0.0)


class EstimatorNet:
    """J-layer FC network: rectifier on hidden layers, identity output, no biases.

    Parameters
    ----------
    layer_dims : sequence of int
        ``(input_dim, hidden_1, ..., hidden_{J-1}, output_dim)``.
    weights : list of ndarray, optional
        One ``(..., in, out)`` array per layer. Zeros if omitted.
    stack : tuple of int
        Leading dimensions shared by every weight array (e.g. ``(m,)`` for a
        bank of ``m`` independent networks).
    """

    def __init__(self, layer_dims: Sequence[int], weights=None, stack=()):
        layer_dims = tuple(int(d) for d in layer_dims)
        if len(layer_dims) < 3:
            raise ValueError(
                f"need at least one hidden layer, got layer_dims={layer_dims}")
        if any(d < 1 for d in layer_dims):
            raise ValueError(f"layer dims must be positive, got {layer_dims}")
        self.layer_dims = layer_dims
        self.stack = tuple(stack)
        shapes = [self.stack + (a, b) for a, b in zip(layer_dims[:-1], layer_dims[1:])]
        if weights is None:
            weights = [np.zeros(s) for s in shapes]
        else:
            weights = [np.array(w, dtype=float) for w in weights]
            if len(weights) != len(shapes):
                raise ValueError("one weight matrix per layer required")
            for w, s in zip(weights, shapes):
                if w.shape != s:
                    raise ValueError(f"weight shape {w.shape} does not chain, expected {s}")
        self.weights = weights

    @classmethod
    def initialize(cls, layer_dims, rng: np.random.Generator, stack=()):
        """Entries drawn from N(0, 1/fan_in)."""
        layer_dims = tuple(layer_dims)
        weights = [rng.normal(0.0, 1.0 / math.sqrt(a), size=tuple(stack) + (a, b))
                   for a, b in zip(layer_dims[:-1], layer_dims[1:])]
        return cls(layer_dims, weights, stack)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_params(self) -> int:
        """Parameters of a single (unstacked) network."""
        return sum(a * b for a, b in zip(self.layer_dims[:-1], self.layer_dims[1:]))

    def copy(self) -> "EstimatorNet":
        return EstimatorNet(self.layer_dims, [w.copy() for w in self.weights], self.stack)

    def get_flat(self) -> np.ndarray:
        lead = self.stack
        return np.concatenate([w.reshape(lead + (-1,)) for w in self.weights], axis=-1)

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=float)
        offset = 0
        for l, w in enumerate(self.weights):
            size = w.shape[-2] * w.shape[-1]
            self.weights[l] = flat[..., offset:offset + size].reshape(w.shape).copy()
            offset += size

    # -- core passes -----------------------------------------------------
    def _forward(self, X, rowwise=False):
        """Activations and pre-activations of every layer.

        With ``rowwise`` each input row goes through its own vector-matrix
        product, so a row's result does not depend on what else is in the
        batch (a single 2-D matmul may round differently per batch shape).
        """
        acts = [X]
        pre = []
        h = X
        last = len(self.weights) - 1
        for l, W in enumerate(self.weights):
            z = (h[..., None, :] @ W)[..., 0, :] if rowwise else h @ W
            pre.append(z)
            h = relu(z) if l < last else z
            acts.append(h)
        return acts, pre

    def _backward(self, acts, pre, dout, per_sample=False, want_input=False):
        """Backpropagate ``dout`` (shape of the output) through the net.

        Returns per-layer weight gradients, summed over the sample axis
        unless ``per_sample`` is set, and optionally the input gradient.
        Rectifier derivative at exactly 0 is taken as 0.
        """
        grads = [None] * len(self.weights)
        delta = dout
        for l in range(len(self.weights) - 1, -1, -1):
            a = acts[l]
            if per_sample:
                grads[l] = a[..., :, None] * delta[..., None, :]
            else:
                grads[l] = np.swapaxes(a, -1, -2) @ delta
            if l > 0 or want_input:
                delta = delta @ np.swapaxes(self.weights[l], -1, -2)
                if l > 0:
                    delta = delta * (pre[l - 1] > 0)
        return (grads, delta) if want_input else grads

    def forward(self, X):
        return self._forward(np.asarray(X, dtype=float))[0][-1]


def _check_input(net: EstimatorNet, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.input_dim:
        raise ValueError(
            f"input has dimension {x.shape[-1]}, network expects {net.input_dim}")
    return x


def fc_forward(net: EstimatorNet, x) -> np.ndarray:
    """Output of ``net`` at ``x``; ``x`` may be a vector or a batch of rows."""
    x = _check_input(net, x)
    return net.forward(x)


def _check_finite(loss, where=""):
    bad = np.argwhere(~np.isfinite(np.atleast_1d(loss)))
    if bad.size:
        idx = tuple(int(i) for i in bad[0])
        net = f" in stacked network {idx[0] if len(idx) == 1 else idx}" if np.ndim(loss) else ""
        raise TrainingDivergence(f"non-finite training loss{net}{where}")


def sgd_step(net: EstimatorNet, x, target, lr: float) -> float:
    """One gradient step on a single sample with loss ``sum((out - target)**2)``.

    Returns the pre-update loss.
    """
    if not lr > 0:
        raise ValueError("lr must be positive")
    x = _check_input(net, x)[None, :]
    target = np.asarray(target, dtype=float).reshape(1, -1)
    acts, pre = net._forward(x)
    resid = acts[-1] - target
    loss = float(np.sum(resid ** 2))
    _check_finite(loss)
    grads = net._backward(acts, pre, 2.0 * resid)
    for W, g in zip(net.weights, grads):
        W -= lr * g
    return loss


def gd_epochs(net: EstimatorNet, X, Y, lr: float, epochs: int) -> np.ndarray:
    """Full-batch gradient descent on the mean per-sample squared error.

    ``X`` has shape ``(..., N, in)`` and ``Y`` shape ``(..., N, out)`` where
    the leading dims match ``net.stack`` (or broadcast against it). Returns
    the loss before the first step, one value per stacked network.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    n = X.shape[-2]
    first = None
    for _ in range(epochs):
        acts, pre = net._forward(X)
        resid = acts[-1] - Y
        loss = np.sum(resid ** 2, axis=(-1, -2)) / n
        _check_finite(loss)
        if first is None:
            first = loss
        grads = net._backward(acts, pre, 2.0 * resid / n)
        for W, g in zip(net.weights, grads):
            W -= lr * g
    return first if first is not None else np.zeros(net.stack)


def per_sample_grads(net: EstimatorNet, X) -> np.ndarray:
    """d(sum of outputs)/d(params) for every row of ``X``.

    Shape ``(..., N, n_params)``; ``net`` is left untouched.
    """
    X = _check_input(net, X)
    acts, pre = net._forward(X)
    grads = net._backward(acts, pre, np.ones_like(acts[-1]), per_sample=True)
    lead = grads[0].shape[:-2]
    return np.concatenate([g.reshape(lead + (-1,)) for g in grads], axis=-1)


def grad_wrt_params(net: EstimatorNet, x) -> np.ndarray:
    """Flat gradient of the (summed) output at a single input vector."""
    x = _check_input(net, x)
    if x.ndim != 1:
        raise ValueError("grad_wrt_params takes a single input vector")
    return per_sample_grads(net, x[None, :])[..., 0, :]


def pooled_length(n: int, step: int) -> int:
    return -(-int(n) // int(step))


def avg_pool(v, step: int) -> np.ndarray:
    """Non-overlapping mean pooling along the last axis.

    The trailing partial window is averaged over its own length.
    """
    if step < 1:
        raise ValueError(f"pooling step must be >= 1, got {step}")
    v = np.asarray(v, dtype=float)
    if step == 1:
        return v.copy()
    n = v.shape[-1]
    full = (n // step) * step
    lead = v.shape[:-1]
    out = v[..., :full].reshape(lead + (n // step, step)).mean(axis=-1)
    if full < n:
        out = np.concatenate([out, v[..., full:].mean(axis=-1, keepdims=True)], axis=-1)
    return out


def finite_difference_grad(fn, params, eps: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``fn(params)`` over a flat parameter vector."""
    params = np.array(params, dtype=float)
    grad = np.empty_like(params)
    for k in range(params.size):
        old = params[k]
        params[k] = old + eps
        hi = fn(params)
        params[k] = old - eps
        lo = fn(params)
        params[k] = old
        grad[k] = (hi - lo) / (2 * eps)
    return grad


class ReplayBuffer:
    """Keeps the most recent ``capacity`` samples as tuples of arrays."""

    def __init__(self, capacity: int = 256):
        if capacity < 1:
            raise ValueError("buffer capacity must be >= 1")
        self.capacity = capacity
        self._items = deque(maxlen=capacity)

    def __len__(self):
        return len(self._items)

    def append(self, *fields):
        self._items.append(tuple(np.asarray(f, dtype=float) for f in fields))

    def stacked(self):
        """Each field stacked along a new leading sample axis."""
        return tuple(np.stack(col) for col in zip(*self._items))
