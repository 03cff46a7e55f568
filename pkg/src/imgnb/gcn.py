"""Simplified-GCN scorers for exploitation (f1) and exploration (f2).

A scorer maps per-user input rows ``X`` (shape ``(m, in)``; the f1 input is
the same arm/context vector for every user) and a propagation operator
``M = S^gamma`` to one output per user::

    Y[v]  = X[v] @ blocks[v]           # block-diagonal X @ P_G, never materialized
    H_G   = relu(M @ Y)
    p_hat = tail(H_G)                  # FC tail applied row-wise
    score = ||p_hat||_2

Everything here is batched over a leading sample axis ``N`` (arms when
scoring, replay samples when training).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import UserGraph, propagation_matrix
from .neural import EstimatorNet, ReplayBuffer, TrainingDivergence, avg_pool, relu

__all__ = ["ArmScore", "GcnScorer", "exploit_forward", "explore_forward",
           "build_exploration_input", "train_scorers"]


@dataclass
class ArmScore:
    arm_id: int
    per_user: np.ndarray
    scalar: float


class GcnScorer:
    """One shared scorer; arms differ only through inputs and graphs.

    Parameters
    ----------
    m_users, input_dim : int
    rng : numpy Generator
    hidden : int
        Representation width ``p``.
    n_layers : int
        Weight layers J of the FC tail (``p -> p -> ... -> 1``).
    gamma : int
        Propagation hops.
    """

    def __init__(self, m_users, input_dim, rng, hidden=8, n_layers=3, gamma=3,
                 lr=0.01, epochs=10, buffer_size=256):
        self.m_users = int(m_users)
        self.input_dim = int(input_dim)
        self.hidden = int(hidden)
        self.gamma = int(gamma)
        self.blocks = rng.normal(0.0, 1.0 / np.sqrt(input_dim),
                                 size=(self.m_users, self.input_dim, self.hidden))
        self.tail = EstimatorNet.initialize([hidden] * n_layers + [1], rng)
        self.lr = lr
        self.epochs = epochs
        self._buf = ReplayBuffer(buffer_size)
        self.last_targets_ = None

    @property
    def n_params(self) -> int:
        return self.blocks.size + self.tail.n_params

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.blocks.ravel(), self.tail.get_flat()])

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=float)
        nb = self.blocks.size
        self.blocks = flat[:nb].reshape(self.blocks.shape).copy()
        self.tail.set_flat(flat[nb:])

    def _check(self, X, M):
        X = np.asarray(X, dtype=float)
        M = np.asarray(M, dtype=float)
        if X.shape[-1] != self.input_dim:
            raise ValueError(
                f"input dimension {X.shape[-1]} != scorer input {self.input_dim}")
        if X.shape[-2] not in (1, self.m_users):
            raise ValueError(f"expected 1 or {self.m_users} input rows, got {X.shape[-2]}")
        if M.shape[-2:] != (self.m_users, self.m_users):
            raise ValueError(
                f"graph operator is {M.shape[-2:]}, scorer has {self.m_users} users")
        return X, M

    def _project(self, X, rowwise=False):
        """``Y[..., v, :] = X[..., v, :] @ blocks[v]``."""
        m, d, p = self.blocks.shape
        if rowwise:
            return (X[..., :, None, :] @ self.blocks)[..., 0, :]
        if X.shape[-2] == 1:
            flat = self.blocks.transpose(1, 0, 2).reshape(d, m * p)
            return (X[..., 0, :] @ flat).reshape(X.shape[:-2] + (m, p))
        return (X[..., :, None, :] @ self.blocks)[..., 0, :]

    def _forward(self, X, M, rowwise=False):
        Y = self._project(X, rowwise)
        X = np.broadcast_to(X, X.shape[:-2] + (self.m_users, self.input_dim))
        Z = M @ Y
        H0 = relu(Z)
        acts, pre = self.tail._forward(H0, rowwise)
        return acts[-1][..., 0], (X, Z, acts, pre)

    def forward(self, X, M) -> np.ndarray:
        """Per-user outputs, shape ``(..., m)``.

        Users are evaluated row by row, so with ``M = I`` every output equals
        the standalone FC net ``[blocks[u], *tail]`` bit for bit.
        """
        X, M = self._check(X, M)
        return self._forward(X, M, rowwise=True)[0]

    def user_jacobian(self, X, M) -> np.ndarray:
        """d p_hat[u] / d params for every user: shape ``(..., m, n_params)``.

        Parameter order: ``blocks`` (user, input, hidden) row-major, then the
        tail layers.
        """
        X, M = self._check(X, M)
        _, (Xb, Z, acts, pre) = self._forward(X, M)
        tail_grads, d_h0 = self.tail._backward(
            acts, pre, np.ones_like(acts[-1]), per_sample=True, want_input=True)
        lead = tail_grads[0].shape[:-2]
        tail_flat = np.concatenate([g.reshape(lead + (-1,)) for g in tail_grads], axis=-1)
        gz = d_h0 * (Z > 0)
        jb = (M[..., :, :, None, None] * Xb[..., None, :, :, None]
              * gz[..., :, None, None, :])
        jb = jb.reshape(jb.shape[:-4] + (self.m_users, -1))
        return np.concatenate([jb, tail_flat], axis=-1)

    def _loss_grads(self, X, M, targets, mask):
        """Mean over samples of sum_u mask * (p_hat - target)^2 and its gradient."""
        n = X.shape[0]
        p_hat, (Xb, Z, acts, pre) = self._forward(X, M)
        resid = (p_hat - targets) * mask
        loss = np.sum(resid ** 2, axis=-1)
        dout = (2.0 / n) * resid[..., None]
        tail_grads, d_h0 = self.tail._backward(acts, pre, dout, want_input=True)
        # tail grads above are summed over the user axis only; sum over samples too
        tail_grads = [g.sum(axis=0) for g in tail_grads]
        dZ = d_h0 * (Z > 0)
        dY = np.swapaxes(M, -1, -2) @ dZ
        if X.shape[-2] == 1:
            m, d, p = self.blocks.shape
            d_blocks = (X[:, 0, :].T @ dY.reshape(n, m * p)).reshape(d, m, p).transpose(1, 0, 2)
        else:
            d_blocks = np.matmul(Xb.transpose(1, 2, 0), dY.transpose(1, 0, 2))
        return loss, d_blocks, tail_grads

    def train(self, X, M, targets, mask, tag=""):
        """Append samples, then run the GD schedule over the replay buffer.

        Returns the pre-update per-sample losses of the appended samples.
        """
        X, M = self._check(X, M)
        new_losses = np.sum(((self._forward(X, M)[0] - targets) * mask) ** 2, axis=-1)
        for j in range(X.shape[0]):
            self._buf.append(X[j], M[j], targets[j], mask[j])
        Xs, Ms, Ts, Ks = self._buf.stacked()
        for _ in range(self.epochs):
            loss, d_blocks, tail_grads = self._loss_grads(Xs, Ms, Ts, Ks)
            if not np.all(np.isfinite(loss)):
                raise TrainingDivergence(f"non-finite scorer loss{tag}")
            self.blocks -= self.lr * d_blocks
            for W, g in zip(self.tail.weights, tail_grads):
                W -= self.lr * g
        return new_losses


def _operator(g, gamma):
    if isinstance(g, UserGraph):
        return propagation_matrix(g, gamma)
    return np.asarray(g, dtype=float)


def exploit_forward(scorer: GcnScorer, arm_features, context, g1, arm_id=0) -> ArmScore:
    x = np.concatenate([np.asarray(arm_features, float), np.asarray(context, float)])
    p_hat = scorer.forward(x[None, :], _operator(g1, scorer.gamma))
    return ArmScore(arm_id, p_hat, float(np.linalg.norm(p_hat)))


def build_exploration_input(f1: GcnScorer, arm_features, context, g1,
                            pool_step: int) -> np.ndarray:
    """Pooled per-user gradients of f1, shape ``(m, ceil(n_params / pool_step))``."""
    x = np.concatenate([np.asarray(arm_features, float), np.asarray(context, float)])
    jac = f1.user_jacobian(x[None, :], _operator(g1, f1.gamma))
    return avg_pool(jac, pool_step)


def explore_forward(scorer2: GcnScorer, grad_input, g2, arm_id=0) -> ArmScore:
    grad_input = np.asarray(grad_input, dtype=float)
    if grad_input.shape[0] != scorer2.m_users:
        raise ValueError(
            f"gradient input has {grad_input.shape[0]} rows, expected {scorer2.m_users}")
    z_hat = scorer2.forward(grad_input, _operator(g2, scorer2.gamma))
    return ArmScore(arm_id, z_hat, float(np.linalg.norm(z_hat)))


def train_scorers(f1: GcnScorer, f2: GcnScorer, arm_features, context, graphs,
                  labels, supports, pool_step: int, arm_ids=None):
    """Train f1 then f2 on one round's chosen arms.

    Parameters
    ----------
    arm_features : (L, d1) array of the chosen arms.
    graphs : list of ``(g1, g2)`` per chosen arm (UserGraph or operator matrix).
    labels : (L, m) per-arm user labels.
    supports : (L, m) 0/1 masks of the users that enter each arm's loss.
    pool_step : int
        Pooling step used to build f2 inputs from f1 gradients.

    f2 inputs and targets are computed from f1 before f1 is updated.
    """
    k = np.atleast_2d(np.asarray(arm_features, float))
    c = np.asarray(context, float)
    X1 = np.concatenate([k, np.broadcast_to(c, (k.shape[0], c.size))], axis=1)[:, None, :]
    M1 = np.stack([_operator(g1, f1.gamma) for g1, _ in graphs])
    M2 = np.stack([_operator(g2, f2.gamma) for _, g2 in graphs])
    labels = np.asarray(labels, float)
    supports = np.asarray(supports, float)
    G = avg_pool(f1.user_jacobian(X1, M1), pool_step)
    targets2 = labels - f1.forward(X1, M1)
    f2.last_targets_ = targets2
    tag = f" (arms {list(arm_ids) if arm_ids is not None else list(range(len(k)))})"
    loss1 = f1.train(X1, M1, labels, supports, tag=tag)
    loss2 = f2.train(G, M2, targets2, supports, tag=tag)
    return loss1, loss2
