"""Per-user pre-estimation networks.

For every (macro-)user ``u`` the bank keeps an exploitation net estimating
the probability that ``u`` is newly activated by an arm under a context,
and an exploration net that maps the pooled parameter gradient of the
exploitation net to the expected residual of that estimate. All users'
networks share one shape and live in stacked weight arrays.
"""
from __future__ import annotations

import numpy as np

from .neural import (EstimatorNet, ReplayBuffer, TrainingDivergence,
                     avg_pool, gd_epochs, per_sample_grads, pooled_length)

__all__ = ["UserEstimatorBank", "auto_pool_step"]


def auto_pool_step(n_params: int, max_len: int = 64) -> int:
    """Smallest step whose pooled length is at most ``max_len``."""
    return max(1, -(-n_params // max_len))


class UserEstimatorBank:
    """Stacked exploitation / exploration networks for ``m_users`` users.

    Parameters
    ----------
    m_users : int
    input_dim : int
        ``d1 + d2``, the length of a concatenated arm/context vector.
    hidden : int
        Width of every hidden layer.
    n_layers : int
        Number of weight layers J (>= 2).
    pool_step : int, optional
        Pooling step for exploitation gradients; defaults to the smallest
        step giving at most 64 pooled features.
    rng : numpy Generator
    upper : array of shape (m_users,), optional
        Largest attainable label per user (the member count of a
        macro-node); estimates are clipped to ``[0, upper]``. Defaults to 1.
    """

    def __init__(self, m_users, input_dim, rng, hidden=16, n_layers=3,
                 pool_step=None, lr=0.01, epochs=10, buffer_size=256, upper=None):
        self.m_users = int(m_users)
        self.upper = np.ones(self.m_users) if upper is None else np.asarray(upper, float)
        self.input_dim = int(input_dim)
        dims = [self.input_dim] + [hidden] * (n_layers - 1) + [1]
        self.exploit = EstimatorNet.initialize(dims, rng, stack=(self.m_users,))
        n_params = self.exploit.n_params
        self.pool_step = int(pool_step) if pool_step else auto_pool_step(n_params)
        self.explore_dim = pooled_length(n_params, self.pool_step)
        edims = [self.explore_dim] + [hidden] * (n_layers - 1) + [1]
        self.explore = EstimatorNet.initialize(edims, rng, stack=(self.m_users,))
        self.lr = lr
        self.epochs = epochs
        self._exploit_buf = ReplayBuffer(buffer_size)
        self._explore_buf = ReplayBuffer(buffer_size)
        self.last_explore_targets_ = None

    def _inputs(self, arm_features, context):
        k = np.atleast_2d(np.asarray(arm_features, dtype=float))
        c = np.asarray(context, dtype=float)
        x = np.concatenate([k, np.broadcast_to(c, (k.shape[0], c.shape[-1]))], axis=1)
        if x.shape[1] != self.input_dim:
            raise ValueError(
                f"arm+context dimension {x.shape[1]} != expected {self.input_dim}")
        return x

    def raw_probs(self, X) -> np.ndarray:
        """Unclipped exploitation outputs, shape ``(m_users, n_inputs)``."""
        return self.exploit.forward(X)[..., 0]

    def estimate_probs(self, arm_features, context) -> np.ndarray:
        """Clipped estimates; ``(m,)`` for one arm or ``(n_arms, m)``."""
        X = self._inputs(arm_features, context)
        out = self.clipped(self.raw_probs(X)).T
        return out[0] if np.ndim(arm_features) == 1 else out

    def clipped(self, raw):
        return np.clip(raw, 0.0, self.upper[:, None])

    def pooled_gradients(self, X) -> np.ndarray:
        """Pooled exploitation-net gradients, shape ``(m_users, n_inputs, q)``."""
        return avg_pool(per_sample_grads(self.exploit, X), self.pool_step)

    def estimate_gains(self, arm_features, context) -> np.ndarray:
        X = self._inputs(arm_features, context)
        gains = self.explore.forward(self.pooled_gradients(X))[..., 0].T
        return gains[0] if np.ndim(arm_features) == 1 else gains

    def train(self, arm_features, context, labels):
        """Add one sample per chosen arm for every user, then run GD.

        ``labels`` has shape ``(n_chosen, m_users)``. Exploration inputs and
        targets are taken from the exploitation nets *before* this round's
        update. Returns the pre-update mean losses ``(exploit, explore)``,
        one entry per user.
        """
        X = self._inputs(arm_features, context)
        labels = np.atleast_2d(np.asarray(labels, dtype=float))
        grads = self.pooled_gradients(X)
        targets = labels - self.raw_probs(X).T
        self.last_explore_targets_ = targets
        for j in range(X.shape[0]):
            self._exploit_buf.append(X[j], labels[j])
            self._explore_buf.append(grads[:, j, :], targets[j])
        Xe, Ye = self._exploit_buf.stacked()
        Gq, Yq = self._explore_buf.stacked()
        try:
            loss1 = gd_epochs(self.exploit, Xe, Ye.T[..., None], self.lr, self.epochs)
            loss2 = gd_epochs(self.explore, np.swapaxes(Gq, 0, 1), Yq.T[..., None],
                              self.lr, self.epochs)
        except TrainingDivergence as exc:
            raise TrainingDivergence(f"user estimator: {exc}") from exc
        return loss1, loss2
