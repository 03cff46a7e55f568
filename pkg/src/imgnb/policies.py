"""Seed-selection policies with a scikit-learn style interface.

Every policy is a :class:`~sklearn.base.BaseEstimator`:

* ``fit(arm_features, n_users)`` resets it for a fresh campaign,
* ``decision_function(context)`` returns one score per arm,
* ``predict(context)`` returns the chosen arm ids,
* ``partial_fit(record)`` consumes the feedback of one round.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .gcn import GcnScorer, train_scorers
from .graphs import batch_operators
from .neural import avg_pool
from .user_estimators import UserEstimatorBank, auto_pool_step

__all__ = ["select_top_l", "boost_exploration", "random_select", "IMGNB",
           "LinUCBPolicy", "RandomPolicy", "make_policy", "POLICIES"]


def select_top_l(scores, L: int) -> list[int]:
    """Ids of the ``L`` largest scores, ties broken by ascending id."""
    scores = np.asarray(scores, dtype=float)
    n = scores.size
    if not 1 <= L <= n:
        raise ValueError(f"cannot choose L={L} arms out of {n}")
    if np.any(np.isnan(scores)):
        raise ValueError("NaN arm score")
    order = np.lexsort((np.arange(n), -scores))
    return [int(i) for i in order[:L]]


def boost_exploration(b_hat, last_selected, prev_chosen, prev_reward, t,
                      boost_factor: float) -> np.ndarray:
    """Inflate exploration scores after a zero-reward round.

    Arms not chosen in round ``t - 1`` gain
    ``boost_factor * sqrt(t - last_selected[arm])``; ``last_selected`` is 0
    for arms never chosen.
    """
    if boost_factor < 0:
        raise ValueError("boost_factor must be >= 0")
    b_hat = np.array(b_hat, dtype=float)
    if boost_factor == 0 or prev_reward is None or prev_reward != 0:
        return b_hat
    unchosen = np.ones(b_hat.size, dtype=bool)
    unchosen[list(prev_chosen)] = False
    elapsed = t - np.asarray(last_selected, dtype=float)
    b_hat[unchosen] += boost_factor * np.sqrt(elapsed[unchosen])
    return b_hat


def random_select(rng: np.random.Generator, n: int, L: int) -> list[int]:
    if not 1 <= L <= n:
        raise ValueError(f"cannot choose L={L} arms out of {n}")
    return sorted(int(i) for i in rng.choice(n, size=L, replace=False))


def _arm_context_inputs(arm_features, context):
    c = np.asarray(context, dtype=float).ravel()
    return np.concatenate(
        [arm_features, np.broadcast_to(c, (arm_features.shape[0], c.size))], axis=1)


class IMGNB(BaseEstimator):
    """Graph neural bandit for multi-round influence campaigns.

    Per round and arm, user-level networks estimate activation probabilities
    and their uncertainty; RBF graphs over users are built from both; two
    simplified GCNs refine them into a reward estimate and an exploration
    bonus, and the ``n_seeds`` arms with the largest sum are chosen.

    Parameters
    ----------
    n_seeds : int
        Arms chosen per round (L).
    bandwidth : float
        RBF bandwidth of both graph kernels.
    gamma, gamma_explore : int
        Propagation hops of the exploitation / exploration GCN
        (``gamma_explore=None`` reuses ``gamma``).
    hidden, n_layers : int
        GCN representation width p and FC tail depth J.
    user_hidden, user_layers : int
        Width and depth of the per-user networks.
    lr, user_lr : float
        GD learning rates of the GCNs / user networks.
    epochs, buffer_size : int
        GD passes per round over the most recent ``buffer_size`` samples.
    pool_step, user_pool_step : int or None
        Average-pooling steps applied to gradients before they enter the
        exploration networks; ``None`` picks the smallest step giving at
        most 64 pooled features.
    boost_factor : float
        Strength of the boosted-exploration variant (0 disables it).
    loss_support : {"seeds", "all"}
        Users entering the GCN losses: those reached by the arm, or everyone
        (unreached users with label 0).
    credit : {"global", "per_arm"}
        User-network labels: the round-level new-activation indicator for
        every chosen arm, or only the activations produced by that arm.
    macro_labels : {"count", "indicator"}
        Label of a macro-node: the number of its newly activated members
        (estimates clipped to [0, cluster size]), or 1 when any member is
        newly activated (estimates clipped to [0, 1]). Both coincide for
        single-user clusters.
    random_state : int, Generator or None
    """

    def __init__(self, n_seeds=1, bandwidth=5.0, gamma=3, gamma_explore=None,
                 hidden=8, n_layers=3, user_hidden=16, user_layers=3, lr=0.01,
                 user_lr=0.01, epochs=10, buffer_size=256, pool_step=None,
                 user_pool_step=None, boost_factor=0.0, loss_support="seeds",
                 credit="global", macro_labels="count", random_state=None):
        self.n_seeds = n_seeds
        self.bandwidth = bandwidth
        self.gamma = gamma
        self.gamma_explore = gamma_explore
        self.hidden = hidden
        self.n_layers = n_layers
        self.user_hidden = user_hidden
        self.user_layers = user_layers
        self.lr = lr
        self.user_lr = user_lr
        self.epochs = epochs
        self.buffer_size = buffer_size
        self.pool_step = pool_step
        self.user_pool_step = user_pool_step
        self.boost_factor = boost_factor
        self.loss_support = loss_support
        self.credit = credit
        self.macro_labels = macro_labels
        self.random_state = random_state

    def fit(self, arm_features, n_users, y=None):
        """Reset for a new campaign.

        ``n_users`` is the number of (macro-)users, or an array holding the
        member count of each macro-node.
        """
        arm_features = check_array(arm_features)
        if self.loss_support not in ("seeds", "all"):
            raise ValueError(f"unknown loss_support {self.loss_support!r}")
        if self.credit not in ("global", "per_arm"):
            raise ValueError(f"unknown credit {self.credit!r}")
        if self.macro_labels not in ("count", "indicator"):
            raise ValueError(f"unknown macro_labels {self.macro_labels!r}")
        if not 1 <= self.n_seeds <= arm_features.shape[0]:
            raise ValueError(f"n_seeds={self.n_seeds} not in [1, {arm_features.shape[0]}]")
        self.arm_features_ = arm_features
        sizes = np.ones(int(n_users)) if np.ndim(n_users) == 0 else np.asarray(n_users, float)
        self.user_sizes_ = np.ones_like(sizes) if self.macro_labels == "indicator" else sizes
        self.n_users_ = self.user_sizes_.size
        rng = np.random.default_rng(self.random_state)
        self._rng_state = rng
        self.n_arms_ = arm_features.shape[0]
        self.d1_ = arm_features.shape[1]
        self.d2_ = None
        self.t_ = 0
        self.last_selected_ = np.zeros(self.n_arms_)
        self.prev_chosen_ = []
        self.prev_reward_ = None
        self.users_ = None
        return self

    def _build(self, d2):
        rng = self._rng_state
        d = self.d1_ + d2
        m = self.n_users_
        self.d2_ = d2
        self.users_ = UserEstimatorBank(
            m, d, rng, hidden=self.user_hidden, n_layers=self.user_layers,
            pool_step=self.user_pool_step, lr=self.user_lr, epochs=self.epochs,
            buffer_size=self.buffer_size, upper=self.user_sizes_)
        self.f1_ = GcnScorer(m, d, rng, hidden=self.hidden, n_layers=self.n_layers,
                             gamma=self.gamma, lr=self.lr, epochs=self.epochs,
                             buffer_size=self.buffer_size)
        self.pool_step_ = self.pool_step or auto_pool_step(self.f1_.n_params)
        q = -(-self.f1_.n_params // self.pool_step_)
        g2 = self.gamma if self.gamma_explore is None else self.gamma_explore
        self.f2_ = GcnScorer(m, q, rng, hidden=self.hidden, n_layers=self.n_layers,
                             gamma=g2, lr=self.lr, epochs=self.epochs,
                             buffer_size=self.buffer_size)

    def _ensure_built(self, context):
        d2 = np.asarray(context).size
        if self.users_ is None:
            self._build(d2)
        elif d2 != self.d2_:
            raise ValueError(f"context dimension {d2} != {self.d2_}")

    def _operators(self, X):
        """Graph operators for the rows of X: ``(M1, M2)``, each ``(n, m, m)``."""
        users = self.users_
        probs = users.clipped(users.raw_probs(X)).T
        gains = users.explore.forward(users.pooled_gradients(X))[..., 0].T
        M1 = batch_operators(probs, self.bandwidth, self.f1_.gamma)
        M2 = batch_operators(gains, self.bandwidth, self.f2_.gamma)
        return M1, M2

    def score_arms(self, context):
        """Per-arm ``(r_hat, b_hat, P_hat, Z_hat)`` before any boosting."""
        check_is_fitted(self, "arm_features_")
        self._ensure_built(context)
        X = _arm_context_inputs(self.arm_features_, context)
        M1, M2 = self._operators(X)
        p_hat = self.f1_.forward(X[:, None, :], M1)
        G = avg_pool(self.f1_.user_jacobian(X[:, None, :], M1), self.pool_step_)
        z_hat = self.f2_.forward(G, M2)
        return (np.linalg.norm(p_hat, axis=1), np.linalg.norm(z_hat, axis=1),
                p_hat, z_hat)

    def decision_function(self, context):
        r_hat, b_hat, _, _ = self.score_arms(context)
        b_hat = boost_exploration(b_hat, self.last_selected_, self.prev_chosen_,
                                  self.prev_reward_, self.t_ + 1, self.boost_factor)
        return r_hat + b_hat

    def predict(self, context):
        return select_top_l(self.decision_function(context), self.n_seeds)

    def partial_fit(self, record):
        check_is_fitted(self, "arm_features_")
        self._ensure_built(record.context)
        chosen = list(record.chosen)
        X = _arm_context_inputs(self.arm_features_[chosen], record.context)
        M1, M2 = self._operators(X)
        arm_labels = np.asarray(record.arm_labels, dtype=float)
        labels = np.asarray(record.labels, dtype=float)
        if self.macro_labels == "indicator":
            arm_labels, labels = np.minimum(arm_labels, 1.0), np.minimum(labels, 1.0)
        if self.credit == "global":
            user_labels = np.broadcast_to(labels, arm_labels.shape)
        else:
            user_labels = arm_labels
        self.users_.train(self.arm_features_[chosen], record.context, user_labels)
        if self.loss_support == "all":
            supports = np.ones_like(arm_labels)
        else:
            supports = np.zeros_like(arm_labels)
            for j, arm in enumerate(chosen):
                supports[j, sorted(record.per_seed_activations.get(arm, ()))] = 1.0
        train_scorers(self.f1_, self.f2_, self.arm_features_[chosen], record.context,
                      list(zip(M1, M2)), arm_labels, supports, self.pool_step_,
                      arm_ids=chosen)
        self.t_ += 1
        self.last_selected_[chosen] = self.t_
        self.prev_chosen_ = chosen
        self.prev_reward_ = record.round_reward
        return self


class LinUCBPolicy(BaseEstimator):
    """Ridge-regression UCB over ``concat(arm_features, context)``.

    One shared linear model; each chosen arm contributes a rank-one update
    with its own new-activation count as reward.
    """

    def __init__(self, n_seeds=1, alpha=1.0, lam=1.0):
        self.n_seeds = n_seeds
        self.alpha = alpha
        self.lam = lam

    def fit(self, arm_features, n_users=None, y=None):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        self.arm_features_ = check_array(arm_features)
        if not 1 <= self.n_seeds <= self.arm_features_.shape[0]:
            raise ValueError(f"n_seeds={self.n_seeds} out of range")
        self.A_ = None
        self.b_ = None
        return self

    def _init(self, d):
        if self.A_ is None:
            self.A_ = self.lam * np.eye(d)
            self.b_ = np.zeros(d)

    def decision_function(self, context):
        check_is_fitted(self, "arm_features_")
        X = _arm_context_inputs(self.arm_features_, context)
        self._init(X.shape[1])
        A_inv = np.linalg.inv(self.A_)
        theta = A_inv @ self.b_
        width = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", X, A_inv, X), 0.0))
        return X @ theta + self.alpha * width

    def predict(self, context):
        return select_top_l(self.decision_function(context), self.n_seeds)

    def partial_fit(self, record):
        X = _arm_context_inputs(self.arm_features_[list(record.chosen)], record.context)
        self._init(X.shape[1])
        for x, r in zip(X, record.arm_rewards):
            self.A_ += np.outer(x, x)
            self.b_ += r * x
        return self


class RandomPolicy(BaseEstimator):
    """Uniformly random seed sets (without replacement within a round)."""

    def __init__(self, n_seeds=1, random_state=None):
        self.n_seeds = n_seeds
        self.random_state = random_state

    def fit(self, arm_features, n_users=None, y=None):
        self.n_arms_ = check_array(arm_features).shape[0]
        if not 1 <= self.n_seeds <= self.n_arms_:
            raise ValueError(f"n_seeds={self.n_seeds} out of range")
        self.rng_ = np.random.default_rng(self.random_state)
        return self

    def predict(self, context=None):
        check_is_fitted(self, "rng_")
        return random_select(self.rng_, self.n_arms_, self.n_seeds)

    def partial_fit(self, record):
        return self


POLICIES = {"imgnb": IMGNB, "linucb": LinUCBPolicy, "random": RandomPolicy}


def make_policy(name, **params):
    try:
        cls = POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}") from None
    return cls(**params)
