"""Round loop and distinct-spread accounting."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterMap

__all__ = ["RoundRecord", "CampaignState", "compute_round_reward", "run_round",
           "run_campaign"]


@dataclass
class RoundRecord:
    """Everything a policy learns from one round.

    ``labels[c]`` is the number of macro-node ``c``'s members newly
    activated this round (0/1 when every macro-node is a single user).
    ``arm_labels[j, c]`` restricts that count to users reached by
    ``chosen[j]``; ``arm_rewards[j]`` is the number of such new raw users.
    ``per_seed_activations`` maps each chosen arm to the macro-nodes it
    reached.
    """

    t: int
    context: np.ndarray
    chosen: list
    per_seed_activations: dict
    labels: np.ndarray
    arm_labels: np.ndarray
    arm_rewards: np.ndarray
    round_reward: int
    raw_activations: dict = field(default_factory=dict, repr=False)


@dataclass
class CampaignState:
    t: int = 0
    seen_users: set = field(default_factory=set)
    last_chosen: dict = field(default_factory=dict)
    last_reward: dict = field(default_factory=dict)

    @property
    def cumulative_spread(self) -> int:
        return len(self.seen_users)


def compute_round_reward(state: CampaignState, union_activations):
    """``(R_t, newly activated users)``; ``state.seen_users`` is updated afterwards."""
    new = set(union_activations) - state.seen_users
    state.seen_users |= new
    return len(new), new


def run_round(policy, env, state: CampaignState, cmap: ClusterMap) -> RoundRecord:
    """Context, selection, diffusion, accounting and policy update for one round."""
    t = state.t + 1
    context = env.sample_context()
    chosen = sorted(int(a) for a in policy.predict(context))
    if len(set(chosen)) != len(chosen):
        raise RuntimeError(f"policy chose duplicate arms {chosen}")
    raw = env.trigger(chosen, context)
    union = set().union(*raw.values())
    reward, new = compute_round_reward(state, union)
    labels = cmap.counts(new)
    arm_labels = np.stack([cmap.counts(raw[a] & new) for a in chosen])
    arm_rewards = np.array([len(raw[a] & new) for a in chosen])
    record = RoundRecord(t, context, chosen, {a: cmap.macro(raw[a]) for a in chosen},
                         labels, arm_labels, arm_rewards, reward, raw)
    state.t = t
    for a, r in zip(chosen, arm_rewards):
        state.last_chosen[a] = t
        state.last_reward[a] = int(r)
    policy.partial_fit(record)
    return record


def run_campaign(policy, env, rounds: int, cmap: ClusterMap = None, timing=False):
    """Fit ``policy`` to the environment's arms and play ``rounds`` rounds.

    Returns a list of ``(record, cumulative_spread, elapsed_ms)`` tuples.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if cmap is None:
        cmap = ClusterMap.identity(env.raw_users())
    policy.fit(env.arm_features, cmap.sizes)
    state = CampaignState()
    out = []
    for _ in range(rounds):
        start = time.perf_counter() if timing else 0.0
        record = run_round(policy, env, state, cmap)
        ms = int(round((time.perf_counter() - start) * 1000)) if timing else 0
        out.append((record, state.cumulative_spread, ms))
    return out
