"""Diffusion environments: a planted synthetic world and a log-replay engine.

Both expose the same two calls used by the campaign loop:

``sample_context()``
    the message to diffuse this round,
``trigger(seeds, context)``
    ``{arm: set of raw user ids}`` activated by each seed.

Randomness is drawn from substreams keyed by ``(seed, purpose, counter[, arm])``
so the outcome for one seed never depends on which other seeds were chosen.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

__all__ = ["SyntheticWorld", "SyntheticEnvironment", "gen_synthetic", "EventLog",
           "EventLogError", "load_event_log", "write_event_log", "ReplayEnvironment",
           "sample_event_log"]

log = logging.getLogger(__name__)


def _logistic(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class SyntheticWorld:
    """Planted diffusion function hidden from the learner.

    ``p[u | arm i, C] = base_rate * arm_scale[i] * link(theta[u] . concat(k_i, C))``
    with ``link`` the logistic function, or the identity for ``link="linear"``
    (in which case the expected spread is exactly linear in ``concat(k_i, C)``).
    """

    arm_features: np.ndarray
    contexts: np.ndarray
    theta: np.ndarray
    arm_scale: np.ndarray
    base_rate: float
    link: str = "logistic"
    groups: np.ndarray = field(default=None, repr=False)

    @property
    def n_arms(self) -> int:
        return self.arm_features.shape[0]

    @property
    def n_users(self) -> int:
        return self.theta.shape[0]

    @property
    def d2(self) -> int:
        return self.contexts.shape[1]

    def user_vectors(self) -> np.ndarray:
        """Per-user activity vectors used for clustering."""
        return self.theta

    def activation_probs(self, arm: int, context) -> np.ndarray:
        x = np.concatenate([self.arm_features[arm], np.asarray(context, float)])
        z = self.theta @ x
        base = _logistic(z) if self.link == "logistic" else z
        return np.clip(self.base_rate * self.arm_scale[arm] * base, 0.0, 1.0)

    def expected_spread(self, arm: int, context=None) -> float:
        """Expected one-round spread of ``arm``; averaged over the context pool by default."""
        if context is not None:
            return float(self.activation_probs(arm, context).sum())
        return float(np.mean([self.activation_probs(arm, c).sum() for c in self.contexts]))


def _topic_dist(rng, dim, topic, weight=0.7, conc=0.3):
    v = (1.0 - weight) * rng.dirichlet(np.full(dim, conc))
    v[topic] += weight
    return v


def gen_synthetic(n_arms=10, n_users=1000, d1=10, d2=10, n_groups=10, n_contexts=50,
                  base_rate=0.05, spread_ratio=5.0, link="logistic", strength=4.0,
                  noise=0.5, seed=0) -> SyntheticWorld:
    """Plant a block-structured world.

    Users fall into ``n_groups`` groups; each group responds to one arm topic
    and one context topic. Arm features and contexts are topic distributions.
    Per-arm scales are set so that expected one-round spreads (averaged over
    the context pool) form a geometric ladder whose best/worst ratio is
    ``spread_ratio``; the best arm is placed at random.
    """
    if min(n_arms, n_users, d1, d2, n_groups, n_contexts) < 1:
        raise ValueError("all counts must be >= 1")
    if link not in ("logistic", "linear"):
        raise ValueError(f"unknown link {link!r}")
    if spread_ratio < 1:
        raise ValueError("spread_ratio must be >= 1")
    rng = np.random.default_rng(seed)
    arm_topics = rng.integers(d1, size=n_arms)
    arms = np.stack([_topic_dist(rng, d1, t) for t in arm_topics])
    ctx_topics = rng.integers(d2, size=n_contexts)
    contexts = np.stack([_topic_dist(rng, d2, t) for t in ctx_topics])
    g_arm = rng.integers(d1, size=n_groups)
    g_ctx = rng.integers(d2, size=n_groups)
    groups = rng.integers(n_groups, size=n_users)
    theta = np.zeros((n_users, d1 + d2))
    theta[np.arange(n_users), g_arm[groups]] = 1.0
    theta[np.arange(n_users), d1 + g_ctx[groups]] = 1.0
    if link == "logistic":
        theta = strength * (2.0 * theta - 1.0) + noise * rng.normal(size=theta.shape)
    else:
        theta = theta + noise * rng.random(size=theta.shape)
        theta /= theta.max()

    world = SyntheticWorld(arms, contexts, theta, np.ones(n_arms), 1.0, link, groups)
    raw = np.array([world.expected_spread(i) for i in range(n_arms)])
    if np.any(raw <= 0):
        raise ValueError("planted world has an arm with zero reachable users")
    ladder = spread_ratio ** (np.arange(n_arms) / max(n_arms - 1, 1))
    target = ladder[rng.permutation(n_arms)]
    if link == "logistic":
        scale = target / raw
        peak = max(world.activation_probs(i, c).max() * scale[i]
                   for i in range(n_arms) for c in contexts)
        world.arm_scale = scale / peak
    else:
        # keep spreads linear in the features: fold the ladder into arm magnitudes
        theta_sum = theta.sum(axis=0)
        ctx_part = float(np.mean(contexts @ theta_sum[d1:]))
        arm_part = arms @ theta_sum[:d1]
        target = target * (ctx_part / target.min() + 1e-12) * 2.0
        world.arm_features = arms * ((target - ctx_part) / arm_part)[:, None]
        peak = max((theta @ np.concatenate([world.arm_features[i], c])).max()
                   for i in range(n_arms) for c in contexts)
        world.theta = theta / peak
    world.base_rate = float(base_rate)
    return world


class SyntheticEnvironment:
    """Stateful view of a :class:`SyntheticWorld` for one campaign run."""

    def __init__(self, world: SyntheticWorld, seed=0):
        self.world = world
        self.seed = int(seed)
        self._n_ctx = 0
        self._n_trig = 0

    @property
    def arm_features(self):
        return self.world.arm_features

    @property
    def n_arms(self):
        return self.world.n_arms

    def raw_users(self):
        return np.arange(self.world.n_users)

    def sample_context(self, rng=None):
        if rng is None:
            rng = np.random.default_rng([self.seed, 0, self._n_ctx])
            self._n_ctx += 1
        return self.world.contexts[rng.integers(len(self.world.contexts))].copy()

    def trigger(self, seeds, context):
        if len(seeds) == 0:
            raise ValueError("trigger needs at least one seed")
        self._n_trig += 1
        out = {}
        for arm in sorted(int(a) for a in seeds):
            rng = np.random.default_rng([self.seed, 1, self._n_trig, arm])
            probs = self.world.activation_probs(arm, context)
            out[arm] = set(np.flatnonzero(rng.random(probs.size) < probs).tolist())
        return out


# -- event logs -----------------------------------------------------------

class EventLogError(ValueError):
    """Malformed event-log input; message carries the line number."""


@dataclass
class EventLog:
    """Cascade events ``(influencer, context, activated raw users)``."""

    n_arms: int
    d2: int
    influencers: np.ndarray
    contexts: np.ndarray
    activations: list

    def __len__(self):
        return len(self.activations)

    @property
    def context_pool(self):
        return self.contexts

    def raw_users(self) -> np.ndarray:
        users = set()
        for s in self.activations:
            users.update(s)
        return np.array(sorted(users), dtype=int)

    def arm_features(self) -> np.ndarray:
        """Normalized aggregate of each influencer's event contexts."""
        feats = np.zeros((self.n_arms, self.d2))
        np.add.at(feats, self.influencers, self.contexts)
        tot = feats.sum(axis=1, keepdims=True)
        return np.divide(feats, tot, out=np.zeros_like(feats), where=tot > 0)

    def user_activity(self):
        """``(raw_ids, vectors)``: normalized sum of contexts each user reacted to."""
        ids = self.raw_users()
        index = {u: j for j, u in enumerate(ids.tolist())}
        vec = np.zeros((ids.size, self.d2))
        for ctx, users in zip(self.contexts, self.activations):
            for u in users:
                vec[index[u]] += ctx
        tot = vec.sum(axis=1, keepdims=True)
        return ids, np.divide(vec, tot, out=np.zeros_like(vec), where=tot > 0)


_HEADER = "#eventlog v1"


def load_event_log(path) -> EventLog:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].strip():
        raise EventLogError(f"{path}:1: empty event log")
    head = lines[0].split()
    if " ".join(head[:2]) != _HEADER:
        raise EventLogError(f"{path}:1: expected header '{_HEADER} arms=<n> d2=<d2>'")
    try:
        fields = dict(tok.split("=", 1) for tok in head[2:])
        n_arms, d2 = int(fields["arms"]), int(fields["d2"])
    except (ValueError, KeyError):
        raise EventLogError(f"{path}:1: header must declare arms=<n> d2=<d2>") from None
    infl, ctxs, acts = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise EventLogError(f"{path}:{lineno}: expected 3 tab-separated fields")
        try:
            arm = int(parts[0])
            ctx = np.array([float(v) for v in parts[1].split(",")])
            users = {int(v) for v in parts[2].split(",") if v.strip()} if len(parts) == 3 else set()
        except ValueError as exc:
            raise EventLogError(f"{path}:{lineno}: {exc}") from None
        if not 0 <= arm < n_arms:
            raise EventLogError(f"{path}:{lineno}: influencer {arm} outside [0, {n_arms})")
        if ctx.size != d2:
            raise EventLogError(f"{path}:{lineno}: context has {ctx.size} values, header says {d2}")
        if not np.all(np.isfinite(ctx)) or np.any(ctx < 0):
            raise EventLogError(f"{path}:{lineno}: context values must be finite and non-negative")
        if any(u < 0 for u in users):
            raise EventLogError(f"{path}:{lineno}: negative user id")
        infl.append(arm)
        ctxs.append(ctx)
        acts.append(users)
    if not acts:
        raise EventLogError(f"{path}: event log has no events")
    return EventLog(n_arms, d2, np.array(infl, dtype=int), np.stack(ctxs), acts)


def write_event_log(elog: EventLog, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{_HEADER} arms={elog.n_arms} d2={elog.d2}\n")
        for arm, ctx, users in zip(elog.influencers, elog.contexts, elog.activations):
            fh.write(f"{int(arm)}\t{','.join(repr(float(c)) for c in ctx)}\t"
                     f"{','.join(str(u) for u in sorted(users))}\n")


def sample_event_log(world: SyntheticWorld, n_events: int, seed=0) -> EventLog:
    """Draw ``n_events`` (uniform arm, uniform pooled context) cascades from a world."""
    env = SyntheticEnvironment(world, seed)
    rng = np.random.default_rng([int(seed), 2])
    infl, ctxs, acts = [], [], []
    for _ in range(n_events):
        arm = int(rng.integers(world.n_arms))
        ctx = env.sample_context(rng)
        infl.append(arm)
        ctxs.append(ctx)
        acts.append(env.trigger([arm], ctx)[arm])
    return EventLog(world.n_arms, world.d2, np.array(infl), np.stack(ctxs), acts)


class ReplayEnvironment:
    """Answers seed choices with the best-matching logged cascade.

    For each seed, the unused event of that influencer whose context has the
    largest cosine similarity to the round context is returned (earliest on
    ties) and marked used unless ``with_replacement``.
    """

    def __init__(self, elog: EventLog, seed=0, with_replacement=False):
        self.log = elog
        self.seed = int(seed)
        self.with_replacement = with_replacement
        self._n_ctx = 0
        self._used = np.zeros(len(elog), dtype=bool)
        norms = np.linalg.norm(elog.contexts, axis=1)
        self._unit = np.divide(elog.contexts, norms[:, None],
                               out=np.zeros_like(elog.contexts), where=norms[:, None] > 0)
        self._by_arm = [np.flatnonzero(elog.influencers == a) for a in range(elog.n_arms)]
        self._arm_features = elog.arm_features()

    @property
    def arm_features(self):
        return self._arm_features

    @property
    def n_arms(self):
        return self.log.n_arms

    def raw_users(self):
        return self.log.raw_users()

    def sample_context(self, rng=None):
        pool = self.log.context_pool
        if len(pool) == 0:
            raise ValueError("empty context pool")
        if rng is None:
            rng = np.random.default_rng([self.seed, 0, self._n_ctx])
            self._n_ctx += 1
        return pool[rng.integers(len(pool))].copy()

    def match_event(self, arm: int, context):
        """Index of the event that would be replayed, or ``None``."""
        cand = self._by_arm[arm]
        if not self.with_replacement:
            cand = cand[~self._used[cand]]
        if cand.size == 0:
            return None
        c = np.asarray(context, float)
        norm = np.linalg.norm(c)
        sims = self._unit[cand] @ (c / norm if norm > 0 else c)
        return int(cand[np.argmax(sims)])

    def trigger(self, seeds, context):
        if len(seeds) == 0:
            raise ValueError("trigger needs at least one seed")
        out = {}
        for arm in sorted(int(a) for a in seeds):
            idx = self.match_event(arm, context)
            if idx is None:
                log.info("influencer %d has no remaining events", arm)
                out[arm] = set()
                continue
            if not self.with_replacement:
                self._used[idx] = True
            out[arm] = set(self.log.activations[idx])
        return out
