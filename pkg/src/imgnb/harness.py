"""Seeded multi-run experiments, CSV metrics, aggregation and sweeps.

Every run writes ``run_<r>.csv`` with header ``run,t,reward,cum_spread,arms,ms``
into the output directory, next to a ``manifest.json`` holding the resolved
configuration and content hashes of the input files. Run ``r`` of master
seed ``s`` draws its environment and policy seeds from
``SeedSequence([s, r])``, so adding runs never changes earlier ones.
"""
from __future__ import annotations

import csv
import glob as _glob
import hashlib
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .campaign import run_campaign
from .clustering import ClusterMap, cluster_users, read_cluster_map
from .config import ConfigError, ExperimentConfig, apply_overrides
from .envs import (ReplayEnvironment, SyntheticEnvironment, gen_synthetic,
                   load_event_log)
from .policies import IMGNB, LinUCBPolicy, RandomPolicy

__all__ = ["CSV_HEADER", "WORKERS_ENV", "SWEEP_PARAMS", "run_seeds", "build_world",
           "make_run_policy", "run_single", "run_experiment", "aggregate",
           "AggregateResult", "sweep", "sweep_csv", "blob_hash", "resolve_workers"]

log = logging.getLogger(__name__)

CSV_HEADER = ["run", "t", "reward", "cum_spread", "arms", "ms"]
WORKERS_ENV = "IMGNB_WORKERS"
SWEEP_PARAMS = {
    "m_prime": "env.m_prime",
    "L": "experiment.n_seeds",
    "bandwidth": "imgnb.bandwidth",
    "gamma": "imgnb.gamma",
    "boost_factor": "imgnb.boost_factor",
    "pool_step": "imgnb.pool_step",
}


def blob_hash(path) -> str:
    """Git-style object id of a file (sha1 over ``blob <size>\\0<bytes>``)."""
    with open(path, "rb") as fh:
        data = fh.read()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def run_seeds(master_seed: int, run: int):
    """``(environment seed, policy seed)`` for one run."""
    env_seed, pol_seed = np.random.SeedSequence([int(master_seed), int(run)]).generate_state(2)
    return int(env_seed), int(pol_seed)


def resolve_workers(cfg: ExperimentConfig, workers=None) -> int:
    """Explicit argument, then the ``IMGNB_WORKERS`` variable, then the config."""
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        if env:
            try:
                workers = int(env)
            except ValueError:
                raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        else:
            workers = cfg.experiment.workers
    return max(1, int(workers))


@dataclass
class _World:
    """Everything a run needs that does not depend on the run seed."""

    kind: str
    source: object
    cmap: ClusterMap

    def environment(self, seed, cfg):
        if self.kind == "synthetic":
            return SyntheticEnvironment(self.source, seed)
        return ReplayEnvironment(self.source, seed, cfg.replay.with_replacement)


def build_world(cfg: ExperimentConfig) -> _World:
    """Planted world or event log plus the user cluster map."""
    if cfg.env.kind == "synthetic":
        s = cfg.synthetic
        source = gen_synthetic(s.n_arms, s.n_users, s.d1, s.d2, s.n_groups, s.n_contexts,
                               s.base_rate, s.spread_ratio, s.link, s.strength, s.noise,
                               seed=s.world_seed)
        ids, vectors = np.arange(source.n_users), source.user_vectors()
    else:
        source = load_event_log(cfg.resolve(cfg.replay.log))
        ids, vectors = source.user_activity()
    if cfg.env.cluster_map:
        cmap = read_cluster_map(cfg.resolve(cfg.env.cluster_map))
        missing = set(ids.tolist()) - set(cmap.raw_ids.tolist())
        if missing:
            raise ConfigError(f"env.cluster_map: {len(missing)} users are not mapped")
    elif cfg.env.m_prime:
        cmap = cluster_users(ids, vectors, cfg.env.m_prime,
                             rng=np.random.default_rng([cfg.experiment.seed, 3]),
                             max_iter=cfg.env.cluster_iters)
    else:
        cmap = ClusterMap.identity(ids)
    return _World(cfg.env.kind, source, cmap)


def make_run_policy(cfg: ExperimentConfig, seed: int):
    name, L = cfg.experiment.policy, cfg.experiment.n_seeds
    if name == "imgnb":
        return IMGNB(n_seeds=L, random_state=seed, **asdict(cfg.imgnb))
    if name == "linucb":
        return LinUCBPolicy(n_seeds=L, alpha=cfg.linucb.alpha, lam=cfg.linucb.lam)
    return RandomPolicy(n_seeds=L, random_state=seed)


def run_single(cfg: ExperimentConfig, world: _World, run: int) -> str:
    """Play one seeded campaign and return its CSV text."""
    env_seed, pol_seed = run_seeds(cfg.experiment.seed, run)
    env = world.environment(env_seed, cfg)
    policy = make_run_policy(cfg, pol_seed)
    with threadpool_limits(1):
        out = run_campaign(policy, env, cfg.experiment.rounds, world.cmap,
                           timing=cfg.experiment.record_time)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for record, cum, ms in out:
        writer.writerow([run, record.t, int(record.round_reward), cum,
                         ";".join(str(a) for a in record.chosen), ms])
    return buf.getvalue()


def _run_job(args):
    cfg, world, run, path = args
    start = time.perf_counter()
    text = run_single(cfg, world, run)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path, time.perf_counter() - start


def _manifest(cfg, files, config_path=None):
    inputs = {}
    for label, p in (("config", config_path), ("replay.log", cfg.replay.log
                     if cfg.env.kind == "replay" else None),
                     ("env.cluster_map", cfg.env.cluster_map)):
        if p:
            full = p if label == "config" else cfg.resolve(p)
            inputs[label] = {"path": os.path.basename(full), "sha1": blob_hash(full)}
    return {
        "schema": ",".join(CSV_HEADER),
        "policy": cfg.experiment.policy,
        "config": {name: asdict(sec) for name, sec in cfg.sections().items()},
        "inputs": inputs,
        "runs": [os.path.basename(f) for f in files],
    }


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers=None, config_path=None):
    """Validate, then play ``experiment.runs`` seeded campaigns.

    Returns the list of CSV paths. Files are written to ``out_dir``
    (default ``experiment.out_dir`` resolved against the config file).
    """
    cfg.validate()
    workers = resolve_workers(cfg, workers)
    out_dir = out_dir or cfg.resolve(cfg.experiment.out_dir)
    os.makedirs(out_dir, exist_ok=True)
    world = build_world(cfg)
    runs = range(cfg.experiment.runs)
    paths = [os.path.join(out_dir, f"run_{r:03d}.csv") for r in runs]
    jobs = [(cfg, world, r, p) for r, p in zip(runs, paths)]
    if workers == 1 or len(jobs) == 1:
        results = map(_run_job, jobs)
    else:
        pool = ProcessPoolExecutor(max_workers=min(workers, len(jobs)))
        results = pool.map(_run_job, jobs)
    try:
        for path, secs in results:
            log.info("wrote %s (%.1fs)", path, secs)
    finally:
        if workers > 1 and len(jobs) > 1:
            pool.shutdown()
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(_manifest(cfg, paths, config_path), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


# -- aggregation -----------------------------------------------------------


@dataclass
class AggregateResult:
    """Per-round and final-round statistics of ``cum_spread`` per policy.

    ``rounds`` rows are ``(policy, t, n_runs, mean, std)``; ``finals`` rows are
    ``(policy, n_runs, mean, std)``. Standard deviations are population
    (``ddof=0``) values.
    """

    rounds: list
    finals: list

    def rounds_csv(self) -> str:
        return _to_csv(["policy", "t", "n_runs", "mean", "std"], self.rounds)

    def finals_csv(self) -> str:
        return _to_csv(["policy", "n_runs", "mean_final", "std_final"], self.finals)

    def final(self, policy):
        for row in self.finals:
            if row[0] == policy:
                return row[2], row[3]
        raise KeyError(policy)


def _to_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _policy_of(path, cache):
    d = os.path.dirname(os.path.abspath(path))
    if d not in cache:
        mpath = os.path.join(d, "manifest.json")
        cache[d] = "unknown"
        if os.path.isfile(mpath):
            with open(mpath, encoding="utf-8") as fh:
                cache[d] = json.load(fh).get("policy", "unknown")
    return cache[d]


def _read_run(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != CSV_HEADER:
        raise ValueError(f"{path}: schema mismatch, expected header {','.join(CSV_HEADER)}")
    try:
        cum = [int(r[3]) for r in rows[1:]]
        ts = [int(r[1]) for r in rows[1:]]
    except (ValueError, IndexError):
        raise ValueError(f"{path}: schema mismatch in data rows") from None
    if ts != list(range(1, len(ts) + 1)):
        raise ValueError(f"{path}: rounds are not 1..T")
    return np.array(cum, dtype=float)


def _stats(values):
    v = np.sort(values)  # order-independent float sums
    mean = float(np.sum(v) / v.size)
    std = float(np.sqrt(np.sum(np.sort((v - mean) ** 2)) / v.size))
    return mean, std


def aggregate(paths) -> AggregateResult:
    """Mean and population std of cumulative spread across run files.

    ``paths`` is a list of CSV paths or a glob pattern. Runs are grouped by
    the policy recorded in their directory's manifest.
    """
    if isinstance(paths, str):
        paths = sorted(_glob.glob(paths))
    paths = sorted(str(p) for p in paths)
    if not paths:
        raise ValueError("no metric files to aggregate")
    cache, groups = {}, {}
    for p in paths:
        groups.setdefault(_policy_of(p, cache), []).append((p, _read_run(p)))
    rounds, finals = [], []
    for policy in sorted(groups):
        runs = groups[policy]
        T = len(runs[0][1])
        for p, cum in runs:
            if len(cum) != T:
                raise ValueError(f"{p}: schema mismatch, {len(cum)} rounds, expected {T}")
        mat = np.stack([c for _, c in runs])
        for t in range(T):
            rounds.append((policy, t + 1, len(runs)) + _stats(mat[:, t]))
        finals.append((policy, len(runs)) + _stats(mat[:, -1]))
    return AggregateResult(rounds, finals)


# -- sweeps ----------------------------------------------------------------


def sweep(cfg: ExperimentConfig, param: str, values, out_dir=None, workers=None):
    """Run one experiment per value of ``param``.

    Returns rows ``(value, mean_final, std_final)``; each value's run files
    go to ``<out_dir>/<param>=<value>/``.
    """
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"unknown sweep parameter {param!r}; "
                          f"choose from {', '.join(SWEEP_PARAMS)}")
    if len(values) == 0:
        raise ConfigError("sweep needs at least one value")
    key = SWEEP_PARAMS[param]
    cfgs = [apply_overrides(cfg, {key: v}).validate() for v in values]
    out_dir = out_dir or cfg.resolve(cfg.experiment.out_dir)
    rows = []
    for v, c in zip(values, cfgs):
        paths = run_experiment(c, os.path.join(out_dir, f"{param}={v}"), workers)
        mean, std = aggregate(paths).final(c.experiment.policy)
        rows.append((v, mean, std))
    return rows


def sweep_csv(param, rows) -> str:
    return _to_csv([param, "mean_final", "std_final"], rows)
