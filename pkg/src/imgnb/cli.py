"""Command line entry point: ``imgnb <subcommand> ...``.

Failures print one ``error: <message>`` line to stderr and exit with status 1
(2 for usage errors, as argparse does).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import harness
from .clustering import cluster_users, write_cluster_map
from .config import ConfigError, apply_overrides, config_to_text, load_config
from .envs import EventLogError, gen_synthetic, load_event_log, sample_event_log, write_event_log


def _load(path, overrides):
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    cfg = load_config(path)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg.validate()


def _parse_values(text):
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            v = float(tok)
        except ValueError:
            raise ConfigError(f"--values: not a number: {tok!r}") from None
        out.append(int(v) if v.is_integer() and "." not in tok else v)
    if not out:
        raise ConfigError("--values is empty")
    return out


def cmd_run(args):
    cfg = _load(args.config, args.set)
    paths = harness.run_experiment(cfg, args.out, args.workers, config_path=args.config)
    print(harness.aggregate(paths).finals_csv(), end="")


def cmd_aggregate(args):
    result = harness.aggregate(args.pattern)
    text = result.finals_csv() if args.finals else result.rounds_csv()
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        print(text, end="")


def cmd_sweep(args):
    cfg = _load(args.config, args.set)
    rows = harness.sweep(cfg, args.param, _parse_values(args.values), args.out, args.workers)
    print(harness.sweep_csv(args.param, rows), end="")


def cmd_gen_synthetic(args):
    cfg = _load(args.config, args.set)
    s = cfg.synthetic
    world = gen_synthetic(s.n_arms, s.n_users, s.d1, s.d2, s.n_groups, s.n_contexts,
                          s.base_rate, s.spread_ratio, s.link, s.strength, s.noise,
                          seed=s.world_seed)
    write_event_log(sample_event_log(world, s.n_events, seed=s.world_seed), args.output)


def cmd_cluster(args):
    elog = load_event_log(args.log)
    ids, vectors = elog.user_activity()
    cmap = cluster_users(ids, vectors, args.groups, rng=np.random.default_rng(args.seed),
                         max_iter=args.max_iter)
    write_cluster_map(cmap, args.output)


def cmd_show_config(args):
    print(config_to_text(_load(args.config, args.set)), end="")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: {' '.join(message.split())}", file=sys.stderr)
        sys.exit(2)


def build_parser():
    p = _Parser(prog="imgnb", description="Graph neural bandit campaigns.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("config")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config entry (repeatable)")

    sp = sub.add_parser("run", help="run R seeded campaigns")
    with_config(sp)
    sp.add_argument("-o", "--out", help="output directory (default experiment.out_dir)")
    sp.add_argument("-j", "--workers", type=int)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("aggregate", help="summarize run CSVs matching a glob")
    sp.add_argument("pattern")
    sp.add_argument("--finals", action="store_true", help="only the final-round summary")
    sp.add_argument("-o", "--output")
    sp.set_defaults(func=cmd_aggregate)

    sp = sub.add_parser("sweep", help="run one experiment per parameter value")
    with_config(sp)
    sp.add_argument("--param", required=True, choices=sorted(harness.SWEEP_PARAMS))
    sp.add_argument("--values", required=True, help="comma-separated list")
    sp.add_argument("-o", "--out")
    sp.add_argument("-j", "--workers", type=int)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("gen-synthetic", help="write an event log sampled from a planted world")
    with_config(sp)
    sp.add_argument("-o", "--output", required=True)
    sp.set_defaults(func=cmd_gen_synthetic)

    sp = sub.add_parser("cluster", help="k-means users of an event log into macro-nodes")
    sp.add_argument("log")
    sp.add_argument("--groups", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-iter", type=int, default=100)
    sp.add_argument("-o", "--output", required=True)
    sp.set_defaults(func=cmd_cluster)

    sp = sub.add_parser("show-config", help="print the resolved configuration")
    with_config(sp)
    sp.set_defaults(func=cmd_show_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, EventLogError, ValueError, OSError, RuntimeError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
