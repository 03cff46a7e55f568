"""Experiment configuration: flat ``section.key = value`` files.

Example::

    # comments start with '#'
    experiment.policy = imgnb
    experiment.rounds = 200
    imgnb.gamma = 3
    env.m_prime = 20

Values are parsed as Python literals where possible (``3``, ``0.5``,
``True``, ``None``), otherwise kept as strings.
"""
from __future__ import annotations

import ast
import dataclasses
import os
from dataclasses import dataclass, field, fields
from typing import Optional

__all__ = ["ExperimentConfig", "ConfigError", "load_config", "parse_config_text",
           "apply_overrides", "config_to_text"]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentSection:
    policy: str = "imgnb"
    runs: int = 1
    rounds: int = 500
    seed: int = 0
    n_seeds: int = 1
    workers: int = 0
    record_time: bool = False
    out_dir: str = "results"


@dataclass
class IMGNBSection:
    bandwidth: float = 5.0
    gamma: int = 3
    gamma_explore: Optional[int] = None
    hidden: int = 8
    n_layers: int = 3
    user_hidden: int = 16
    user_layers: int = 3
    lr: float = 0.01
    user_lr: float = 0.01
    epochs: int = 10
    buffer_size: int = 256
    pool_step: Optional[int] = None
    user_pool_step: Optional[int] = None
    boost_factor: float = 0.0
    loss_support: str = "seeds"
    credit: str = "global"
    macro_labels: str = "count"


@dataclass
class LinUCBSection:
    alpha: float = 1.0
    lam: float = 1.0


@dataclass
class EnvSection:
    kind: str = "synthetic"
    m_prime: int = 50
    cluster_iters: int = 100
    cluster_map: Optional[str] = None


@dataclass
class SyntheticSection:
    n_arms: int = 10
    n_users: int = 20000
    d1: int = 10
    d2: int = 10
    n_groups: int = 10
    n_contexts: int = 50
    base_rate: float = 0.05
    spread_ratio: float = 5.0
    link: str = "logistic"
    strength: float = 4.0
    noise: float = 0.5
    world_seed: int = 0
    n_events: int = 2000


@dataclass
class ReplaySection:
    log: Optional[str] = None
    with_replacement: bool = False


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    imgnb: IMGNBSection = field(default_factory=IMGNBSection)
    linucb: LinUCBSection = field(default_factory=LinUCBSection)
    env: EnvSection = field(default_factory=EnvSection)
    synthetic: SyntheticSection = field(default_factory=SyntheticSection)
    replay: ReplaySection = field(default_factory=ReplaySection)
    base_dir: str = field(default=".", repr=False, compare=False)

    def sections(self):
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "base_dir"}

    def resolve(self, path):
        if path is None or os.path.isabs(path):
            return path
        return os.path.join(self.base_dir, path)

    def validate(self):
        e = self.experiment
        if e.rounds < 1:
            raise ConfigError("experiment.rounds must be >= 1")
        if e.runs < 1:
            raise ConfigError("experiment.runs must be >= 1")
        if e.policy not in ("imgnb", "linucb", "random"):
            raise ConfigError(f"experiment.policy: unknown policy {e.policy!r}")
        if self.env.kind not in ("synthetic", "replay"):
            raise ConfigError(f"env.kind: unknown environment {self.env.kind!r}")
        n_arms = self.synthetic.n_arms
        if self.env.kind == "replay":
            log = self.resolve(self.replay.log)
            if not log or not os.path.isfile(log):
                raise ConfigError(f"replay.log: file not found: {log}")
            with open(log, encoding="utf-8") as fh:
                head = fh.readline().split()
            try:
                n_arms = int(dict(t.split("=", 1) for t in head[2:])["arms"])
            except (KeyError, ValueError):
                raise ConfigError(f"replay.log: bad header in {log}") from None
        if not 1 <= e.n_seeds <= n_arms:
            raise ConfigError(f"experiment.n_seeds must lie in [1, {n_arms}]")
        cmap = self.resolve(self.env.cluster_map)
        if cmap and not os.path.isfile(cmap):
            raise ConfigError(f"env.cluster_map: file not found: {cmap}")
        if self.env.m_prime < 0:
            raise ConfigError("env.m_prime must be >= 0 (0 disables clustering)")
        if self.imgnb.boost_factor < 0:
            raise ConfigError("imgnb.boost_factor must be >= 0")
        return self


def _coerce(value: str):
    try:
        return ast.literal_eval(value)
    except (ValueError, SyntaxError):
        return value


def _set(cfg: ExperimentConfig, key: str, raw, where=""):
    section, _, name = key.partition(".")
    sections = cfg.sections()
    if section not in sections or not name:
        raise ConfigError(f"{where}unknown key {key!r}")
    sec = sections[section]
    names = {f.name: f for f in fields(sec)}
    if name not in names:
        raise ConfigError(f"{where}unknown key {key!r}")
    value = _coerce(raw) if isinstance(raw, str) else raw
    if isinstance(value, str) and value.lower() == "none":
        value = None
    default = getattr(type(sec)(), name)
    if value is not None and default is not None:
        try:
            if isinstance(default, bool):
                if not isinstance(value, bool):
                    raise TypeError
            elif isinstance(default, int):
                if isinstance(value, float) and not value.is_integer():
                    raise TypeError
                value = int(value)
            elif isinstance(default, float):
                value = float(value)
            elif isinstance(default, str):
                value = str(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}{key}: cannot use {raw!r} here") from None
    setattr(sec, name, value)


def parse_config_text(text: str, base_dir=".") -> ExperimentConfig:
    cfg = ExperimentConfig(base_dir=base_dir)
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        _set(cfg, key.strip(), value.strip(), where=f"line {lineno}: ")
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config_text(text, base_dir=os.path.dirname(os.path.abspath(path)))


def apply_overrides(cfg: ExperimentConfig, overrides) -> ExperimentConfig:
    """Copy of ``cfg`` with ``{"section.key": value}`` or ``["k=v", ...]`` applied."""
    new = dataclasses.replace(cfg, **{k: dataclasses.replace(v) for k, v in cfg.sections().items()})
    if isinstance(overrides, dict):
        items = overrides.items()
    else:
        items = [o.split("=", 1) for o in overrides]
    for key, value in items:
        _set(new, key.strip(), value.strip() if isinstance(value, str) else value)
    return new


def config_to_text(cfg: ExperimentConfig) -> str:
    """Every key with its resolved value, one per line, in schema order."""
    lines = []
    for name, sec in cfg.sections().items():
        for f in fields(sec):
            lines.append(f"{name}.{f.name} = {getattr(sec, f.name)!r}")
    return "\n".join(lines) + "\n"
