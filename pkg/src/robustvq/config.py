"""Experiment configuration, method presets and the key = value config file format.

Config files are plain text, one ``key = value`` per line; ``#`` starts a
comment. Keys are the field names of :class:`ExperimentConfig`. Booleans
accept true/false/1/0/yes/no.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

__all__ = ["MethodFlags", "PRESETS", "ExperimentConfig", "parse_config_text", "load_config"]


@dataclass(frozen=True)
class MethodFlags:
    bottleneck: bool = True
    batch_norm: bool = False
    rule: str = "sgd"
    reestimate: bool = False
    boost_codebook_lr: bool = False


PRESETS = {
    "vanilla": MethodFlags(),
    "bn": MethodFlags(batch_norm=True),
    "bn_lr": MethodFlags(batch_norm=True, boost_codebook_lr=True),
    "bn_ema": MethodFlags(batch_norm=True, rule="ema"),
    "bn_reest": MethodFlags(batch_norm=True, reestimate=True),
    "bn_reest_lr": MethodFlags(batch_norm=True, reestimate=True, boost_codebook_lr=True),
    "no_bottleneck": MethodFlags(bottleneck=False),
}

TASKS = ("autoencode", "classify")


@dataclass(frozen=True)
class ExperimentConfig:
    method: str = "vanilla"
    task: str = "autoencode"
    K: int = 64
    d: int = 8
    num_heads: int = 1
    m_init: int = 200
    m_reestim: int = 1000
    r_reestim: int = 100
    lr: float = 0.05
    codebook_lr_mult: float = 10.0
    gamma_commit: float = 0.25
    ema_discount: float = 0.99
    init_scale: float = 1.0
    seed: int = 0
    iterations: int = 2000
    eval_every: int = 100
    batch_size: int = 64
    hidden: int = 64
    levels: int = 16
    components: int = 16
    lloyd_iters: int = 10
    reservoir_capacity: int = 0  # 0 means 64 * K
    polyak_decay: float = 0.0  # 0 disables averaging
    eval_raw: bool = False
    dims_per_latent: float = 0.0  # 0 means the data dimensionality

    def __post_init__(self):
        if self.method not in PRESETS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {sorted(PRESETS)}")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; choose from {list(TASKS)}")
        if self.K < 1 or self.d < 1 or self.num_heads < 1:
            raise ConfigError("K, d and num_heads must be >= 1")
        if self.d % self.num_heads:
            raise ConfigError(f"num_heads={self.num_heads} must divide d={self.d}")
        if self.iterations < 0 or self.eval_every < 1 or self.batch_size < 2:
            raise ConfigError("need iterations >= 0, eval_every >= 1, batch_size >= 2")
        if not 0 <= self.polyak_decay < 1:
            raise ConfigError("polyak_decay must lie in [0, 1)")

    @property
    def flags(self) -> MethodFlags:
        return PRESETS[self.method]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


def _coerce(name: str, typ, raw: str):
    raw = raw.strip()
    try:
        if typ in ("bool", bool):
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if typ in ("int", int):
            return int(raw)
        if typ in ("float", float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, types[key], raw)
    return dataclasses.replace(base or ExperimentConfig(), **values)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    cfg = parse_config_text(Path(path).read_text()) if path else ExperimentConfig()
    if overrides:
        cfg = cfg.replace(**overrides)
    return cfg
