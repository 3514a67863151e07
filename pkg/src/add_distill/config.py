"""Flat ``section.key = value`` run configuration.

Schema (every key optional; absent keys take the defaults shown by
``serialize(RunConfig())``):

    distill.alpha_i, distill.beta_i, distill.alpha_v, distill.beta_v,
    distill.alpha, distill.beta            non-negative floats
    distill.n_levels, distill.m_levels     positive ints
    distill.reduction                      normalized | raw
    optim.lr, optim.steps                  gradient-descent step size and count
    harness.<field>                        any other HarnessConfig field
    run.seeds                              comma-separated ints
    run.out_dir                            output directory

Lines starting with ``#`` and blank lines are ignored. Environment
variables named ``ADD_DISTILL_<SECTION>__<KEY>`` (upper case) override file
values when an environment mapping is passed to ``parse_config``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import AddDistillError, ConfigError
from .harness import HarnessConfig
from .losses import DistillConfig

ENV_PREFIX = "ADD_DISTILL_"
OPTIM_FIELDS = ("lr", "steps")
_WEIGHTS = ("alpha_i", "beta_i", "alpha_v", "beta_v", "alpha", "beta")


@dataclass(frozen=True)
class RunConfig:
    distill: DistillConfig = field(default_factory=DistillConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)
    seeds: tuple = (0, 1, 2)
    out_dir: str = "runs/default"

    @property
    def reduction(self) -> str:
        return self.distill.reduction


def _schema() -> dict:
    """Dotted key -> (section, field name, python type)."""
    out = {}
    for f in fields(DistillConfig):
        out[f"distill.{f.name}"] = ("distill", f.name, type(getattr(DistillConfig(), f.name)))
    for f in fields(HarnessConfig):
        section = "optim" if f.name in OPTIM_FIELDS else "harness"
        out[f"{section}.{f.name}"] = ("harness", f.name, type(getattr(HarnessConfig(), f.name)))
    out["run.seeds"] = ("run", "seeds", tuple)
    out["run.out_dir"] = ("run", "out_dir", str)
    return out


SCHEMA = _schema()


def _convert(key: str, raw: str, typ):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is tuple:
            return tuple(int(s) for s in raw.split(",") if s.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {typ.__name__}") from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _check_out_dir(path: str):
    p = Path(path).absolute()
    probe = p
    while not probe.exists():
        probe = probe.parent
    if not probe.is_dir() or not os.access(probe, os.W_OK):
        raise ConfigError(f"run.out_dir: {path} is not creatable")


def build_config(values: dict) -> RunConfig:
    """Validate dotted ``key -> typed value`` pairs into a RunConfig."""
    groups = {"distill": {}, "harness": {}, "run": {}}
    for key, value in values.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key}")
        section, name, _ = SCHEMA[key]
        groups[section][name] = value
    for name in _WEIGHTS:
        v = groups["distill"].get(name)
        if v is not None and not v >= 0:
            raise ConfigError(f"distill.{name} must be >= 0, got {v}")
    try:
        distill = DistillConfig(**groups["distill"])
    except AddDistillError as exc:
        raise ConfigError(f"distill: {exc}") from None
    try:
        harness = HarnessConfig(**groups["harness"])
    except AddDistillError as exc:
        raise ConfigError(f"harness: {exc}") from None
    seeds = groups["run"].get("seeds", RunConfig.seeds)
    if not seeds or any(s < 0 for s in seeds):
        raise ConfigError("run.seeds must list at least one non-negative seed")
    out_dir = groups["run"].get("out_dir", RunConfig.out_dir)
    _check_out_dir(out_dir)
    return RunConfig(distill, harness, tuple(seeds), out_dir)


def parse_text(text: str, env=None) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key}")
        values[key] = _convert(key, raw, SCHEMA[key][2])
    for key, (_, _, typ) in SCHEMA.items():
        env_key = ENV_PREFIX + key.replace(".", "__").upper()
        if env and env_key in env:
            values[key] = _convert(key, env[env_key], typ)
    return build_config(values)


def parse_config(path, env=None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_text(text, env)


def to_values(cfg: RunConfig) -> dict:
    values = {}
    for key, (section, name, _) in SCHEMA.items():
        if section == "run":
            values[key] = getattr(cfg, name)
        else:
            values[key] = getattr(getattr(cfg, section), name)
    return values


def serialize(cfg: RunConfig) -> str:
    return "".join(f"{k} = {_format(v)}\n" for k, v in to_values(cfg).items())


def with_overrides(cfg: RunConfig, **dotted) -> RunConfig:
    """Copy of ``cfg`` with dotted keys (``.`` written as ``__``) replaced."""
    values = to_values(cfg)
    for k, v in dotted.items():
        values[k.replace("__", ".")] = v
    return build_config(values)


def replace_seeds(cfg: RunConfig, seeds) -> RunConfig:
    return replace(cfg, seeds=tuple(int(s) for s in seeds))
