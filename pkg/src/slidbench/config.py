"""Run configuration: ``section.key=value`` overrides.

Precedence, lowest first: built-in defaults, the file named by
``SLID_BENCH_CONFIG``, then ``--set`` flags. Unknown keys are rejected
before any work starts.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .dsp import MfccConfig
from .errors import ConfigError
from .model import BaselineConfig

ENV_VAR = "SLID_BENCH_CONFIG"


@dataclass(frozen=True)
class DatasetConfig:
    train_per_language: int = 4000
    eval_per_language: int = 500
    min_s: float = 3.0
    max_s: float = 7.0
    train_source: str = "Wilderness"
    languages: str = ""  # comma list; empty means all 16

    def language_list(self):
        return [c.strip() for c in self.languages.split(",") if c.strip()] or None


@dataclass(frozen=True)
class StatsConfig:
    resamples: int = 100_000
    mode: str = "auto"


@dataclass(frozen=True)
class RunConfig:
    mfcc: MfccConfig = field(default_factory=MfccConfig)
    train: BaselineConfig = field(default_factory=BaselineConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    stats: StatsConfig = field(default_factory=StatsConfig)

    def to_text(self) -> str:
        lines = []
        for section in ("mfcc", "dataset", "stats"):
            obj = getattr(self, section)
            lines += [f"{section}.{f.name}={getattr(obj, f.name)}" for f in dataclasses.fields(obj)]
        lines += [f"train.{line}" for line in self.train.to_text().splitlines()]
        return "\n".join(lines) + "\n"


def _convert(section_obj, key, raw):
    current = getattr(section_obj, key)
    if isinstance(current, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(current, (int, float, str)):
        return type(current)(raw)
    raise ConfigError(f"cannot override {key}")


def parse_assignments(items) -> dict[str, str]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override must look like key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def read_config_file(path) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    lines = [ln.strip() for ln in text.splitlines()]
    return parse_assignments(ln for ln in lines if ln and not ln.startswith("#"))


def resolve(overrides: dict[str, str] | None = None, env=None) -> RunConfig:
    env = os.environ if env is None else env
    values = {}
    if env.get(ENV_VAR):
        values.update(read_config_file(env[ENV_VAR]))
    values.update(overrides or {})

    sections = {"mfcc": {}, "train": {}, "dataset": {}, "stats": {}}
    unknown = []
    for key, raw in values.items():
        section, _, name = key.partition(".")
        if section not in sections or not name:
            unknown.append(key)
        else:
            sections[section][name] = raw
    defaults = RunConfig()
    for section in ("mfcc", "dataset", "stats"):
        names = {f.name for f in dataclasses.fields(getattr(defaults, section))}
        unknown += [f"{section}.{k}" for k in sections[section] if k not in names]
    train_names = {f.name for f in dataclasses.fields(BaselineConfig)}
    unknown += [f"train.{k}" for k in sections["train"] if k not in train_names]
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")

    built = {}
    for section in ("mfcc", "dataset", "stats"):
        base = getattr(defaults, section)
        try:
            kwargs = {k: _convert(base, k, v) for k, v in sections[section].items()}
        except ValueError as exc:
            raise ConfigError(f"bad value in section {section}: {exc}") from exc
        built[section] = dataclasses.replace(base, **kwargs)
    built["train"] = BaselineConfig.from_strings(sections["train"])
    if built["stats"].mode not in ("auto", "exhaustive", "monte_carlo"):
        raise ConfigError(f"stats.mode must be auto, exhaustive or monte_carlo")
    return RunConfig(**built)
