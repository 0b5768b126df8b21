"""Experiment manifest: one YAML file covering every stage of a run."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .corpus import SplitSpec
from .model.config import ConfigError, EarlyStopPolicy, TransformerConfig
from .report import EnergyParams


@dataclass(frozen=True)
class SubwordSpec:
    type: str = "bpe"
    vocab_size: int = 16000
    em_rounds: int = 2
    prune_keep: float = 0.75

    def __post_init__(self):
        if self.type not in ("bpe", "unigram"):
            raise ConfigError(f"subword type must be bpe or unigram, not {self.type!r}")


@dataclass(frozen=True)
class TrainSpec:
    max_steps: int = 200_000
    beam: int = 1


@dataclass(frozen=True)
class Paths:
    source: str | None = None
    target: str | None = None
    dev_source: str | None = None
    dev_target: str | None = None
    subword_model: str | None = None
    checkpoint: str | None = None
    history: str | None = None
    workdir: str | None = None


@dataclass(frozen=True)
class RunConfig:
    model: TransformerConfig = field(default_factory=TransformerConfig)
    subword: SubwordSpec = field(default_factory=SubwordSpec)
    split: SplitSpec = field(default_factory=lambda: SplitSpec(test_lines=1300, dev_lines=2600, seed=0))
    early_stop: EarlyStopPolicy = field(default_factory=EarlyStopPolicy)
    energy: EnergyParams = field(default_factory=EnergyParams)
    train: TrainSpec = field(default_factory=TrainSpec)
    paths: Paths = field(default_factory=Paths)


_SECTIONS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _section_type(name: str):
    return {
        "model": TransformerConfig,
        "subword": SubwordSpec,
        "split": SplitSpec,
        "early_stop": EarlyStopPolicy,
        "energy": EnergyParams,
        "train": TrainSpec,
        "paths": Paths,
    }[name]


def run_config_from_dict(data: dict, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig, rejecting unknown sections/keys.

    ``overrides`` maps ``section -> {key: value}`` and wins over ``data``.
    """
    data = dict(data or {})
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    sections = {}
    defaults = RunConfig()
    for name in _SECTIONS:
        cls = _section_type(name)
        raw = data.get(name) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"[{name}] must be a mapping")
        values = dict(raw)
        values.update((overrides or {}).get(name, {}))
        allowed = {f.name for f in dataclasses.fields(cls)}
        bad = set(values) - allowed
        if not bad:
            values = {**dataclasses.asdict(getattr(defaults, name)), **values}
        if bad:
            raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
        try:
            sections[name] = cls(**values)
        except TypeError as exc:
            raise ConfigError(f"[{name}]: {exc}") from None
    return RunConfig(**sections)


def load_run_config(path: Path | str | None, overrides: dict | None = None) -> RunConfig:
    data = {}
    if path:
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    return run_config_from_dict(data, overrides)
