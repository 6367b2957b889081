"""Versioned run configuration: one JSON file with a section per stage.

    {
      "version": 1,
      "synth":    {... SynthConfig fields ...},
      "split":    {"train_fraction": 0.75, "seed": 0},
      "train":    {"rnn": {... TrainConfig ...}, "lr": {...}, "mlp": {...}},
      "evaluate": {"observe_hours": 12, "delta_t": 12, "n_boot": 2000, "seed": 0,
                   "sweep_hours": [1, 3, 6, 9, 12]}
    }

Every section is optional; missing fields take the library defaults. The
environment variable ``ICUDYN_SEED`` replaces every seed in the file.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .baselines import StaticConfig
from .errors import DataValidationError
from .model import TrainConfig
from .synth import SynthConfig

CONFIG_VERSION = 1
SEED_ENV = "ICUDYN_SEED"
_TOP_KEYS = {"version", "synth", "split", "train", "evaluate"}


@dataclass
class SplitSettings:
    train_fraction: float = 0.75
    seed: int = 0


@dataclass
class EvalSettings:
    observe_hours: float = 12.0
    delta_t: float = 12.0
    n_boot: int = 2000
    seed: int = 0
    sweep_hours: tuple[float, ...] = (1.0, 3.0, 6.0, 9.0, 12.0)


@dataclass
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    split: SplitSettings = field(default_factory=SplitSettings)
    rnn: TrainConfig = field(default_factory=TrainConfig)
    lr: StaticConfig = field(default_factory=StaticConfig)
    mlp: StaticConfig = field(default_factory=StaticConfig)
    evaluate: EvalSettings = field(default_factory=EvalSettings)

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "synth": asdict(self.synth),
            "split": asdict(self.split),
            "train": {"rnn": asdict(self.rnn), "lr": asdict(self.lr), "mlp": asdict(self.mlp)},
            "evaluate": asdict(self.evaluate),
        }

    def with_seed(self, seed: int) -> "RunConfig":
        """Copy with every seed replaced."""
        d = self.to_dict()
        d["synth"]["seed"] = d["split"]["seed"] = d["evaluate"]["seed"] = seed
        for section in d["train"].values():
            section["seed"] = seed
        return from_dict(d)


def _build(cls, d: dict | None, where: str):
    d = dict(d or {})
    names = {f.name for f in fields(cls)}
    extra = set(d) - names
    if extra:
        raise DataValidationError(f"config section {where}: unknown keys {sorted(extra)}")
    for k, v in d.items():
        if isinstance(v, list):
            d[k] = tuple(v)
    try:
        return cls(**d)
    except TypeError as exc:
        raise DataValidationError(f"config section {where}: {exc}") from None


def from_dict(d: dict) -> RunConfig:
    version = d.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise DataValidationError(f"config version {version} is not supported (expected {CONFIG_VERSION})")
    extra = set(d) - _TOP_KEYS
    if extra:
        raise DataValidationError(f"unknown config sections {sorted(extra)}")
    train = d.get("train") or {}
    bad = set(train) - {"rnn", "lr", "mlp"}
    if bad:
        raise DataValidationError(f"unknown train sections {sorted(bad)}")
    return RunConfig(
        synth=SynthConfig.from_dict(d.get("synth") or {}),
        split=_build(SplitSettings, d.get("split"), "split"),
        rnn=_build(TrainConfig, train.get("rnn"), "train.rnn"),
        lr=_build(StaticConfig, train.get("lr"), "train.lr"),
        mlp=_build(StaticConfig, train.get("mlp"), "train.mlp"),
        evaluate=_build(EvalSettings, d.get("evaluate"), "evaluate"),
    )


def seed_override() -> int | None:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise DataValidationError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def load_config(path=None) -> RunConfig:
    """Read a run config (defaults when ``path`` is None) and apply ``ICUDYN_SEED``."""
    if path is None:
        cfg = RunConfig()
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataValidationError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataValidationError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        if not isinstance(raw, dict):
            raise DataValidationError(f"{path}: top level must be an object")
        cfg = from_dict(raw)
    seed = seed_override()
    return cfg if seed is None else cfg.with_seed(seed)


def demo_config_path(name: str = "demo") -> Path:
    """Shipped configs: ``demo`` (seconds) or ``acceptance`` (the full synthetic benchmark)."""
    return Path(__file__).parent / "data" / f"{name}_config.json"
