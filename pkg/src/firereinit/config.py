"""Experiment configuration, loaded from a TOML document.

Every table maps one-to-one onto a dataclass; an unknown key anywhere is a
``ConfigError`` so a typo cannot silently fall back to a default.

Example::

    name = "continual-fire"
    seeds = [0, 1, 2]
    output_dir = "runs"
    metric_cadence = 5

    [stream]
    protocol = "continual"

    [data]
    num_classes = 10

    [model]
    hidden = [128, 128]

    [train]
    learning_rate = 1e-3

    [reinit]
    method = "fire"
    iters = 10

    [regularizer]
    kind = "none"
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from firereinit.baselines import ReinitSpec
from firereinit.data import DatasetSpec, StreamSpec
from firereinit.nn import TrainConfig
from firereinit.params import Architecture
from firereinit.regularizers import RegularizerSpec

OUTPUT_ENV = "FIRE_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    hidden: tuple[int, ...] = (128, 128)
    bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be positive")

    def architecture(self, input_dim: int, num_classes: int) -> Architecture:
        return Architecture.mlp([input_dim, *self.hidden, num_classes], bias=self.bias)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    seeds: tuple[int, ...] = (0, 1, 2)
    output_dir: str = "runs"
    metric_cadence: int = 5
    hessian: bool = False
    hessian_samples: int = 512
    probe_samples: int = 1000
    delta: float = 0.01
    dormant_tau: float = 0.025
    stream: StreamSpec = field(default_factory=StreamSpec)
    data: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    reinit: ReinitSpec = field(default_factory=ReinitSpec)
    regularizer: RegularizerSpec = field(default_factory=RegularizerSpec)

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if self.metric_cadence < 1:
            raise ValueError("metric_cadence must be >= 1")
        if self.hessian_samples < 1 or self.probe_samples < 1:
            raise ValueError("hessian_samples and probe_samples must be positive")
        if not 0.0 < self.delta < 1.0 or not 0.0 < self.dormant_tau < 1.0:
            raise ValueError("delta and dormant_tau must lie in (0, 1)")
        if self.stream.protocol == "class_incremental" and self.data.num_classes % self.stream.chunks:
            raise ValueError(
                f"class_incremental needs num_classes ({self.data.num_classes}) divisible "
                f"by the number of phases ({self.stream.chunks})"
            )
        # the regularizer table is the single source of truth for training
        if self.train.regularizer != self.regularizer:
            object.__setattr__(self, "train",
                               dataclasses.replace(self.train, regularizer=self.regularizer))

    @property
    def method_label(self) -> str:
        label = self.reinit.method
        if self.reinit.method == "fire":
            label += f"-k{self.reinit.iters}"
        elif self.reinit.method == "shrink_perturb":
            label += f"-lam{self.reinit.lam:g}"
        if self.regularizer.kind != "none":
            label += f"+{self.regularizer.kind}"
        return label

    def architecture(self) -> Architecture:
        return self.model.architecture(self.data.input_dim, self.data.num_classes)

    def epochs_for_chunk(self, chunk: int) -> int:
        base = self.train.epochs_per_chunk
        if self.stream.protocol == "warm_start" and chunk == 0:
            return 10 * base
        return base

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["train"].pop("regularizer", None)
        d["train"].pop("seed", None)
        return _plain(d)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items() if v is not None}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


_SECTIONS = {
    "stream": StreamSpec,
    "data": DatasetSpec,
    "model": ModelSpec,
    "train": TrainConfig,
    "reinit": ReinitSpec,
    "regularizer": RegularizerSpec,
}


def _build(cls, table: dict, where: str):
    if not isinstance(table, dict):
        raise ConfigError(f"[{where}] must be a table")
    allowed = {f.name for f in dataclasses.fields(cls)}
    if cls is TrainConfig:
        allowed.discard("regularizer")
        allowed.discard("seed")  # the run seed drives training; see ExperimentConfig.seeds
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    try:
        return cls(**table)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from exc


def config_from_dict(doc: dict[str, Any]) -> ExperimentConfig:
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(doc) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kwargs = {}
    for key, value in doc.items():
        if key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, key)
        else:
            kwargs[key] = value
    try:
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    return config_from_dict(doc)


def apply_overrides(cfg: ExperimentConfig, seed: int | None = None,
                    output_dir: str | None = None) -> ExperimentConfig:
    """CLI flags beat the environment, which beats the file."""
    changes: dict[str, Any] = {}
    env_dir = os.environ.get(OUTPUT_ENV)
    if output_dir is not None:
        changes["output_dir"] = output_dir
    elif env_dir:
        changes["output_dir"] = env_dir
    if seed is not None:
        changes["seeds"] = (seed,)
    return dataclasses.replace(cfg, **changes) if changes else cfg
