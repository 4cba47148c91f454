"""Project and synthetic-fixture configuration (YAML files, validated with pydantic).

Unknown keys are rejected everywhere. Validation problems are reported with
the dotted key path, e.g. ``models.1.window``.
"""
from __future__ import annotations

from pathlib import Path
from typing import Any

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .ktif import KtifConfig
from .neuralkit import ModelConfig
from .outliers import FENCE
from .pipeline import SplitSpec
from .series import Harmonic, SyntheticSpec, TimeSeries, generate_synthetic
from .statespace import DEFAULT_PERIODS


class ConfigError(ValueError):
    def __init__(self, source: str, key: str, message: str):
        self.source, self.key, self.message = source, key, message
        super().__init__(f"{source}: {key}: {message}" if key else f"{source}: {message}")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataSection(_Strict):
    epoch_column: str | int = 0
    delimiter: str = ","
    dataset: str | None = None  # default: input file stem


class OutlierSection(_Strict):
    k: float = Field(FENCE, gt=0)


class StateSpaceSection(_Strict):
    periods: list[float] = Field(default_factory=lambda: list(DEFAULT_PERIODS))
    trend: bool = True
    sigma_trend: float = Field(0.05, ge=0)
    sigma_slope: float = Field(0.0, ge=0)
    sigma_seasonal: float = Field(0.005, ge=0)
    sigma_obs: float = Field(0.3, gt=0)
    em: bool = True
    em_max_iter: int = Field(100, ge=1)
    em_tol: float = Field(1e-6, gt=0)
    alpha: float = Field(0.05, gt=0, lt=1)

    @field_validator("periods")
    @classmethod
    def _positive(cls, v):
        if any(p <= 0 for p in v):
            raise ValueError("periods must be > 0")
        return v


class KtifSection(_Strict):
    half_width: int = Field(30, ge=1)
    decay: float = Field(0.1, gt=0)
    key_width: int = Field(8, ge=1)
    mlp_hidden: int = Field(32, ge=1)
    history: int = Field(64, ge=1)
    mask_fraction: float = Field(0.05, gt=0, lt=1)
    penalty: float = Field(1.0, ge=0)
    gate_bias: float = 3.0
    lr: float = Field(0.01, ge=0)
    epochs: int = Field(30, ge=0)
    steps_per_epoch: int = Field(5, ge=1)
    min_observed: int = Field(50, ge=4)


def _default_models() -> list[ModelConfig]:
    return [ModelConfig(arch="LSTM"), ModelConfig(arch="GRU"), ModelConfig(arch="MLP")]


class ProjectConfig(_Strict):
    """Everything a run needs besides the input files.

    ``seed`` is the master seed: it seeds KTIF and overrides each model's own seed.
    """
    seed: int = 0
    data: DataSection = Field(default_factory=DataSection)
    outliers: OutlierSection = Field(default_factory=OutlierSection)
    statespace: StateSpaceSection = Field(default_factory=StateSpaceSection)
    ktif: KtifSection = Field(default_factory=KtifSection)
    models: list[ModelConfig] = Field(default_factory=_default_models, min_length=1)
    split: SplitSpec = Field(default_factory=SplitSpec)
    wqe_weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    workers: int = Field(1, ge=1)
    output_dir: str = "results"

    @field_validator("wqe_weights")
    @classmethod
    def _simplex(cls, w):
        if min(w) < 0 or abs(sum(w) - 1) > 1e-9:
            raise ValueError("weights must be non-negative and sum to 1")
        return w

    @field_validator("models")
    @classmethod
    def _unique(cls, models):
        names = [m.name for m in models]
        dup = sorted({n for n in names if names.count(n) > 1})
        if dup:
            raise ValueError(f"duplicate model names {dup}; set distinct `name` fields")
        return models

    def ktif_config(self) -> KtifConfig:
        ss = self.statespace.model_dump()
        ss["periods"] = tuple(ss["periods"])
        return KtifConfig(**ss, **self.ktif.model_dump(), seed=self.seed)


class HarmonicSection(_Strict):
    amplitude: float
    period: float = Field(gt=0)
    phase: float = 0.0


class SynthConfig(_Strict):
    """Fixture recipe; each listed channel gets its own noise stream."""
    length: int = Field(ge=2)
    trend: float = 0.0
    harmonics: list[HarmonicSection] = Field(default_factory=list)
    sigma: float = Field(0.0, ge=0)
    ar1: float = Field(0.0, gt=-1, lt=1)
    seed: int = 0
    start: float = 0.0
    step: float = Field(1.0, gt=0)
    offset: float = 0.0
    spikes: int = Field(0, ge=0)
    spike_size: float = 15.0
    station_id: str = "SYNTH"
    channels: list[str] = Field(default_factory=lambda: ["value"], min_length=1)
    unit: str = "mm"

    def generate(self, seed: int | None = None) -> TimeSeries:
        base = self.seed if seed is None else seed
        seeds = ([base] if len(self.channels) == 1 else
                 [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(base).spawn(len(self.channels))])
        cols = []
        for name, s in zip(self.channels, seeds):
            spec = SyntheticSpec(
                length=self.length, trend=self.trend,
                harmonics=tuple(Harmonic(**h.model_dump()) for h in self.harmonics),
                sigma=self.sigma, ar1=self.ar1, seed=s, start=self.start, step=self.step,
                offset=self.offset, spikes=self.spikes, spike_size=self.spike_size,
                station_id=self.station_id, channel=name, unit=self.unit)
            cols.append(generate_synthetic(spec))
        first = cols[0]
        values = np.concatenate([c.values for c in cols], axis=1)
        return TimeSeries(self.station_id, first.epochs, tuple(self.channels), values,
                          np.ones(values.shape, dtype=bool), tuple(self.unit for _ in self.channels))


def _key_path(loc: tuple) -> str:
    return ".".join(str(p) for p in loc)


def _validate(model: type[BaseModel], data: Any, source: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(source, "", "top level must be a mapping")
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        raise ConfigError(source, _key_path(err["loc"]), err["msg"]) from None


def _load_yaml(path: str | Path) -> Any:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(str(path), "", "file not found") from None
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), "", f"invalid YAML: {exc}") from None


def load_config(path: str | Path | None) -> ProjectConfig:
    """Defaults when ``path`` is None."""
    if path is None:
        return ProjectConfig()
    return _validate(ProjectConfig, _load_yaml(path), str(path))


def parse_config(data: dict, source: str = "<config>") -> ProjectConfig:
    return _validate(ProjectConfig, data, source)


def load_synth(path: str | Path) -> SynthConfig:
    return _validate(SynthConfig, _load_yaml(path), str(path))
