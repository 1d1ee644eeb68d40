"""Experiment configuration: one JSON file with a section per subsystem.

Unknown keys are rejected at every level. ``default_config().to_dict()``
is the fully-defaulted reference written by ``quadlearn config init``.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .dynamics import Disturbance, InnerGains, Plant, QuadParams
from .errors import ConfigError
from .fuzzy import FuzzyParams
from .loops import OnlineConfig
from .network import Architecture
from .pid import PidGains
from .trainer import TrainerConfig
from .trajectories import TrajectorySpec

CONFIG_ENV = "QUADLEARN_CONFIG"
EVALUATION_NAMES = ("slow_circle", "fast_circle", "square")


def _training_trajectories() -> tuple[TrajectorySpec, ...]:
    """Circles and eights in each plane at 1 m/s, two laps each."""
    out = []
    for kind in ("circle", "eight"):
        for plane in ("xy", "xz", "yz"):
            lap = TrajectorySpec(kind, plane, 1.0, 1.0, duration=0.0).period
            out.append(TrajectorySpec(kind, plane, 1.0, 1.0, duration=round(2 * lap, 6)))
    return tuple(out)


def _evaluation_trajectories() -> dict[str, TrajectorySpec]:
    return {
        "slow_circle": TrajectorySpec("circle", "xy", 1.0, 1.0),
        "fast_circle": TrajectorySpec("circle", "xy", 1.0, 2.0),
        "square": TrajectorySpec("square", "xy", 2.0, 1.0),
    }


@dataclass(frozen=True)
class CollectionConfig:
    """Offline data collection: sample count and exploratory sensor noise."""

    samples: int = 20000
    pos_noise_std: float = 0.15
    vel_noise_std: float = 0.5

    def __post_init__(self) -> None:
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.pos_noise_std < 0 or self.vel_noise_std < 0:
            raise ValueError("noise std must be non-negative")

    def disturbance(self) -> Disturbance:
        return Disturbance(pos_noise_std=self.pos_noise_std, vel_noise_std=self.vel_noise_std)


@dataclass(frozen=True)
class Seeds:
    collect: int = 1
    flight: int = 0
    repetitions: int = 5

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


@dataclass(frozen=True)
class PlantConfig:
    quad: QuadParams = field(default_factory=QuadParams)
    inner: InnerGains = field(default_factory=InnerGains)
    physics_dt: float = 1e-3
    control_dt: float = 1e-2
    settle_time: float = 3.0

    def build(self) -> Plant:
        p = Plant(self.quad, self.inner, self.physics_dt, self.control_dt, self.settle_time)
        p.substeps  # validates the rate ratio
        return p


def _default_disturbance() -> Disturbance:
    return Disturbance(
        force=(0.3, 0.0, 0.0),
        mass_schedule=((0.0, 0.1),),
        pos_noise_std=0.002,
        vel_noise_std=0.005,
    )


@dataclass(frozen=True)
class ExperimentConfig:
    plant: PlantConfig = field(default_factory=PlantConfig)
    pid: PidGains = field(default_factory=PidGains)
    training_trajectories: tuple[TrajectorySpec, ...] = field(default_factory=_training_trajectories)
    evaluation: dict[str, TrajectorySpec] = field(default_factory=_evaluation_trajectories)
    collection: CollectionConfig = field(default_factory=CollectionConfig)
    network: Architecture = field(default_factory=Architecture)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    fuzzy: FuzzyParams = field(default_factory=FuzzyParams)
    online: OnlineConfig = field(default_factory=OnlineConfig)
    disturbance: Disturbance = field(default_factory=_default_disturbance)
    seeds: Seeds = field(default_factory=Seeds)
    output_dir: str = "runs"

    def to_dict(self) -> dict[str, Any]:
        return _to_plain(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        return _build(cls, data, "config")


def default_config() -> ExperimentConfig:
    return ExperimentConfig()


def _to_plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.init}
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (tuple, list)):
        return [_to_plain(v) for v in obj]
    return obj


def _tupled(v: Any) -> Any:
    return tuple(_tupled(x) for x in v) if isinstance(v, list) else v


# Section types that need more than key-by-key construction.
_NESTED = {
    (PlantConfig, "quad"): QuadParams,
    (PlantConfig, "inner"): InnerGains,
    (ExperimentConfig, "plant"): PlantConfig,
    (ExperimentConfig, "pid"): PidGains,
    (ExperimentConfig, "collection"): CollectionConfig,
    (ExperimentConfig, "network"): Architecture,
    (ExperimentConfig, "trainer"): TrainerConfig,
    (ExperimentConfig, "fuzzy"): FuzzyParams,
    (ExperimentConfig, "online"): OnlineConfig,
    (ExperimentConfig, "disturbance"): Disturbance,
    (ExperimentConfig, "seeds"): Seeds,
}


def _build(cls: type, data: Any, where: str) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs: dict[str, Any] = {}
    for name, value in data.items():
        path = f"{where}.{name}"
        sub = _NESTED.get((cls, name))
        if sub is not None:
            kwargs[name] = _build(sub, value, path)
        elif cls is ExperimentConfig and name == "training_trajectories":
            if not isinstance(value, list):
                raise ConfigError(f"{path}: expected a list")
            kwargs[name] = tuple(_build(TrajectorySpec, v, f"{path}[{i}]") for i, v in enumerate(value))
        elif cls is ExperimentConfig and name == "evaluation":
            if not isinstance(value, dict):
                raise ConfigError(f"{path}: expected an object")
            kwargs[name] = {k: _build(TrajectorySpec, v, f"{path}.{k}") for k, v in value.items()}
        else:
            kwargs[name] = _tupled(value)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_config(path: str | Path | None = None) -> ExperimentConfig:
    """Read a config file; with no path, fall back to $QUADLEARN_CONFIG, then defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV)
    if not path:
        return default_config()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(data)


def override(cfg: ExperimentConfig, section: str, **values: Any) -> ExperimentConfig:
    """Replace fields of one section, skipping None values (unset flags)."""
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    try:
        sub = dataclasses.replace(getattr(cfg, section), **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc
    return dataclasses.replace(cfg, **{section: sub})
