"""Typed run configuration: strict TOML loading and stable content hashing.

Every knob of a simulation run lives here, grouped into sections that
mirror the TOML layout. Loading is strict: an unknown section or key
fails immediately, naming the offender, so a typo cannot silently run
with defaults. The config hash stamped into run manifests is the SHA-256
of the canonical JSON form.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .detector import SimDetectorConfig
from .events import canonical_json

RUN_MODES = ("from_seed", "legacy_dots")


class ConfigError(ValueError):
    """Raised on unknown keys, wrong types, or out-of-range values."""


@dataclass(frozen=True)
class WorldConfig:
    """Shape of the synthetic dataset a run is exercised on."""

    classes: tuple[str, ...] = ("Rockfish", "Starfish", "Sponge")
    images: int = 200
    width: float = 640.0
    height: float = 512.0
    objects_per_image: float = 10.0
    min_side: float = 24.0
    max_side: float = 96.0
    seed_fraction: float = 0.15
    dot_coverage: float = 0.95

    def __post_init__(self):
        if len(self.classes) < 1 or len(set(self.classes)) != len(self.classes):
            raise ConfigError(f"classes must be non-empty and unique, got {self.classes}")
        if self.images < 1:
            raise ConfigError("images must be positive")
        if not 0.0 < self.min_side <= self.max_side:
            raise ConfigError("need 0 < min_side <= max_side")
        if self.max_side > min(self.width, self.height):
            raise ConfigError("max_side cannot exceed the image frame")
        for name in ("seed_fraction", "dot_coverage"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        if self.objects_per_image <= 0:
            raise ConfigError("objects_per_image must be positive")


@dataclass(frozen=True)
class PathsConfig:
    """Dataset file locations; empty strings mean "synthesize from [world]"."""

    world: str = ""
    boxes: str = ""
    dots: str = ""
    output: str = "run"

    def __post_init__(self):
        if not self.output:
            raise ConfigError("output directory cannot be empty")


@dataclass(frozen=True)
class CrowdConfig:
    """Worker population and review-gate settings."""

    workers: int = 24
    mix: tuple[float, float, float] = (0.7, 0.2, 0.1)
    lease_seconds: float = 600.0
    gold_iou_threshold: float = 0.8
    require_gold_class: bool = False
    max_republishes: int = 8
    worker_cap: int = 500

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        if self.worker_cap < self.workers:
            raise ConfigError("worker_cap must be at least the initial roster size")
        if len(self.mix) != 3 or min(self.mix) < 0 or sum(self.mix) <= 0:
            raise ConfigError(f"mix must be three non-negative weights, got {self.mix}")
        if not 0.0 < self.gold_iou_threshold < 1.0:
            raise ConfigError("gold_iou_threshold must be in (0, 1)")
        if self.lease_seconds <= 0:
            raise ConfigError("lease_seconds must be positive")
        if self.max_republishes < 0:
            raise ConfigError("max_republishes must be non-negative")


@dataclass(frozen=True)
class TrainingConfig:
    """Per-loop training pass settings."""

    epochs: int = 3
    learning_rate: float = 0.05
    lambda_reg: float = 1.0
    batch_size: int = 256
    positive_fraction: float = 0.5
    include_background: bool = True
    augment: bool = True
    anchor_stride: float = 32.0
    anchor_sizes: tuple[float, ...] = (32.0, 64.0, 96.0)

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if not 0.0 < self.positive_fraction <= 1.0:
            raise ConfigError("positive_fraction must be in (0, 1]")
        if self.anchor_stride <= 0 or not self.anchor_sizes:
            raise ConfigError("anchor grid needs a positive stride and at least one size")


@dataclass(frozen=True)
class RunConfig:
    """Everything a simulation run depends on, in one hashable value."""

    seed: int = 20260819
    mode: str = "from_seed"
    max_loops: int = 10
    epsilon: float = 0.01
    patience: int = 1
    world: WorldConfig = WorldConfig()
    detector: SimDetectorConfig = SimDetectorConfig()
    crowd: CrowdConfig = CrowdConfig()
    training: TrainingConfig = TrainingConfig()
    paths: PathsConfig = PathsConfig()

    def __post_init__(self):
        if self.mode not in RUN_MODES:
            raise ConfigError(f"mode must be one of {RUN_MODES}, got {self.mode!r}")
        if self.max_loops < 1:
            raise ConfigError("max_loops must be positive")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be non-negative")
        if self.patience < 1:
            raise ConfigError("patience must be positive")


_SECTIONS = {
    "world": WorldConfig,
    "detector": SimDetectorConfig,
    "crowd": CrowdConfig,
    "training": TrainingConfig,
    "paths": PathsConfig,
}
_RUN_KEYS = ("seed", "mode", "max_loops", "epsilon", "patience")

# Tuple-typed fields arrive from TOML/JSON as lists and need coercion.
_TUPLE_FIELDS = {
    "classes": str,
    "mix": float,
    "anchor_sizes": float,
    "fp_size_range": float,
}


def _build_section(cls, raw: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {unknown}")
    kwargs: dict[str, Any] = {}
    for key, value in raw.items():
        if key in _TUPLE_FIELDS and isinstance(value, (list, tuple)):
            value = tuple(_TUPLE_FIELDS[key](v) for v in value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{section}] section: {exc}") from exc


def build_config(raw: dict) -> RunConfig:
    """Construct a RunConfig from a nested plain dict, rejecting unknown keys."""
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a table, got {type(raw).__name__}")
    run_raw = dict(raw.get("run", {}))
    unknown_run = sorted(set(run_raw) - set(_RUN_KEYS))
    if unknown_run:
        raise ConfigError(f"unknown keys in [run]: {unknown_run}")
    unknown_sections = sorted(set(raw) - set(_SECTIONS) - {"run"})
    if unknown_sections:
        raise ConfigError(f"unknown config sections: {unknown_sections}")

    kwargs: dict[str, Any] = dict(run_raw)
    for name, cls in _SECTIONS.items():
        if name in raw:
            kwargs[name] = _build_section(cls, dict(raw[name]), name)
    try:
        return RunConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [run] section: {exc}") from exc


def load_config(path: Path | str) -> RunConfig:
    """Load and validate a TOML run configuration file."""
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return build_config(raw)


def config_to_dict(config: RunConfig) -> dict:
    """Nested plain-dict form, the input shape build_config accepts."""
    return {
        "run": {key: getattr(config, key) for key in _RUN_KEYS},
        "world": asdict(config.world),
        "detector": asdict(config.detector),
        "crowd": asdict(config.crowd),
        "training": asdict(config.training),
        "paths": asdict(config.paths),
    }


def config_hash(config: RunConfig) -> str:
    """Content address of a configuration (SHA-256 of its canonical JSON)."""
    return hashlib.sha256(canonical_json(config_to_dict(config)).encode("utf-8")).hexdigest()


def reference_config() -> RunConfig:
    """The default simulation setup used by the acceptance suite."""
    return RunConfig()
