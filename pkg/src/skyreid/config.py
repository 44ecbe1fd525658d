"""Run configuration: typed sections, YAML persistence, dotted-key overrides.

A RunConfig collects everything a training or evaluation run needs. Configs
load strictly: unknown keys are rejected rather than ignored, so typos fail
fast instead of silently running with defaults.
"""

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import get_origin

import yaml

from .backbone import BACKBONE_KINDS
from .losses import LossWeights
from .types import ConfigurationError

DATASET_MODES = (28, 38, 88)


@dataclass(frozen=True)
class DataConfig:
    """Where the dataset lives and how images are shaped on load."""

    root: str = ""
    image_size: tuple[int, int] = (256, 128)

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(self.image_size))
        if len(self.image_size) != 2 or any(s < 16 for s in self.image_size):
            raise ConfigurationError(
                f"image_size must be two values >= 16, got {self.image_size}"
            )


@dataclass(frozen=True)
class ModelConfig:
    """Backbone shape and stream toggles."""

    backbone: str = "transformer"
    channels: int = 256
    patch_size: int = 16
    depth: int = 2
    heads: int = 4
    eva: bool = True
    ep: bool = True
    reduction: int = 16
    localizer_hidden: int = 32

    def __post_init__(self):
        if self.backbone not in BACKBONE_KINDS:
            raise ConfigurationError(
                f"backbone must be one of {BACKBONE_KINDS}, got {self.backbone!r}"
            )
        for name in ("channels", "patch_size", "depth", "heads", "reduction", "localizer_hidden"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"model.{name} must be positive")


@dataclass(frozen=True)
class LossConfig:
    """Composite objective coefficients."""

    alpha: float = 10.0
    beta: float = 50.0
    margin: float = 0.3
    v: float = 0.5
    label_smoothing: float = 0.0

    def __post_init__(self):
        try:
            self.weights()
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigurationError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")

    def weights(self) -> LossWeights:
        return LossWeights(alpha=self.alpha, beta=self.beta, margin=self.margin, v=self.v)


@dataclass(frozen=True)
class SamplerConfig:
    """Identities per batch and images per identity."""

    p: int = 6
    k: int = 4

    def __post_init__(self):
        if self.p < 2:
            raise ConfigurationError(f"sampler.p must be >= 2, got {self.p}")
        if self.k < 1:
            raise ConfigurationError(f"sampler.k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class OptimConfig:
    """Optimizer, schedule, and training-mode switches."""

    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.0
    epochs: int = 1
    warmup_frac: float = 0.05
    reduced_precision: bool = False
    freeze_target: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigurationError(f"optim.lr must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"optim.momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigurationError("optim.weight_decay must be non-negative")
        if self.epochs < 1:
            raise ConfigurationError(f"optim.epochs must be >= 1, got {self.epochs}")
        if not 0.0 <= self.warmup_frac <= 0.5:
            raise ConfigurationError(
                f"optim.warmup_frac must be in [0, 0.5], got {self.warmup_frac}"
            )


@dataclass(frozen=True)
class RunConfig:
    """Full description of one run; the unit configs persist and reload."""

    seed: int = 0
    mode: int = 88
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)

    def __post_init__(self):
        if self.mode not in DATASET_MODES:
            raise ConfigurationError(f"mode must be one of {DATASET_MODES}, got {self.mode}")

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        return _dataclass_from_dict(cls, doc, path="")

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        doc = yaml.safe_load(Path(path).read_text())
        if doc is None:
            doc = {}
        if not isinstance(doc, dict):
            raise ConfigurationError(f"{path}: config must be a mapping, got {type(doc).__name__}")
        return cls.from_dict(doc)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    def with_overrides(self, overrides: list[str]) -> "RunConfig":
        """Apply ``section.key=value`` strings on top of this config.

        Values are parsed as YAML scalars, so ``model.eva=false`` and
        ``loss.alpha=12.5`` get proper types. Unknown keys are rejected.
        """
        doc = self.to_dict()
        for item in overrides:
            key, sep, raw_value = item.partition("=")
            if not sep or not key:
                raise ConfigurationError(f"override {item!r} must look like key=value")
            try:
                value = yaml.safe_load(raw_value)
            except yaml.YAMLError as exc:
                raise ConfigurationError(f"override {item!r}: unparseable value ({exc})") from None
            target = doc
            parts = key.split(".")
            for part in parts[:-1]:
                if not isinstance(target.get(part), dict):
                    raise ConfigurationError(f"unknown config section {key!r}")
                target = target[part]
            if parts[-1] not in target:
                raise ConfigurationError(f"unknown config key {key!r}")
            target[parts[-1]] = value
        return RunConfig.from_dict(doc)


def _plain(obj):
    """Recursively convert tuples to lists so YAML output stays plain."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _coerce(value, annotation, path: str):
    if dataclasses.is_dataclass(annotation):
        if not isinstance(value, dict):
            raise ConfigurationError(f"{path} must be a mapping, got {type(value).__name__}")
        return _dataclass_from_dict(annotation, value, path=f"{path}.")
    if get_origin(annotation) is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"{path} must be a sequence, got {value!r}")
        return tuple(value)
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{path} must be a boolean, got {value!r}")
        return value
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{path} must be an integer, got {value!r}")
        return value
    if annotation is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{path} must be a number, got {value!r}")
        return float(value)
    if annotation is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{path} must be a string, got {value!r}")
        return value
    return value


def _dataclass_from_dict(cls, doc: dict, path: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(doc) - set(known)
    if unknown:
        raise ConfigurationError(f"unknown config key(s): {', '.join(sorted(path + k for k in unknown))}")
    kwargs = {
        name: _coerce(doc[name], known[name].type, path + name) for name in doc
    }
    try:
        return cls(**kwargs)
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid config near {path or 'top level'}: {exc}") from None
