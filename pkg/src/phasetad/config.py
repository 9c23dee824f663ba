"""Typed configuration for the detector and its training loop.

Configs are plain dataclasses with strict validation and lossless JSON
round-tripping, so checkpoints can embed the exact configuration they were
produced with.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .errors import ConfigError
from .phases import Phase, phase_set


class AlignmentMode(str, Enum):
    """How class text is turned into embeddings and matched against video."""

    GLOBAL_LABEL = "global_label"        # one bank from the bare class label
    GLOBAL_MERGE = "global_merge"        # one bank from concatenated descriptions
    PHASE_AVERAGE = "phase_average"      # per-phase banks, uniform weights
    PHASE_ADAPTIVE = "phase_adaptive"    # per-phase banks, learned weights


class FilteringMode(str, Enum):
    NONE = "none"
    STATIC = "static"                    # fixed contiguous segments
    TEXT_INFUSED = "text_infused"        # similarity-driven masks


class MaskStyle(str, Enum):
    BINARY = "binary"
    SOFT = "soft"


class WeightInput(str, Enum):
    POOLED = "pooled"                    # phase tokens share the pooled video feature
    PER_PHASE = "per_phase"              # each token pools its own phase branch


class ScheduleKind(str, Enum):
    MULTISTEP = "multistep"
    COSINE = "cosine"


def _parse_enum(kind, value, name: str):
    if isinstance(value, kind):
        return value
    try:
        return kind(value)
    except ValueError:
        choices = sorted(m.value for m in kind)
        raise ConfigError(f"invalid {name} {value!r}, choose from {choices}") from None


def _from_obj(cls, obj: dict, enum_fields: dict, tuple_fields: tuple[str, ...] = ()):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = dict(obj)
    for name, kind in enum_fields.items():
        if name in kwargs:
            kwargs[name] = _parse_enum(kind, kwargs[name], name)
    for name in tuple_fields:
        if name in kwargs:
            kwargs[name] = tuple(kwargs[name])
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad {cls.__name__}: {exc}") from exc


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and alignment-mode settings of the detector."""

    d_in: int = 2048
    text_dim: int = 512
    dim: int = 512
    n_layers: int = 6
    n_heads: int = 8
    ff_dim: int | None = None
    max_len: int = 2048
    n_phases: int = 4
    alignment: AlignmentMode = AlignmentMode.PHASE_ADAPTIVE
    filtering: FilteringMode = FilteringMode.TEXT_INFUSED
    mask_style: MaskStyle = MaskStyle.BINARY
    weight_input: WeightInput = WeightInput.POOLED
    weight_mode: str = "softmax"
    weight_heads: int = 4
    weight_hidden: int = 1024
    fusion_hidden: int = 1024
    cross_heads: int = 1
    head_eps: float = 1e-4

    def __post_init__(self):
        if min(self.d_in, self.text_dim, self.dim, self.n_layers, self.n_heads) < 1:
            raise ConfigError("model dimensions and layer counts must be positive")
        if self.dim % self.n_heads != 0:
            raise ConfigError(f"n_heads {self.n_heads} must divide dim {self.dim}")
        if self.dim % self.cross_heads != 0:
            raise ConfigError(f"cross_heads {self.cross_heads} must divide dim {self.dim}")
        if not 1 <= self.n_phases <= 6:
            raise ConfigError(f"n_phases must be in [1, 6], got {self.n_phases}")
        if self.weight_mode not in ("softmax", "sigmoid"):
            raise ConfigError(f"unknown weight_mode {self.weight_mode!r}")

    @property
    def bank_phases(self) -> tuple[Phase, ...]:
        """Phases that get a text bank: one global bank for the label/merge
        modes, the configured phase set otherwise."""
        if self.alignment in (AlignmentMode.GLOBAL_LABEL, AlignmentMode.GLOBAL_MERGE):
            return (Phase.GLOBAL,)
        return phase_set(self.n_phases)

    def to_json_obj(self) -> dict:
        obj = dataclasses.asdict(self)
        for key in ("alignment", "filtering", "mask_style", "weight_input"):
            obj[key] = obj[key].value
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ModelConfig":
        return _from_obj(cls, obj, {"alignment": AlignmentMode,
                                    "filtering": FilteringMode,
                                    "mask_style": MaskStyle,
                                    "weight_input": WeightInput})


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; the seed is deliberately required."""

    seed: int
    epochs: int = 50
    lr: float = 1e-4
    weight_decay: float = 0.0
    warmup_epochs: int = 5
    schedule: ScheduleKind = ScheduleKind.MULTISTEP
    milestones: tuple[float, float] = (0.6, 0.85)
    gamma: float = 0.1
    grad_clip: float = 1.0
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive")
        if not all(0 < m < 1 for m in self.milestones):
            raise ConfigError("milestones are fractions of total epochs in (0, 1)")
        if any(w < 0 for w in self.loss_weights):
            raise ConfigError("loss weights must be nonnegative")

    @property
    def effective_warmup(self) -> int:
        """Warmup epoch count, shrunk to a 0.2 fraction for short runs."""
        if self.epochs < 25:
            return max(1, round(0.2 * self.epochs))
        return self.warmup_epochs

    def to_json_obj(self) -> dict:
        obj = dataclasses.asdict(self)
        obj["schedule"] = obj["schedule"].value
        obj["milestones"] = list(obj["milestones"])
        obj["loss_weights"] = list(obj["loss_weights"])
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "TrainConfig":
        return _from_obj(cls, obj, {"schedule": ScheduleKind},
                         tuple_fields=("milestones", "loss_weights"))


def load_config_file(path: str | Path) -> dict:
    """Read a JSON config file, mapping file and parse problems to ConfigError."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return obj
