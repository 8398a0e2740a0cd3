"""
Experiment configuration: flat `key = value` files validated into a frozen model.

Unknown keys, bad values and inconsistent combinations raise ConfigError before any
rendering starts.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.services.errors import ConfigError

LOGGER = logging.getLogger(__name__)

HASH_LENGTH = 16
# Keys that change how a run executes but not what it computes.
EXECUTION_KEYS = frozenset({"jobs"})


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    # Scene and camera.
    scene: Literal["walls", "moving_object", "textureless", "mixed"] = "walls"
    specular: bool = False
    object_motion: tuple[float, float, float] = (0.0, -0.5, -0.2)
    width: int = Field(160, gt=0)
    height: int = Field(48, gt=0)
    focal_ratio: float = Field(0.58, gt=0)
    sensor_noise: float = Field(0.0, ge=0)
    depth_floor: float = Field(1.0, gt=0)
    depth_ceiling: float = Field(80.0, gt=0)

    # Trajectory.
    velocity: tuple[float, float, float] = (3.0, 0.0, 0.0)
    yaw: float = 0.0
    frame_rate: float = 10.0
    num_frames: int = 3
    sweep_speeds: tuple[float, ...] = ()

    # Matching.
    depth_bins: int = Field(16, ge=2)
    groups: int = Field(16, ge=1)
    channels: int = Field(32, ge=1)
    beta: float = Field(0.15, gt=0)
    radius: int = Field(1, ge=0)
    temperature: float = Field(0.25, gt=0)
    sampling_mode: Literal["bicubic", "bilinear"] = "bicubic"
    strategy: Literal["velocity", "fixed", "cascade", "confidence", "no_prior"] = "velocity"
    fixed_fraction: float = Field(0.5, gt=0, lt=1)
    scale_fn: Literal["identity", "median_ratio", "camera_height"] = "identity"
    source_gap: int = Field(1, ge=1)

    # Fusion.
    fusion: Literal["fused", "unfused"] = "fused"
    uncertainty_mapping: Literal["normalized", "affine_sigmoid"] = "normalized"
    sigmoid_a: float = Field(4.0, ge=0)
    sigmoid_b: float = 1.0
    fuse_resolution: Literal["quarter", "full"] = "quarter"

    # Loss oracle.
    lambda_mono: float = Field(1.0, ge=0)
    lambda_mvs: float = Field(1.0, ge=0)
    lambda_fused: float = Field(1.0, ge=0)
    gamma: float = Field(0.001, ge=0)

    # Prior and pose providers.
    prior_noise: Literal["multiplicative", "bias", "low_frequency"] = "multiplicative"
    prior_sigma: float = Field(0.1, ge=0)
    prior_bias: float = Field(1.0, gt=0)
    pose_noise: Literal["none", "isotropic", "chained"] = "none"
    pose_sigma_t: float = Field(0.0, ge=0)
    pose_sigma_r: float = Field(0.0, ge=0)
    pose_scale: float = Field(1.0, gt=0)

    # Evaluation and execution.
    eval_cap: float = Field(80.0, gt=0)
    median_scale: bool = True
    seed: int = 0
    jobs: int = Field(1, ge=1)

    @field_validator("object_motion", "velocity", "sweep_speeds", mode="before")
    @classmethod
    def _split_vector(cls, value: Any) -> Any:
        if isinstance(value, str):
            items = [item.strip() for item in value.split(",") if item.strip()]
            return tuple(float(item) for item in items)
        return value

    @field_validator("sweep_speeds")
    @classmethod
    def _non_negative_speeds(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if any(speed < 0 for speed in value):
            raise ValueError("sweep speeds must be non-negative")
        return value

    @model_validator(mode="after")
    def _check_consistency(self) -> "ExperimentConfig":
        if self.channels > 32:
            raise ValueError(f"channels must be at most 32, got {self.channels}")
        if self.channels % self.groups:
            raise ValueError(f"channels ({self.channels}) must be divisible by groups ({self.groups})")
        if 2 * self.radius + 1 > self.depth_bins:
            raise ValueError(f"window 2*radius+1 exceeds depth_bins ({self.depth_bins})")
        if self.width % 4 or self.height % 4:
            raise ValueError(f"image size {self.width}x{self.height} must be divisible by 4")
        if not self.frame_rate > 0:
            raise ValueError(f"frame_rate must be positive, got {self.frame_rate}")
        if self.num_frames < 2:
            raise ValueError(f"num_frames must be at least 2, got {self.num_frames}")
        if self.source_gap >= self.num_frames:
            raise ValueError(f"source_gap ({self.source_gap}) must be smaller than num_frames")
        if not self.depth_floor < self.depth_ceiling:
            raise ValueError("depth_floor must be below depth_ceiling")
        return self

    def canonical_json(self) -> str:
        payload = self.model_dump(mode="json", exclude=set(EXECUTION_KEYS))
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()[:HASH_LENGTH]

    def with_updates(self, **updates: Any) -> "ExperimentConfig":
        return build_config({**self.model_dump(), **updates})


def build_config(values: dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(values)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}: expected 'key = value', got {raw_line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {number}: missing key")
        if key in values:
            raise ConfigError(f"line {number}: duplicate key '{key}'")
        values[key] = value
    return values


def load_config(path: Path | None, **overrides: Any) -> ExperimentConfig:
    """Read and validate a config file; None-valued overrides are ignored."""
    values: dict[str, Any] = {}
    if path is not None:
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_config_text(text))
    values.update({key: value for key, value in overrides.items() if value is not None})
    config = build_config(values)
    LOGGER.debug("Loaded config %s (hash %s)", path, config.config_hash())
    return config
