"""
Depth-hypothesis generation around a monocular prior.

A `DepthRange` brackets each pixel's prior depth by a relative fraction; the fraction
comes from camera velocity (static cameras collapse onto the prior), a fixed baseline
value, a cascade refinement or the prior's own confidence. Hypotheses are spaced
uniformly in inverse depth.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal, Sequence

import torch
import torch.nn.functional as F

from src.services.geometry import DTYPE, as_tensor

LOGGER = logging.getLogger(__name__)

FRACTION_FLOOR = 1e-4
FRACTION_CEILING = 1.0 - 1e-4
CONFIDENCE_EPSILON = 1e-3
CONFIDENCE_FLOOR = 1e-3
CONFIDENCE_SCALE = 0.1

ScaleFunction = Literal["identity", "median_ratio", "camera_height"]
VelocitySource = Literal["ground_truth", "pose_provider"]


def clamp_fraction(fraction: torch.Tensor | float) -> torch.Tensor:
    return torch.clamp(as_tensor(fraction), FRACTION_FLOOR, FRACTION_CEILING)


@dataclass(frozen=True, eq=False)
class DepthRange:
    center: torch.Tensor
    fraction: torch.Tensor
    d_min: torch.Tensor
    d_max: torch.Tensor

    def __post_init__(self) -> None:
        center = as_tensor(self.center)
        fraction = as_tensor(self.fraction).expand_as(center).clone()
        d_min = as_tensor(self.d_min).expand_as(center).clone()
        d_max = as_tensor(self.d_max).expand_as(center).clone()
        for name, value in (("center", center), ("fraction", fraction), ("d_min", d_min), ("d_max", d_max)):
            object.__setattr__(self, name, value)
            if not torch.all(torch.isfinite(value)):
                raise ValueError(f"depth range {name} must be finite")
        if torch.any(fraction < 0) or torch.any(fraction >= 1):
            raise ValueError("depth range fraction must lie in [0, 1)")
        if torch.any(d_min <= 0) or torch.any(d_min > center) or torch.any(center > d_max):
            raise ValueError("depth range must satisfy 0 < d_min <= center <= d_max")

    @classmethod
    def around(cls, center: torch.Tensor | float, fraction: torch.Tensor | float) -> "DepthRange":
        center_t = as_tensor(center)
        if torch.any(center_t <= 0):
            raise ValueError("range center must be positive")
        fraction_t = as_tensor(fraction)
        return cls(
            center=center_t,
            fraction=fraction_t,
            d_min=center_t * (1.0 - fraction_t),
            d_max=center_t * (1.0 + fraction_t),
        )

    @classmethod
    def from_bounds(cls, d_min: torch.Tensor | float, d_max: torch.Tensor | float) -> "DepthRange":
        low = as_tensor(d_min)
        high = as_tensor(d_max)
        center = (low + high) / 2.0
        return cls(center=center, fraction=(high - low) / (high + low), d_min=low, d_max=high)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.center.shape)


@dataclass(frozen=True, eq=False)
class DepthHypothesisSet:
    depths: torch.Tensor
    range: DepthRange

    @property
    def count(self) -> int:
        return int(self.depths.shape[-1])


@dataclass(frozen=True)
class VelocityEstimate:
    v: float
    source: VelocitySource = "ground_truth"
    scale_fn: ScaleFunction = "identity"
    scale: float = 1.0

    def __post_init__(self) -> None:
        if not self.v >= 0:
            raise ValueError(f"velocity must be non-negative, got {self.v}")
        if not self.scale > 0:
            raise ValueError(f"velocity scale must be positive, got {self.scale}")

    def metric(self) -> float:
        """Velocity after the scale function, in meters per second."""
        return self.v * self.scale


def median_ratio_scale(reference: torch.Tensor, estimate: torch.Tensor) -> float:
    """median(reference) / median(estimate); both must be positive."""
    ref = torch.median(as_tensor(reference).flatten()).item()
    est = torch.median(as_tensor(estimate).flatten()).item()
    if ref <= 0 or est <= 0:
        raise ValueError("median-ratio scaling needs positive medians")
    return ref / est


def camera_height_scale(true_height: float, estimated_height: float) -> float:
    if true_height <= 0 or estimated_height <= 0:
        raise ValueError("camera heights must be positive")
    return true_height / estimated_height


def estimate_velocity(
    T: Sequence[float] | torch.Tensor,
    frame_rate: float,
    source: VelocitySource = "ground_truth",
    scale_fn: ScaleFunction = "identity",
    scale: float = 1.0,
) -> VelocityEstimate:
    if not frame_rate > 0:
        raise ValueError(f"frame_rate must be positive, got {frame_rate}")
    if scale_fn == "identity":
        scale = 1.0
    speed = frame_rate * torch.linalg.norm(as_tensor(T).reshape(3)).item()
    return VelocityEstimate(v=speed, source=source, scale_fn=scale_fn, scale=scale)


def velocity_range(center: torch.Tensor | float, v: VelocityEstimate, beta: float) -> DepthRange:
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    fraction = clamp_fraction(beta * v.metric())
    LOGGER.debug("Velocity %.4f m/s gives range fraction %.6f", v.metric(), fraction.item())
    return DepthRange.around(center, fraction)


def fixed_range(center: torch.Tensor | float, fraction: float) -> DepthRange:
    if not 0 < fraction < 1:
        raise ValueError(f"fixed fraction must lie in (0, 1), got {fraction}")
    return DepthRange.around(center, fraction)


def cascade_range(prev: DepthRange, center: torch.Tensor | None = None) -> DepthRange:
    """Next refinement stage: half the fraction, optionally re-centered on a new estimate."""
    fraction = torch.clamp(prev.fraction / 2.0, min=FRACTION_FLOOR)
    fraction = torch.where(prev.fraction <= FRACTION_FLOOR, prev.fraction, fraction)
    return DepthRange.around(prev.center if center is None else center, fraction)


def confidence_range(
    center: torch.Tensor | float,
    prior_confidence: torch.Tensor | float,
    beta: float,
) -> DepthRange:
    confidence = as_tensor(prior_confidence)
    if torch.any(confidence <= 0) or torch.any(confidence > 1):
        raise ValueError("prior confidence must lie in (0, 1]")
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    fraction = clamp_fraction(beta * (1.0 - confidence + CONFIDENCE_EPSILON))
    return DepthRange.around(center, fraction)


def no_prior_range(d_floor: float, d_ceiling: float, shape: Sequence[int]) -> DepthRange:
    """Global range used when matching without a monocular prior."""
    if not 0 < d_floor < d_ceiling:
        raise ValueError(f"invalid global bounds [{d_floor}, {d_ceiling}]")
    return DepthRange.from_bounds(
        torch.full(tuple(shape), d_floor, dtype=DTYPE),
        torch.full(tuple(shape), d_ceiling, dtype=DTYPE),
    )


def prior_confidence(prior: torch.Tensor) -> torch.Tensor:
    """exp(-deviation / 0.1) of each pixel from its 3x3 median, relative to that median."""
    data = as_tensor(prior)
    padded = F.pad(data[None, None], (1, 1, 1, 1), mode="replicate")
    patches = F.unfold(padded, kernel_size=3)[0]
    median = torch.median(patches, dim=0).values.reshape(data.shape)
    deviation = torch.abs(data - median) / median
    return torch.clamp(torch.exp(-deviation / CONFIDENCE_SCALE), CONFIDENCE_FLOOR, 1.0)


def inverse_sample(range: DepthRange, D: int) -> DepthHypothesisSet:
    """D hypotheses per pixel, evenly spaced in inverse depth, j = 0 at d_max."""
    if D < 2:
        raise ValueError(f"D must be at least 2, got {D}")
    near_inverse = (1.0 / range.d_min).unsqueeze(-1)
    far_inverse = (1.0 / range.d_max).unsqueeze(-1)
    steps = torch.arange(D, dtype=DTYPE) / (D - 1)
    depths = 1.0 / ((near_inverse - far_inverse) * steps + far_inverse)
    depths[..., 0] = range.d_max
    depths[..., -1] = range.d_min
    degenerate = (range.d_min == range.d_max).unsqueeze(-1)
    depths = torch.where(degenerate, range.center.unsqueeze(-1).expand_as(depths), depths)
    return DepthHypothesisSet(depths=depths, range=range)
