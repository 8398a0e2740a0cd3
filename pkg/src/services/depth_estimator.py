"""
Depth regression from probability volumes, entropy-based uncertainty and fusion with a
monocular prior.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal

import torch
import torch.nn.functional as F

from src.services.errors import ContractViolation
from src.services.geometry import DTYPE

if TYPE_CHECKING:
    from src.services.cost_volume import ProbabilityVolume
    from src.services.sampling import DepthHypothesisSet

LOGGER = logging.getLogger(__name__)

Resolution = Literal["quarter", "full"]
DepthKind = Literal["mono", "mvs", "fused", "gt"]
UncertaintyMapping = Literal["normalized", "affine_sigmoid"]

WEIGHT_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class DepthMap:
    data: torch.Tensor
    resolution: Resolution = "quarter"
    kind: DepthKind = "mono"

    def __post_init__(self) -> None:
        data = torch.as_tensor(self.data, dtype=DTYPE)
        object.__setattr__(self, "data", data)
        if data.dim() != 2:
            raise ValueError(f"depth map must be 2-D, got shape {tuple(data.shape)}")
        if not torch.all(torch.isfinite(data)):
            raise ValueError(f"{self.kind} depth map contains non-finite values")
        # Ground truth may carry zeros for pixels without a measurement.
        if self.kind == "gt":
            if torch.any(data < 0):
                raise ValueError("ground-truth depth must be non-negative")
        elif torch.any(data <= 0):
            raise ValueError(f"{self.kind} depth map must be strictly positive")

    @property
    def shape(self) -> tuple[int, int]:
        return int(self.data.shape[0]), int(self.data.shape[1])

    def with_kind(self, kind: DepthKind) -> "DepthMap":
        return DepthMap(self.data, resolution=self.resolution, kind=kind)


@dataclass(frozen=True, eq=False)
class UncertaintyMap:
    data: torch.Tensor
    resolution: Resolution = "quarter"

    def __post_init__(self) -> None:
        data = torch.as_tensor(self.data, dtype=DTYPE)
        object.__setattr__(self, "data", data)
        if data.dim() != 2:
            raise ValueError(f"uncertainty map must be 2-D, got shape {tuple(data.shape)}")
        if not torch.all(torch.isfinite(data)) or torch.any(data < 0) or torch.any(data > 1):
            raise ValueError("uncertainty must be finite and inside [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return int(self.data.shape[0]), int(self.data.shape[1])


def localmax_depth(P: "ProbabilityVolume", hypotheses: "DepthHypothesisSet", r: int = 1) -> DepthMap:
    """Inverse-depth weighted average over a window of 2r+1 bins around the argmax."""
    probs = P.data
    count = probs.shape[-1]
    if r < 0 or 2 * r + 1 > count:
        raise ValueError(f"window radius {r} invalid for {count} hypotheses")
    depths = hypotheses.depths.expand_as(probs)
    # torch.argmax returns the first maximal index, so ties resolve to the farthest bin.
    index = torch.argmax(probs, dim=-1, keepdim=True)
    bins = torch.arange(count).reshape(*([1] * (probs.dim() - 1)), count)
    window = (bins >= index - r) & (bins <= index + r)
    weights = torch.where(window, probs, torch.zeros_like(probs))
    total = weights.sum(dim=-1)
    safe_total = torch.where(total < WEIGHT_FLOOR, torch.ones_like(total), total)
    inverse = (weights / depths).sum(dim=-1) / safe_total
    nearest = torch.gather(depths, -1, index).squeeze(-1)
    depth = torch.where(total < WEIGHT_FLOOR, nearest, 1.0 / inverse)
    return DepthMap(depth, resolution="quarter", kind="mvs")


def probability_entropy(P: "ProbabilityVolume") -> torch.Tensor:
    probs = P.data
    entropy = -torch.special.xlogy(probs, probs).sum(dim=-1)
    return torch.clamp(entropy, 0.0, math.log(probs.shape[-1]))


def uncertainty_from_entropy(
    entropy: torch.Tensor,
    D: int,
    mapping: UncertaintyMapping = "normalized",
    a: float = 4.0,
    b: float = 1.0,
    resolution: Resolution = "quarter",
) -> UncertaintyMap:
    """Map entropy in [0, ln D] to U in [0, 1].

    `normalized` divides by ln D; `affine_sigmoid` applies sigmoid(a * (entropy - b)) and
    requires a >= 0 to stay monotone.
    """
    if D < 2:
        raise ValueError(f"D must be at least 2, got {D}")
    if mapping == "normalized":
        values = entropy / math.log(D)
    elif mapping == "affine_sigmoid":
        if a < 0:
            raise ValueError(f"sigmoid slope must be non-negative, got {a}")
        values = torch.sigmoid(a * (entropy - b))
    else:
        raise ValueError(f"unknown uncertainty mapping '{mapping}'")
    return UncertaintyMap(torch.clamp(values, 0.0, 1.0), resolution=resolution)


def fuse_depth(mono: DepthMap, mvs: DepthMap, U: UncertaintyMap) -> DepthMap:
    if mono.resolution != mvs.resolution or mono.resolution != U.resolution:
        raise ContractViolation(
            f"fusion inputs disagree on resolution: mono={mono.resolution}, mvs={mvs.resolution}, U={U.resolution}"
        )
    if mono.shape != mvs.shape or mono.shape != U.shape:
        raise ContractViolation(f"fusion inputs disagree on shape: {mono.shape}, {mvs.shape}, {U.shape}")
    fused = U.data * mono.data + (1.0 - U.data) * mvs.data
    return DepthMap(fused, resolution=mono.resolution, kind="fused")


def _interpolate(data: torch.Tensor, factor: int) -> torch.Tensor:
    return F.interpolate(data[None, None], scale_factor=factor, mode="bilinear", align_corners=False)[0, 0]


def upsample_depth(quarter: DepthMap, factor: int = 4) -> DepthMap:
    """Bilinear interpolation of inverse depth, pixel centers aligned with block pooling."""
    if quarter.resolution != "quarter":
        raise ContractViolation(f"expected a quarter-resolution map, got {quarter.resolution}")
    inverse = _interpolate(1.0 / quarter.data, factor)
    return DepthMap(1.0 / inverse, resolution="full", kind=quarter.kind)


def upsample_uncertainty(quarter: UncertaintyMap, factor: int = 4) -> UncertaintyMap:
    return UncertaintyMap(torch.clamp(_interpolate(quarter.data, factor), 0.0, 1.0), resolution="full")


def downsample_depth(full: DepthMap, factor: int = 4) -> DepthMap:
    """Harmonic block mean: average inverse depth over factor x factor blocks."""
    if full.resolution != "full":
        raise ContractViolation(f"expected a full-resolution map, got {full.resolution}")
    height, width = full.shape
    if height % factor or width % factor:
        raise ValueError(f"map {width}x{height} not divisible by {factor}")
    data = full.data
    if torch.any(data <= 0):
        raise ValueError("harmonic downsampling needs strictly positive depth")
    inverse = F.avg_pool2d((1.0 / data)[None, None], kernel_size=factor, stride=factor)[0, 0]
    return DepthMap(1.0 / inverse, resolution="quarter", kind=full.kind)
