"""
Plane-sweep matching evidence at quarter resolution.

Hand-crafted descriptors stand in for a learned encoder. Each feature pixel carries a
small constellation of gradient and contrast samples around its block, so the descriptor
changes quickly under sub-block shifts. The previous frame's descriptors are resampled
densely at every depth hypothesis, compared by group-wise correlation and turned into a
per-pixel probability over hypotheses.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import torch
import torch.nn.functional as F

from src.services.geometry import DTYPE, Intrinsics, Pose, in_footprint, pixel_grid, warp_points
from src.services.sampling import DepthHypothesisSet

LOGGER = logging.getLogger(__name__)

FEATURE_STRIDE = 4
MAX_CHANNELS = 32
NORMALIZATION_EPSILON = 1e-6
LOCAL_VARIANCE_EPSILON = 1e-3
PROBABILITY_TOLERANCE = 1e-6
DEFAULT_TEMPERATURE = 0.25
STEP_FLOOR = 0.005
SCALE_FLOOR = 1e-12
BYTES_PER_FLOAT = 4

# Image-pixel (dx, dy) offsets of the block samples that make up one descriptor.
DESCRIPTOR_OFFSETS = ((-6, -2), (-2, -2), (2, -2), (6, -2), (-6, 2), (-2, 2), (2, 2), (6, 2))

SamplingMode = Literal["bicubic", "bilinear"]
SAMPLING_MODES = ("bicubic", "bilinear")


@dataclass(frozen=True, eq=False)
class FeatureGrid:
    """Descriptors on the quarter grid.

    `dense` holds the same descriptors at every image pixel, indexed so that dense[4i, 4j]
    equals data[i, j]; warping samples it when present. `curvature` is the median squared
    rate at which unit descriptors turn per feature pixel.
    """

    data: torch.Tensor
    textureless: bool = False
    dense: torch.Tensor | None = None
    unit_norm: bool = False
    curvature: float | None = None

    def __post_init__(self) -> None:
        if self.data.dim() != 3:
            raise ValueError(f"feature grid must be (h, w, C), got {tuple(self.data.shape)}")
        if not torch.all(torch.isfinite(self.data)):
            raise ValueError("feature grid contains non-finite values")
        if self.dense is not None:
            if self.dense.dim() != 3 or self.dense.shape[-1] != self.data.shape[-1]:
                raise ValueError(f"dense features {tuple(self.dense.shape)} do not match the grid")
            if not torch.all(torch.isfinite(self.dense)):
                raise ValueError("dense features contain non-finite values")
        if self.curvature is not None and self.curvature < 0:
            raise ValueError(f"curvature must be non-negative, got {self.curvature}")

    @property
    def channels(self) -> int:
        return int(self.data.shape[-1])


@dataclass(frozen=True, eq=False)
class WarpedVolume:
    data: torch.Tensor
    validity: torch.Tensor
    # Mean distance in feature pixels between consecutive hypothesis samples.
    step: torch.Tensor | None = None

    @property
    def depth_count(self) -> int:
        return int(self.data.shape[-1])


@dataclass(frozen=True, eq=False)
class CostVolume:
    data: torch.Tensor
    validity: torch.Tensor | None = None
    scale: torch.Tensor | None = None

    def __post_init__(self) -> None:
        if not torch.all(torch.isfinite(self.data)):
            raise ValueError("cost volume contains non-finite values")
        if self.scale is not None and (torch.any(self.scale < 0) or not torch.all(torch.isfinite(self.scale))):
            raise ValueError("cost scale must be finite and non-negative")

    @property
    def groups(self) -> int:
        return int(self.data.shape[-2])


@dataclass(frozen=True, eq=False)
class ProbabilityVolume:
    data: torch.Tensor
    low_evidence: torch.Tensor | None = None

    def __post_init__(self) -> None:
        data = torch.as_tensor(self.data, dtype=DTYPE)
        object.__setattr__(self, "data", data)
        if torch.any(data < 0) or not torch.all(torch.isfinite(data)):
            raise ValueError("probabilities must be finite and non-negative")
        if torch.max(torch.abs(data.sum(dim=-1) - 1.0)).item() > PROBABILITY_TOLERANCE:
            raise ValueError("probabilities must sum to 1 per pixel")
        if self.low_evidence is None:
            object.__setattr__(self, "low_evidence", torch.zeros(data.shape[:-1], dtype=torch.bool))

    @property
    def depth_count(self) -> int:
        return int(self.data.shape[-1])


@dataclass(frozen=True)
class VolumeSize:
    floats: int
    megabytes: float


def volume_size_estimate(h: int, w: int, C: int, G: int, D: int) -> VolumeSize:
    """Analytic size of the warped volume plus the cost volume."""
    floats = h * w * (C + G) * D
    return VolumeSize(floats=floats, megabytes=floats * BYTES_PER_FLOAT / 2**20)


def _base_maps(image: torch.Tensor) -> torch.Tensor:
    """Gray level, central differences and 5x5 contrast normalization, (1, 4, H, W)."""
    gray = image.mean(dim=-1)[None, None]
    padded = F.pad(gray, (1, 1, 1, 1), mode="replicate")
    dx = (padded[..., 1:-1, 2:] - padded[..., 1:-1, :-2]) / 2.0
    dy = (padded[..., 2:, 1:-1] - padded[..., :-2, 1:-1]) / 2.0

    local_mean = F.avg_pool2d(F.pad(gray, (2, 2, 2, 2), mode="replicate"), kernel_size=5, stride=1)
    local_sq = F.avg_pool2d(F.pad(gray * gray, (2, 2, 2, 2), mode="replicate"), kernel_size=5, stride=1)
    local_var = torch.clamp(local_sq - local_mean**2, min=0.0)
    normalized = (gray - local_mean) / torch.sqrt(local_var + LOCAL_VARIANCE_EPSILON)
    return torch.cat([gray, dx, dy, normalized], dim=1)


def _dense_channels(image: torch.Tensor) -> torch.Tensor:
    # Index i of the block mean covers pixels [i, i + stride), matching quarter pixel i / stride.
    tail = FEATURE_STRIDE - 1
    blocks = F.avg_pool2d(
        F.pad(_base_maps(image), (0, tail, 0, tail), mode="replicate"),
        kernel_size=FEATURE_STRIDE,
        stride=1,
    )
    height, width = blocks.shape[-2:]
    reach_x = max(abs(dx) for dx, _ in DESCRIPTOR_OFFSETS)
    reach_y = max(abs(dy) for _, dy in DESCRIPTOR_OFFSETS)
    padded = F.pad(blocks, (reach_x, reach_x, reach_y, reach_y), mode="replicate")
    shifted = [
        padded[..., reach_y + dy : reach_y + dy + height, reach_x + dx : reach_x + dx + width]
        for dx, dy in DESCRIPTOR_OFFSETS
    ]
    return torch.cat(shifted, dim=1)[0].permute(1, 2, 0)


def extract_features(image: torch.Tensor, channels: int = MAX_CHANNELS) -> FeatureGrid:
    """Descriptors built from block-averaged gray, gradient and contrast samples.

    Every channel is standardized with its statistics over the quarter grid. Channels with
    no variation become zeros; when all of them do the grid is flagged textureless.
    """
    image = torch.as_tensor(image, dtype=DTYPE)
    if image.dim() != 3 or image.shape[-1] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {tuple(image.shape)}")
    height, width = int(image.shape[0]), int(image.shape[1])
    if height % FEATURE_STRIDE or width % FEATURE_STRIDE:
        raise ValueError(f"image {width}x{height} not divisible by {FEATURE_STRIDE}")
    if not 1 <= channels <= MAX_CHANNELS:
        raise ValueError(f"channels must be in [1, {MAX_CHANNELS}], got {channels}")

    raw = _dense_channels(image)[..., :channels]
    grid = raw[::FEATURE_STRIDE, ::FEATURE_STRIDE]
    mean = grid.mean(dim=(0, 1), keepdim=True)
    std = grid.std(dim=(0, 1), unbiased=False, keepdim=True)
    flat = std < NORMALIZATION_EPSILON
    safe_std = torch.where(flat, torch.ones_like(std), std)
    dense = torch.where(flat, torch.zeros_like(raw), (raw - mean) / safe_std)
    data = dense[::FEATURE_STRIDE, ::FEATURE_STRIDE].contiguous()
    textureless = bool(torch.all(flat).item())
    if textureless:
        LOGGER.warning("Image has no texture; features fall back to zeros")
    return FeatureGrid(data=data, textureless=textureless, dense=dense)


def _unit_vectors(values: torch.Tensor) -> torch.Tensor:
    norms = torch.linalg.vector_norm(values, dim=-1, keepdim=True)
    scaled = values / torch.clamp(norms, min=NORMALIZATION_EPSILON)
    return torch.where(norms > NORMALIZATION_EPSILON, scaled, torch.zeros_like(values))


def _median_curvature(maps: torch.Tensor) -> float:
    if maps.shape[0] < 2 or maps.shape[1] < 2:
        return 0.0
    across = (maps[:-1, 1:] - maps[:-1, :-1]).pow(2).sum(dim=-1)
    down = (maps[1:, :-1] - maps[:-1, :-1]).pow(2).sum(dim=-1)
    return torch.median((across + down) / 2.0).item()


def unit_normalize(grid: FeatureGrid) -> FeatureGrid:
    """Scale every descriptor to unit length; zero descriptors stay zero.

    With unit descriptors the correlation at a shift of s feature pixels drops by about
    curvature * s**2 / 2, which `group_correlation` uses to put every hypothesis step on
    the same footing.
    """
    data = _unit_vectors(grid.data)
    if grid.dense is None:
        return FeatureGrid(data, grid.textureless, None, True, _median_curvature(data))
    dense = _unit_vectors(grid.dense)
    curvature = _median_curvature(dense) * FEATURE_STRIDE**2
    return FeatureGrid(data, grid.textureless, dense, True, curvature)


def _hypothesis_step(warped: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    gaps = torch.linalg.vector_norm(warped[..., 1:, :] - warped[..., :-1, :], dim=-1)
    pairs = valid[..., 1:] & valid[..., :-1]
    gaps = torch.where(pairs, gaps, torch.zeros_like(gaps))
    counts = pairs.sum(dim=-1)
    return torch.where(counts > 0, gaps.sum(dim=-1) / torch.clamp(counts, min=1), torch.zeros_like(gaps[..., 0]))


def build_warped_volume(
    feat_prev: FeatureGrid,
    hypotheses: DepthHypothesisSet,
    K_scaled: Intrinsics,
    pose: Pose,
    mode: SamplingMode = "bicubic",
) -> WarpedVolume:
    """Sample feat_prev where each current pixel lands under each depth hypothesis.

    `pose` maps current-frame camera coordinates into the previous frame. Samples whose
    interpolation footprint leaves the sampled map, or that fall behind the camera, are
    zero and marked invalid. Dense descriptors are sampled at image resolution when the
    grid carries them.
    """
    if mode not in SAMPLING_MODES:
        raise ValueError(f"unknown sampling mode '{mode}'")
    height, width, channels = feat_prev.data.shape
    if (K_scaled.width, K_scaled.height) != (width, height):
        raise ValueError("intrinsics do not match the feature grid size")
    count = hypotheses.count
    depths = hypotheses.depths.expand(height, width, count)
    uv = pixel_grid(height, width).unsqueeze(2).expand(height, width, count, 2)
    warped, z = warp_points(uv, depths, K_scaled, pose)

    if feat_prev.dense is not None:
        if tuple(feat_prev.dense.shape[:2]) != (height * FEATURE_STRIDE, width * FEATURE_STRIDE):
            raise ValueError("dense features do not cover the feature grid at the feature stride")
        source_maps = feat_prev.dense
        sample_uv = warped * FEATURE_STRIDE
    else:
        source_maps = feat_prev.data
        sample_uv = warped
    source_height, source_width = int(source_maps.shape[0]), int(source_maps.shape[1])

    finite = torch.all(torch.isfinite(warped), dim=-1)
    valid = (z > 0) & finite & in_footprint(sample_uv, source_width, source_height)
    grid_x = sample_uv[..., 0] / max((source_width - 1) / 2.0, 0.5) - 1.0
    grid_y = sample_uv[..., 1] / max((source_height - 1) / 2.0, 0.5) - 1.0
    grid = torch.stack((grid_x, grid_y), dim=-1)
    grid = torch.where(valid.unsqueeze(-1), grid, torch.full_like(grid, -2.0))

    source = source_maps.permute(2, 0, 1).unsqueeze(0)
    sampled = F.grid_sample(
        source,
        grid.reshape(1, height, width * count, 2),
        mode=mode,
        padding_mode="border" if mode == "bicubic" else "zeros",
        align_corners=True,
    )
    volume = sampled.reshape(channels, height, width, count).permute(1, 2, 0, 3)
    if feat_prev.unit_norm:
        volume = _unit_vectors(volume.transpose(2, 3)).transpose(2, 3)
    volume = torch.where(valid.unsqueeze(2), volume, torch.zeros_like(volume))
    LOGGER.debug("Warped volume: %s of %s cells valid", int(valid.sum()), valid.numel())
    return WarpedVolume(data=volume, validity=valid, step=_hypothesis_step(warped, valid))


def group_correlation(volume: WarpedVolume, feat_cur: FeatureGrid, G: int) -> CostVolume:
    """Per-group mean products (1/G) <v_g, f_g> between warped and current descriptors.

    When the volume knows its hypothesis step and the descriptors their curvature, the
    expected score drop for a one-bin error is attached as the cost scale.
    """
    height, width, channels, count = volume.data.shape
    if G < 1 or channels % G:
        raise ValueError(f"channels {channels} not divisible by groups {G}")
    if feat_cur.channels != channels:
        raise ValueError(f"feature channels {feat_cur.channels} do not match volume channels {channels}")
    grouped_volume = volume.data.reshape(height, width, G, channels // G, count)
    grouped_feat = feat_cur.data.reshape(height, width, G, channels // G, 1)
    similarity = (grouped_volume * grouped_feat).sum(dim=3) / G
    similarity = torch.where(volume.validity.unsqueeze(2), similarity, torch.zeros_like(similarity))
    scale = None
    if volume.step is not None and feat_cur.curvature:
        step = torch.clamp(volume.step, min=STEP_FLOOR)
        scale = feat_cur.curvature * step**2 / (2.0 * G**2)
    return CostVolume(data=similarity, validity=volume.validity, scale=scale)


def cost_to_probability(cost: CostVolume, temperature: float = DEFAULT_TEMPERATURE) -> ProbabilityVolume:
    """Softmax over hypotheses of the group-mean similarity divided by `temperature`.

    A cost scale, when present, divides the logits further so that `temperature` reads
    as the inverse sharpness per squared bin. Invalid hypotheses get zero probability;
    pixels with no valid hypothesis are uniform and flagged as low evidence.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    logits = cost.data.mean(dim=-2) / temperature
    if cost.scale is not None:
        logits = logits / torch.clamp(cost.scale, min=SCALE_FLOOR).unsqueeze(-1)
    validity = cost.validity if cost.validity is not None else torch.ones_like(logits, dtype=torch.bool)
    low_evidence = ~torch.any(validity, dim=-1)
    usable = validity | low_evidence.unsqueeze(-1)
    masked = torch.where(usable, logits, torch.full_like(logits, -torch.inf))
    masked = torch.where(low_evidence.unsqueeze(-1), torch.zeros_like(logits), masked)
    probabilities = torch.softmax(masked, dim=-1)
    if torch.any(low_evidence):
        LOGGER.debug("%s pixels have no valid hypothesis", int(low_evidence.sum()))
    return ProbabilityVolume(data=probabilities, low_evidence=low_evidence)
