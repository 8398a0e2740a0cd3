"""
View synthesis and the self-supervised photometric objective, used as a quality oracle.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import torch
import torch.nn.functional as F

from src.services.depth_estimator import DepthMap
from src.services.errors import ContractViolation, NoValidPixels
from src.services.geometry import DTYPE, Intrinsics, Pose, in_footprint, pixel_grid, warp_points

LOGGER = logging.getLogger(__name__)

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
SSIM_WEIGHT = 0.85
L1_WEIGHT = 0.15
DEPTH_KINDS = ("mono", "mvs", "fused")


@dataclass(frozen=True, eq=False)
class SynthesizedImage:
    image: torch.Tensor
    validity: torch.Tensor


@dataclass(frozen=True)
class LossWeights:
    mono: float = 1.0
    mvs: float = 1.0
    fused: float = 1.0
    gamma: float = 0.001

    def __post_init__(self) -> None:
        if min(self.mono, self.mvs, self.fused, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")

    def weight(self, kind: str) -> float:
        return float(getattr(self, kind))


@dataclass(frozen=True)
class LossBreakdown:
    reprojection: float
    smoothness: float
    total: float
    per_depth: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict[str, float]:
        payload = {
            "reprojection": self.reprojection,
            "smoothness": self.smoothness,
            "total": self.total,
        }
        payload.update({f"loss_{kind}": value for kind, value in sorted(self.per_depth.items())})
        return payload


def synthesize(src: torch.Tensor, depth: DepthMap, K: Intrinsics, pose: Pose) -> SynthesizedImage:
    """Reconstruct the target view from `src`; `pose` maps target camera points into src."""
    if depth.resolution != "full":
        raise ContractViolation("view synthesis needs a full-resolution depth map")
    height, width = depth.shape
    if tuple(src.shape) != (height, width, 3):
        raise ContractViolation(f"source image {tuple(src.shape)} does not match depth {depth.shape}")
    warped, z = warp_points(pixel_grid(height, width), depth.data, K, pose)
    valid = (z > 0) & torch.all(torch.isfinite(warped), dim=-1) & in_footprint(warped, width, height)
    grid = torch.stack(
        (warped[..., 0] / max((width - 1) / 2.0, 0.5) - 1.0, warped[..., 1] / max((height - 1) / 2.0, 0.5) - 1.0),
        dim=-1,
    )
    grid = torch.where(valid.unsqueeze(-1), grid, torch.full_like(grid, -2.0))
    sampled = F.grid_sample(
        src.to(DTYPE).permute(2, 0, 1).unsqueeze(0),
        grid.unsqueeze(0),
        mode="bilinear",
        padding_mode="zeros",
        align_corners=True,
    )
    return SynthesizedImage(image=sampled[0].permute(1, 2, 0), validity=valid)


def _ssim_distance(x: torch.Tensor, y: torch.Tensor, weight: torch.Tensor | None = None) -> torch.Tensor:
    """3x3 SSIM distance; with `weight`, window statistics only count pixels of weight 1."""
    pad = torch.nn.ReflectionPad2d(1)
    pool = torch.nn.AvgPool2d(3, 1)
    if weight is None:
        weight = torch.ones_like(x[:, :1])
    w = pad(weight)
    x = pad(x)
    y = pad(y)
    mass = torch.clamp(pool(w), min=1e-12)
    mu_x = pool(w * x) / mass
    mu_y = pool(w * y) / mass
    sigma_x = pool(w * x * x) / mass - mu_x**2
    sigma_y = pool(w * y * y) / mass - mu_y**2
    sigma_xy = pool(w * x * y) / mass - mu_x * mu_y
    numerator = (2 * mu_x * mu_y + SSIM_C1) * (2 * sigma_xy + SSIM_C2)
    denominator = (mu_x**2 + mu_y**2 + SSIM_C1) * (sigma_x + sigma_y + SSIM_C2)
    return torch.clamp((1 - numerator / denominator) / 2, 0, 1)


def photometric_error(a: torch.Tensor, b: torch.Tensor, validity: torch.Tensor | None = None) -> torch.Tensor:
    """Per-pixel 0.85 * SSIM distance + 0.15 * L1, channel-averaged; invalid pixels read 0.

    SSIM windows skip invalid neighbours, so zero-filled samples never leak into valid pixels.
    """
    if a.shape != b.shape:
        raise ContractViolation(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    x = a.to(DTYPE).permute(2, 0, 1).unsqueeze(0)
    y = b.to(DTYPE).permute(2, 0, 1).unsqueeze(0)
    weight = None if validity is None else validity.to(DTYPE)[None, None]
    ssim = _ssim_distance(x, y, weight)
    l1 = torch.abs(x - y)
    error = (SSIM_WEIGHT * ssim + L1_WEIGHT * l1).mean(dim=1)[0]
    if validity is not None:
        error = torch.where(validity, error, torch.zeros_like(error))
    return error


def min_reprojection_loss(target: torch.Tensor, synthesized: Sequence[SynthesizedImage]) -> float:
    if not synthesized:
        raise ValueError("need at least one synthesized view")
    errors = torch.stack([photometric_error(target, view.image, view.validity) for view in synthesized], dim=0)
    joint = torch.stack([view.validity for view in synthesized], dim=0).all(dim=0)
    if not torch.any(joint):
        raise NoValidPixels("no pixel is valid in every synthesized view")
    best = errors.min(dim=0).values
    return best[joint].mean().item()


def smoothness_loss(depth: DepthMap, image: torch.Tensor) -> float:
    """Edge-aware first-order smoothness of mean-normalized inverse depth."""
    if tuple(image.shape[:2]) != depth.shape:
        raise ContractViolation(f"image {tuple(image.shape[:2])} does not match depth {depth.shape}")
    disparity = 1.0 / depth.data
    normalized = disparity / disparity.mean()
    grad_disp_x = torch.abs(normalized[:, :-1] - normalized[:, 1:])
    grad_disp_y = torch.abs(normalized[:-1, :] - normalized[1:, :])
    grad_img_x = torch.mean(torch.abs(image[:, :-1, :] - image[:, 1:, :]), dim=-1)
    grad_img_y = torch.mean(torch.abs(image[:-1, :, :] - image[1:, :, :]), dim=-1)
    grad_disp_x = grad_disp_x * torch.exp(-grad_img_x)
    grad_disp_y = grad_disp_y * torch.exp(-grad_img_y)
    return (grad_disp_x.mean() + grad_disp_y.mean()).item()


def composite_loss(
    target: torch.Tensor,
    sources: Sequence[tuple[torch.Tensor, Pose]],
    depths: Mapping[str, DepthMap],
    K: Intrinsics,
    weights: LossWeights = LossWeights(),
) -> LossBreakdown:
    """Weighted sum over depth kinds of reprojection + gamma * smoothness.

    `sources` pairs each neighbouring image with the pose taking target camera points into
    that neighbour's frame.
    """
    unknown = set(depths) - set(DEPTH_KINDS)
    if unknown:
        raise ValueError(f"unknown depth kinds {sorted(unknown)}")
    reprojection = 0.0
    smoothness = 0.0
    per_depth: dict[str, float] = {}
    for kind in DEPTH_KINDS:
        if kind not in depths:
            continue
        depth = depths[kind]
        views = [synthesize(image, depth, K, pose) for image, pose in sources]
        reprojection_term = min_reprojection_loss(target, views)
        smoothness_term = smoothness_loss(depth, target)
        per_depth[kind] = reprojection_term + weights.gamma * smoothness_term
        reprojection += weights.weight(kind) * reprojection_term
        smoothness += weights.weight(kind) * smoothness_term
    total = reprojection + weights.gamma * smoothness
    LOGGER.debug("Composite loss %.6f (reprojection %.6f, smoothness %.6f)", total, reprojection, smoothness)
    return LossBreakdown(reprojection=reprojection, smoothness=smoothness, total=total, per_depth=per_depth)
