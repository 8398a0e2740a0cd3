"""
Relative-pose providers standing in for a learned pose network.

`none` returns trajectory ground truth, `isotropic` perturbs each requested relative pose
directly, and `chained` builds a multi-frame relative pose from independently perturbed
adjacent increments. Every estimate is finally multiplied by `scale` in translation, the
way a scale-ambiguous pose network would report it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import torch

from src.services.geometry import DTYPE, Pose, rotation_from_axis_angle
from src.services.scene_sim import Trajectory

LOGGER = logging.getLogger(__name__)

PoseNoiseKind = Literal["none", "isotropic", "chained"]


@dataclass(frozen=True)
class PoseNoise:
    kind: PoseNoiseKind = "none"
    sigma_t: float = 0.0
    sigma_r: float = 0.0
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.sigma_t < 0 or self.sigma_r < 0:
            raise ValueError("pose noise sigmas must be non-negative")
        if not self.scale > 0:
            raise ValueError(f"pose scale must be positive, got {self.scale}")


def perturb_pose(pose: Pose, sigma_t: float, sigma_r: float, generator: torch.Generator) -> Pose:
    translation_noise = torch.randn(3, generator=generator, dtype=DTYPE) * sigma_t
    rotation_noise = torch.randn(3, generator=generator, dtype=DTYPE) * sigma_r
    return Pose(rotation_from_axis_angle(rotation_noise) @ pose.R, pose.T + translation_noise)


class PoseProvider:
    def __init__(self, trajectory: Trajectory, noise: PoseNoise, seed: int) -> None:
        self.trajectory = trajectory
        self.noise = noise
        self.seed = seed

    def _generator(self, src: int, dst: int) -> torch.Generator:
        # One stream per ordered frame pair so estimates do not depend on query order.
        return torch.Generator().manual_seed(abs(self.seed) * 1_000_003 + src * 1009 + dst + 17)

    def _noisy(self, src: int, dst: int) -> Pose:
        truth = self.trajectory.relative_pose(src, dst)
        return perturb_pose(truth, self.noise.sigma_t, self.noise.sigma_r, self._generator(src, dst))

    def unscaled(self, src: int, dst: int) -> Pose:
        if self.noise.kind == "none" or src == dst:
            return self.trajectory.relative_pose(src, dst)
        if self.noise.kind == "isotropic":
            return self._noisy(src, dst)
        step = 1 if dst > src else -1
        estimate = Pose.identity()
        for frame in range(src, dst, step):
            estimate = self._noisy(frame, frame + step).compose(estimate)
        return estimate

    def relative_pose(self, src: int, dst: int) -> Pose:
        """Estimated pose mapping camera `src` points into camera `dst`, in provider units."""
        estimate = self.unscaled(src, dst)
        return Pose(estimate.R, estimate.T * self.noise.scale)
