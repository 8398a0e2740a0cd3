"""
Pinhole camera model, rigid pose algebra and pixel warping for plane-sweep depth.

Conventions: x right, y down, z forward; pixel (0, 0) is the center of the top-left
pixel. A `Pose` maps points from a source camera frame into a destination frame,
X_dst = R @ X_src + T. World-to-camera poses follow the same convention.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import torch

from src.services.errors import DegenerateProjection, EpipoleDegenerate

LOGGER = logging.getLogger(__name__)

DTYPE = torch.float64
ORTHONORMAL_TOLERANCE = 1e-9
EPIPOLE_THRESHOLD = 1e-12
FOOTPRINT_TOLERANCE = 1e-9


def as_tensor(value: torch.Tensor | Sequence[float] | float) -> torch.Tensor:
    if isinstance(value, torch.Tensor):
        return value.to(dtype=DTYPE)
    return torch.as_tensor(value, dtype=DTYPE)


@dataclass(frozen=True)
class Intrinsics:
    f: float
    cu: float
    cv: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not self.f > 0:
            raise ValueError(f"focal length must be positive, got {self.f}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if not 0 <= self.cu < self.width:
            raise ValueError(f"cu={self.cu} outside [0, {self.width})")
        if not 0 <= self.cv < self.height:
            raise ValueError(f"cv={self.cv} outside [0, {self.height})")

    @classmethod
    def centered(cls, width: int, height: int, focal_ratio: float = 0.58) -> "Intrinsics":
        """KITTI-like camera: focal length as a fraction of image width, centered principal point."""
        return cls(f=focal_ratio * width, cu=width / 2.0, cv=height / 2.0, width=width, height=height)

    def matrix(self) -> torch.Tensor:
        return torch.tensor(
            [[self.f, 0.0, self.cu], [0.0, self.f, self.cv], [0.0, 0.0, 1.0]],
            dtype=DTYPE,
        )

    def inverse_matrix(self) -> torch.Tensor:
        return torch.tensor(
            [
                [1.0 / self.f, 0.0, -self.cu / self.f],
                [0.0, 1.0 / self.f, -self.cv / self.f],
                [0.0, 0.0, 1.0],
            ],
            dtype=DTYPE,
        )

    def scaled(self, factor: int = 4) -> "Intrinsics":
        # Feature pixel i pools image pixels [factor*i, factor*i + factor), centered at
        # factor*i + (factor - 1) / 2.
        offset = (factor - 1) / 2.0
        if self.width % factor or self.height % factor:
            raise ValueError(f"image {self.width}x{self.height} not divisible by {factor}")
        return Intrinsics(
            f=self.f / factor,
            cu=(self.cu - offset) / factor,
            cv=(self.cv - offset) / factor,
            width=self.width // factor,
            height=self.height // factor,
        )


@dataclass(frozen=True, eq=False)
class Pose:
    R: torch.Tensor
    T: torch.Tensor

    def __post_init__(self) -> None:
        rotation = as_tensor(self.R).reshape(3, 3)
        translation = as_tensor(self.T).reshape(3)
        object.__setattr__(self, "R", rotation)
        object.__setattr__(self, "T", translation)
        identity = torch.eye(3, dtype=DTYPE)
        if not torch.all(torch.isfinite(rotation)) or not torch.all(torch.isfinite(translation)):
            raise ValueError("pose must be finite")
        if torch.max(torch.abs(rotation.T @ rotation - identity)).item() > ORTHONORMAL_TOLERANCE:
            raise ValueError("rotation is not orthonormal")
        if abs(torch.linalg.det(rotation).item() - 1.0) > ORTHONORMAL_TOLERANCE:
            raise ValueError("rotation determinant is not 1")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(torch.eye(3, dtype=DTYPE), torch.zeros(3, dtype=DTYPE))

    @classmethod
    def from_translation(cls, translation: Sequence[float] | torch.Tensor) -> "Pose":
        return cls(torch.eye(3, dtype=DTYPE), as_tensor(translation))

    def inverse(self) -> "Pose":
        rotation_t = self.R.T
        return Pose(rotation_t, -(rotation_t @ self.T))

    def compose(self, other: "Pose") -> "Pose":
        """Return self after other: X -> self(other(X))."""
        return Pose(self.R @ other.R, self.R @ other.T + self.T)

    def apply(self, points: torch.Tensor) -> torch.Tensor:
        return points @ self.R.T + self.T

    def camera_center(self) -> torch.Tensor:
        """Camera center in the source frame of a world-to-camera pose."""
        return -(self.R.T @ self.T)


def relative_pose(src_world_to_cam: Pose, dst_world_to_cam: Pose) -> Pose:
    """Pose taking points from the src camera frame into the dst camera frame."""
    return dst_world_to_cam.compose(src_world_to_cam.inverse())


def rotation_from_axis_angle(axis_angle: Sequence[float] | torch.Tensor) -> torch.Tensor:
    vector = as_tensor(axis_angle).reshape(3)
    theta = torch.linalg.norm(vector)
    if theta.item() < 1e-15:
        return torch.eye(3, dtype=DTYPE)
    kx, ky, kz = (vector / theta).tolist()
    skew = torch.tensor(
        [[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]],
        dtype=DTYPE,
    )
    return torch.eye(3, dtype=DTYPE) + torch.sin(theta) * skew + (1.0 - torch.cos(theta)) * (skew @ skew)


def yaw_rotation(yaw: float) -> torch.Tensor:
    """Rotation about the camera y axis (down), positive yaw turns the optical axis toward +x."""
    return rotation_from_axis_angle([0.0, yaw, 0.0])


@dataclass(frozen=True)
class PixelCoord:
    u: float
    v: float
    d: float | None = None

    def __post_init__(self) -> None:
        if self.d is not None and not self.d > 0:
            raise ValueError(f"pixel depth must be positive, got {self.d}")


@dataclass(frozen=True)
class WarpResult:
    u: float
    v: float
    depth: float
    valid: bool

    @property
    def coord(self) -> PixelCoord:
        return PixelCoord(self.u, self.v, self.depth if self.depth > 0 else None)


def pixel_grid(height: int, width: int) -> torch.Tensor:
    """(height, width, 2) grid of (u, v) pixel-center coordinates."""
    v, u = torch.meshgrid(
        torch.arange(height, dtype=DTYPE),
        torch.arange(width, dtype=DTYPE),
        indexing="ij",
    )
    return torch.stack((u, v), dim=-1)


def project(point: Sequence[float] | torch.Tensor, K: Intrinsics) -> PixelCoord:
    xyz = as_tensor(point).reshape(3)
    depth = xyz[2].item()
    if not depth > 0:
        raise DegenerateProjection(f"cannot project point with depth {depth}")
    u = K.f * xyz[0].item() / depth + K.cu
    v = K.f * xyz[1].item() / depth + K.cv
    return PixelCoord(u, v, depth)


def project_points(points: torch.Tensor, K: Intrinsics) -> tuple[torch.Tensor, torch.Tensor]:
    """Vectorized projection; returns (uv, z). Points with z <= 0 get non-finite or meaningless uv."""
    z = points[..., 2]
    safe_z = torch.where(z == 0, torch.full_like(z, 1e-300), z)
    u = K.f * points[..., 0] / safe_z + K.cu
    v = K.f * points[..., 1] / safe_z + K.cv
    return torch.stack((u, v), dim=-1), z


def backproject(uv: torch.Tensor, depth: torch.Tensor, K: Intrinsics) -> torch.Tensor:
    x = (uv[..., 0] - K.cu) / K.f
    y = (uv[..., 1] - K.cv) / K.f
    rays = torch.stack((x, y, torch.ones_like(x)), dim=-1)
    return rays * depth.unsqueeze(-1)


def warp_points(
    uv: torch.Tensor,
    depth: torch.Tensor,
    K: Intrinsics,
    pose: Pose,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Warp pixels with per-pixel depth through pose; returns (uv_warped, warped_depth)."""
    points = pose.apply(backproject(uv, depth, K))
    return project_points(points, K)


def in_footprint(uv: torch.Tensor, width: int, height: int) -> torch.Tensor:
    """True where bilinear sampling at uv touches only pixels inside the grid."""
    u = uv[..., 0]
    v = uv[..., 1]
    tol = FOOTPRINT_TOLERANCE
    return (u >= -tol) & (u <= width - 1 + tol) & (v >= -tol) & (v <= height - 1 + tol)


def warp_pixel(p: PixelCoord, K: Intrinsics, pose: Pose) -> WarpResult:
    if p.d is None:
        raise ValueError("warp_pixel requires a hypothesized depth")
    uv = torch.tensor([p.u, p.v], dtype=DTYPE)
    warped, z = warp_points(uv, torch.tensor(p.d, dtype=DTYPE), K, pose)
    depth = z.item()
    if depth <= 0:
        return WarpResult(u=math.nan, v=math.nan, depth=depth, valid=False)
    u = warped[0].item()
    v = warped[1].item()
    inside = 0 <= u < K.width and 0 <= v < K.height
    return WarpResult(u=u, v=v, depth=depth, valid=inside)


def _normalized_ray(u1: float, v1: float, K: Intrinsics) -> torch.Tensor:
    return torch.tensor([(u1 - K.cu) / K.f, (v1 - K.cv) / K.f, 1.0], dtype=DTYPE)


def ego_motion_depth(u1: float, v1: float, u2: float, K: Intrinsics, pose: Pose) -> float:
    """Depth of a tracked point in the second frame from its horizontal correspondence.

    `pose` maps first-frame camera coordinates to second-frame camera coordinates. Raises
    EpipoleDegenerate when the disparity denominator or the baseline numerator vanishes.
    """
    ray = _normalized_ray(u1, v1, K)
    r1 = torch.dot(pose.R[0], ray).item()
    r3 = torch.dot(pose.R[2], ray).item()
    t1 = pose.T[0].item()
    t3 = pose.T[2].item()
    numerator = K.f * (r3 * t1 - r1 * t3)
    denominator = r3 * (u2 - K.cu) - r1 * K.f
    if abs(denominator) < EPIPOLE_THRESHOLD or abs(numerator) < EPIPOLE_THRESHOLD:
        raise EpipoleDegenerate(
            f"no parallax at u1={u1}, u2={u2} (numerator={numerator}, denominator={denominator})"
        )
    return numerator / denominator


def simplified_ego_motion_depth(u1: float, u2: float, K: Intrinsics, translation: Sequence[float]) -> float:
    """Rotation-free form: D2 = f (T1 - (u1 - cu) / f * T3) / (u2 - u1)."""
    t1, _, t3 = (float(value) for value in translation)
    numerator = K.f * (t1 - (u1 - K.cu) / K.f * t3)
    denominator = u2 - u1
    if abs(denominator) < EPIPOLE_THRESHOLD or abs(numerator) < EPIPOLE_THRESHOLD:
        raise EpipoleDegenerate(f"no parallax at u1={u1}, u2={u2}")
    return numerator / denominator


def stereo_depth(f: float, baseline: float, disparity: float) -> float:
    if abs(disparity) < EPIPOLE_THRESHOLD:
        raise EpipoleDegenerate("zero disparity")
    return f * baseline / disparity


def generalized_baseline(u1: float, K: Intrinsics, yaw: float, Vz: float, frame_rate: float) -> float:
    """Per-pixel multi-frame baseline alpha * (tan(yaw) - (u1 - cu) / f) * Vz, alpha = frame rate."""
    if not frame_rate > 0:
        raise ValueError(f"frame_rate must be positive, got {frame_rate}")
    return frame_rate * (math.tan(yaw) - (u1 - K.cu) / K.f) * Vz
