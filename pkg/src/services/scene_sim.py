"""
Deterministic ray-cast renderer for synthetic driving-like scenes.

Scenes are immutable collections of textured planes and spheres in front of a
fronto-parallel background plane. Rendering produces an RGB image, exact ground-truth
depth and region masks (moving, textureless) for every camera pose. Surfaces may carry
their own per-frame rigid translation, which deliberately breaks the static-scene
assumption of plane-sweep matching.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence, Union

import torch
import torch.nn.functional as F

from src.services.depth_estimator import DepthMap
from src.services.errors import InvalidCameraPlacement
from src.services.geometry import DTYPE, Intrinsics, Pose, backproject, pixel_grid, relative_pose, yaw_rotation

LOGGER = logging.getLogger(__name__)

Vector3 = tuple[float, float, float]

HASH_MASK = 0xFFFFFFFF
LIGHT_DIRECTION = (0.3, -1.0, -0.5)
SPECULAR_EXPONENT = 20.0
SPECULAR_STRENGTH = 0.6


def _lattice_values(ix: torch.Tensor, iy: torch.Tensor, seed: int) -> torch.Tensor:
    h = ((ix * 73856093) ^ (iy * 19349663) ^ (seed * 83492791 + 1013904223)) & HASH_MASK
    h = ((h ^ (h >> 13)) * 1274126177) & HASH_MASK
    h = (h ^ (h >> 16)) & HASH_MASK
    return (h & 0xFFFFFF).to(DTYPE) / 16777216.0


def value_noise(s: torch.Tensor, t: torch.Tensor, cell_size: float, seed: int) -> torch.Tensor:
    """Smoothstep-interpolated lattice noise in [0, 1], band-limited to roughly one cell."""
    fs = s / cell_size
    ft = t / cell_size
    i0 = torch.floor(fs)
    j0 = torch.floor(ft)
    a = fs - i0
    b = ft - j0
    a = a * a * (3.0 - 2.0 * a)
    b = b * b * (3.0 - 2.0 * b)
    ix = i0.to(torch.int64)
    iy = j0.to(torch.int64)
    v00 = _lattice_values(ix, iy, seed)
    v10 = _lattice_values(ix + 1, iy, seed)
    v01 = _lattice_values(ix, iy + 1, seed)
    v11 = _lattice_values(ix + 1, iy + 1, seed)
    return (v00 * (1 - a) + v10 * a) * (1 - b) + (v01 * (1 - a) + v11 * a) * b


@dataclass(frozen=True)
class Texture:
    seed: int = 0
    cell_size: float = 0.8
    octaves: int = 1
    checker_period: float = 2.4
    checker_weight: float = 0.2
    contrast: float = 0.9
    base: float = 0.5
    tint: Vector3 = (1.0, 0.92, 0.85)
    textureless: bool = False

    def albedo(self, s: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        """RGB albedo (..., 3) at surface coordinates (s, t) in meters."""
        tint = torch.tensor(self.tint, dtype=DTYPE)
        if self.textureless:
            intensity = torch.full_like(s, self.base)
            return torch.clamp(intensity.unsqueeze(-1) * tint, 0.0, 1.0)
        noise = torch.zeros_like(s)
        norm = 0.0
        for octave in range(self.octaves):
            weight = 0.5**octave
            noise = noise + weight * value_noise(s, t, self.cell_size / (2**octave), self.seed + 7919 * octave)
            norm += weight
        noise = noise / norm
        pattern = noise
        if self.checker_period > 0:
            # Soft checker: smooth sign of a product of sines, bounded slope keeps it band-limited.
            phase = 2.0 * math.pi / self.checker_period
            checker = 0.5 + 0.5 * torch.tanh(1.5 * torch.sin(phase * s) * torch.sin(phase * t))
            pattern = (1.0 - self.checker_weight) * noise + self.checker_weight * checker
        intensity = self.base + self.contrast * (pattern - 0.5)
        chroma = torch.stack(
            [value_noise(s, t, 2.0 * self.cell_size, self.seed + 104729 * (c + 1)) for c in range(3)],
            dim=-1,
        )
        color = (0.8 * intensity.unsqueeze(-1) + 0.2 * chroma) * tint
        return torch.clamp(color, 0.0, 1.0)


def _unit(vector: Sequence[float]) -> torch.Tensor:
    tensor = torch.tensor(vector, dtype=DTYPE)
    return tensor / torch.linalg.norm(tensor)


@dataclass(frozen=True)
class Plane:
    origin: Vector3
    normal: Vector3
    axis_u: Vector3 = (1.0, 0.0, 0.0)
    half_extent: tuple[float, float] | None = None
    texture: Texture = field(default_factory=Texture)
    motion: Vector3 = (0.0, 0.0, 0.0)
    specular: bool = False
    name: str = "plane"

    def _frame(self, time_index: int) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        n = _unit(self.normal)
        u_axis = torch.tensor(self.axis_u, dtype=DTYPE)
        u_axis = u_axis - torch.dot(u_axis, n) * n
        u_axis = u_axis / torch.linalg.norm(u_axis)
        v_axis = torch.linalg.cross(n, u_axis)
        origin = torch.tensor(self.origin, dtype=DTYPE) + time_index * torch.tensor(self.motion, dtype=DTYPE)
        return origin, n, u_axis, v_axis

    def contains(self, point: torch.Tensor, time_index: int) -> bool:
        origin, n, u_axis, v_axis = self._frame(time_index)
        offset = point - origin
        if abs(torch.dot(offset, n).item()) > 1e-9:
            return False
        if self.half_extent is None:
            return True
        return (
            abs(torch.dot(offset, u_axis).item()) <= self.half_extent[0]
            and abs(torch.dot(offset, v_axis).item()) <= self.half_extent[1]
        )

    def intersect(self, center: torch.Tensor, directions: torch.Tensor, time_index: int) -> torch.Tensor:
        origin, n, u_axis, v_axis = self._frame(time_index)
        denom = directions @ n
        safe = torch.where(torch.abs(denom) < 1e-12, torch.ones_like(denom), denom)
        t = torch.dot(origin - center, n) / safe
        hit = (torch.abs(denom) >= 1e-12) & (t > 0)
        if self.half_extent is not None:
            local = center + t.unsqueeze(-1) * directions - origin
            hit = hit & (torch.abs(local @ u_axis) <= self.half_extent[0])
            hit = hit & (torch.abs(local @ v_axis) <= self.half_extent[1])
        return torch.where(hit, t, torch.full_like(t, math.inf))

    def surface_coords(self, points: torch.Tensor, time_index: int) -> tuple[torch.Tensor, torch.Tensor]:
        origin, _, u_axis, v_axis = self._frame(time_index)
        local = points - origin
        return local @ u_axis, local @ v_axis

    def normals(self, points: torch.Tensor, time_index: int) -> torch.Tensor:
        _, n, _, _ = self._frame(time_index)
        return n.expand_as(points)


@dataclass(frozen=True)
class Sphere:
    center: Vector3
    radius: float
    texture: Texture = field(default_factory=Texture)
    motion: Vector3 = (0.0, 0.0, 0.0)
    specular: bool = False
    name: str = "sphere"

    def _center(self, time_index: int) -> torch.Tensor:
        return torch.tensor(self.center, dtype=DTYPE) + time_index * torch.tensor(self.motion, dtype=DTYPE)

    def contains(self, point: torch.Tensor, time_index: int) -> bool:
        return torch.linalg.norm(point - self._center(time_index)).item() <= self.radius

    def intersect(self, center: torch.Tensor, directions: torch.Tensor, time_index: int) -> torch.Tensor:
        oc = center - self._center(time_index)
        a = (directions * directions).sum(-1)
        b = directions @ oc
        c = torch.dot(oc, oc) - self.radius**2
        disc = b * b - a * c
        root = torch.sqrt(torch.clamp(disc, min=0.0))
        t = (-b - root) / a
        hit = (disc >= 0) & (t > 0)
        return torch.where(hit, t, torch.full_like(t, math.inf))

    def surface_coords(self, points: torch.Tensor, time_index: int) -> tuple[torch.Tensor, torch.Tensor]:
        local = (points - self._center(time_index)) / self.radius
        s = self.radius * torch.atan2(local[..., 0], -local[..., 2])
        t = self.radius * torch.asin(torch.clamp(local[..., 1], -1.0, 1.0))
        return s, t

    def normals(self, points: torch.Tensor, time_index: int) -> torch.Tensor:
        return (points - self._center(time_index)) / self.radius


Surface = Union[Plane, Sphere]


@dataclass(frozen=True)
class Scene:
    surfaces: tuple[Surface, ...]
    background_depth: float
    background_texture: Texture = field(default_factory=lambda: Texture(seed=1, cell_size=1.6, checker_period=4.8))
    depth_floor: float = 1.0
    depth_ceiling: float = 80.0

    def __post_init__(self) -> None:
        if not 0 < self.depth_floor < self.depth_ceiling:
            raise ValueError(f"invalid depth bounds [{self.depth_floor}, {self.depth_ceiling}]")
        if not self.depth_floor <= self.background_depth <= self.depth_ceiling:
            raise ValueError(f"background depth {self.background_depth} outside configured bounds")

    def background(self) -> Plane:
        return Plane(
            origin=(0.0, 0.0, self.background_depth),
            normal=(0.0, 0.0, -1.0),
            axis_u=(1.0, 0.0, 0.0),
            texture=self.background_texture,
            name="background",
        )


@dataclass(frozen=True)
class Trajectory:
    poses: tuple[Pose, ...]
    frame_rate: float

    def __post_init__(self) -> None:
        if not self.frame_rate > 0:
            raise ValueError(f"frame_rate must be positive, got {self.frame_rate}")
        if not self.poses:
            raise ValueError("trajectory needs at least one pose")

    @classmethod
    def constant_velocity(
        cls,
        velocity: Vector3,
        frame_rate: float,
        num_frames: int,
        yaw: float = 0.0,
        start: Vector3 = (0.0, 0.0, 0.0),
    ) -> "Trajectory":
        if not frame_rate > 0:
            raise ValueError(f"frame_rate must be positive, got {frame_rate}")
        step = torch.tensor(velocity, dtype=DTYPE) / frame_rate
        origin = torch.tensor(start, dtype=DTYPE)
        poses = tuple(camera_pose(origin + k * step, yaw) for k in range(num_frames))
        return cls(poses=poses, frame_rate=frame_rate)

    @classmethod
    def static(cls, frame_rate: float, num_frames: int) -> "Trajectory":
        return cls.constant_velocity((0.0, 0.0, 0.0), frame_rate, num_frames)

    def relative_pose(self, src: int, dst: int) -> Pose:
        return relative_pose(self.poses[src], self.poses[dst])


def camera_pose(center: Sequence[float] | torch.Tensor, yaw: float = 0.0) -> Pose:
    """World-to-camera pose of a camera at `center` (world) rotated by `yaw` about y."""
    camera_to_world = yaw_rotation(yaw)
    rotation = camera_to_world.T
    position = torch.as_tensor(center, dtype=DTYPE)
    return Pose(rotation, -(rotation @ position))


@dataclass(frozen=True, eq=False)
class RenderedFrame:
    image: torch.Tensor
    depth_gt: torch.Tensor
    pose: Pose
    moving: torch.Tensor
    textureless: torch.Tensor
    time_index: int = 0

    def depth_map(self) -> DepthMap:
        return DepthMap(self.depth_gt, resolution="full", kind="gt")


def render(scene: Scene, camera: Intrinsics, pose: Pose, time_index: int = 0) -> RenderedFrame:
    surfaces: list[Surface] = [scene.background(), *scene.surfaces]
    center = pose.camera_center()
    for surface in surfaces:
        if surface.contains(center, time_index):
            raise InvalidCameraPlacement(f"camera at {center.tolist()} is inside surface '{surface.name}'")

    uv = pixel_grid(camera.height, camera.width)
    rays = backproject(uv, torch.ones(camera.height, camera.width, dtype=DTYPE), camera)
    directions = rays @ pose.R

    hits = torch.stack([surface.intersect(center, directions, time_index) for surface in surfaces], dim=0)
    depth, owner = torch.min(hits, dim=0)
    if not torch.all(torch.isfinite(depth)):
        raise InvalidCameraPlacement("some camera rays miss every surface, including the background")
    if depth.min().item() < scene.depth_floor or depth.max().item() > scene.depth_ceiling:
        raise InvalidCameraPlacement(
            f"visible depth [{depth.min().item():.3f}, {depth.max().item():.3f}] outside "
            f"[{scene.depth_floor}, {scene.depth_ceiling}]"
        )

    points = center + depth.unsqueeze(-1) * directions
    image = torch.zeros(camera.height, camera.width, 3, dtype=DTYPE)
    moving = torch.zeros(camera.height, camera.width, dtype=torch.bool)
    textureless = torch.zeros(camera.height, camera.width, dtype=torch.bool)
    light = _unit(LIGHT_DIRECTION)
    for index, surface in enumerate(surfaces):
        mask = owner == index
        if not torch.any(mask):
            continue
        s, t = surface.surface_coords(points, time_index)
        color = surface.texture.albedo(s, t)
        if surface.specular:
            normals = surface.normals(points, time_index)
            view = center - points
            view = view / torch.linalg.norm(view, dim=-1, keepdim=True)
            reflected = 2.0 * (normals @ light).unsqueeze(-1) * normals - light
            highlight = torch.clamp((reflected * view).sum(-1), min=0.0) ** SPECULAR_EXPONENT
            color = torch.clamp(color + SPECULAR_STRENGTH * highlight.unsqueeze(-1), 0.0, 1.0)
        image = torch.where(mask.unsqueeze(-1), color, image)
        if any(component != 0.0 for component in surface.motion):
            moving |= mask
        if surface.texture.textureless:
            textureless |= mask

    return RenderedFrame(
        image=image,
        depth_gt=depth,
        pose=pose,
        moving=moving,
        textureless=textureless,
        time_index=time_index,
    )


def make_sequence(scene: Scene, trajectory: Trajectory, camera: Intrinsics) -> list[RenderedFrame]:
    if len(trajectory.poses) < 2:
        raise ValueError("a sequence needs at least two poses")
    frames = [render(scene, camera, pose, time_index=index) for index, pose in enumerate(trajectory.poses)]
    LOGGER.info("Rendered %s frames at %sx%s", len(frames), camera.width, camera.height)
    return frames


def add_sensor_noise(frame: RenderedFrame, sigma: float, seed: int) -> RenderedFrame:
    """Seeded additive Gaussian image noise, clamped to [0, 1]; geometry is untouched."""
    if sigma < 0:
        raise ValueError(f"sensor noise must be non-negative, got {sigma}")
    if sigma == 0:
        return frame
    generator = torch.Generator().manual_seed(seed)
    noise = torch.randn(frame.image.shape, generator=generator, dtype=DTYPE)
    return replace(frame, image=torch.clamp(frame.image + sigma * noise, 0.0, 1.0))


@dataclass(frozen=True)
class PriorNoise:
    kind: Literal["multiplicative", "bias", "low_frequency"] = "multiplicative"
    sigma: float = 0.0
    bias: float = 1.0
    cell_pixels: int = 6

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        if not self.bias > 0:
            raise ValueError(f"bias must be positive, got {self.bias}")


MIN_NOISE_FACTOR = 0.05


def perturb_prior(depth_gt: DepthMap, noise_model: PriorNoise, seed: int) -> DepthMap:
    """Manufacture an imperfect monocular prior from ground truth."""
    data = depth_gt.data
    generator = torch.Generator().manual_seed(seed)
    if noise_model.kind == "bias":
        prior = noise_model.bias * data
    elif noise_model.kind == "multiplicative":
        noise = torch.randn(data.shape, generator=generator, dtype=DTYPE)
        prior = data * torch.clamp(1.0 + noise_model.sigma * noise, min=MIN_NOISE_FACTOR)
    elif noise_model.kind == "low_frequency":
        height, width = data.shape
        coarse = torch.randn(
            1,
            1,
            height // noise_model.cell_pixels + 2,
            width // noise_model.cell_pixels + 2,
            generator=generator,
            dtype=DTYPE,
        )
        smooth = F.interpolate(coarse, size=(height, width), mode="bilinear", align_corners=True)[0, 0]
        prior = data * torch.exp(noise_model.sigma * smooth)
    else:
        raise ValueError(f"unknown prior noise model '{noise_model.kind}'")
    return DepthMap(prior, resolution=depth_gt.resolution, kind="mono")


ScenePreset = Literal["walls", "moving_object", "textureless", "mixed"]
WALL_FOLD_DEPTH = 12.0
WALL_SLOPE = 0.6


def build_scene(
    preset: ScenePreset = "walls",
    seed: int = 0,
    specular: bool = False,
    object_motion: Vector3 = (0.0, -0.5, -0.2),
    depth_floor: float = 1.0,
    depth_ceiling: float = 80.0,
) -> Scene:
    """Corridor-like driving scene: two slanted walls meeting ahead, a ground plane and a far background.

    The walls fold away from the camera, so from poses near the origin nothing occludes
    them and visible depth spans roughly 8 to 12 m. The ground and background stay hidden
    behind the fold unless the camera moves well forward or sideways.
    """
    surfaces: list[Surface] = [
        Plane(
            origin=(0.0, 3.0, 0.0),
            normal=(0.0, -1.0, 0.0),
            axis_u=(1.0, 0.0, 0.0),
            texture=Texture(seed=seed + 11, cell_size=2.0, checker_period=6.0),
            name="ground",
        ),
        Plane(
            origin=(0.0, 0.0, WALL_FOLD_DEPTH),
            normal=(WALL_SLOPE, 0.0, -1.0),
            axis_u=(1.0, 0.0, WALL_SLOPE),
            texture=Texture(seed=seed + 23, cell_size=1.2, checker_period=3.6),
            name="left_wall",
        ),
        Plane(
            origin=(0.0, 0.0, WALL_FOLD_DEPTH),
            normal=(-WALL_SLOPE, 0.0, -1.0),
            axis_u=(1.0, 0.0, -WALL_SLOPE),
            texture=Texture(seed=seed + 37, cell_size=1.3, checker_period=3.9),
            name="right_wall",
        ),
    ]
    if preset in ("textureless", "mixed"):
        surfaces.append(
            Plane(
                origin=(-1.2, -0.9, 6.0),
                normal=(0.0, 0.0, -1.0),
                axis_u=(1.0, 0.0, 0.0),
                half_extent=(1.0, 0.6),
                texture=Texture(seed=seed + 41, base=0.55, textureless=True),
                name="textureless_patch",
            )
        )
    if preset in ("moving_object", "mixed"):
        surfaces.append(
            Sphere(
                center=(1.4, 0.0, 6.5),
                radius=1.0,
                texture=Texture(seed=seed + 53, cell_size=0.5, checker_period=1.6),
                motion=object_motion,
                specular=specular,
                name="moving_object",
            )
        )
    elif specular:
        surfaces[1] = replace(surfaces[1], specular=True)
    return Scene(
        surfaces=tuple(surfaces),
        background_depth=20.0,
        background_texture=Texture(seed=seed + 3, cell_size=1.6, checker_period=4.8),
        depth_floor=depth_floor,
        depth_ceiling=depth_ceiling,
    )
