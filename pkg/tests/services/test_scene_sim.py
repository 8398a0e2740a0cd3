from __future__ import annotations

import pytest
import torch

from src.services import scene_sim
from src.services.depth_estimator import DepthMap
from src.services.errors import InvalidCameraPlacement
from src.services.geometry import DTYPE, Intrinsics, Pose

CAMERA = Intrinsics.centered(64, 32)


def _flat_scene(depth: float = 10.0) -> scene_sim.Scene:
    return scene_sim.Scene(surfaces=(), background_depth=depth)


def test_fronto_parallel_plane_has_constant_depth() -> None:
    frame = scene_sim.render(_flat_scene(), CAMERA, Pose.identity())
    assert torch.allclose(frame.depth_gt, torch.full((32, 64), 10.0, dtype=DTYPE), atol=1e-9)
    assert frame.image.shape == (32, 64, 3)
    assert not torch.any(frame.moving)


def test_forward_motion_reduces_plane_depth() -> None:
    pose = scene_sim.camera_pose((0.0, 0.0, 5.0))
    frame = scene_sim.render(_flat_scene(), CAMERA, pose)
    assert torch.allclose(frame.depth_gt, torch.full((32, 64), 5.0, dtype=DTYPE), atol=1e-9)


def test_render_is_deterministic() -> None:
    scene = scene_sim.build_scene("mixed", seed=4)
    first = scene_sim.render(scene, CAMERA, Pose.identity())
    second = scene_sim.render(scene_sim.build_scene("mixed", seed=4), CAMERA, Pose.identity())
    assert first.image.numpy().tobytes() == second.image.numpy().tobytes()
    assert first.depth_gt.numpy().tobytes() == second.depth_gt.numpy().tobytes()


def test_textured_surfaces_have_local_variance() -> None:
    frame = scene_sim.render(scene_sim.build_scene("walls"), Intrinsics.centered(160, 48), Pose.identity())
    gray = frame.image.mean(dim=-1)
    patches = gray.unfold(0, 8, 8).unfold(1, 8, 8)
    assert torch.all(patches.reshape(-1, 64).std(dim=-1) > 0)


def test_textureless_patch_is_flat_and_marked() -> None:
    frame = scene_sim.render(scene_sim.build_scene("textureless"), Intrinsics.centered(160, 48), Pose.identity())
    assert torch.any(frame.textureless)
    values = frame.image[frame.textureless]
    assert torch.allclose(values, values[0].expand_as(values))


def test_moving_object_marks_pixels_and_moves() -> None:
    scene = scene_sim.build_scene("moving_object")
    camera = Intrinsics.centered(160, 48)
    first = scene_sim.render(scene, camera, Pose.identity(), time_index=0)
    second = scene_sim.render(scene, camera, Pose.identity(), time_index=1)
    assert torch.any(first.moving)
    assert not torch.equal(first.depth_gt, second.depth_gt)


def test_camera_inside_surface_is_rejected() -> None:
    scene = scene_sim.build_scene("moving_object")
    with pytest.raises(InvalidCameraPlacement):
        scene_sim.render(scene, CAMERA, scene_sim.camera_pose((1.4, 0.0, 6.5)))


def test_constant_velocity_step_length() -> None:
    trajectory = scene_sim.Trajectory.constant_velocity((1.0, 0.0, 0.0), frame_rate=10.0, num_frames=3)
    relative = trajectory.relative_pose(1, 0)
    assert torch.linalg.norm(relative.T).item() == pytest.approx(0.1)


def test_relative_poses_compose_consistently() -> None:
    trajectory = scene_sim.Trajectory.constant_velocity((0.5, 0.0, 2.0), frame_rate=5.0, num_frames=3, yaw=0.1)
    direct = trajectory.relative_pose(2, 0)
    chained = trajectory.relative_pose(1, 0).compose(trajectory.relative_pose(2, 1))
    assert torch.allclose(direct.R, chained.R, atol=1e-12)
    assert torch.allclose(direct.T, chained.T, atol=1e-12)


def test_static_trajectory_renders_identical_frames() -> None:
    trajectory = scene_sim.Trajectory.static(frame_rate=10.0, num_frames=3)
    frames = scene_sim.make_sequence(scene_sim.build_scene("walls"), trajectory, CAMERA)
    assert len(frames) == 3
    assert torch.equal(frames[0].image, frames[2].image)


def test_walls_fold_is_unoccluded_and_bounded() -> None:
    frame = scene_sim.render(scene_sim.build_scene("walls"), Intrinsics.centered(160, 48), Pose.identity())
    assert 7.5 < frame.depth_gt.min().item() < 8.5
    assert frame.depth_gt.max().item() <= scene_sim.WALL_FOLD_DEPTH + 1e-9
    # Inverse depth is affine in u along each wall, so its second difference vanishes off the fold.
    inverse = 1.0 / frame.depth_gt
    curvature = torch.abs(inverse[:, 2:] - 2.0 * inverse[:, 1:-1] + inverse[:, :-2])
    assert (curvature > 1e-9).sum(dim=1).max().item() <= 2


def test_sensor_noise_is_seeded_and_bounded() -> None:
    frame = scene_sim.render(scene_sim.build_scene("walls"), CAMERA, Pose.identity())
    first = scene_sim.add_sensor_noise(frame, 0.05, seed=3)
    second = scene_sim.add_sensor_noise(frame, 0.05, seed=3)
    assert torch.equal(first.image, second.image)
    assert not torch.equal(first.image, frame.image)
    assert torch.equal(first.depth_gt, frame.depth_gt)
    assert first.image.min().item() >= 0.0 and first.image.max().item() <= 1.0
    assert (first.image - frame.image).std().item() == pytest.approx(0.05, rel=0.15)
    assert scene_sim.add_sensor_noise(frame, 0.0, seed=3) is frame


def test_make_sequence_requires_two_poses() -> None:
    trajectory = scene_sim.Trajectory.static(frame_rate=10.0, num_frames=1)
    with pytest.raises(ValueError):
        scene_sim.make_sequence(_flat_scene(), trajectory, CAMERA)


def _gt_map() -> DepthMap:
    depth = torch.linspace(5.0, 20.0, 200 * 200, dtype=DTYPE).reshape(200, 200)
    return DepthMap(depth, resolution="quarter", kind="gt")


def test_prior_without_noise_equals_ground_truth() -> None:
    gt = _gt_map()
    prior = scene_sim.perturb_prior(gt, scene_sim.PriorNoise(sigma=0.0), seed=0)
    assert torch.equal(prior.data, gt.data)
    assert prior.kind == "mono"


def test_multiplicative_prior_noise_level() -> None:
    gt = _gt_map()
    prior = scene_sim.perturb_prior(gt, scene_sim.PriorNoise(sigma=0.1), seed=1)
    abs_rel = torch.mean(torch.abs(prior.data - gt.data) / gt.data).item()
    assert 0.07 <= abs_rel <= 0.10
    assert torch.all(prior.data > 0)


def test_bias_prior_is_exact() -> None:
    gt = _gt_map()
    prior = scene_sim.perturb_prior(gt, scene_sim.PriorNoise(kind="bias", bias=1.2), seed=0)
    assert torch.equal(prior.data, 1.2 * gt.data)


def test_prior_is_seeded() -> None:
    gt = _gt_map()
    noise = scene_sim.PriorNoise(kind="low_frequency", sigma=0.2)
    first = scene_sim.perturb_prior(gt, noise, seed=9)
    second = scene_sim.perturb_prior(gt, noise, seed=9)
    assert torch.equal(first.data, second.data)
