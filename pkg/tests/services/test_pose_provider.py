from __future__ import annotations

import pytest
import torch

from src.services import pose_provider
from src.services.scene_sim import Trajectory


def _trajectory() -> Trajectory:
    return Trajectory.constant_velocity((2.0, 0.0, 1.0), frame_rate=10.0, num_frames=4)


def test_ground_truth_provider_matches_trajectory() -> None:
    trajectory = _trajectory()
    provider = pose_provider.PoseProvider(trajectory, pose_provider.PoseNoise(), seed=0)
    estimate = provider.relative_pose(2, 1)
    truth = trajectory.relative_pose(2, 1)
    assert torch.equal(estimate.R, truth.R)
    assert torch.equal(estimate.T, truth.T)


def test_scale_multiplies_translation() -> None:
    trajectory = _trajectory()
    provider = pose_provider.PoseProvider(trajectory, pose_provider.PoseNoise(scale=0.5), seed=0)
    assert torch.allclose(provider.relative_pose(3, 2).T, 0.5 * trajectory.relative_pose(3, 2).T)


def test_noisy_estimates_are_seeded() -> None:
    noise = pose_provider.PoseNoise(kind="isotropic", sigma_t=0.01, sigma_r=0.001)
    first = pose_provider.PoseProvider(_trajectory(), noise, seed=4)
    second = pose_provider.PoseProvider(_trajectory(), noise, seed=4)
    assert torch.equal(first.relative_pose(2, 1).T, second.relative_pose(2, 1).T)
    # Query order does not change the draw.
    second.relative_pose(3, 0)
    assert torch.equal(first.relative_pose(1, 0).T, second.relative_pose(1, 0).T)
    assert not torch.equal(first.relative_pose(2, 1).T, _trajectory().relative_pose(2, 1).T)


def test_chained_noise_accumulates_over_gaps() -> None:
    trajectory = _trajectory()
    noise = pose_provider.PoseNoise(kind="chained", sigma_t=0.02)
    provider = pose_provider.PoseProvider(trajectory, noise, seed=1)
    expected = provider.unscaled(2, 1).compose(provider.unscaled(3, 2))
    chained = provider.unscaled(3, 1)
    assert torch.allclose(chained.T, expected.T, atol=1e-12)
    assert torch.allclose(chained.R, expected.R, atol=1e-12)


def test_perturbed_rotation_stays_orthonormal() -> None:
    noise = pose_provider.PoseNoise(kind="isotropic", sigma_t=0.0, sigma_r=0.05)
    estimate = pose_provider.PoseProvider(_trajectory(), noise, seed=2).relative_pose(1, 0)
    identity = estimate.R.T @ estimate.R
    assert torch.allclose(identity, torch.eye(3, dtype=identity.dtype), atol=1e-12)


def test_negative_sigma_is_rejected() -> None:
    with pytest.raises(ValueError):
        pose_provider.PoseNoise(kind="isotropic", sigma_t=-0.1)
