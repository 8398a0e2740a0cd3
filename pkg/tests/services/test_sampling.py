from __future__ import annotations

import pytest
import torch

from src.services import sampling
from src.services.geometry import DTYPE


def _range_bounds(depth_range: sampling.DepthRange) -> tuple[float, float]:
    return depth_range.d_min.item(), depth_range.d_max.item()


def test_estimate_velocity_examples() -> None:
    assert sampling.estimate_velocity((0.0, 0.0, 0.0), 10.0).v == 0.0
    assert sampling.estimate_velocity((0.1, 0.0, 0.0), 10.0).v == pytest.approx(1.0)
    assert sampling.estimate_velocity((0.06, 0.0, 0.08), 10.0).v == pytest.approx(1.0)


def test_identity_scale_function_ignores_scale() -> None:
    estimate = sampling.estimate_velocity((0.1, 0.0, 0.0), 10.0, scale_fn="identity", scale=3.0)
    assert estimate.metric() == pytest.approx(1.0)
    scaled = sampling.estimate_velocity((0.1, 0.0, 0.0), 10.0, scale_fn="median_ratio", scale=3.0)
    assert scaled.metric() == pytest.approx(3.0)


def test_scale_functions() -> None:
    reference = torch.tensor([2.0, 4.0, 6.0], dtype=DTYPE)
    assert sampling.median_ratio_scale(reference, reference / 2.0) == pytest.approx(2.0)
    assert sampling.camera_height_scale(1.5, 0.75) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        sampling.camera_height_scale(1.5, 0.0)


def test_velocity_range_substitution() -> None:
    depth_range = sampling.velocity_range(10.0, sampling.VelocityEstimate(v=2.0), beta=0.15)
    assert depth_range.fraction.item() == pytest.approx(0.3)
    assert _range_bounds(depth_range) == pytest.approx((7.0, 13.0))


def test_velocity_range_collapses_when_static() -> None:
    depth_range = sampling.velocity_range(10.0, sampling.VelocityEstimate(v=0.0), beta=0.15)
    assert depth_range.fraction.item() == pytest.approx(1e-4)
    assert _range_bounds(depth_range) == pytest.approx((9.999, 10.001))


def test_velocity_range_clamps_at_ceiling() -> None:
    depth_range = sampling.velocity_range(10.0, sampling.VelocityEstimate(v=100.0), beta=0.15)
    assert depth_range.fraction.item() == pytest.approx(0.9999)
    assert _range_bounds(depth_range) == pytest.approx((0.001, 19.999))


def test_fixed_ranges() -> None:
    assert _range_bounds(sampling.fixed_range(10.0, 0.5)) == pytest.approx((5.0, 15.0))
    assert _range_bounds(sampling.fixed_range(10.0, 0.25)) == pytest.approx((7.5, 12.5))
    with pytest.raises(ValueError):
        sampling.fixed_range(10.0, 1.0)


def test_cascade_halves_fraction() -> None:
    refined = sampling.cascade_range(sampling.fixed_range(10.0, 0.5))
    assert _range_bounds(refined) == pytest.approx((7.5, 12.5))
    twice = sampling.cascade_range(sampling.cascade_range(sampling.fixed_range(10.0, 0.4)))
    assert twice.fraction.item() == pytest.approx(0.1)


def test_cascade_keeps_floor_fraction() -> None:
    floor = sampling.velocity_range(10.0, sampling.VelocityEstimate(v=0.0), beta=0.15)
    assert sampling.cascade_range(floor).fraction.item() == pytest.approx(sampling.FRACTION_FLOOR)


def test_cascade_recenters_on_new_estimate() -> None:
    refined = sampling.cascade_range(sampling.fixed_range(10.0, 0.5), center=torch.tensor(12.0))
    assert _range_bounds(refined) == pytest.approx((9.0, 15.0))


def test_confidence_range() -> None:
    confident = sampling.confidence_range(10.0, 1.0, beta=0.1)
    assert confident.fraction.item() == pytest.approx(sampling.FRACTION_FLOOR)
    half = sampling.confidence_range(10.0, 0.5, beta=0.15)
    assert half.fraction.item() == pytest.approx(0.075, abs=1e-3)
    doubtful = sampling.confidence_range(10.0, 1e-9, beta=0.15)
    assert doubtful.fraction.item() == pytest.approx(0.15, abs=1e-3)


def test_full_confidence_at_default_beta() -> None:
    # 0.15 * (1 - 1 + 1e-3) stays just above the fraction floor.
    confident = sampling.confidence_range(10.0, 1.0, beta=0.15)
    assert confident.fraction.item() == pytest.approx(1.5e-4, rel=1e-9)
    assert confident.fraction.item() > sampling.FRACTION_FLOOR
    assert confident.d_min.item() == pytest.approx(10.0 * (1.0 - 1.5e-4))
    assert confident.d_max.item() == pytest.approx(10.0 * (1.0 + 1.5e-4))


def test_prior_confidence_is_one_on_smooth_prior() -> None:
    prior = torch.full((6, 6), 8.0, dtype=DTYPE)
    assert torch.allclose(sampling.prior_confidence(prior), torch.ones(6, 6, dtype=DTYPE))
    prior[3, 3] = 16.0
    confidence = sampling.prior_confidence(prior)
    assert confidence[3, 3].item() == pytest.approx(sampling.CONFIDENCE_FLOOR)
    assert confidence[0, 0].item() == 1.0


def test_no_prior_range_spans_global_bounds() -> None:
    depth_range = sampling.no_prior_range(1.0, 80.0, (2, 3))
    assert depth_range.shape == (2, 3)
    assert torch.all(depth_range.d_min == 1.0)
    assert torch.all(depth_range.d_max == 80.0)


def test_inverse_sample_substitution() -> None:
    hypotheses = sampling.inverse_sample(sampling.DepthRange.from_bounds(2.0, 10.0), 3)
    assert hypotheses.depths.tolist() == pytest.approx([10.0, 10.0 / 3.0, 2.0])


def test_inverse_sample_degenerate_and_two_bins() -> None:
    degenerate = sampling.inverse_sample(sampling.DepthRange.from_bounds(5.0, 5.0), 4)
    assert degenerate.depths.tolist() == [5.0, 5.0, 5.0, 5.0]
    endpoints = sampling.inverse_sample(sampling.DepthRange.from_bounds(3.0, 9.0), 2)
    assert endpoints.depths.tolist() == [9.0, 3.0]


def test_inverse_sample_matches_closed_form() -> None:
    generator = torch.Generator().manual_seed(0)
    for _ in range(100):
        low = torch.empty(1, dtype=DTYPE).uniform_(0.5, 20.0, generator=generator).item()
        high = low + torch.empty(1, dtype=DTYPE).uniform_(0.01, 60.0, generator=generator).item()
        count = int(torch.randint(2, 65, (1,), generator=generator).item())
        depths = sampling.inverse_sample(sampling.DepthRange.from_bounds(low, high), count).depths
        steps = torch.arange(count, dtype=DTYPE) / (count - 1)
        expected = 1.0 / ((1.0 / low - 1.0 / high) * steps + 1.0 / high)
        assert torch.allclose(depths, expected, rtol=1e-12, atol=0.0)
        spacing = torch.diff(1.0 / depths)
        assert torch.allclose(spacing, spacing[0].expand_as(spacing), rtol=0.0, atol=1e-12)
        assert depths[0].item() == high
        assert depths[-1].item() == low


def test_inverse_sample_per_pixel_shape() -> None:
    depth_range = sampling.fixed_range(torch.full((3, 4), 10.0, dtype=DTYPE), 0.5)
    hypotheses = sampling.inverse_sample(depth_range, 16)
    assert hypotheses.depths.shape == (3, 4, 16)
    assert hypotheses.count == 16
    assert torch.all(hypotheses.depths[..., :-1] > hypotheses.depths[..., 1:])
