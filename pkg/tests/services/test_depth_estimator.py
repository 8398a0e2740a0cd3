from __future__ import annotations

import math

import pytest
import torch

from src.services import depth_estimator
from src.services.cost_volume import ProbabilityVolume
from src.services.errors import ContractViolation
from src.services.geometry import DTYPE
from src.services.sampling import DepthHypothesisSet, DepthRange


def _hypotheses(depths: list[float]) -> DepthHypothesisSet:
    values = torch.tensor(depths, dtype=DTYPE).reshape(1, 1, -1)
    depth_range = DepthRange.from_bounds(torch.tensor([[min(depths)]]), torch.tensor([[max(depths)]]))
    return DepthHypothesisSet(depths=values, range=depth_range)


def _probabilities(values: list[float]) -> ProbabilityVolume:
    return ProbabilityVolume(torch.tensor(values, dtype=DTYPE).reshape(1, 1, -1))


def _quarter(value: float, kind: str = "mono") -> depth_estimator.DepthMap:
    return depth_estimator.DepthMap(torch.full((3, 5), value, dtype=DTYPE), resolution="quarter", kind=kind)


def _uncertainty(value: float) -> depth_estimator.UncertaintyMap:
    return depth_estimator.UncertaintyMap(torch.full((3, 5), value, dtype=DTYPE))


def test_localmax_one_hot_returns_bin_depth() -> None:
    depth = depth_estimator.localmax_depth(_probabilities([0.0, 0.0, 1.0, 0.0]), _hypotheses([8.0, 4.0, 2.0, 1.0]))
    assert depth.data.item() == pytest.approx(2.0)
    assert depth.kind == "mvs"


def test_localmax_window_substitution() -> None:
    depth = depth_estimator.localmax_depth(
        _probabilities([0.1, 0.6, 0.2, 0.1]),
        _hypotheses([8.0, 4.0, 2.0, 1.0]),
        r=1,
    )
    assert depth.data.item() == pytest.approx(0.9 / 0.2625)
    assert depth.data.item() == pytest.approx(3.4286, abs=1e-4)


def test_localmax_zero_radius_is_nearest_bin() -> None:
    depth = depth_estimator.localmax_depth(
        _probabilities([0.1, 0.6, 0.2, 0.1]),
        _hypotheses([8.0, 4.0, 2.0, 1.0]),
        r=0,
    )
    assert depth.data.item() == 4.0


def test_localmax_ties_take_the_first_bin() -> None:
    depth = depth_estimator.localmax_depth(_probabilities([0.5, 0.0, 0.0, 0.5]), _hypotheses([8.0, 4.0, 2.0, 1.0]), r=0)
    assert depth.data.item() == 8.0


def test_localmax_rejects_oversized_window() -> None:
    with pytest.raises(ValueError):
        depth_estimator.localmax_depth(_probabilities([0.5, 0.5]), _hypotheses([4.0, 2.0]), r=1)


def test_localmax_stays_inside_window_fuzz() -> None:
    generator = torch.Generator().manual_seed(2)
    logits = torch.randn(100, 100, 16, generator=generator, dtype=DTYPE) * 3.0
    probabilities = ProbabilityVolume(torch.softmax(logits, dim=-1))
    depths = torch.sort(torch.rand(100, 100, 16, generator=generator, dtype=DTYPE) * 50.0 + 1.0, descending=True).values
    hypotheses = DepthHypothesisSet(depths=depths, range=DepthRange.from_bounds(depths[..., -1], depths[..., 0]))
    estimate = depth_estimator.localmax_depth(probabilities, hypotheses, r=1).data
    index = torch.argmax(probabilities.data, dim=-1, keepdim=True)
    low = torch.gather(depths, -1, torch.clamp(index + 1, max=15)).squeeze(-1)
    high = torch.gather(depths, -1, torch.clamp(index - 1, min=0)).squeeze(-1)
    assert torch.all(estimate >= low * (1 - 1e-12))
    assert torch.all(estimate <= high * (1 + 1e-12))

    entropy = depth_estimator.probability_entropy(probabilities)
    assert torch.all(entropy >= 0)
    assert torch.all(entropy <= math.log(16))


def test_entropy_examples() -> None:
    assert depth_estimator.probability_entropy(_probabilities([1.0, 0.0, 0.0, 0.0])).item() == 0.0
    uniform = _probabilities([1.0 / 16] * 16)
    assert depth_estimator.probability_entropy(uniform).item() == pytest.approx(math.log(16))
    assert depth_estimator.probability_entropy(_probabilities([0.5, 0.5, 0.0, 0.0])).item() == pytest.approx(math.log(2))


def test_normalized_uncertainty_is_linear_in_entropy() -> None:
    entropy = torch.tensor([[0.0, 0.5 * math.log(16), math.log(16)]], dtype=DTYPE)
    uncertainty = depth_estimator.uncertainty_from_entropy(entropy, 16)
    assert uncertainty.data.tolist()[0] == pytest.approx([0.0, 0.5, 1.0])


def test_sigmoid_uncertainty_is_monotone() -> None:
    entropy = torch.linspace(0.0, math.log(16), 20, dtype=DTYPE).reshape(1, -1)
    uncertainty = depth_estimator.uncertainty_from_entropy(entropy, 16, mapping="affine_sigmoid", a=4.0, b=1.0)
    assert torch.all(torch.diff(uncertainty.data[0]) > 0)
    with pytest.raises(ValueError):
        depth_estimator.uncertainty_from_entropy(entropy, 16, mapping="affine_sigmoid", a=-1.0)


def test_fusion_examples() -> None:
    mono = _quarter(4.0)
    mvs = _quarter(2.0, kind="mvs")
    assert torch.equal(depth_estimator.fuse_depth(mono, mvs, _uncertainty(1.0)).data, mono.data)
    assert torch.equal(depth_estimator.fuse_depth(mono, mvs, _uncertainty(0.0)).data, mvs.data)
    fused = depth_estimator.fuse_depth(mono, mvs, _uncertainty(0.5))
    assert torch.allclose(fused.data, torch.full((3, 5), 3.0, dtype=DTYPE))
    assert fused.kind == "fused"


def test_fusion_stays_between_inputs_fuzz() -> None:
    generator = torch.Generator().manual_seed(21)
    mono = torch.empty(100, 100, dtype=DTYPE).uniform_(0.5, 80.0, generator=generator)
    mvs = torch.empty(100, 100, dtype=DTYPE).uniform_(0.5, 80.0, generator=generator)
    weights = torch.rand(100, 100, generator=generator, dtype=DTYPE)
    weights[:10] = 0.0
    weights[10:20] = 1.0
    fused = depth_estimator.fuse_depth(
        depth_estimator.DepthMap(mono),
        depth_estimator.DepthMap(mvs, kind="mvs"),
        depth_estimator.UncertaintyMap(weights),
    ).data
    assert torch.all(fused >= torch.minimum(mono, mvs) * (1.0 - 1e-12))
    assert torch.all(fused <= torch.maximum(mono, mvs) * (1.0 + 1e-12))


def test_fusion_rejects_resolution_mismatch() -> None:
    full = depth_estimator.upsample_depth(_quarter(4.0))
    with pytest.raises(ContractViolation):
        depth_estimator.fuse_depth(full, _quarter(2.0, kind="mvs"), _uncertainty(0.5))


def test_upsample_constant_map() -> None:
    full = depth_estimator.upsample_depth(_quarter(7.0))
    assert full.shape == (12, 20)
    assert full.resolution == "full"
    assert torch.allclose(full.data, torch.full((12, 20), 7.0, dtype=DTYPE))


def test_upsample_step_is_linear_in_inverse_depth() -> None:
    data = torch.full((2, 4), 2.0, dtype=DTYPE)
    data[:, 2:] = 4.0
    full = depth_estimator.upsample_depth(depth_estimator.DepthMap(data, resolution="quarter", kind="mvs"))
    inverse = 1.0 / full.data[0]
    seam = inverse[6:10]
    assert torch.all(torch.diff(seam) < 0)
    assert torch.allclose(torch.diff(seam), torch.diff(seam)[0].expand(3))
    assert torch.all(inverse >= 0.25 - 1e-12)
    assert torch.all(inverse <= 0.5 + 1e-12)


def test_downsample_is_harmonic_mean() -> None:
    data = torch.full((4, 4), 2.0, dtype=DTYPE)
    data[:2] = 4.0
    quarter = depth_estimator.downsample_depth(depth_estimator.DepthMap(data, resolution="full", kind="gt"))
    assert quarter.data.item() == pytest.approx(1.0 / ((0.25 + 0.5) / 2.0))


def test_depth_map_validation() -> None:
    with pytest.raises(ValueError):
        depth_estimator.DepthMap(torch.tensor([[1.0, 0.0]]), kind="mvs")
    with pytest.raises(ValueError):
        depth_estimator.DepthMap(torch.tensor([[1.0, float("nan")]]), kind="mono")
    gt = depth_estimator.DepthMap(torch.tensor([[1.0, 0.0]]), kind="gt")
    assert gt.shape == (1, 2)
    with pytest.raises(ValueError):
        depth_estimator.UncertaintyMap(torch.tensor([[1.5]]))
