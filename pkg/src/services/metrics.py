"""Standard depth-evaluation metrics with median scaling and range capping."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import torch

from src.services.depth_estimator import DepthMap
from src.services.errors import ContractViolation, NoValidPixels

LOGGER = logging.getLogger(__name__)

MIN_DEPTH = 1e-3
KITTI_CAP = 80.0
DDAD_CAP = 200.0


@dataclass(frozen=True)
class EvalOptions:
    median_scale: bool = True
    cap: float = KITTI_CAP

    def __post_init__(self) -> None:
        if not self.cap > MIN_DEPTH:
            raise ValueError(f"evaluation cap must exceed {MIN_DEPTH}, got {self.cap}")


@dataclass(frozen=True)
class MetricReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    n_valid: int
    scale_applied: float

    def as_dict(self) -> dict[str, float | int]:
        return asdict(self)


METRIC_NAMES = tuple(item.name for item in fields(MetricReport))


def evaluate(
    pred: DepthMap,
    gt: DepthMap,
    mask: torch.Tensor | None = None,
    options: EvalOptions = EvalOptions(),
) -> MetricReport:
    if pred.shape != gt.shape:
        raise ContractViolation(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    valid = gt.data > 0
    if mask is not None:
        valid = valid & mask
    if not torch.any(valid):
        raise NoValidPixels("evaluation mask selects no pixel")

    truth = gt.data[valid]
    estimate = pred.data[valid]
    scale = 1.0
    if options.median_scale:
        scale = (torch.quantile(truth, 0.5) / torch.quantile(estimate, 0.5)).item()
        estimate = estimate * scale
    truth = torch.clamp(truth, MIN_DEPTH, options.cap)
    estimate = torch.clamp(estimate, MIN_DEPTH, options.cap)

    thresh = torch.maximum(truth / estimate, estimate / truth)
    delta1 = (thresh < 1.25).to(truth.dtype).mean().item()
    delta2 = (thresh < 1.25**2).to(truth.dtype).mean().item()
    delta3 = (thresh < 1.25**3).to(truth.dtype).mean().item()

    rmse = torch.sqrt(((truth - estimate) ** 2).mean()).item()
    rmse_log = torch.sqrt(((torch.log(truth) - torch.log(estimate)) ** 2).mean()).item()
    abs_rel = torch.mean(torch.abs(truth - estimate) / truth).item()
    sq_rel = torch.mean((truth - estimate) ** 2 / truth).item()

    return MetricReport(
        abs_rel=abs_rel,
        sq_rel=sq_rel,
        rmse=rmse,
        rmse_log=rmse_log,
        delta1=delta1,
        delta2=delta2,
        delta3=delta3,
        n_valid=int(valid.sum().item()),
        scale_applied=scale,
    )


def mean_report(reports: Sequence[MetricReport]) -> MetricReport:
    """Unweighted mean over frames; n_valid is summed."""
    if not reports:
        raise NoValidPixels("no reports to aggregate")
    count = len(reports)

    def average(name: str) -> float:
        return sum(getattr(report, name) for report in reports) / count

    return MetricReport(
        abs_rel=average("abs_rel"),
        sq_rel=average("sq_rel"),
        rmse=average("rmse"),
        rmse_log=average("rmse_log"),
        delta1=average("delta1"),
        delta2=average("delta2"),
        delta3=average("delta3"),
        n_valid=sum(report.n_valid for report in reports),
        scale_applied=average("scale_applied"),
    )
