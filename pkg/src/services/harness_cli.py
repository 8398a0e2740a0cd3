"""
Experiment harness for the velocity-guided plane-sweep pipeline.

Runs the full chain (render, prior, pose, range, hypotheses, features, warp, correlation,
probability, localmax, entropy, uncertainty, fusion, upsampling, evaluation) per frame,
sweeps ablation axes, and reads/writes PFM, CSV and JSON artifacts.

Usage:
    python3 scripts/run_depth_sweep.py sweep --config config/default.cfg --out ./runs/default
    python3 scripts/run_depth_sweep.py ablate --config config/default.cfg --axis strategy --jobs 4
    python3 scripts/run_depth_sweep.py render --config config/mixed.cfg --out ./runs/render
    python3 scripts/run_depth_sweep.py eval --pred ./runs/pred --gt ./runs/render/frames
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, Optional, Sequence

import numpy as np
import torch
from dotenv import load_dotenv
from prettytable import PrettyTable

from src.services.cost_volume import (
    FeatureGrid,
    ProbabilityVolume,
    build_warped_volume,
    cost_to_probability,
    extract_features,
    group_correlation,
    unit_normalize,
    volume_size_estimate,
)
from src.services.depth_estimator import (
    DepthMap,
    downsample_depth,
    fuse_depth,
    localmax_depth,
    probability_entropy,
    uncertainty_from_entropy,
    upsample_depth,
    upsample_uncertainty,
)
from src.services.errors import ConfigError, DepthSweepError, NoValidPixels, ParseError
from src.services.experiment_config import ExperimentConfig, load_config
from src.services.geometry import Intrinsics, Pose
from src.services.metrics import METRIC_NAMES, EvalOptions, MetricReport, evaluate, mean_report
from src.services.pfm_io import export_pfm, import_pfm
from src.services.photometric import LossBreakdown, LossWeights, composite_loss
from src.services.pose_provider import PoseNoise, PoseProvider
from src.services.sampling import (
    DepthRange,
    camera_height_scale,
    cascade_range,
    confidence_range,
    estimate_velocity,
    fixed_range,
    inverse_sample,
    median_ratio_scale,
    no_prior_range,
    prior_confidence,
    velocity_range,
)
from src.services.scene_sim import (
    PriorNoise,
    RenderedFrame,
    Scene,
    Trajectory,
    add_sensor_noise,
    build_scene,
    perturb_prior,
    render,
)
from src.utils.io import format_float, write_csv_atomic, write_json_atomic

LOGGER = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEPTH_KINDS = ("mono", "mvs", "fused")
CAMERA_HEIGHT = 1.5
EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_DIAGNOSTIC = 3
ABLATION_AXES = ("bins", "strategy", "beta", "fusion", "prior")
FEATURE_STRIDE = 4

AblationAxis = Literal["bins", "strategy", "beta", "fusion", "prior"]


@dataclass
class FrameResult:
    frame: int
    source: int
    velocity: float
    fraction: float
    metrics: dict[str, MetricReport]
    uncertainty: dict[str, float] = field(default_factory=dict)
    region_abs_rel: dict[str, float] = field(default_factory=dict)
    losses: Optional[LossBreakdown] = None
    wall_clock: float = 0.0


@dataclass
class FrameProducts:
    """Full-resolution maps of one processed frame, kept for artifact export."""

    mono: DepthMap
    mvs: DepthMap
    fused: DepthMap
    uncertainty: torch.Tensor


@dataclass
class RunRecord:
    config_hash: str
    final_kind: str
    frames: list[FrameResult] = field(default_factory=list)
    diagnostics: dict[int, str] = field(default_factory=dict)
    output_paths: list[Path] = field(default_factory=list)
    wall_clock: float = 0.0

    def aggregate(self, kind: str) -> MetricReport:
        if not self.frames:
            raise NoValidPixels("run produced no evaluated frame")
        return mean_report([result.metrics[kind] for result in self.frames])

    def final(self) -> MetricReport:
        return self.aggregate(self.final_kind)


def make_camera(config: ExperimentConfig) -> Intrinsics:
    return Intrinsics.centered(config.width, config.height, config.focal_ratio)


def make_scene(config: ExperimentConfig) -> Scene:
    try:
        return build_scene(
            config.scene,
            seed=config.seed,
            specular=config.specular,
            object_motion=config.object_motion,
            depth_floor=config.depth_floor,
            depth_ceiling=config.depth_ceiling,
        )
    except ValueError as exc:
        raise ConfigError(f"scene '{config.scene}' does not fit the configured depth bounds: {exc}") from exc


def make_trajectory(config: ExperimentConfig) -> Trajectory:
    return Trajectory.constant_velocity(config.velocity, config.frame_rate, config.num_frames, yaw=config.yaw)


def _eval_options(config: ExperimentConfig) -> EvalOptions:
    return EvalOptions(median_scale=config.median_scale, cap=config.eval_cap)


def _velocity_scale(config: ExperimentConfig, prior: DepthMap, gt: DepthMap) -> float:
    if config.scale_fn == "camera_height":
        return camera_height_scale(CAMERA_HEIGHT, CAMERA_HEIGHT * config.pose_scale)
    if config.scale_fn == "median_ratio":
        return median_ratio_scale(prior.data, gt.data * config.pose_scale)
    return 1.0


def _match(
    config: ExperimentConfig,
    depth_range: DepthRange,
    feat_prev: FeatureGrid,
    feat_cur: FeatureGrid,
    K_quarter: Intrinsics,
    pose: Pose,
) -> tuple[DepthMap, ProbabilityVolume]:
    hypotheses = inverse_sample(depth_range, config.depth_bins)
    volume = build_warped_volume(feat_prev, hypotheses, K_quarter, pose, mode=config.sampling_mode)
    cost = group_correlation(volume, feat_cur, config.groups)
    probability = cost_to_probability(cost, config.temperature)
    return localmax_depth(probability, hypotheses, config.radius), probability


def _region_stats(
    frame: RenderedFrame,
    uncertainty: torch.Tensor,
    mvs: DepthMap,
    fused: DepthMap,
    gt: DepthMap,
    cap: float,
) -> tuple[dict[str, float], dict[str, float]]:
    regions = {
        "moving": frame.moving,
        "textureless": frame.textureless,
        "moving_or_textureless": frame.moving | frame.textureless,
        "static": ~(frame.moving | frame.textureless),
    }
    means = {name: uncertainty[mask].mean().item() for name, mask in regions.items() if torch.any(mask)}
    abs_rel: dict[str, float] = {}
    if torch.any(frame.moving):
        options = EvalOptions(median_scale=False, cap=cap)
        abs_rel["moving_mvs"] = evaluate(mvs, gt, mask=frame.moving, options=options).abs_rel
        abs_rel["moving_fused"] = evaluate(fused, gt, mask=frame.moving, options=options).abs_rel
    return means, abs_rel


def process_frame(
    config: ExperimentConfig,
    frames: Sequence[Optional[RenderedFrame]],
    trajectory: Trajectory,
    provider: PoseProvider,
    target: int,
) -> tuple[FrameResult, FrameProducts]:
    """Estimate and evaluate depth for frame `target` from frame `target - source_gap`."""
    started = time.perf_counter()
    camera = make_camera(config)
    K_quarter = camera.scaled(FEATURE_STRIDE)
    source = target - config.source_gap
    current = frames[target]
    previous = frames[source]
    if current is None or previous is None:
        raise DepthSweepError(f"frame {target} or its source {source} failed to render")

    gt_full = current.depth_map()
    gt_quarter = downsample_depth(gt_full, FEATURE_STRIDE)
    noise = PriorNoise(kind=config.prior_noise, sigma=config.prior_sigma, bias=config.prior_bias)
    prior = perturb_prior(gt_quarter, noise, seed=config.seed * 7919 + target)

    estimate = provider.relative_pose(target, source)
    scale = _velocity_scale(config, prior, gt_quarter)
    pose = Pose(estimate.R, estimate.T * scale)
    from_provider = config.pose_noise != "none" or config.pose_scale != 1.0
    velocity = estimate_velocity(
        estimate.T,
        config.frame_rate / config.source_gap,
        source="pose_provider" if from_provider else "ground_truth",
        scale_fn=config.scale_fn,
        scale=scale,
    )

    feat_cur = unit_normalize(extract_features(current.image, config.channels))
    feat_prev = unit_normalize(extract_features(previous.image, config.channels))

    if config.strategy == "velocity":
        depth_range = velocity_range(prior.data, velocity, config.beta)
    elif config.strategy == "fixed":
        depth_range = fixed_range(prior.data, config.fixed_fraction)
    elif config.strategy == "confidence":
        depth_range = confidence_range(prior.data, prior_confidence(prior.data), config.beta)
    elif config.strategy == "no_prior":
        depth_range = no_prior_range(config.depth_floor, config.depth_ceiling, prior.shape)
    else:
        first_range = fixed_range(prior.data, config.fixed_fraction)
        first_mvs, _ = _match(config, first_range, feat_prev, feat_cur, K_quarter, pose)
        depth_range = cascade_range(first_range, center=first_mvs.data)

    mvs, probability = _match(config, depth_range, feat_prev, feat_cur, K_quarter, pose)
    entropy = probability_entropy(probability)
    uncertainty = uncertainty_from_entropy(
        entropy,
        config.depth_bins,
        mapping=config.uncertainty_mapping,
        a=config.sigmoid_a,
        b=config.sigmoid_b,
    )

    mono_full = upsample_depth(prior, FEATURE_STRIDE)
    mvs_full = upsample_depth(mvs, FEATURE_STRIDE)
    uncertainty_full = upsample_uncertainty(uncertainty, FEATURE_STRIDE)
    if config.fuse_resolution == "quarter":
        fused_full = upsample_depth(fuse_depth(prior, mvs, uncertainty), FEATURE_STRIDE)
    else:
        fused_full = fuse_depth(mono_full, mvs_full, uncertainty_full)

    options = _eval_options(config)
    metrics = {
        "mono": evaluate(mono_full, gt_full, options=options),
        "mvs": evaluate(mvs_full, gt_full, options=options),
        "fused": evaluate(fused_full, gt_full, options=options),
    }
    means, region_abs_rel = _region_stats(current, uncertainty_full.data, mvs_full, fused_full, gt_full, config.eval_cap)

    losses: Optional[LossBreakdown] = None
    neighbours = [index for index in (target - 1, target + 1) if 0 <= index < len(frames)]
    sources = [
        (frames[index].image, trajectory.relative_pose(target, index))
        for index in neighbours
        if frames[index] is not None
    ]
    if sources:
        weights = LossWeights(config.lambda_mono, config.lambda_mvs, config.lambda_fused, config.gamma)
        try:
            losses = composite_loss(
                current.image,
                sources,
                {"mono": mono_full, "mvs": mvs_full, "fused": fused_full},
                camera,
                weights,
            )
        except NoValidPixels as exc:
            LOGGER.warning("Frame %s: loss skipped (%s)", target, exc)

    fraction = depth_range.fraction.mean().item()
    LOGGER.info(
        "Frame %s: v=%.3f m/s fraction=%.4f abs_rel mono=%.4f mvs=%.4f fused=%.4f",
        target,
        velocity.metric(),
        fraction,
        metrics["mono"].abs_rel,
        metrics["mvs"].abs_rel,
        metrics["fused"].abs_rel,
    )
    result = FrameResult(
        frame=target,
        source=source,
        velocity=velocity.metric(),
        fraction=fraction,
        metrics=metrics,
        uncertainty=means,
        region_abs_rel=region_abs_rel,
        losses=losses,
        wall_clock=time.perf_counter() - started,
    )
    return result, FrameProducts(mono=mono_full, mvs=mvs_full, fused=fused_full, uncertainty=uncertainty_full.data)


def render_frames(config: ExperimentConfig, trajectory: Trajectory) -> tuple[list[Optional[RenderedFrame]], dict[int, str]]:
    scene = make_scene(config)
    camera = make_camera(config)
    frames: list[Optional[RenderedFrame]] = []
    failures: dict[int, str] = {}
    for index, pose in enumerate(trajectory.poses):
        try:
            frame = render(scene, camera, pose, time_index=index)
            if config.sensor_noise > 0:
                frame = add_sensor_noise(frame, config.sensor_noise, seed=(config.seed + 1) * 104729 + index)
            frames.append(frame)
        except DepthSweepError as exc:
            LOGGER.warning("Frame %s failed to render: %s", index, exc)
            failures[index] = f"{type(exc).__name__}: {exc}"
            frames.append(None)
    return frames, failures


def run_pipeline(config: ExperimentConfig, out_dir: Path | None = None) -> RunRecord:
    started = time.perf_counter()
    record = RunRecord(
        config_hash=config.config_hash(),
        final_kind="fused" if config.fusion == "fused" else "mvs",
    )
    trajectory = make_trajectory(config)
    frames, failures = render_frames(config, trajectory)
    record.diagnostics.update(failures)
    provider = PoseProvider(
        trajectory,
        PoseNoise(config.pose_noise, config.pose_sigma_t, config.pose_sigma_r, config.pose_scale),
        seed=config.seed,
    )

    for target in range(config.source_gap, config.num_frames):
        if target in record.diagnostics:
            continue
        try:
            result, products = process_frame(config, frames, trajectory, provider, target)
        except (DepthSweepError, ValueError) as exc:
            LOGGER.warning("Frame %s aborted: %s", target, exc)
            record.diagnostics[target] = f"{type(exc).__name__}: {exc}"
            continue
        record.frames.append(result)
        if out_dir is not None:
            record.output_paths.extend(_write_frame_maps(out_dir, target, products))

    record.wall_clock = time.perf_counter() - started
    LOGGER.info(
        "Run %s: %s frames evaluated, %s diagnostics in %.2fs",
        record.config_hash,
        len(record.frames),
        len(record.diagnostics),
        record.wall_clock,
    )
    if out_dir is not None:
        write_run_outputs(record, config, out_dir)
    return record


def _write_frame_maps(out_dir: Path, target: int, products: FrameProducts) -> list[Path]:
    paths = []
    maps = {
        "mono": products.mono.data,
        "mvs": products.mvs.data,
        "fused": products.fused.data,
        "uncertainty": products.uncertainty,
    }
    for name, data in maps.items():
        path = out_dir / "frames" / f"frame_{target:04d}_{name}.pfm"
        export_pfm(data, path)
        paths.append(path)
    return paths


def _metric_row(frame: str, kind: str, report: MetricReport, extra: dict[str, Any]) -> dict[str, Any]:
    row: dict[str, Any] = {"frame": frame, "kind": kind}
    for name in METRIC_NAMES:
        value = getattr(report, name)
        row[name] = value if isinstance(value, int) else format_float(value)
    row.update(extra)
    return row


def write_run_outputs(record: RunRecord, config: ExperimentConfig, out_dir: Path) -> None:
    rows = []
    for result in record.frames:
        extra = {"fraction": format_float(result.fraction), "velocity": format_float(result.velocity)}
        for kind in DEPTH_KINDS:
            rows.append(_metric_row(f"{result.frame:04d}", kind, result.metrics[kind], extra))
    if record.frames:
        for kind in DEPTH_KINDS:
            rows.append(_metric_row("all", kind, record.aggregate(kind), {"fraction": "", "velocity": ""}))
    rows.sort(key=lambda row: (row["frame"] == "all", row["frame"], row["kind"]))
    fieldnames = ["frame", "kind", *METRIC_NAMES, "fraction", "velocity"]
    metrics_path = out_dir / "metrics.csv"
    count = write_csv_atomic(metrics_path, fieldnames, rows)
    LOGGER.info("Wrote %s rows to %s", count, metrics_path)

    summary_path = out_dir / "summary.json"
    outputs = sorted({str(path.relative_to(out_dir)) for path in record.output_paths} | {"metrics.csv"})
    summary = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": record.config_hash,
        "config": config.model_dump(mode="json"),
        "final_kind": record.final_kind,
        "aggregate": {kind: record.aggregate(kind).as_dict() for kind in DEPTH_KINDS} if record.frames else {},
        "frames": [
            {
                "frame": result.frame,
                "source": result.source,
                "velocity": result.velocity,
                "fraction": result.fraction,
                "uncertainty": result.uncertainty,
                "region_abs_rel": result.region_abs_rel,
                "losses": result.losses.as_dict() if result.losses is not None else None,
            }
            for result in record.frames
        ],
        "diagnostics": {str(frame): message for frame, message in sorted(record.diagnostics.items())},
        "outputs": outputs,
    }
    write_json_atomic(summary_path, summary)
    record.output_paths.extend([metrics_path, summary_path])


@dataclass(frozen=True)
class AblationCell:
    label: str
    updates: tuple[tuple[str, Any], ...] = ()
    report: Literal["final", "mono", "mvs"] = "final"


@dataclass
class AblationTable:
    axis: str
    columns: list[str]
    rows: list[dict[str, Any]]

    def to_prettytable(self) -> PrettyTable:
        table = PrettyTable()
        table.field_names = self.columns
        for row in self.rows:
            table.add_row([row.get(column, "") for column in self.columns])
        table.align = "r"
        table.align["label"] = "l"
        return table


def ablation_cells(config: ExperimentConfig, axis: AblationAxis) -> list[AblationCell]:
    """Cells of one ablation sweep; every sweep includes the configuration's own setting."""
    if axis == "bins":
        return [AblationCell(f"D={bins}", (("depth_bins", bins),)) for bins in sorted({8, 16, 32, 48, config.depth_bins})]
    if axis == "strategy":
        cells = [
            AblationCell("fixed 1/2", (("strategy", "fixed"), ("fixed_fraction", 0.5))),
            AblationCell("fixed 1/4", (("strategy", "fixed"), ("fixed_fraction", 0.25))),
            AblationCell("cascade", (("strategy", "cascade"), ("fixed_fraction", 0.5))),
            AblationCell("confidence", (("strategy", "confidence"),)),
        ]
        betas = sorted({0.1, 0.15, 0.2, config.beta})
        cells.extend(AblationCell(f"velocity beta={beta:g}", (("strategy", "velocity"), ("beta", beta))) for beta in betas)
        return cells
    if axis == "beta":
        betas = sorted({0.05, 0.1, 0.15, 0.2, 0.3, config.beta})
        return [AblationCell(f"beta={beta:g}", (("strategy", "velocity"), ("beta", beta))) for beta in betas]
    if axis == "fusion":
        return [
            AblationCell("unfused", (("fusion", "unfused"),)),
            AblationCell("fused", (("fusion", "fused"),)),
        ]
    if axis == "prior":
        return [
            AblationCell("mono only", (), report="mono"),
            AblationCell("no prior D=48", (("strategy", "no_prior"), ("depth_bins", 48)), report="mvs"),
            AblationCell("no prior D=96", (("strategy", "no_prior"), ("depth_bins", 96)), report="mvs"),
            AblationCell(f"prior D={config.depth_bins}", (("strategy", "velocity"),)),
        ]
    raise ValueError(f"unknown ablation axis '{axis}'")


def _velocity_at_speed(velocity: Sequence[float], speed: float) -> tuple[float, float, float]:
    norm = math.sqrt(sum(component * component for component in velocity))
    direction = [component / norm for component in velocity] if norm > 0 else [1.0, 0.0, 0.0]
    return (speed * direction[0], speed * direction[1], speed * direction[2])


def _run_cell(config: ExperimentConfig, cell: AblationCell) -> MetricReport:
    record = run_pipeline(config)
    kind = record.final_kind if cell.report == "final" else cell.report
    return record.aggregate(kind)


def run_ablation(config: ExperimentConfig, axis: AblationAxis, jobs: int | None = None) -> AblationTable:
    cells = ablation_cells(config, axis)
    speeds: tuple[Optional[float], ...] = config.sweep_speeds or (None,)
    tasks: list[tuple[int, int, ExperimentConfig]] = []
    for cell_index, cell in enumerate(cells):
        for speed_index, speed in enumerate(speeds):
            updates = dict(cell.updates)
            if speed is not None:
                updates["velocity"] = _velocity_at_speed(config.velocity, speed)
            tasks.append((cell_index, speed_index, config.with_updates(**updates)))

    workers = jobs or config.jobs
    LOGGER.info("Ablation '%s': %s cells x %s speeds on %s workers", axis, len(cells), len(speeds), workers)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(lambda task: _run_cell(task[2], cells[task[0]]), tasks))
    else:
        reports = [_run_cell(task[2], cells[task[0]]) for task in tasks]

    by_cell: dict[int, list[MetricReport]] = {index: [] for index in range(len(cells))}
    for (cell_index, _, _), report in zip(tasks, reports):
        by_cell[cell_index].append(report)

    columns = ["label", "abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3"]
    if axis == "bins":
        columns.append("memory_mb")
    speed_columns = [f"abs_rel@{speed:g}" for speed in speeds if speed is not None]
    columns.extend(speed_columns)

    rows = []
    for cell_index, cell in enumerate(cells):
        per_speed = by_cell[cell_index]
        combined = mean_report(per_speed)
        row: dict[str, Any] = {"label": cell.label}
        for name in columns[1:8]:
            row[name] = format_float(getattr(combined, name))
        if axis == "bins":
            bins = dict(cell.updates)["depth_bins"]
            size = volume_size_estimate(
                config.height // FEATURE_STRIDE,
                config.width // FEATURE_STRIDE,
                config.channels,
                config.groups,
                bins,
            )
            row["memory_mb"] = format_float(size.megabytes)
        for column, report in zip(speed_columns, per_speed):
            row[column] = format_float(report.abs_rel)
        rows.append(row)
    return AblationTable(axis=axis, columns=columns, rows=rows)


def write_ablation(table: AblationTable, out_dir: Path, config_hash: str) -> Path:
    path = out_dir / f"ablation_{table.axis}.csv"
    rows = [{**row, "config_hash": config_hash} for row in table.rows]
    count = write_csv_atomic(path, [*table.columns, "config_hash"], rows)
    LOGGER.info("Wrote %s rows to %s", count, path)
    return path


def render_sequence(config: ExperimentConfig, out_dir: Path) -> RunRecord:
    """Render the configured sequence and export depth PFMs, image arrays and poses."""
    trajectory = make_trajectory(config)
    frames, failures = render_frames(config, trajectory)
    record = RunRecord(config_hash=config.config_hash(), final_kind="fused", diagnostics=dict(failures))
    camera = make_camera(config)
    entries = []
    for index, frame in enumerate(frames):
        if frame is None:
            continue
        depth_path = out_dir / "frames" / f"frame_{index:04d}_depth.pfm"
        image_path = out_dir / "frames" / f"frame_{index:04d}_image.npy"
        export_pfm(frame.depth_gt, depth_path)
        image_path.parent.mkdir(parents=True, exist_ok=True)
        np.save(image_path, frame.image.numpy())
        record.output_paths.extend([depth_path, image_path])
        entries.append(
            {
                "index": index,
                "R": frame.pose.R.tolist(),
                "T": frame.pose.T.tolist(),
                "depth": str(depth_path.relative_to(out_dir)),
                "image": str(image_path.relative_to(out_dir)),
            }
        )
    payload = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": record.config_hash,
        "frame_rate": config.frame_rate,
        "intrinsics": {
            "f": camera.f,
            "cu": camera.cu,
            "cv": camera.cv,
            "width": camera.width,
            "height": camera.height,
        },
        "frames": entries,
        "diagnostics": {str(frame): message for frame, message in sorted(record.diagnostics.items())},
    }
    frames_path = out_dir / "frames.json"
    write_json_atomic(frames_path, payload)
    record.output_paths.append(frames_path)
    LOGGER.info("Rendered %s frames into %s", len(entries), out_dir)
    return record


def evaluate_directories(
    pred_dir: Path,
    gt_dir: Path,
    options: EvalOptions,
) -> tuple[list[dict[str, Any]], dict[str, str]]:
    """Evaluate PFM predictions against ground truth files with the same name."""
    rows: list[dict[str, Any]] = []
    problems: dict[str, str] = {}
    reports: list[MetricReport] = []
    for pred_path in sorted(pred_dir.glob("*.pfm")):
        gt_path = gt_dir / pred_path.name
        if not gt_path.exists():
            LOGGER.warning("No ground truth for %s", pred_path.name)
            problems[pred_path.name] = "missing ground truth"
            continue
        try:
            pred = DepthMap(import_pfm(pred_path), resolution="full", kind="fused")
            gt = DepthMap(import_pfm(gt_path), resolution="full", kind="gt")
            report = evaluate(pred, gt, options=options)
        except (DepthSweepError, ValueError) as exc:
            LOGGER.warning("Skipping %s: %s", pred_path.name, exc)
            problems[pred_path.name] = f"{type(exc).__name__}: {exc}"
            continue
        reports.append(report)
        rows.append(_metric_row(pred_path.name, "pred", report, {}))
    if reports:
        rows.append(_metric_row("all", "pred", mean_report(reports), {}))
    return rows, problems


def _add_run_arguments(parser: argparse.ArgumentParser, out_default: Path) -> None:
    parser.add_argument("--config", type=Path, help="Experiment config file (key = value).")
    parser.add_argument("--out", type=Path, default=out_default)
    parser.add_argument("--seed", type=int, help="Override the config seed.")
    parser.add_argument("--jobs", type=int, help="Parallel workers for ablation cells.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Velocity-guided plane-sweep depth experiments.")
    parser.add_argument(
        "--log-level",
        type=str,
        default=os.getenv("DEPTH_SWEEP_LOG_LEVEL", "INFO"),
        help="Logging level (DEBUG, INFO, WARNING, ERROR).",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    render_parser = commands.add_parser("render", help="Render frames, depth PFMs and poses.")
    _add_run_arguments(render_parser, Path("./runs/render"))

    sweep_parser = commands.add_parser("sweep", help="Run the pipeline once and evaluate it.")
    _add_run_arguments(sweep_parser, Path("./runs/sweep"))

    ablate_parser = commands.add_parser("ablate", help="Sweep one ablation axis.")
    _add_run_arguments(ablate_parser, Path("./runs/ablate"))
    ablate_parser.add_argument("--axis", choices=ABLATION_AXES, required=True)

    eval_parser = commands.add_parser("eval", help="Evaluate PFM predictions against ground truth.")
    eval_parser.add_argument("--pred", type=Path, required=True)
    eval_parser.add_argument("--gt", type=Path, required=True)
    eval_parser.add_argument("--out", type=Path, default=Path("./runs/eval"))
    eval_parser.add_argument("--cap", type=float, default=80.0)
    eval_parser.add_argument("--no-median-scale", action="store_true")
    return parser


def _run_eval(args: argparse.Namespace) -> int:
    rows, problems = evaluate_directories(
        args.pred,
        args.gt,
        EvalOptions(median_scale=not args.no_median_scale, cap=args.cap),
    )
    if not rows:
        LOGGER.error("No prediction/ground-truth pair could be evaluated.")
        return EXIT_DIAGNOSTIC
    path = args.out / "eval.csv"
    count = write_csv_atomic(path, ["frame", "kind", *METRIC_NAMES], rows)
    LOGGER.info("Wrote %s rows to %s", count, path)
    return EXIT_DIAGNOSTIC if problems else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    load_dotenv(dotenv_path=Path(__file__).resolve().parents[2] / ".env")
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stdout,
        force=True,
    )
    try:
        if args.command == "eval":
            return _run_eval(args)
        config = load_config(args.config, seed=args.seed, jobs=args.jobs)
        LOGGER.info("Config %s (hash %s)", args.config, config.config_hash())
        if args.command == "render":
            record = render_sequence(config, args.out)
        elif args.command == "sweep":
            record = run_pipeline(config, args.out)
        else:
            table = run_ablation(config, args.axis)
            write_ablation(table, args.out, config.config_hash())
            print(table.to_prettytable())
            return EXIT_OK
    except ConfigError as exc:
        LOGGER.error("Invalid configuration: %s", exc)
        return EXIT_CONFIG_ERROR
    except (DepthSweepError, ParseError) as exc:
        LOGGER.error("Run failed: %s", exc)
        return EXIT_DIAGNOSTIC
    return EXIT_DIAGNOSTIC if record.diagnostics else EXIT_OK
