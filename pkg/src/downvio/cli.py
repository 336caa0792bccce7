"""Command-line entry point: run, bench, evaluate, and synth subcommands."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import math
import sys
from pathlib import Path

import numpy as np

from .bench import ORB_DISPLACEMENTS, PX4FLOW_RADII, bench_orb, bench_px4flow
from .blockflow import FlowConfig
from .cfgfile import ConfigFormatError, read_config
from .dataset import (
    DimensionMismatchError,
    MalformedFileError,
    NonMonotoneTimestampError,
    Sequence,
    load_sequence,
    save_sequence,
)
from .evaluation import (
    AssociationError,
    DegenerateGeometryError,
    TrajectoryFormatError,
    absolute_errors,
    read_tum,
    relative_translation_error,
    write_tum,
)
from .fusion import FusionConfig
from .orb import DetectorThresholds
from .pipeline import ConfigConflictError, PipelineConfig, PipelineResult, run_pipeline
from .superpoint import MissingTensorError
from .synth import (
    SynthConfig,
    Waypoint,
    out_and_back_waypoints,
    square_waypoints,
    synth_generate,
    write_spout_tensors,
)

DEFAULT_LENGTHS_M = (15.0, 25.0, 50.0)

_USER_ERRORS = (
    ConfigConflictError,
    ConfigFormatError,
    TrajectoryFormatError,
    AssociationError,
    DegenerateGeometryError,
    MalformedFileError,
    NonMonotoneTimestampError,
    DimensionMismatchError,
    MissingTensorError,
    FileNotFoundError,
    NotADirectoryError,
    ValueError,
)


def _coerce(raw: str, annotation: str, where: str):
    """Parse a config-file value according to a dataclass field annotation."""
    text = raw.strip()
    if annotation == "int":
        return int(text)
    if annotation == "float":
        return float(text)
    if annotation == "bool":
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigFormatError(f"{where}: expected a boolean, got '{raw}'")
    if annotation in ("int | None", "float | None"):
        if text.lower() in ("none", ""):
            return None
        return int(text) if annotation.startswith("int") else float(text)
    return text


def _apply_section(obj, section: str, cfg: dict[str, str]):
    """Return obj with every cfg key under `section.` replaced into it."""
    by_name = {f.name: f for f in dataclasses.fields(obj)}
    updates = {}
    for full_key, raw in cfg.items():
        prefix, _, name = full_key.partition(".")
        if prefix != section:
            continue
        if name not in by_name:
            raise ConfigFormatError(
                f"unknown key '{full_key}' (no field '{name}' in [{section}])"
            )
        updates[name] = _coerce(raw, str(by_name[name].type), full_key)
    return dataclasses.replace(obj, **updates) if updates else obj


_KNOWN_SECTIONS = ("pipeline", "flow", "detector", "fusion")


def _build_pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    """Merge defaults, optional config file, then explicit flags."""
    flow = FlowConfig()
    thresholds = DetectorThresholds()
    fusion = FusionConfig()
    top: dict[str, object] = {}
    if args.config is not None:
        cfg = read_config(args.config)
        for key in cfg:
            if key.partition(".")[0] not in _KNOWN_SECTIONS:
                raise ConfigFormatError(
                    f"unknown key '{key}' (sections: {', '.join(_KNOWN_SECTIONS)})"
                )
        flow = _apply_section(flow, "flow", cfg)
        thresholds = _apply_section(thresholds, "detector", cfg)
        fusion = _apply_section(fusion, "fusion", cfg)
        probe = _apply_section(_PipelineKnobs(), "pipeline", cfg)
        top = {
            k: v
            for k, v in dataclasses.asdict(probe).items()
            if v != getattr(_PipelineKnobs(), k)
        }
    if args.tracker is not None:
        top["tracker"] = args.tracker
    if args.mode is not None:
        top["mode"] = args.mode
    if top.get("mode") == "reference" and "tracker" not in top:
        # the only tracker the reference integrator models
        top["tracker"] = "px4flow"
    if args.search_radius is not None:
        flow = dataclasses.replace(flow, search_radius=args.search_radius)
    if getattr(args, "max_displacement", None) is not None:
        top["max_displacement_px"] = args.max_displacement
    return PipelineConfig(flow=flow, thresholds=thresholds, fusion=fusion, **top)


@dataclasses.dataclass(frozen=True)
class _PipelineKnobs:
    """The PipelineConfig scalars settable from a [pipeline] config section."""

    tracker: str = "orb"
    mode: str = "template"
    sp_score_threshold: float = 0.15
    sp_min_similarity: float = 0.75
    max_displacement_px: float | None = None
    initial_height_m: float = 1.0


def _truncate(seq: Sequence, n_frames: int) -> Sequence:
    if n_frames >= len(seq.frames):
        return seq
    cutoff = seq.frames[n_frames - 1][0] + 1e-9
    return dataclasses.replace(
        seq,
        frames=seq.frames[:n_frames],
        imu=[s for s in seq.imu if s.timestamp <= cutoff],
        tof=[s for s in seq.tof if s[0] <= cutoff],
        ground_truth=[p for p in seq.ground_truth if p.timestamp <= cutoff],
    )


def _write_timing(path: Path, result: PipelineResult) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "total_s", "mean_ms_per_frame"])
        for stage, seconds in result.stage_seconds.items():
            writer.writerow([stage, f"{seconds:.6f}", f"{result.mean_ms(stage):.4f}"])
        mean_total = (
            result.total_seconds / result.frame_count * 1000.0
            if result.frame_count
            else 0.0
        )
        writer.writerow(["total", f"{result.total_seconds:.6f}", f"{mean_total:.4f}"])


def _write_metrics(path: Path, rows: list[tuple[str, float | None]]) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for name, value in rows:
            writer.writerow([name, "" if value is None else f"{value:.6f}"])


def _metric_rows(
    estimate, gt, lengths: list[float]
) -> list[tuple[str, float | None]]:
    try:
        errors = absolute_errors(estimate, gt)
    except DegenerateGeometryError:
        # straight initial segment; align over the full overlap instead
        errors = absolute_errors(estimate, gt, align_window_s=math.inf)
    rows: list[tuple[str, float | None]] = [
        ("rmse_m", float(np.sqrt(np.mean(errors * errors)))),
        ("mean_error_m", float(errors.mean())),
        ("std_error_m", float(errors.std())),
    ]
    rte = relative_translation_error(estimate, gt, lengths)
    for length in lengths:
        rows.append((f"rte_pct_{length:g}m", rte[length]))
    return rows


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _build_pipeline_config(args)
    seq = load_sequence(args.sequence)
    if args.frames is not None:
        if args.frames < 2:
            raise ValueError("--frames must be at least 2")
        seq = _truncate(seq, args.frames)
    result = run_pipeline(seq, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_tum(out / "estimate.tum", result.poses)
    _write_timing(out / "timing.csv", result)
    summary = f"{seq.name}: {result.frame_count} frames, tracker={cfg.tracker}, mode={cfg.mode}"
    if cfg.mode == "template":
        summary += (
            f", flow updates {result.flow_updates_accepted} accepted / "
            f"{result.flow_updates_rejected} rejected"
        )
    print(summary)
    if seq.ground_truth:
        try:
            rows = _metric_rows(result.poses, seq.ground_truth, args.lengths)
        except (AssociationError, DegenerateGeometryError) as exc:
            print(f"metrics skipped: {exc}")
        else:
            _write_metrics(out / "metrics.csv", rows)
            for name, value in rows:
                print(f"{name}: {'n/a' if value is None else f'{value:.4f}'}")
    else:
        print("no ground truth present; metrics.csv skipped")
    print(f"wrote {out / 'estimate.tum'}")
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    radii = PX4FLOW_RADII if args.search_radius is None else (args.search_radius,)
    rows, fit = bench_px4flow(radii=radii, n_pairs=args.frames, seed=args.seed)
    orb_rows: list = []
    ratio = None
    if args.search_radius is None:
        orb_rows, ratio = bench_orb(n_frames=args.frames, seed=args.seed)
    with open(out / "bench.csv", "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tracker", "setting", "ms_per_frame"])
        for row in rows + orb_rows:
            writer.writerow([row.tracker, row.setting, f"{row.ms_per_frame:.4f}"])
    with open(out / "fit.csv", "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tracker", "model", "c2", "c1", "c0", "r_squared", "max_min_ratio"])
        if fit is not None:
            writer.writerow(
                ["px4flow", "quadratic", f"{fit.c2:.6f}", f"{fit.c1:.6f}",
                 f"{fit.c0:.6f}", f"{fit.r_squared:.6f}", ""]
            )
        if orb_rows:
            mean_ms = sum(r.ms_per_frame for r in orb_rows) / len(orb_rows)
            writer.writerow(
                ["orb", "constant", "", "", f"{mean_ms:.6f}", "", f"{ratio:.6f}"]
            )
    for row in rows + orb_rows:
        print(f"{row.tracker} setting={row.setting}: {row.ms_per_frame:.3f} ms/frame")
    if fit is not None:
        print(
            f"px4flow quadratic fit: {fit.c2:.4f} r^2 + {fit.c1:.4f} r + "
            f"{fit.c0:.4f}, R2={fit.r_squared:.4f}"
        )
    if ratio is not None:
        print(f"orb max/min timing ratio across displacement caps: {ratio:.3f}")
    print(f"wrote {out / 'bench.csv'}")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    estimate = read_tum(args.estimate)
    gt = read_tum(args.ground_truth)
    rows = _metric_rows(estimate, gt, args.lengths)
    for name, value in rows:
        print(f"{name}: {'n/a' if value is None else f'{value:.4f}'}")
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_metrics(out / "metrics.csv", rows)
        print(f"wrote {out / 'metrics.csv'}")
    return 0


_PATHS = ("square", "out-and-back", "hover")


def _cmd_synth(args: argparse.Namespace) -> int:
    if args.path_shape == "square":
        waypoints = square_waypoints(args.side, args.height, args.duration)
    elif args.path_shape == "out-and-back":
        waypoints = out_and_back_waypoints(args.side, args.height, args.duration)
    else:
        waypoints = (
            Waypoint(0.0, 0.0, 0.0, 0.0, args.height),
            Waypoint(args.duration, 0.0, 0.0, 0.0, args.height),
        )
    cfg = SynthConfig(
        waypoints=waypoints,
        seed=args.seed,
        frame_rate=args.frame_rate,
        accel_noise_std=args.accel_noise,
        gyro_noise_std=args.gyro_noise,
        tof_noise_std=args.tof_noise,
    )
    seq = synth_generate(cfg)
    out = Path(args.out)
    save_sequence(out, seq)
    if args.spout:
        write_spout_tensors(seq, out / "spout")
    print(
        f"wrote {len(seq.frames)} frames, {len(seq.imu)} imu samples, "
        f"{len(seq.tof)} range samples to {out}"
    )
    return 0


def _add_lengths_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--lengths",
        type=float,
        nargs="+",
        default=list(DEFAULT_LENGTHS_M),
        help="sub-trajectory lengths in meters for relative error (default: 15 25 50)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="downvio",
        description="Downward-facing visual-inertial odometry toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="replay a sequence through the pipeline")
    run.add_argument("sequence", help="sequence directory")
    run.add_argument("--tracker", choices=("orb", "px4flow", "superpoint"))
    run.add_argument("--mode", choices=("template", "reference"))
    run.add_argument("--config", help="key=value config file with sections")
    run.add_argument("--out", default="out", help="output directory (default: out)")
    run.add_argument("--frames", type=int, help="process only the first N frames")
    run.add_argument("--seed", type=int, default=0, help=argparse.SUPPRESS)
    run.add_argument(
        "--search-radius", type=int, help="block-flow search radius override"
    )
    run.add_argument(
        "--max-displacement",
        type=float,
        help="drop matches moving farther than this many pixels",
    )
    _add_lengths_flag(run)
    run.set_defaults(func=_cmd_run)

    bench = sub.add_parser("bench", help="time the trackers on synthetic frames")
    bench.add_argument("--out", default="out", help="output directory (default: out)")
    bench.add_argument(
        "--frames", type=int, default=25, help="frame pairs per setting (default: 25)"
    )
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument(
        "--search-radius",
        type=int,
        help="bench a single px4flow radius instead of the full sweep",
    )
    bench.set_defaults(func=_cmd_bench)

    ev = sub.add_parser("evaluate", help="score an estimate against ground truth")
    ev.add_argument("estimate", help="estimated trajectory (TUM format)")
    ev.add_argument("ground_truth", help="reference trajectory (TUM format)")
    ev.add_argument("--out", help="also write metrics.csv into this directory")
    _add_lengths_flag(ev)
    ev.set_defaults(func=_cmd_evaluate)

    synth = sub.add_parser("synth", help="generate a synthetic sequence")
    synth.add_argument("out", help="output sequence directory")
    synth.add_argument("--path", dest="path_shape", choices=_PATHS, default="square")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--duration", type=float, default=60.0, help="seconds")
    synth.add_argument("--side", type=float, default=2.0, help="path extent in meters")
    synth.add_argument("--height", type=float, default=1.0, help="flight height in meters")
    synth.add_argument("--frame-rate", type=float, default=100.0, help="frames per second")
    synth.add_argument("--accel-noise", type=float, default=0.0, help="m/s^2 std dev")
    synth.add_argument("--gyro-noise", type=float, default=0.0, help="rad/s std dev")
    synth.add_argument("--tof-noise", type=float, default=0.0, help="meters std dev")
    synth.add_argument(
        "--spout", action="store_true", help="also write feature tensors for superpoint"
    )
    synth.set_defaults(func=_cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
