"""Sequence directory ingestion and emission.

A sequence directory holds:
  frames/<10-digit index>.pgm   binary 8-bit PGM frames
  frames.csv                    index, timestamp_s
  imu.csv                       timestamp_s, ax, ay, az, gx, gy, gz
  tof.csv                       timestamp_s, range_m
  groundtruth.txt               TUM poses (optional)
  calib.cfg                     fx, fy, cx, cy, width, height,
                                cam_from_imu / cam_from_tof (16 values each)
  spout/                        optional per-frame feature tensors
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cfgfile import ConfigFormatError, config_floats, read_config
from .evaluation import StampedPose, read_tum, write_tum
from .fusion import CameraIntrinsics, Extrinsics, ImuSample
from .imgproc import Image8

RATE_TOLERANCE = 0.01


class MalformedFileError(ValueError):
    """A sequence file that cannot be parsed or breaks a rate invariant."""


class NonMonotoneTimestampError(ValueError):
    """A stream whose timestamps fail to increase strictly."""


class DimensionMismatchError(ValueError):
    """Frame dimensions disagreeing with the calibration."""


@dataclass
class Sequence:
    """All sensor streams of one recording, each time-sorted."""

    frames: list[tuple[float, Image8]]
    imu: list[ImuSample]
    tof: list[tuple[float, float]]
    ground_truth: list[StampedPose]
    intrinsics: CameraIntrinsics
    extrinsics: Extrinsics
    spout_dir: Path | None = None
    name: str = "sequence"


def frame_name(index: int) -> str:
    return f"{index:010d}.pgm"


def read_pgm(path: str | Path) -> Image8:
    """Read a binary (P5) 8-bit PGM file."""
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4 and pos < len(data):
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if pos > start:
            tokens.append(data[start:pos])
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise MalformedFileError(f"{path}: not a binary PGM (P5) file")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise MalformedFileError(f"{path}: non-numeric PGM header") from None
    if maxval != 255:
        raise MalformedFileError(f"{path}: only 8-bit PGM supported, maxval {maxval}")
    pos += 1  # single whitespace after maxval
    payload = data[pos : pos + width * height]
    if len(payload) != width * height:
        raise DimensionMismatchError(
            f"{path}: payload holds {len(payload)} bytes, header says {width * height}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return Image8(pixels.copy())


def write_pgm(path: str | Path, img: Image8) -> None:
    h, w = img.data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.data.tobytes())


def _read_csv_rows(path: Path, columns: int) -> list[list[float]]:
    rows: list[list[float]] = []
    with open(path, "r", encoding="ascii", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not row[0].strip():
                continue
            first = row[0].strip()
            if lineno == 1 and not first.lstrip("+-").replace(".", "", 1).isdigit():
                continue  # header
            if len(row) != columns:
                raise MalformedFileError(
                    f"{path}:{lineno}: expected {columns} columns, got {len(row)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise MalformedFileError(f"{path}:{lineno}: {exc}") from None
    return rows


def _check_monotone(times: list[float], what: str) -> None:
    for i in range(1, len(times)):
        if times[i] <= times[i - 1]:
            raise NonMonotoneTimestampError(
                f"{what}: timestamp {times[i]:.6f} at row {i + 1} does not "
                f"increase past {times[i - 1]:.6f}"
            )


def _check_rate(times: list[float], what: str) -> None:
    if len(times) < 3:
        return
    dts = np.diff(np.asarray(times))
    ref = float(np.median(dts))
    if ref <= 0 or float(np.max(np.abs(dts - ref))) > RATE_TOLERANCE * ref:
        raise MalformedFileError(f"{what}: sample rate varies by more than 1%")


def read_calibration(path: str | Path) -> tuple[CameraIntrinsics, Extrinsics]:
    try:
        cfg = read_config(path)
        fx, fy, cx, cy = (config_floats(cfg, k, 1)[0] for k in ("fx", "fy", "cx", "cy"))
        width = int(config_floats(cfg, "width", 1)[0])
        height = int(config_floats(cfg, "height", 1)[0])
        cam_from_imu = np.array(config_floats(cfg, "cam_from_imu", 16)).reshape(4, 4)
        cam_from_tof = np.array(config_floats(cfg, "cam_from_tof", 16)).reshape(4, 4)
    except ConfigFormatError as exc:
        raise MalformedFileError(f"{path}: {exc}") from None
    intr = CameraIntrinsics(fx, fy, cx, cy, width, height)
    return intr, Extrinsics(cam_from_imu, cam_from_tof)


def write_calibration(path: str | Path, intr: CameraIntrinsics, ext: Extrinsics) -> None:
    def flat(m: np.ndarray) -> str:
        return " ".join(f"{v:.12g}" for v in np.asarray(m).ravel())

    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"fx={intr.fx:.12g}\nfy={intr.fy:.12g}\n")
        fh.write(f"cx={intr.cx:.12g}\ncy={intr.cy:.12g}\n")
        fh.write(f"width={intr.width}\nheight={intr.height}\n")
        fh.write(f"cam_from_imu={flat(ext.cam_from_imu)}\n")
        fh.write(f"cam_from_tof={flat(ext.cam_from_tof)}\n")


def load_sequence(path: str | Path) -> Sequence:
    """Load and validate a sequence directory; ground truth is optional."""
    root = Path(path)
    intr, ext = read_calibration(root / "calib.cfg")

    frame_rows = _read_csv_rows(root / "frames.csv", 2)
    _check_monotone([r[1] for r in frame_rows], "frames.csv")
    _check_rate([r[1] for r in frame_rows], "frames.csv")
    frames: list[tuple[float, Image8]] = []
    for idx, t in frame_rows:
        img = read_pgm(root / "frames" / frame_name(int(idx)))
        h, w = img.data.shape
        if (w, h) != (intr.width, intr.height):
            raise DimensionMismatchError(
                f"frame {int(idx)}: {w}x{h} does not match calibration "
                f"{intr.width}x{intr.height}"
            )
        frames.append((float(t), img))

    imu_rows = _read_csv_rows(root / "imu.csv", 7)
    _check_monotone([r[0] for r in imu_rows], "imu.csv")
    _check_rate([r[0] for r in imu_rows], "imu.csv")
    imu = [ImuSample(r[0], tuple(r[1:4]), tuple(r[4:7])) for r in imu_rows]

    tof_rows = _read_csv_rows(root / "tof.csv", 2)
    _check_monotone([r[0] for r in tof_rows], "tof.csv")
    tof = [(r[0], r[1]) for r in tof_rows]

    gt_path = root / "groundtruth.txt"
    ground_truth = read_tum(gt_path) if gt_path.exists() else []

    spout = root / "spout"
    return Sequence(
        frames=frames,
        imu=imu,
        tof=tof,
        ground_truth=ground_truth,
        intrinsics=intr,
        extrinsics=ext,
        spout_dir=spout if spout.is_dir() else None,
        name=root.name,
    )


def save_sequence(path: str | Path, seq: Sequence) -> None:
    root = Path(path)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    write_calibration(root / "calib.cfg", seq.intrinsics, seq.extrinsics)
    with open(root / "frames.csv", "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "timestamp_s"])
        for i, (t, img) in enumerate(seq.frames):
            writer.writerow([i, f"{t:.9f}"])
            write_pgm(root / "frames" / frame_name(i), img)
    with open(root / "imu.csv", "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp_s", "ax", "ay", "az", "gx", "gy", "gz"])
        for s in seq.imu:
            writer.writerow(
                [f"{s.timestamp:.9f}"]
                + [f"{v:.9f}" for v in s.accel]
                + [f"{v:.9f}" for v in s.gyro]
            )
    with open(root / "tof.csv", "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp_s", "range_m"])
        for t, r in seq.tof:
            writer.writerow([f"{t:.9f}", f"{r:.9f}"])
    if seq.ground_truth:
        write_tum(root / "groundtruth.txt", seq.ground_truth)
