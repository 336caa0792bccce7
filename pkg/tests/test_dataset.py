import numpy as np
import pytest

from downvio.cfgfile import ConfigFormatError, config_floats, parse_config_text
from downvio.dataset import (
    DimensionMismatchError,
    MalformedFileError,
    NonMonotoneTimestampError,
    Sequence,
    frame_name,
    load_sequence,
    read_pgm,
    save_sequence,
    write_pgm,
)
from downvio.evaluation import StampedPose
from downvio.fusion import CameraIntrinsics, Extrinsics, ImuSample
from downvio.imgproc import Image8


def tiny_sequence(n_frames=3, width=32, height=24) -> Sequence:
    rng = np.random.default_rng(0)
    intr = CameraIntrinsics(50.0, 50.0, (width - 1) / 2, (height - 1) / 2, width, height)
    frames = [
        (0.1 * i, Image8(rng.integers(0, 256, (height, width), dtype=np.uint8)))
        for i in range(n_frames)
    ]
    imu = [
        ImuSample(0.01 * i, (0.1 * i, -0.2, 9.81), (0.0, 0.01, 0.3))
        for i in range(n_frames * 10)
    ]
    tof = [(0.15 * i, 1.0 + 0.01 * i) for i in range(n_frames)]
    gt = [StampedPose.planar(0.1 * i, 0.2 * i, 0.0, 1.0, 0.1 * i) for i in range(n_frames)]
    return Sequence(frames, imu, tof, gt, intr, Extrinsics.identity())


def test_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    img = Image8(rng.integers(0, 256, (24, 32), dtype=np.uint8))
    path = tmp_path / "f.pgm"
    write_pgm(path, img)
    back = read_pgm(path)
    assert np.array_equal(back.data, img.data)


def test_pgm_header_comment(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# made by hand\n2 2\n255\n\x01\x02\x03\x04")
    img = read_pgm(path)
    assert img.data.tolist() == [[1, 2], [3, 4]]


def test_pgm_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P2\n2 2\n255\n1 2 3 4\n")
    with pytest.raises(MalformedFileError):
        read_pgm(path)


def test_pgm_rejects_truncated_payload(tmp_path):
    path = tmp_path / "short.pgm"
    path.write_bytes(b"P5\n4 4\n255\n" + b"\x00" * 7)
    with pytest.raises(DimensionMismatchError):
        read_pgm(path)


def test_pgm_rejects_wide_maxval(tmp_path):
    path = tmp_path / "deep.pgm"
    path.write_bytes(b"P5\n2 2\n65535\n" + b"\x00" * 8)
    with pytest.raises(MalformedFileError):
        read_pgm(path)


def test_sequence_round_trip(tmp_path):
    seq = tiny_sequence()
    save_sequence(tmp_path, seq)
    back = load_sequence(tmp_path)
    assert len(back.frames) == 3
    for (ta, a), (tb, b) in zip(seq.frames, back.frames):
        assert tb == pytest.approx(ta, abs=1e-8)
        assert np.array_equal(a.data, b.data)
    assert len(back.imu) == len(seq.imu)
    assert back.imu[5].accel == pytest.approx(seq.imu[5].accel, abs=1e-8)
    assert back.imu[5].gyro == pytest.approx(seq.imu[5].gyro, abs=1e-8)
    assert back.tof[2][1] == pytest.approx(seq.tof[2][1], abs=1e-8)
    assert len(back.ground_truth) == 3
    assert back.ground_truth[2].yaw == pytest.approx(0.2, abs=1e-8)
    assert back.intrinsics == seq.intrinsics
    assert np.allclose(back.extrinsics.cam_from_imu, np.eye(4))
    assert back.spout_dir is None


def test_missing_ground_truth_tolerated(tmp_path):
    seq = tiny_sequence()
    seq.ground_truth = []
    save_sequence(tmp_path, seq)
    assert not (tmp_path / "groundtruth.txt").exists()
    back = load_sequence(tmp_path)
    assert back.ground_truth == []


def test_spout_dir_detected(tmp_path):
    save_sequence(tmp_path, tiny_sequence())
    (tmp_path / "spout").mkdir()
    assert load_sequence(tmp_path).spout_dir is not None


def test_repeated_imu_timestamp_rejected(tmp_path):
    save_sequence(tmp_path, tiny_sequence())
    lines = (tmp_path / "imu.csv").read_text().splitlines()
    lines[2] = lines[1]  # duplicate the first sample row
    (tmp_path / "imu.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(NonMonotoneTimestampError):
        load_sequence(tmp_path)


def test_frame_rate_jitter_rejected(tmp_path):
    seq = tiny_sequence(n_frames=5)
    seq.frames[3] = (seq.frames[3][0] + 0.02, seq.frames[3][1])
    save_sequence(tmp_path, seq)
    with pytest.raises(MalformedFileError, match="rate"):
        load_sequence(tmp_path)


def test_frame_dimension_mismatch_rejected(tmp_path):
    seq = tiny_sequence()
    save_sequence(tmp_path, seq)
    small = Image8(np.zeros((10, 12), dtype=np.uint8))
    write_pgm(tmp_path / "frames" / frame_name(1), small)
    with pytest.raises(DimensionMismatchError):
        load_sequence(tmp_path)


def test_malformed_csv_rejected(tmp_path):
    save_sequence(tmp_path, tiny_sequence())
    (tmp_path / "tof.csv").write_text("timestamp_s,range_m\n0.0,1.0,extra\n")
    with pytest.raises(MalformedFileError, match="columns"):
        load_sequence(tmp_path)


def test_calibration_missing_key_rejected(tmp_path):
    save_sequence(tmp_path, tiny_sequence())
    calib = (tmp_path / "calib.cfg").read_text().splitlines()
    calib = [line for line in calib if not line.startswith("fx=")]
    (tmp_path / "calib.cfg").write_text("\n".join(calib) + "\n")
    with pytest.raises(MalformedFileError, match="fx"):
        load_sequence(tmp_path)


def test_config_parser_sections_and_comments():
    text = "# top\na = 1\n[cam]\nfx = 2.5  # inline\n\nname=hello world\n"
    cfg = parse_config_text(text)
    assert cfg == {"a": "1", "cam.fx": "2.5", "cam.name": "hello world"}


def test_config_parser_rejects_bare_words():
    with pytest.raises(ConfigFormatError, match=":2:"):
        parse_config_text("a=1\nnonsense\n")


def test_config_floats_validation():
    cfg = {"m": "1 2 3"}
    assert config_floats(cfg, "m", 3) == [1.0, 2.0, 3.0]
    with pytest.raises(ConfigFormatError, match="needs 4"):
        config_floats(cfg, "m", 4)
    with pytest.raises(ConfigFormatError, match="missing"):
        config_floats(cfg, "absent", 1)
