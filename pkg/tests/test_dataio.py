import os

import numpy as np
import pytest

from aerokit.dataio import (
    ActionSequence,
    ImuStream,
    VideoClip,
    list_clip_dirs,
    load_clip,
    load_imu,
    read_report,
    resample_imu,
    save_clip,
    save_imu,
    write_report,
)
from aerokit.errors import (
    CoverageError,
    DataFormatError,
    FrameDimensionError,
    MetaParseError,
    MissingFrameError,
    SchemaError,
)


def make_clip(T=4, H=8, W=8, fps=30.0, seed=0):
    rng = np.random.default_rng(seed)
    frames = rng.integers(0, 256, size=(T, H, W, 3), dtype=np.uint8)
    return VideoClip(frames=frames, fps=fps, t0=0.0, meta={})


def make_imu(n=200, rate=200.0, t_start=-0.5, seed=1):
    rng = np.random.default_rng(seed)
    t = t_start + np.arange(n) / rate
    return ImuStream(
        t=t,
        accel=rng.normal(size=(n, 3)),
        gyro=rng.normal(size=(n, 3)),
        rate_hz=rate,
    )


def test_clip_roundtrip(tmp_path):
    clip = make_clip()
    d = tmp_path / "clip_000"
    save_clip(clip, d)
    back = load_clip(d)
    np.testing.assert_array_equal(back.frames, clip.frames)
    assert back.fps == clip.fps
    assert back.t0 == clip.t0


def test_clip_roundtrip_with_imu(tmp_path):
    clip = make_clip()
    imu = make_imu()
    d = tmp_path / "clip_001"
    save_clip(clip, d, imu=imu)
    back = load_imu(d / "imu.csv")
    np.testing.assert_array_equal(back.t, imu.t)  # repr floats restore exactly
    np.testing.assert_array_equal(back.accel, imu.accel)
    np.testing.assert_array_equal(back.gyro, imu.gyro)


def test_load_clip_missing_frame(tmp_path):
    clip = make_clip()
    d = tmp_path / "clip_002"
    save_clip(clip, d)
    (d / "frame_00002.rgb8").unlink()
    with pytest.raises(MissingFrameError):
        load_clip(d)


def test_load_clip_wrong_frame_size(tmp_path):
    clip = make_clip()
    d = tmp_path / "clip_003"
    save_clip(clip, d)
    (d / "frame_00001.rgb8").write_bytes(b"\x00" * 10)
    with pytest.raises(FrameDimensionError):
        load_clip(d)


def test_load_clip_bad_meta(tmp_path):
    clip = make_clip()
    d = tmp_path / "clip_004"
    save_clip(clip, d)
    (d / "meta").write_text("fps=30\n")  # missing required keys
    with pytest.raises(MetaParseError):
        load_clip(d)


def test_load_imu_bad_header(tmp_path):
    p = tmp_path / "imu.csv"
    p.write_text("time,ax,ay,az,wx,wy,wz\n0,0,0,0,0,0,0\n")
    with pytest.raises(DataFormatError):
        load_imu(p)


def test_imu_stream_requires_increasing_time():
    with pytest.raises(ValueError):
        ImuStream(
            t=np.array([0.0, 0.0, 1.0]),
            accel=np.zeros((3, 3)),
            gyro=np.zeros((3, 3)),
            rate_hz=10.0,
        )


def test_list_clip_dirs_sorted(tmp_path):
    for name in ["clip_010", "clip_002", "clip_007"]:
        save_clip(make_clip(), tmp_path / name)
    (tmp_path / "notes.txt").write_text("x\n")
    dirs = list_clip_dirs(tmp_path)
    assert [os.path.basename(d) for d in dirs] == ["clip_002", "clip_007", "clip_010"]


def test_resample_imu_window_means():
    # 200 Hz samples, 10 fps frames: each window holds 20 samples
    rate, fps, T = 200.0, 10.0, 5
    n = 300
    t = -0.5 + (np.arange(n) + 0.25) / rate
    accel = np.stack([t, t**2, np.ones_like(t)], axis=1)
    gyro = np.zeros((n, 3))
    stream = ImuStream(t=t, accel=accel, gyro=gyro, rate_hz=rate)
    out = resample_imu(stream, fps=fps, T=T, t0=0.0)
    assert out.actions.shape == (T, 6)
    for k in range(T):
        lo, hi = (k - 0.5) / fps, (k + 0.5) / fps
        mask = (t >= lo) & (t < hi)
        assert mask.sum() == 20
        assert out.actions[k, 0] == pytest.approx(t[mask].mean())
        assert out.actions[k, 1] == pytest.approx((t[mask] ** 2).mean())
        assert out.actions[k, 2] == pytest.approx(1.0)


def test_resample_imu_coverage_error():
    stream = make_imu(n=50, rate=200.0, t_start=0.0)
    with pytest.raises(CoverageError):
        resample_imu(stream, fps=30.0, T=33, t0=0.0)


def test_resample_imu_empty_window_interpolates():
    # 9 Hz IMU against 30 fps frames leaves some windows without samples
    rate, fps, T = 9.0, 30.0, 10
    n = 30
    t = -0.3 + np.arange(n) / rate
    accel = np.stack([np.sin(t), np.cos(t), t], axis=1)
    stream = ImuStream(t=t, accel=accel, gyro=np.zeros((n, 3)), rate_hz=rate)
    out = resample_imu(stream, fps=fps, T=T, t0=0.0)
    assert np.isfinite(out.actions).all()


def test_report_roundtrip(tmp_path):
    p = tmp_path / "report.json"
    payload = {
        "aas": {"per_axis": [0.5, 0.6, 0.7, 0.8, 0.9, 1.0], "mean": 0.75},
        "pcr": {"per_axis": [1, 1, 1, 1, 1, 1], "mean": 1.0},
        "flow_imu_r": None,
        "meta": {"seed": 7},
    }
    write_report(payload, p)
    again = tmp_path / "report2.json"
    write_report(read_report(p), again)
    assert p.read_bytes() == again.read_bytes()  # byte-stable round trip


def test_report_rejects_nan(tmp_path):
    p = tmp_path / "report.json"
    payload = {
        "aas": {"per_axis": [float("nan")] * 6, "mean": 0.0},
        "pcr": None,
        "flow_imu_r": None,
        "meta": {},
    }
    with pytest.raises(SchemaError):
        write_report(payload, p)


def test_report_rejects_wrong_axis_count(tmp_path):
    p = tmp_path / "report.json"
    payload = {
        "aas": {"per_axis": [0.5] * 5, "mean": 0.5},
        "pcr": None,
        "flow_imu_r": None,
        "meta": {},
    }
    with pytest.raises(SchemaError):
        write_report(payload, p)


def test_action_sequence_validation():
    with pytest.raises(ValueError):
        ActionSequence(actions=np.full((4, 6), np.nan), fps=30.0)
