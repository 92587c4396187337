"""Clip and IMU I/O: the on-disk clip format shared by every pipeline stage.

A clip directory holds:
    meta            UTF-8 key=value lines (fps, t0, width, height, frames, ...)
    frame_%05d.rgb8 raw row-major H*W*3 uint8 per frame (lossless; .png accepted)
    imu.csv         header ``t,ax,ay,az,wx,wy,wz``, one row per raw sample

All containers are immutable after construction and loaders are reentrant.
"""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CoverageError,
    FrameDimensionError,
    MetaParseError,
    MissingFrameError,
    SchemaError,
)

AXIS_NAMES = ("ax", "ay", "az", "wx", "wy", "wz")
IMU_CSV_HEADER = "t,ax,ay,az,wx,wy,wz"

_FRAME_RE = re.compile(r"^frame_(\d{5})\.(rgb8|png)$")


@dataclass(frozen=True)
class VideoClip:
    """T*H*W*3 uint8 RGB frames plus timing."""

    frames: np.ndarray
    fps: float
    t0: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 4 or f.shape[3] != 3 or f.dtype != np.uint8:
            raise FrameDimensionError(f"frames must be T*H*W*3 uint8, got {f.shape} {f.dtype}")
        if f.shape[0] < 2:
            raise FrameDimensionError(f"clip needs at least 2 frames, got {f.shape[0]}")
        if not self.fps > 0:
            raise MetaParseError(f"fps must be positive, got {self.fps}")
        object.__setattr__(self, "frames", f)

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def height(self):
        return self.frames.shape[1]

    @property
    def width(self):
        return self.frames.shape[2]


@dataclass(frozen=True)
class ImuStream:
    """Raw inertial samples: timestamps (N,), accel (N,3) m/s^2, gyro (N,3) rad/s."""

    t: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray
    rate_hz: float

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64)
        a = np.asarray(self.accel, dtype=np.float64)
        w = np.asarray(self.gyro, dtype=np.float64)
        if t.ndim != 1 or a.shape != (t.size, 3) or w.shape != (t.size, 3):
            raise ValueError(f"inconsistent stream shapes: t{t.shape} a{a.shape} w{w.shape}")
        if t.size and np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(a)) and np.all(np.isfinite(w))):
            raise ValueError("stream contains non-finite values")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "accel", a)
        object.__setattr__(self, "gyro", w)

    def __len__(self):
        return self.t.size


@dataclass(frozen=True)
class ActionSequence:
    """Per-frame 6-DoF command matrix, columns (ax, ay, az, wx, wy, wz)."""

    actions: np.ndarray
    fps: float

    def __post_init__(self):
        a = np.asarray(self.actions, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != 6:
            raise ValueError(f"actions must be T*6, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("actions contain non-finite values")
        object.__setattr__(self, "actions", a)

    def __len__(self):
        return self.actions.shape[0]


# ---------------------------------------------------------------------------
# clip directories


def _parse_meta(path):
    meta = {}
    try:
        text = open(path, encoding="utf-8").read()
    except OSError as e:
        raise MetaParseError(f"cannot read meta: {e}") from e
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise MetaParseError(f"meta line {lineno} is not key=value: {line!r}")
        key, val = line.split("=", 1)
        meta[key.strip()] = val.strip()
    for key in ("fps", "t0", "width", "height", "frames"):
        if key not in meta:
            raise MetaParseError(f"meta missing required key {key!r}")
    try:
        meta["fps"] = float(meta["fps"])
        meta["t0"] = float(meta["t0"])
        meta["width"] = int(meta["width"])
        meta["height"] = int(meta["height"])
        meta["frames"] = int(meta["frames"])
    except ValueError as e:
        raise MetaParseError(f"meta value unparseable: {e}") from e
    return meta


def _read_frame(path, height, width):
    if path.endswith(".rgb8"):
        raw = np.fromfile(path, dtype=np.uint8)
        if raw.size != height * width * 3:
            raise FrameDimensionError(
                f"{os.path.basename(path)}: {raw.size} bytes, expected {height * width * 3}"
            )
        return raw.reshape(height, width, 3)
    from PIL import Image

    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)
    if img.shape != (height, width, 3):
        raise FrameDimensionError(
            f"{os.path.basename(path)}: {img.shape[:2]}, expected {(height, width)}"
        )
    return img


def load_clip(path):
    """Load a clip directory into a :class:`VideoClip`."""
    meta_path = os.path.join(path, "meta")
    if not os.path.exists(meta_path):
        raise MetaParseError(f"no meta file in {path}")
    meta = _parse_meta(meta_path)
    T, H, W = meta["frames"], meta["height"], meta["width"]

    by_index = {}
    for name in os.listdir(path):
        m = _FRAME_RE.match(name)
        if m:
            by_index[int(m.group(1))] = os.path.join(path, name)
    missing = [i for i in range(T) if i not in by_index]
    if missing:
        raise MissingFrameError(f"{path}: missing frame indices {missing[:8]} (of {T})")

    frames = np.empty((T, H, W, 3), dtype=np.uint8)
    for i in range(T):
        frames[i] = _read_frame(by_index[i], H, W)
    extra = {k: v for k, v in meta.items() if k not in ("fps", "t0", "width", "height", "frames")}
    return VideoClip(frames=frames, fps=meta["fps"], t0=meta["t0"], meta=extra)


def save_clip(clip, path, imu=None, extra_meta=None):
    """Write a clip (and optionally its raw IMU stream) in the directory format."""
    os.makedirs(path, exist_ok=True)
    lines = [
        f"fps={clip.fps!r}",
        f"t0={clip.t0!r}",
        f"width={clip.width}",
        f"height={clip.height}",
        f"frames={clip.num_frames}",
    ]
    merged = dict(clip.meta)
    if extra_meta:
        merged.update(extra_meta)
    for key in sorted(merged):
        lines.append(f"{key}={merged[key]}")
    with open(os.path.join(path, "meta"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    for i in range(clip.num_frames):
        clip.frames[i].tofile(os.path.join(path, f"frame_{i:05d}.rgb8"))
    if imu is not None:
        save_imu(imu, os.path.join(path, "imu.csv"))


def load_imu(path, rate_hz=None):
    """Read ``imu.csv`` (pass a clip directory or the csv path directly)."""
    if os.path.isdir(path):
        path = os.path.join(path, "imu.csv")
    if not os.path.exists(path):
        raise MetaParseError(f"no imu.csv at {path}")
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != IMU_CSV_HEADER:
            raise MetaParseError(f"imu.csv header {header!r}, expected {IMU_CSV_HEADER!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2, dtype=np.float64)
    if data.size == 0:
        raise MetaParseError("imu.csv has no samples")
    if data.shape[1] != 7:
        raise MetaParseError(f"imu.csv rows have {data.shape[1]} columns, expected 7")
    t = data[:, 0]
    if rate_hz is None:
        dt = np.diff(t)
        rate_hz = 1.0 / float(np.median(dt)) if dt.size else 0.0
    return ImuStream(t=t, accel=data[:, 1:4], gyro=data[:, 4:7], rate_hz=rate_hz)


def save_imu(stream, path):
    rows = np.column_stack([stream.t, stream.accel, stream.gyro])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(IMU_CSV_HEADER + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def list_clip_dirs(root):
    """Sorted clip subdirectories of a dataset root (deterministic order)."""
    dirs = []
    for name in sorted(os.listdir(root)):
        p = os.path.join(root, name)
        if os.path.isdir(p) and os.path.exists(os.path.join(p, "meta")):
            dirs.append(p)
    return dirs


# ---------------------------------------------------------------------------
# IMU -> frame alignment


def resample_imu(stream, fps, T, t0):
    """Average raw samples into per-frame actions on centered one-frame windows.

    Row t is the mean of all samples with timestamp in
    [t0 + (t - 1/2)/fps, t0 + (t + 1/2)/fps); empty windows fall back to
    linear interpolation at the frame instant (tolerates sensor dropouts).
    Centered averaging suppresses high-rate jitter and is linear in the input.
    """
    if len(stream) == 0:
        raise CoverageError("empty IMU stream")
    lo = t0 - 0.5 / fps
    hi = t0 + (T - 0.5) / fps
    slack = 1e-9
    if stream.t[0] > lo + slack or stream.t[-1] < hi - slack:
        raise CoverageError(
            f"stream [{stream.t[0]:.6f}, {stream.t[-1]:.6f}] does not span "
            f"required [{lo:.6f}, {hi:.6f}]"
        )

    values = np.hstack([stream.accel, stream.gyro])  # (N, 6)
    edges = t0 + (np.arange(T + 1) - 0.5) / fps
    idx = np.searchsorted(stream.t, edges, side="left")
    out = np.empty((T, 6), dtype=np.float64)
    centers = t0 + np.arange(T) / fps
    for t in range(T):
        a, b = idx[t], idx[t + 1]
        if b > a:
            out[t] = values[a:b].mean(axis=0)
        else:
            for j in range(6):
                out[t, j] = np.interp(centers[t], stream.t, values[:, j])
    return ActionSequence(actions=out, fps=fps)


# ---------------------------------------------------------------------------
# metrics reports

_REPORT_SECTIONS = ("aas", "pcr", "flow_imu_r")


def _validate_report_dict(d):
    if not isinstance(d, dict):
        raise SchemaError("report must be a JSON object")
    for key in _REPORT_SECTIONS:
        if key not in d:
            raise SchemaError(f"report missing section {key!r}")
        sec = d[key]
        if sec is None:
            continue
        if not isinstance(sec, dict) or "per_axis" not in sec or "mean" not in sec:
            raise SchemaError(f"section {key!r} must be null or have per_axis/mean")
        per_axis = sec["per_axis"]
        if len(per_axis) != 6:
            raise SchemaError(f"section {key!r} per_axis must have 6 entries")
        vals = [float(v) for v in per_axis] + [float(sec["mean"])]
        if not all(math.isfinite(v) for v in vals):
            raise SchemaError(f"section {key!r} contains non-finite values")
    return d


def write_report(report, path):
    """Serialize a metrics report (object with ``to_dict`` or plain dict) as JSON.

    Refuses non-finite values; output bytes are deterministic for identical input.
    """
    d = report.to_dict() if hasattr(report, "to_dict") else dict(report)
    _validate_report_dict(d)
    text = json.dumps(d, indent=2, sort_keys=True) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def read_report(path):
    if not os.path.exists(path):
        from .errors import MissingArtifactError

        raise MissingArtifactError(f"no report at {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as e:
            raise SchemaError(f"report is not valid JSON: {e}") from e
    return _validate_report_dict(d)
