"""Synthetic aerial footage with analytic inertial ground truth.

A camera flies a smooth 6-DoF trajectory above an infinite textured ground
plane at z=0 (world z points up). Positions are cubic splines; orientations
are cubic splines of quaternion components, normalized at evaluation time so
angular velocity has a closed form. Body-frame acceleration excludes gravity:
trajectories act as gravity-compensated commands, which makes hover the exact
zero of the action space.

The texture is stateless value noise (hashed integer lattice, smoothstep
interpolation, several octaves), so any frame can be rendered independently
and bit-identically from (trajectory, scene, frame index) alone. A mild
atmospheric extinction term ties image brightness to viewing geometry, which
keeps attitude and altitude visible in the footage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .dataio import ActionSequence, ImuStream, VideoClip

GRAVITY = 9.81  # sets the tilt-per-acceleration scale; never added to actions

# camera mount: optical axis along body -z (straight down when level),
# image x along body x, image y along body -y
R_MOUNT = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])


# ---------------------------------------------------------------------------
# quaternion helpers, scalar-first (w, x, y, z)


def quat_mul(a, b):
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q):
    out = np.array(q, dtype=np.float64, copy=True)
    out[..., 1:] *= -1.0
    return out


def quat_to_matrix(q):
    """Unit quaternion(s) to rotation matrices mapping body to world."""
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def quat_from_euler(roll, pitch, yaw):
    """Intrinsic z-y-x rotation; inputs broadcast, output (..., 4)."""
    roll, pitch, yaw = np.broadcast_arrays(roll, pitch, yaw)
    hr, hp, hy = np.asarray(roll) / 2, np.asarray(pitch) / 2, np.asarray(yaw) / 2
    cr, sr = np.cos(hr), np.sin(hr)
    cp, sp = np.cos(hp), np.sin(hp)
    cy, sy = np.cos(hy), np.sin(hy)
    return np.stack(
        [
            cy * cp * cr + sy * sp * sr,
            cy * cp * sr - sy * sp * cr,
            cy * sp * cr + sy * cp * sr,
            sy * cp * cr - cy * sp * sr,
        ],
        axis=-1,
    )


# ---------------------------------------------------------------------------
# trajectory


@dataclass(frozen=True)
class Trajectory:
    """Smooth 6-DoF pose: spline position plus normalized quaternion spline."""

    pos_spline: CubicSpline
    quat_spline: CubicSpline
    t_min: float
    t_max: float
    _vel: CubicSpline = field(init=False, repr=False)
    _acc: CubicSpline = field(init=False, repr=False)
    _qdot: CubicSpline = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_vel", self.pos_spline.derivative(1))
        object.__setattr__(self, "_acc", self.pos_spline.derivative(2))
        object.__setattr__(self, "_qdot", self.quat_spline.derivative(1))

    @property
    def duration(self):
        return self.t_max - self.t_min

    def _check_domain(self, t):
        t = np.asarray(t, dtype=np.float64)
        if t.size and (t.min() < self.t_min - 1e-9 or t.max() > self.t_max + 1e-9):
            raise ValueError(
                f"time outside trajectory domain [{self.t_min}, {self.t_max}]"
            )
        return t

    def position(self, t):
        return self.pos_spline(self._check_domain(t))

    def velocity(self, t):
        return self._vel(self._check_domain(t))

    def accel_world(self, t):
        return self._acc(self._check_domain(t))

    def quat(self, t):
        s = self.quat_spline(self._check_domain(t))
        return s / np.linalg.norm(s, axis=-1, keepdims=True)

    def quat_dot(self, t):
        # d/dt of s/|s|: sdot/|s| - s (s.sdot)/|s|^3
        t = self._check_domain(t)
        s = self.quat_spline(t)
        sdot = self._qdot(t)
        n = np.linalg.norm(s, axis=-1, keepdims=True)
        return sdot / n - s * (s * sdot).sum(axis=-1, keepdims=True) / n**3

    def rotation(self, t):
        return quat_to_matrix(self.quat(t))

    def angular_velocity_body(self, t):
        q = self.quat(t)
        qdot = self.quat_dot(t)
        return 2.0 * quat_mul(quat_conj(q), qdot)[..., 1:]

    def accel_body(self, t):
        """Body-frame translational acceleration; gravity excluded."""
        a = self.accel_world(t)
        R = self.rotation(t)
        return np.einsum("...ji,...j->...i", R, a)


def trajectory_from_knots(times, positions, quats):
    """Spline through pose knots; quaternion signs are made continuous first."""
    times = np.asarray(times, dtype=np.float64)
    positions = np.asarray(positions, dtype=np.float64)
    quats = np.array(quats, dtype=np.float64, copy=True)
    if times.ndim != 1 or len(times) < 4:
        raise ValueError("need at least 4 knots")
    if positions.shape != (len(times), 3) or quats.shape != (len(times), 4):
        raise ValueError("knot array shapes do not match times")
    for i in range(1, len(quats)):
        if np.dot(quats[i], quats[i - 1]) < 0:
            quats[i] *= -1.0
    return Trajectory(
        pos_spline=CubicSpline(times, positions, axis=0),
        quat_spline=CubicSpline(times, quats, axis=0),
        t_min=float(times[0]),
        t_max=float(times[-1]),
    )


def hover_trajectory(duration, altitude=10.0, margin=0.5):
    """Constant pose: the exact zero of the action space."""
    times = np.linspace(-margin, duration + margin, 8)
    positions = np.tile([0.0, 0.0, altitude], (len(times), 1))
    quats = np.tile([1.0, 0.0, 0.0, 0.0], (len(times), 1))
    return trajectory_from_knots(times, positions, quats)


def _sum_of_sinusoids(
    rng, times, amplitude, n_components=3, f_lo=0.05, f_hi=0.35, return_accel=False
):
    out = np.zeros_like(times)
    acc = np.zeros_like(times)
    for _ in range(n_components):
        a = amplitude * rng.uniform(0.3, 1.0) / n_components
        w = 2.0 * math.pi * rng.uniform(f_lo, f_hi)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        s = np.sin(w * times + phase)
        out += a * s
        acc += -a * w * w * s
    if return_accel:
        return out, acc
    return out


def _as_limits(v):
    arr = np.asarray(v, dtype=np.float64)
    if arr.shape == ():
        arr = np.full(3, float(arr))
    if arr.shape != (3,) or (arr < 0).any():
        raise ValueError(f"limits must be a nonnegative scalar or 3-vector, got {v!r}")
    return arr


def sample_trajectory(
    seed,
    duration,
    accel_limit=5.0,
    omega_limit=1.5,
    altitude=10.0,
    margin=0.5,
    max_attempts=60,
):
    """Draw a smooth random trajectory whose analytic |α|, |ω| respect limits.

    Amplitudes are resampled (and progressively shrunk) until a dense scan of
    the analytic signals satisfies the limits; deterministic per seed. Limits
    of all zero request hover.
    """
    accel_limit = _as_limits(accel_limit)
    omega_limit = _as_limits(omega_limit)
    if duration <= 0:
        raise ValueError("duration must be positive")
    if not accel_limit.any() and not omega_limit.any():
        return hover_trajectory(duration, altitude=altitude, margin=margin)

    rng = np.random.default_rng(seed)
    knot_dt = 0.1
    span = duration + 2 * margin
    # exact-span grid: the last knot must not fall short of duration + margin,
    # or the validation scan (and callers) would step off the spline domain
    n_knots = max(4, int(round(span / knot_dt)) + 1)
    times = np.linspace(-margin, duration + margin, n_knots)
    dense = np.linspace(-margin, duration + margin, 2000)
    base_pos_amp = np.array([3.6, 3.6, 1.4])
    yaw_amp = 1.0  # rad
    wobble_amp = 0.04  # rad, attitude wobble on top of the tilt law
    tilt_max = 0.5  # rad, keeps the ground plane well inside the view

    for attempt in range(max_attempts):
        shrink = 0.85**attempt
        parts = [
            _sum_of_sinusoids(
                rng, times, base_pos_amp[j] * shrink, return_accel=True
            )
            for j in range(3)
        ]
        pos = np.stack([p for p, _ in parts], axis=1)
        acc = np.stack([a for _, a in parts], axis=1)
        pos[:, 2] += altitude
        yaw = _sum_of_sinusoids(rng, times, yaw_amp * shrink)
        # multirotor attitude law: horizontal acceleration comes from tilting
        # the thrust axis, so roll and pitch track the commanded acceleration
        # (expressed in the yaw frame) plus a small independent wobble
        cy, sy = np.cos(yaw), np.sin(yaw)
        abx = cy * acc[:, 0] + sy * acc[:, 1]
        aby = -sy * acc[:, 0] + cy * acc[:, 1]
        pitch = np.clip(abx / GRAVITY, -tilt_max, tilt_max)
        pitch = pitch + _sum_of_sinusoids(rng, times, wobble_amp * shrink)
        roll = np.clip(-aby / GRAVITY, -tilt_max, tilt_max)
        roll = roll + _sum_of_sinusoids(rng, times, wobble_amp * shrink)
        quats = quat_from_euler(roll, pitch, yaw)
        traj = trajectory_from_knots(times, pos, quats)
        a = np.abs(traj.accel_body(dense))
        w = np.abs(traj.angular_velocity_body(dense))
        ok = True
        for j in range(3):
            if accel_limit[j] > 0 and a[:, j].max() > accel_limit[j]:
                ok = False
            if accel_limit[j] == 0 and a[:, j].max() > 1e-9:
                ok = False
            if omega_limit[j] > 0 and w[:, j].max() > omega_limit[j]:
                ok = False
            if omega_limit[j] == 0 and w[:, j].max() > 1e-9:
                ok = False
        if ok and traj.position(dense)[:, 2].min() > 1.0:
            return traj
    raise RuntimeError(f"no trajectory satisfied limits after {max_attempts} attempts")


# ---------------------------------------------------------------------------
# inertial ground truth


def imu_from_trajectory(traj, fps, T, t0=0.0):
    """Per-frame actions (ax, ay, az, wx, wy, wz) at the frame centers."""
    if T < 1:
        raise ValueError("T must be >= 1")
    t_end = t0 + (T - 1) / fps
    if t_end > traj.t_max + 1e-9 or t0 < traj.t_min - 1e-9:
        raise ValueError(
            f"trajectory [{traj.t_min}, {traj.t_max}] too short for {T} frames at {fps} fps"
        )
    t = t0 + np.arange(T) / fps
    actions = np.concatenate(
        [traj.accel_body(t), traj.angular_velocity_body(t)], axis=1
    )
    return ActionSequence(actions=actions, fps=float(fps))


def imu_stream_from_trajectory(traj, rate_hz, t_start, t_end):
    """Dense inertial samples, e.g. for writing an imu.csv alongside frames."""
    if t_start >= t_end:
        raise ValueError("empty time span")
    n = int(math.floor((t_end - t_start) * rate_hz)) + 1
    t = t_start + np.arange(n) / rate_hz
    t = t[t <= min(t_end, traj.t_max) + 1e-12]
    return ImuStream(
        t=t,
        accel=traj.accel_body(t),
        gyro=traj.angular_velocity_body(t),
        rate_hz=float(rate_hz),
    )


# ---------------------------------------------------------------------------
# mirror augmentation
#
# Flipping frames along an image axis shows the same flight through a mirrored
# world (the noise-texture ensemble is reflection symmetric), so a flipped
# clip is a valid sample whose actions pick up fixed signs. With the mount
# used here image u is body +x and image v is body -y; reflecting a body axis
# negates that accel component and, omega being a pseudovector, negates the
# two OTHER angular components.

_MIRROR_U_SIGNS = np.array([-1.0, 1.0, 1.0, 1.0, -1.0, -1.0])
_MIRROR_V_SIGNS = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0])


def mirror_clip(clip, mirror_u=False, mirror_v=False):
    """Flip frames along image axes: u is width, v is height."""
    frames = clip.frames
    if mirror_u:
        frames = frames[:, :, ::-1]
    if mirror_v:
        frames = frames[:, ::-1]
    return VideoClip(
        frames=np.ascontiguousarray(frames),
        fps=clip.fps,
        t0=clip.t0,
        meta=dict(clip.meta),
    )


def mirror_actions(seq, mirror_u=False, mirror_v=False):
    """Action transform matching mirror_clip on the rendered footage."""
    a = seq.actions.copy()
    if mirror_u:
        a *= _MIRROR_U_SIGNS
    if mirror_v:
        a *= _MIRROR_V_SIGNS
    return ActionSequence(actions=a, fps=seq.fps)


# ---------------------------------------------------------------------------
# procedural texture: hashed-lattice value noise


_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def _hash01(ix, iy, seed):
    """Stateless lattice hash to [0, 1); splitmix64-style finalizer."""
    ix, iy = np.broadcast_arrays(ix, iy)
    h = ix.astype(np.int64).view(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
    h = h + iy.astype(np.int64).view(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
    h += np.uint64((seed * 0xD6E8FEB86659FD93) & 0xFFFFFFFFFFFFFFFF)
    h = (h ^ (h >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    h = (h ^ (h >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    h ^= h >> np.uint64(31)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def value_noise(x, y, seed, octaves=4, scale=4.0):
    """Multi-octave smoothstep value noise over world (x, y); output in [0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    total = np.zeros(np.broadcast(x, y).shape)
    norm = 0.0
    for o in range(octaves):
        freq = (2.0**o) / scale
        amp = 0.5**o
        fx = x * freq
        fy = y * freq
        ix = np.floor(fx)
        iy = np.floor(fy)
        tx = fx - ix
        ty = fy - iy
        ix = ix.astype(np.int64)
        iy = iy.astype(np.int64)
        oseed = (seed * 1000003 + o) & 0xFFFFFFFFFFFFFFFF
        v00 = _hash01(ix, iy, oseed)
        v10 = _hash01(ix + 1, iy, oseed)
        v01 = _hash01(ix, iy + 1, oseed)
        v11 = _hash01(ix + 1, iy + 1, oseed)
        sx = tx * tx * (3.0 - 2.0 * tx)
        sy = ty * ty * (3.0 - 2.0 * ty)
        top = v00 + (v10 - v00) * sx
        bot = v01 + (v11 - v01) * sx
        total += amp * (top + (bot - top) * sy)
        norm += amp
    return total / norm


# ---------------------------------------------------------------------------
# rendering


@dataclass(frozen=True)
class SceneConfig:
    """Texture, pinhole-camera, and atmosphere parameters."""

    seed: int
    height: int = 64
    width: int = 64
    focal: float | None = None  # px; default 0.866*width (60 deg horizontal fov)
    octaves: int = 3
    scale: float = 2.0  # meters per base noise period
    haze: float = 0.10  # 1/m extinction; brightness falls with ray length

    def __post_init__(self):
        if self.height < 16 or self.width < 16:
            raise ValueError("image dims must be >= 16")
        if self.focal is not None and self.focal <= 0:
            raise ValueError("focal must be positive")
        if self.octaves < 1:
            raise ValueError("octaves must be >= 1")
        if self.haze < 0:
            raise ValueError("haze must be >= 0")

    @property
    def focal_px(self):
        return self.focal if self.focal is not None else 0.866 * self.width

    def pixel_rays(self):
        """Unit-focal camera-frame ray directions, shape (3, H*W)."""
        u = (np.arange(self.width) + 0.5 - self.width / 2.0) / self.focal_px
        v = (np.arange(self.height) + 0.5 - self.height / 2.0) / self.focal_px
        uu, vv = np.meshgrid(u, v)
        return np.stack([uu.ravel(), vv.ravel(), np.ones(uu.size)])


def render_frame(traj, scene, t):
    """Render one H*W*3 uint8 frame at time t by ray-plane intersection.

    Atmospheric extinction dims each pixel by exp(-haze * ray length), so an
    oblique view carries a brightness gradient toward the far side and the
    overall level tracks altitude. Both cues are linear in the pixels, which
    keeps them legible after aggressive downstream pooling.
    """
    p = traj.position(t)
    if p[2] <= 0.0:
        raise ValueError(f"camera at or below the ground plane at t={t}: z={p[2]}")
    R_wc = traj.rotation(t) @ R_MOUNT
    rays = scene.pixel_rays()
    dirs = R_wc @ rays
    dz = dirs[2]
    hit = dz < -1e-9
    s = np.where(hit, -p[2] / np.where(hit, dz, -1.0), 0.0)
    gx = p[0] + s * dirs[0]
    gy = p[1] + s * dirs[1]
    val = value_noise(gx, gy, scene.seed, octaves=scene.octaves, scale=scene.scale)
    if scene.haze > 0.0:
        # rays have unit focal-axis component, not unit norm
        dist = s * np.sqrt((rays * rays).sum(axis=0))
        val = val * np.exp(-scene.haze * dist)
    val = np.where(hit, val, 0.5)  # horizon pixels flat gray; absent for mild tilts
    gray = np.clip(np.floor(val * 256.0), 0, 255).astype(np.uint8)
    return np.repeat(gray.reshape(scene.height, scene.width, 1), 3, axis=2)


def render(traj, scene, fps, T, t0=0.0):
    """Render a clip; frame k is taken at t0 + k/fps."""
    if T < 2:
        raise ValueError("clips need T >= 2 frames")
    t_end = t0 + (T - 1) / fps
    if t_end > traj.t_max + 1e-9 or t0 < traj.t_min - 1e-9:
        raise ValueError("trajectory too short for requested clip")
    frames = np.stack([render_frame(traj, scene, t0 + k / fps) for k in range(T)])
    return VideoClip(frames=frames, fps=float(fps), t0=float(t0), meta={})


# ---------------------------------------------------------------------------
# batch generation


def generate_dataset(
    out_dir,
    n_clips,
    seed,
    T=33,
    height=64,
    width=64,
    fps=10.0,
    imu_rate=200.0,
    accel_limit=5.0,
    omega_limit=1.5,
    start_index=0,
):
    """Write n_clips clip directories (frames + meta + imu.csv) under out_dir.

    Each clip gets its own trajectory and texture seed derived from (seed,
    clip index), so regeneration and parallel sharding are reproducible.
    Returns the list of clip directory paths in index order.
    """
    import os

    from .dataio import save_clip

    duration = T / fps
    dirs = []
    for i in range(start_index, start_index + n_clips):
        clip_seed = seed * 1_000_003 + i
        traj = sample_trajectory(
            clip_seed, duration, accel_limit=accel_limit, omega_limit=omega_limit
        )
        scene = SceneConfig(seed=clip_seed ^ 0xA5A5, height=height, width=width)
        clip = render(traj, scene, fps, T)
        stream = imu_stream_from_trajectory(
            traj, imu_rate, t_start=-1.0 / fps, t_end=T / fps
        )
        path = os.path.join(out_dir, f"clip_{i:05d}")
        save_clip(clip, path, imu=stream, extra_meta={"seed": clip_seed})
        dirs.append(path)
    return dirs
