"""Deterministic latent encoder standing in for a frozen video autoencoder.

Each s_t*s_h*s_w*3 pixel patch is flattened and projected by a fixed seeded
random matrix with orthonormal rows, then standardized per channel with
frozen statistics. Orthonormal rows keep the projection an isometry onto its
range, so local spatio-temporal structure (and hence motion evidence)
survives encoding without any pretrained weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .dataio import ActionSequence
from .quantizer import quantize_sequence


@dataclass(frozen=True)
class EncoderConfig:
    channels: int = 16
    strides: tuple = (1, 8, 8)  # (s_t, s_h, s_w)
    seed: int = 0
    mean: tuple | None = None  # per-channel standardization stats
    std: tuple | None = None

    def __post_init__(self):
        s = tuple(int(v) for v in self.strides)
        object.__setattr__(self, "strides", s)
        if len(s) != 3 or min(s) < 1:
            raise ValueError(f"strides must be three ints >= 1, got {self.strides!r}")
        if self.channels < 1 or self.channels > 3 * s[0] * s[1] * s[2]:
            raise ValueError("channels must be in [1, patch size]")
        if (self.mean is None) != (self.std is None):
            raise ValueError("mean and std must be set together")
        if self.mean is not None:
            m = tuple(float(v) for v in self.mean)
            d = tuple(float(v) for v in self.std)
            if len(m) != self.channels or len(d) != self.channels:
                raise ValueError("stats length must equal channels")
            if min(d) <= 0:
                raise ValueError("std entries must be positive")
            object.__setattr__(self, "mean", m)
            object.__setattr__(self, "std", d)

    @property
    def patch_dim(self):
        s_t, s_h, s_w = self.strides
        return 3 * s_t * s_h * s_w


@dataclass(frozen=True)
class LatentTensor:
    data: np.ndarray  # (C, T_l, H_l, W_l) float32
    strides: tuple
    source_dims: tuple  # (T, H, W)

    def __post_init__(self):
        if self.data.ndim != 4:
            raise ValueError(f"latent must be 4-d, got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError("latent contains non-finite entries")

    @property
    def shape(self):
        return self.data.shape


@lru_cache(maxsize=8)
def _projection(seed, patch_dim, channels):
    """Rows-orthonormal (C, D) matrix from a seeded Gaussian via QR."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((patch_dim, channels))
    q, r = np.linalg.qr(a)
    # fix column signs so the factorization (hence the matrix) is unique
    q = q * np.sign(np.diag(r))
    return np.ascontiguousarray(q.T.astype(np.float64))


def projection_matrix(cfg):
    return _projection(cfg.seed, cfg.patch_dim, cfg.channels)


def latent_dims(T, H, W, strides):
    s_t, s_h, s_w = strides
    if H % s_h or W % s_w:
        raise ValueError(f"spatial dims {(H, W)} not divisible by strides {(s_h, s_w)}")
    return (-(-T // s_t), H // s_h, W // s_w)  # ceil division on time


def encode(clip, cfg, standardize=True):
    """Map a clip to its (C, T_l, H_l, W_l) latent; deterministic per (cfg, clip)."""
    T, H, W = clip.num_frames, clip.height, clip.width
    s_t, s_h, s_w = cfg.strides
    T_l, H_l, W_l = latent_dims(T, H, W, cfg.strides)

    x = clip.frames.astype(np.float64) / 255.0
    pad = T_l * s_t - T
    if pad:
        x = np.concatenate([x, np.repeat(x[-1:], pad, axis=0)], axis=0)
    # (T_l, s_t, H_l, s_h, W_l, s_w, 3) -> patch-major layout
    x = x.reshape(T_l, s_t, H_l, s_h, W_l, s_w, 3)
    x = x.transpose(0, 2, 4, 1, 3, 5, 6).reshape(T_l, H_l, W_l, cfg.patch_dim)
    z = x @ projection_matrix(cfg).T  # (T_l, H_l, W_l, C)
    z = np.ascontiguousarray(z.transpose(3, 0, 1, 2))
    if standardize and cfg.mean is not None:
        z = (z - np.asarray(cfg.mean)[:, None, None, None]) / np.asarray(cfg.std)[
            :, None, None, None
        ]
    return LatentTensor(
        data=z.astype(np.float32), strides=cfg.strides, source_dims=(T, H, W)
    )


def fit_stats(clips, cfg):
    """Freeze per-channel standardization stats from a training split."""
    if not clips:
        raise ValueError("need at least one clip to fit stats")
    total = np.zeros(cfg.channels)
    total_sq = np.zeros(cfg.channels)
    count = 0
    for clip in clips:
        z = encode(clip, cfg, standardize=False).data.astype(np.float64)
        total += z.sum(axis=(1, 2, 3))
        total_sq += (z * z).sum(axis=(1, 2, 3))
        count += z[0].size
    mean = total / count
    var = np.maximum(total_sq / count - mean**2, 0.0)
    std = np.maximum(np.sqrt(var), 1e-6)
    return replace(cfg, mean=tuple(mean), std=tuple(std))


def pool_actions(actions, s_t):
    """Mean-pool per-frame actions over s_t-frame windows to latent time.
    The trailing window replicates the final frame when T is not a multiple
    of s_t, matching encode."""
    if s_t < 1:
        raise ValueError("s_t must be >= 1")
    a = actions.actions
    T = a.shape[0]
    T_l = -(-T // s_t)
    pad = T_l * s_t - T
    if pad:
        a = np.vstack([a, np.repeat(a[-1:], pad, axis=0)])
    pooled = a.reshape(T_l, s_t, 6).mean(axis=1)
    return ActionSequence(actions=pooled, fps=actions.fps / s_t)


def label_pool(actions, ranges, s_t):
    """Pool per-frame actions to latent time, then re-quantize (not a mode
    over already-binned labels). s_t=1 is the identity composition with the
    quantizer."""
    return quantize_sequence(pool_actions(actions, s_t), ranges)


# ---------------------------------------------------------------------------
# on-disk latent cache: JSON header line + row-major little-endian float32


def save_latent(latent, path):
    header = {
        "format": "aerokit-latent-v1",
        "shape": list(latent.data.shape),
        "strides": list(latent.strides),
        "source_dims": list(latent.source_dims),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(np.asarray(latent.data, dtype="<f4").tobytes())


def load_latent(path):
    with open(path, "rb") as fh:
        try:
            header = json.loads(fh.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ValueError(f"{path}: not a latent cache file: {e}") from e
        if header.get("format") != "aerokit-latent-v1":
            raise ValueError(f"{path}: unknown latent format {header.get('format')!r}")
        shape = tuple(header["shape"])
        blob = fh.read()
    expected = 4 * int(np.prod(shape))
    if len(blob) != expected:
        raise ValueError(f"{path}: latent blob is {len(blob)} bytes, expected {expected}")
    data = np.frombuffer(blob, dtype="<f4").reshape(shape).copy()
    return LatentTensor(
        data=data,
        strides=tuple(header["strides"]),
        source_dims=tuple(header["source_dims"]),
    )
