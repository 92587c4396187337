"""Inertial discretization: per-axis K-bin quantization, causal alignment, range fitting.

A continuous value x on axis j maps to bin
    min(K-1, floor((clip(x, m, M) - m) / (M - m) * K))
so values at the exact upper bound land in bin K-1 via the min clamp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataio import AXIS_NAMES, ActionSequence
from .errors import MetaParseError

DEFAULT_K = 7
DEFAULT_PERCENTILE = 0.005


@dataclass(frozen=True)
class AxisRange:
    m: float
    M: float
    K: int = DEFAULT_K

    def __post_init__(self):
        if not (math.isfinite(self.m) and math.isfinite(self.M)):
            raise ValueError("range bounds must be finite")
        if not self.M > self.m:
            raise ValueError(f"need M > m, got [{self.m}, {self.M}]")
        if self.K < 2:
            raise ValueError(f"need K >= 2, got {self.K}")


@dataclass(frozen=True)
class BinLabels:
    """6*T integer bin matrix, entries in [0, K-1]."""

    labels: np.ndarray
    K: int

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int64)
        if lab.ndim != 2 or lab.shape[0] != 6:
            raise ValueError(f"labels must be 6*T, got {lab.shape}")
        if lab.size and (lab.min() < 0 or lab.max() >= self.K):
            raise ValueError(f"labels out of [0, {self.K - 1}]")
        object.__setattr__(self, "labels", lab)

    @property
    def T(self):
        return self.labels.shape[1]


def quantize(x, r):
    """Bin index of a single value (monotone non-decreasing in x)."""
    if not math.isfinite(x):
        raise ValueError(f"cannot quantize non-finite value {x}")
    clipped = min(max(x, r.m), r.M)
    return min(r.K - 1, int(math.floor((clipped - r.m) / (r.M - r.m) * r.K)))


def quantize_array(x, r):
    """Vectorized quantize over an array of finite values."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantize non-finite values")
    clipped = np.clip(x, r.m, r.M)
    bins = np.floor((clipped - r.m) / (r.M - r.m) * r.K).astype(np.int64)
    return np.minimum(r.K - 1, bins)


def quantize_sequence(seq, ranges):
    """Per-axis quantization of a T*6 action sequence into 6*T bin labels."""
    if len(ranges) != 6:
        raise ValueError("need one AxisRange per axis")
    K = ranges[0].K
    if any(r.K != K for r in ranges):
        raise ValueError("all axes must share K")
    labels = np.stack([quantize_array(seq.actions[:, j], ranges[j]) for j in range(6)])
    return BinLabels(labels=labels, K=K)


def causal_shift(seq):
    """Left-shift actions so command t+1 labels the transition into frame t+1.

    The final row is duplicated to keep length T without injecting a new
    motion regime at the boundary.
    """
    T = len(seq)
    if T < 2:
        raise ValueError(f"causal_shift needs T >= 2, got {T}")
    shifted = np.vstack([seq.actions[1:], seq.actions[-1:]])
    return ActionSequence(actions=shifted, fps=seq.fps)


def fit_ranges(dataset, q=DEFAULT_PERCENTILE, K=DEFAULT_K):
    """Fit per-axis [m, M] from pooled values at the (q, 1-q) percentiles.

    q=0 gives min/max. Degenerate axes (m == M) are widened by +-1 unit.
    Percentile clipping guards against heavy-tailed inertial outliers.
    """
    seqs = list(dataset)
    if not seqs:
        raise ValueError("empty dataset")
    if not 0.0 <= q < 0.5:
        raise ValueError(f"percentile q must be in [0, 0.5), got {q}")
    pooled = np.concatenate([s.actions for s in seqs], axis=0)
    ranges = []
    for j in range(6):
        m = float(np.quantile(pooled[:, j], q))
        M = float(np.quantile(pooled[:, j], 1.0 - q))
        if M <= m:
            m, M = m - 1.0, M + 1.0
        ranges.append(AxisRange(m=m, M=M, K=K))
    return tuple(ranges)


# ---------------------------------------------------------------------------
# persisted text config: one line per axis, `axis=<name> m=<real> M=<real> K=<int>`


def save_ranges(ranges, path):
    with open(path, "w", encoding="utf-8") as fh:
        for name, r in zip(AXIS_NAMES, ranges):
            fh.write(f"axis={name} m={r.m!r} M={r.M!r} K={r.K}\n")


def load_ranges(path):
    ranges = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            fields = dict(tok.split("=", 1) for tok in line.split())
            try:
                ranges[fields["axis"]] = AxisRange(
                    m=float(fields["m"]), M=float(fields["M"]), K=int(fields["K"])
                )
            except (KeyError, ValueError) as e:
                raise MetaParseError(f"bad ranges line {line!r}: {e}") from e
    missing = [n for n in AXIS_NAMES if n not in ranges]
    if missing:
        raise MetaParseError(f"ranges file missing axes {missing}")
    return tuple(ranges[n] for n in AXIS_NAMES)
