"""Alignment and consistency metrics plus the flow-based independent evaluator.

AAS counts argmax agreement between probe predictions and quantized,
causally shifted commands. PCR measures bin smoothness over time. The
Flow-IMU evaluator never sees the probe: it maps optical-flow features of
the RGB frames to inertial values with a ridge regressor, giving an
independent check that generated motion tracks the commands.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .dataio import AXIS_NAMES
from .probe import predict_bins
from .pseudovae import label_pool
from .quantizer import causal_shift


# ---------------------------------------------------------------------------
# correlation


def pearson(x, y, return_degenerate=False):
    """Sample Pearson correlation; zero-variance input gives r=0 (degenerate)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"pearson needs equal-length 1-d inputs, got {x.shape}, {y.shape}")
    if len(x) < 2:
        raise ValueError("pearson needs at least 2 samples")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if denom == 0.0:
        return (0.0, True) if return_degenerate else 0.0
    r = float((xc * yc).sum() / denom)
    r = min(1.0, max(-1.0, r))
    return (r, False) if return_degenerate else r


# ---------------------------------------------------------------------------
# probe-based scores


def _pooled_command_bins(commanded, ranges, strides, T_source):
    if len(commanded) != T_source:
        raise ValueError(
            f"commanded length {len(commanded)} does not match clip frames {T_source}"
        )
    shifted = causal_shift(commanded)
    return label_pool(shifted, ranges, strides[0]).labels


def aas_from_bins(pred, commanded, ranges, s_t, T_source=None):
    """Agreement of precomputed (6, T_l) bins with shifted, pooled commands."""
    pred = np.asarray(pred)
    target = _pooled_command_bins(
        commanded, ranges, (s_t, 1, 1), T_source if T_source is not None else len(commanded)
    )
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} vs labels {target.shape}")
    per_axis = (pred == target).mean(axis=1)
    return per_axis, float(per_axis.mean())


def aas(model, z, commanded, ranges):
    """Per-axis argmax agreement with shifted, pooled, quantized commands."""
    return aas_from_bins(
        predict_bins(model, z), commanded, ranges, z.strides[0], z.source_dims[0]
    )


def aas_eval(model, pairs, ranges):
    """Flat (clip, timestep) aggregation of aas over (latent, commanded) pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("empty evaluation set")
    hits = np.zeros(6)
    total = 0
    for z, commanded in pairs:
        target = _pooled_command_bins(commanded, ranges, z.strides, z.source_dims[0])
        pred = predict_bins(model, z)
        hits += (pred == target).sum(axis=1)
        total += target.shape[1]
    per_axis = hits / total
    return per_axis, float(per_axis.mean())


def pcr_from_bins(bins):
    """Mean absolute jump between consecutive bins; accepts (T,) or (6, T)."""
    bins = np.asarray(bins, dtype=np.float64)
    if bins.ndim == 1:
        bins = bins[None, :]
    if bins.shape[1] < 2:
        raise ValueError("PCR needs at least 2 timesteps")
    jumps = np.abs(np.diff(bins, axis=1)).mean(axis=1)
    return jumps if jumps.shape[0] > 1 else float(jumps[0])


def pcr(model, z):
    """Per-axis smoothness of predicted bins for one latent clip."""
    pred = predict_bins(model, z)
    if pred.shape[1] < 2:
        raise ValueError("PCR needs at least 2 latent timesteps")
    per_axis = np.abs(np.diff(pred, axis=1)).mean(axis=1)
    return per_axis, float(per_axis.mean())


def pcr_eval(model, latents):
    """Flat aggregation over all consecutive pairs of all clips."""
    latents = list(latents)
    if not latents:
        raise ValueError("empty evaluation set")
    jumps = np.zeros(6)
    total = 0
    for z in latents:
        pred = predict_bins(model, z)
        if pred.shape[1] < 2:
            raise ValueError("PCR needs at least 2 latent timesteps")
        jumps += np.abs(np.diff(pred, axis=1)).sum(axis=1)
        total += pred.shape[1] - 1
    per_axis = jumps / total
    return per_axis, float(per_axis.mean())


# ---------------------------------------------------------------------------
# dense optical flow: coarse-to-fine Lucas-Kanade on a sparse grid


class FlowField:
    """Grid flow in pixels/frame plus per-point validity."""

    __slots__ = ("u", "v", "valid")

    def __init__(self, u, v, valid):
        self.u = np.asarray(u, dtype=np.float64)
        self.v = np.asarray(v, dtype=np.float64)
        self.valid = np.asarray(valid, dtype=bool)
        if self.u.shape != self.v.shape or self.u.shape != self.valid.shape:
            raise ValueError("flow component shapes differ")
        if not (np.isfinite(self.u).all() and np.isfinite(self.v).all()):
            raise ValueError("flow contains non-finite values")

    @property
    def grid(self):
        return self.u.shape


def _to_gray(frame):
    f = np.asarray(frame, dtype=np.float64)
    if f.ndim == 3:
        f = f.mean(axis=2)
    return f / 255.0


def _downsample(img):
    h, w = img.shape
    return img[: h - h % 2, : w - w % 2].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _bilinear(img, ys, xs):
    h, w = img.shape
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 2)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 2)
    fy = ys - y0
    fx = xs - x0
    top = img[y0, x0] * (1 - fx) + img[y0, x0 + 1] * fx
    bot = img[y0 + 1, x0] * (1 - fx) + img[y0 + 1, x0 + 1] * fx
    return top * (1 - fy) + bot * fy


_MIN_EIG = 1e-6  # textureless-window cutoff on images scaled to [0, 1]


def dense_flow(prev, next, grid=8, levels=3, window=5, max_iters=10, tol=0.01):
    """Pyramidal Lucas-Kanade flow at grid points; prev -> next displacement.

    Identical frames give exactly zero flow: the first residual is zero so no
    iteration ever moves a point. Windows without texture (minimum eigenvalue
    of the gradient normal matrix below cutoff) keep their coarse-level flow
    and are flagged invalid.
    """
    g0 = _to_gray(prev)
    g1 = _to_gray(next)
    if g0.shape != g1.shape:
        raise ValueError(f"frame shapes differ: {g0.shape} vs {g1.shape}")
    H, W = g0.shape
    half = window // 2

    pyr0, pyr1 = [g0], [g1]
    for _ in range(levels - 1):
        if min(pyr0[-1].shape) < 2 * window:
            break
        pyr0.append(_downsample(pyr0[-1]))
        pyr1.append(_downsample(pyr1[-1]))

    # grid point coordinates at full resolution
    gy = (np.arange(grid) + 0.5) * H / grid - 0.5
    gx = (np.arange(grid) + 0.5) * W / grid - 0.5
    py, px = np.meshgrid(gy, gx, indexing="ij")
    py = py.ravel()
    px = px.ravel()
    n = py.size

    du = np.zeros(n)
    dv = np.zeros(n)
    valid = np.ones(n, dtype=bool)
    wy, wx = np.meshgrid(np.arange(-half, half + 1), np.arange(-half, half + 1), indexing="ij")
    wy = wy.ravel()
    wx = wx.ravel()

    for level in range(len(pyr0) - 1, -1, -1):
        i0, i1 = pyr0[level], pyr1[level]
        scale = 2.0**level
        ly = py / scale
        lx = px / scale
        sy = ly[:, None] + wy[None, :]
        sx = lx[:, None] + wx[None, :]
        patch0 = _bilinear(i0, sy, sx)
        ix = (_bilinear(i0, sy, sx + 0.5) - _bilinear(i0, sy, sx - 0.5))
        iy = (_bilinear(i0, sy + 0.5, sx) - _bilinear(i0, sy - 0.5, sx))
        gxx = (ix * ix).sum(axis=1)
        gxy = (ix * iy).sum(axis=1)
        gyy = (iy * iy).sum(axis=1)
        trace = gxx + gyy
        det = gxx * gyy - gxy * gxy
        min_eig = trace / 2 - np.sqrt(np.maximum(trace**2 / 4 - det, 0.0))
        textured = min_eig > _MIN_EIG
        if level == 0:
            valid &= textured
        active = textured.copy()
        for _ in range(max_iters):
            if not active.any():
                break
            a = active
            patch1 = _bilinear(i1, sy[a] + dv[a, None] / scale, sx[a] + du[a, None] / scale)
            err = patch0[a] - patch1
            bx = (err * ix[a]).sum(axis=1)
            by = (err * iy[a]).sum(axis=1)
            inv_det = 1.0 / det[a]
            step_x = (gyy[a] * bx - gxy[a] * by) * inv_det
            step_y = (gxx[a] * by - gxy[a] * bx) * inv_det
            du[a] += step_x * scale
            dv[a] += step_y * scale
            moved = np.sqrt(step_x**2 + step_y**2) * scale
            still = np.zeros_like(active)
            still[a] = moved >= tol
            active = still
    du = np.where(valid, du, 0.0)
    dv = np.where(valid, dv, 0.0)
    return FlowField(du.reshape(grid, grid), dv.reshape(grid, grid), valid.reshape(grid, grid))


def flow_features(field):
    """Per-cell (u, v, magnitude, angle) plus 4 global motion statistics.

    Angle is atan2(v, u), defined 0 for zero flow; D = 4*G*G + 4.
    """
    u, v = field.u, field.v
    mag = np.sqrt(u * u + v * v)
    angle = np.where(mag > 1e-9, np.arctan2(v, u), 0.0)
    per_cell = np.stack([u, v, mag, angle], axis=2).reshape(-1)
    div = np.gradient(u, axis=1) + np.gradient(v, axis=0)
    curl = np.gradient(v, axis=1) - np.gradient(u, axis=0)
    glob = np.array([div.mean(), curl.mean(), mag.mean(), u.var() + v.var()])
    return np.concatenate([per_cell, glob])


def feature_dim(grid=8):
    return 4 * grid * grid + 4


# ---------------------------------------------------------------------------
# ridge regression on standardized features


class RidgeModel:
    __slots__ = ("weights", "bias", "lam", "mu", "sigma", "meta")

    def __init__(self, weights, bias, lam, mu, sigma):
        self.weights = np.asarray(weights, dtype=np.float64)  # (D, 6)
        self.bias = np.asarray(bias, dtype=np.float64)  # (6,)
        self.lam = float(lam)
        self.mu = np.asarray(mu, dtype=np.float64)
        self.sigma = np.asarray(sigma, dtype=np.float64)
        self.meta = {}
        if not np.isfinite(self.weights).all():
            raise ValueError("non-finite ridge weights")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")


def fit_ridge(X, Y, lam=1.0):
    """Closed-form ridge per axis; bias (target mean) is unpenalized."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ValueError(f"bad shapes X {X.shape}, Y {Y.shape}")
    if X.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    mu = X.mean(axis=0)
    sigma = X.std(axis=0)
    sigma = np.where(sigma > 1e-12, sigma, 1.0)
    Xs = (X - mu) / sigma
    ymean = Y.mean(axis=0)
    Yc = Y - ymean
    D = X.shape[1]
    gram = Xs.T @ Xs + lam * np.eye(D)
    try:
        factor = cho_factor(gram)
    except np.linalg.LinAlgError as e:
        raise ValueError(
            f"ridge normal matrix not positive definite (lambda={lam}); use lambda > 0"
        ) from e
    W = cho_solve(factor, Xs.T @ Yc)
    return RidgeModel(weights=W, bias=ymean, lam=lam, mu=mu, sigma=sigma)


def predict_ridge(model, X):
    X = np.asarray(X, dtype=np.float64)
    return (X - model.mu) / model.sigma @ model.weights + model.bias


def ridge_objective(model, X, Y):
    """Penalized least-squares value at the model's weights (for tests)."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    Xs = (X - model.mu) / model.sigma
    resid = Xs @ model.weights + model.bias - Y
    return float((resid**2).sum() + model.lam * (model.weights**2).sum())


def cv_lambda(X, Y, lambdas=(0.01, 0.1, 1.0, 10.0, 100.0), folds=5, seed=0):
    """Pick lambda by k-fold validation MSE; deterministic per seed."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    n = X.shape[0]
    if n < folds:
        raise ValueError(f"need at least {folds} samples for {folds}-fold validation")
    order = np.random.default_rng(seed).permutation(n)
    bounds = np.linspace(0, n, folds + 1).astype(int)
    best_lam, best_mse = None, np.inf
    for lam in lambdas:
        mse = 0.0
        for f in range(folds):
            val_idx = order[bounds[f] : bounds[f + 1]]
            train_idx = np.concatenate([order[: bounds[f]], order[bounds[f + 1] :]])
            model = fit_ridge(X[train_idx], Y[train_idx], lam=lam)
            pred = predict_ridge(model, X[val_idx])
            mse += float(((pred - Y[val_idx]) ** 2).mean())
        mse /= folds
        if mse < best_mse:
            best_mse, best_lam = mse, lam
    return best_lam


def save_ridge(model, path, meta=None):
    from . import autodiff as ad

    ad.save_checkpoint(
        path,
        {
            "weights": model.weights.astype(np.float32),
            "bias": model.bias.astype(np.float32),
            "mu": model.mu.astype(np.float32),
            "sigma": model.sigma.astype(np.float32),
        },
        config={"kind": "ridge", "lambda": model.lam, "meta": meta or {}},
    )


def load_ridge(path):
    from . import autodiff as ad

    tensors, config = ad.load_checkpoint(path)
    if config.get("kind") != "ridge":
        raise ValueError(f"{path}: not a ridge checkpoint")
    model = RidgeModel(
        weights=tensors["weights"],
        bias=tensors["bias"],
        lam=config["lambda"],
        mu=tensors["mu"],
        sigma=tensors["sigma"],
    )
    model.meta = config.get("meta", {})
    return model


# ---------------------------------------------------------------------------
# Flow-IMU evaluator


def clip_flow_features(frames, grid=8):
    """Per-transition feature vectors for frames (T, H, W, 3); shape (T-1, D)."""
    T = frames.shape[0]
    if T < 2:
        raise ValueError("need at least 2 frames")
    return np.stack(
        [flow_features(dense_flow(frames[t], frames[t + 1], grid=grid)) for t in range(T - 1)]
    )


def flow_imu_rows(frames, commanded, grid=8):
    """Feature/target rows for one clip.

    Row t (t = 1..T-2) stacks the transition features with their first
    difference; a single flow field reflects velocity, so the difference term
    is what makes acceleration axes linearly observable. The target is the
    causally shifted command for that transition.
    """
    feats = clip_flow_features(frames, grid=grid)
    if feats.shape[0] < 2:
        raise ValueError("need at least 3 frames for difference features")
    X = np.concatenate([feats[1:], feats[1:] - feats[:-1]], axis=1)
    shifted = causal_shift(commanded).actions
    Y = shifted[1 : feats.shape[0]]
    return X, Y


def flow_imu_dataset(pairs, grid=8):
    """Stack rows from (frames, commanded) pairs into one regression problem."""
    Xs, Ys = [], []
    for frames, commanded in pairs:
        X, Y = flow_imu_rows(frames, commanded, grid=grid)
        Xs.append(X)
        Ys.append(Y)
    if not Xs:
        raise ValueError("empty dataset")
    return np.concatenate(Xs), np.concatenate(Ys)


def flow_imu_correlation(model, pairs, grid=8):
    """Per-axis Pearson r between ridge predictions and commanded IMU."""
    X, Y = flow_imu_dataset(pairs, grid=grid)
    pred = predict_ridge(model, X)
    per_axis = np.array([pearson(pred[:, j], Y[:, j]) for j in range(6)])
    return per_axis, float(per_axis.mean())


# ---------------------------------------------------------------------------
# report assembly


def section(per_axis, mean):
    return {"per_axis": [float(v) for v in per_axis], "mean": float(mean)}


def build_report(aas_scores=None, pcr_scores=None, flow_imu=None, meta=None):
    """Assemble the standard report dict (see dataio.write_report)."""
    return {
        "aas": section(*aas_scores) if aas_scores is not None else None,
        "pcr": section(*pcr_scores) if pcr_scores is not None else None,
        "flow_imu_r": section(*flow_imu) if flow_imu is not None else None,
        "meta": dict(meta or {}),
    }


__all__ = [
    "AXIS_NAMES",
    "FlowField",
    "RidgeModel",
    "aas",
    "aas_eval",
    "aas_from_bins",
    "build_report",
    "clip_flow_features",
    "cv_lambda",
    "dense_flow",
    "feature_dim",
    "fit_ridge",
    "flow_features",
    "flow_imu_correlation",
    "flow_imu_dataset",
    "flow_imu_rows",
    "load_ridge",
    "pcr",
    "pcr_eval",
    "pcr_from_bins",
    "pearson",
    "predict_ridge",
    "ridge_objective",
    "save_ridge",
    "section",
]
