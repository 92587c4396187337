"""Latent-space inertial probe: six per-axis bin classifiers over video latents.

A shared 3D-conv trunk reads the latent (C, T, H, W), global spatial pooling
collapses space, and one small MLP head per inertial axis emits per-timestep
K-way logits. Heads are zero-initialized so an untrained probe is exactly
uniform (CE = ln K), which gives training curves and sanity tests a fixed
origin. A `separate_trunks` flag swaps in six fully independent towers.

The probe is trained once, then frozen; downstream code treats it as a
measurement instrument and verifies its parameters never change by checksum.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .dataio import AXIS_NAMES


@dataclass(frozen=True)
class ProbeConfig:
    in_channels: int = 16
    conv_widths: tuple = (32, 32)
    kernel: tuple = (3, 3, 3)
    hidden: int = 64
    K: int = 7
    separate_trunks: bool = False

    def __post_init__(self):
        object.__setattr__(self, "conv_widths", tuple(int(w) for w in self.conv_widths))
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if min(self.conv_widths) < 1 or self.hidden < 1 or self.in_channels < 1:
            raise ValueError("widths must be positive")
        if len(self.kernel) != 3 or any(k % 2 == 0 for k in self.kernel):
            raise ValueError("kernel must be three odd ints (padding preserves dims)")


@dataclass
class ProbeModel:
    params: dict  # name -> ad.Tensor
    config: ProbeConfig
    meta: dict


def _trunk_param_shapes(cfg):
    shapes = []
    c_in = cfg.in_channels
    for i, c_out in enumerate(cfg.conv_widths):
        shapes.append((f"conv{i}.w", (c_out, c_in) + cfg.kernel))
        shapes.append((f"conv{i}.b", (c_out,)))
        c_in = c_out
    return shapes, c_in


def init_probe(cfg=None, seed=0):
    """He-initialized trunk, zero-initialized head output layers."""
    cfg = cfg or ProbeConfig()
    rng = np.random.default_rng(seed)
    params = {}

    def he(shape, fan_in):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(np.float32)

    trunk_shapes, feat_dim = _trunk_param_shapes(cfg)
    trunk_prefixes = (
        [f"trunk.{ax}." for ax in AXIS_NAMES] if cfg.separate_trunks else ["trunk."]
    )
    for prefix in trunk_prefixes:
        for name, shape in trunk_shapes:
            if name.endswith(".w"):
                fan_in = int(np.prod(shape[1:]))
                params[prefix + name] = ad.Tensor(he(shape, fan_in), requires_grad=True)
            else:
                params[prefix + name] = ad.Tensor(
                    np.zeros(shape, dtype=np.float32), requires_grad=True
                )
    for ax in AXIS_NAMES:
        params[f"head.{ax}.w1"] = ad.Tensor(
            he((feat_dim, cfg.hidden), feat_dim), requires_grad=True
        )
        params[f"head.{ax}.b1"] = ad.Tensor(
            np.zeros(cfg.hidden, dtype=np.float32), requires_grad=True
        )
        # zero output layer: untrained probe is exactly uniform
        params[f"head.{ax}.w2"] = ad.Tensor(
            np.zeros((cfg.hidden, cfg.K), dtype=np.float32), requires_grad=True
        )
        params[f"head.{ax}.b2"] = ad.Tensor(
            np.zeros(cfg.K, dtype=np.float32), requires_grad=True
        )
    return ProbeModel(params=params, config=cfg, meta={})


def _latent_tensor(z):
    data = z.data if hasattr(z, "data") and not isinstance(z, ad.Tensor) else z
    if isinstance(data, ad.Tensor):
        return data
    return ad.Tensor(np.asarray(data, dtype=np.float32))


def _replicate_pad_time(x, amount):
    # edge replication, not zeros: a latent that is constant in time must
    # produce features that are constant in time (keeps boundary timesteps
    # on the same footing as interior ones)
    if amount == 0:
        return x
    T = x.data.shape[1]
    first = ad.narrow(x, 1, 0, 1)
    last = ad.narrow(x, 1, T - 1, 1)
    return ad.concat([first] * amount + [x] + [last] * amount, axis=1)


def _trunk_features(model, x, prefix):
    cfg = model.config
    kt, kh, kw = cfg.kernel
    pad = (0, kh // 2, kw // 2)
    h = x
    for i in range(len(cfg.conv_widths)):
        h = _replicate_pad_time(h, kt // 2)
        h = ad.conv3d(
            h,
            model.params[f"{prefix}conv{i}.w"],
            model.params[f"{prefix}conv{i}.b"],
            stride=1,
            pad=pad,
        )
        h = ad.relu(h)
    pooled = ad.global_spatial_pool(h)  # (C', T)
    return ad.transpose(pooled, (1, 0))  # (T, C')


def probe_forward(model, z):
    """Logits for all axes, shape (6, T, K); differentiable w.r.t. z."""
    x = _latent_tensor(z)
    if x.data.ndim != 4 or x.data.shape[0] != model.config.in_channels:
        raise ValueError(
            f"latent shape {x.data.shape} incompatible with {model.config.in_channels} channels"
        )
    shared = None if model.config.separate_trunks else _trunk_features(model, x, "trunk.")
    per_axis = []
    for ax in AXIS_NAMES:
        feat = (
            _trunk_features(model, x, f"trunk.{ax}.")
            if model.config.separate_trunks
            else shared
        )
        h = ad.relu(
            ad.linear(feat, model.params[f"head.{ax}.w1"], model.params[f"head.{ax}.b1"])
        )
        per_axis.append(
            ad.linear(h, model.params[f"head.{ax}.w2"], model.params[f"head.{ax}.b2"])
        )
    return ad.stack(per_axis, axis=0)


def probe_loss(model, z, labels):
    """Mean per-axis, per-timestep CE against (6, T) integer bin labels."""
    labels = np.asarray(labels.labels if hasattr(labels, "labels") else labels)
    x = _latent_tensor(z)
    T = x.data.shape[1]
    if labels.shape != (6, T):
        raise ValueError(f"labels shape {labels.shape}, expected (6, {T})")
    shared = None if model.config.separate_trunks else _trunk_features(model, x, "trunk.")
    losses = []
    for j, ax in enumerate(AXIS_NAMES):
        feat = (
            _trunk_features(model, x, f"trunk.{ax}.")
            if model.config.separate_trunks
            else shared
        )
        h = ad.relu(
            ad.linear(feat, model.params[f"head.{ax}.w1"], model.params[f"head.{ax}.b1"])
        )
        logits = ad.linear(h, model.params[f"head.{ax}.w2"], model.params[f"head.{ax}.b2"])
        losses.append(ad.softmax_cross_entropy(logits, labels[j]))
    return ad.mean(ad.stack(losses))


def predict_bins(model, z):
    """Argmax bins, shape (6, T) int64."""
    return probe_forward(model, z).data.argmax(axis=2).astype(np.int64)


def probe_accuracy(model, eval_set):
    """Per-axis fraction of (axis, timestep) argmax hits plus their mean."""
    eval_set = list(eval_set)
    if not eval_set:
        raise ValueError("empty evaluation set")
    hits = np.zeros(6)
    total = 0
    for z, labels in eval_set:
        y = np.asarray(labels.labels if hasattr(labels, "labels") else labels)
        pred = predict_bins(model, z)
        if pred.shape != y.shape:
            raise ValueError(f"prediction shape {pred.shape} vs labels {y.shape}")
        hits += (pred == y).sum(axis=1)
        total += y.shape[1]
    per_axis = hits / total
    return per_axis, float(per_axis.mean())


def majority_baseline(labels_iter):
    """Accuracy of always predicting each axis's most frequent bin."""
    pooled = [[] for _ in range(6)]
    for labels in labels_iter:
        y = np.asarray(labels.labels if hasattr(labels, "labels") else labels)
        for j in range(6):
            pooled[j].append(y[j])
    if not pooled[0]:
        raise ValueError("empty label set")
    per_axis = np.empty(6)
    for j in range(6):
        counts = np.bincount(np.concatenate(pooled[j]))
        per_axis[j] = counts.max() / counts.sum()
    return per_axis, float(per_axis.mean())


def train_probe(train, val, cfg=None, epochs=25, lr=1e-4, batch=32, seed=0, log=None):
    """Eq.-style CE training with AdamW; returns the best-validation checkpoint.

    train/val: sequences of (latent, BinLabels-with-(6,T)-labels) pairs.
    Deterministic for fixed (seed, data order).
    """
    train = list(train)
    val = list(val)
    if not train or not val:
        raise ValueError("train and val splits must be nonempty")
    model = init_probe(cfg, seed=seed)
    opt = ad.AdamW(model.params, lr=lr, weight_decay=1e-4)
    rng = np.random.default_rng(seed + 1)

    best_acc = -1.0
    best_params = None
    best_epoch = -1
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(train))
        epoch_loss = 0.0
        for start in range(0, len(order), batch):
            chunk = order[start : start + batch]
            opt.zero_grad()
            for idx in chunk:
                z, labels = train[idx]
                with ad.Tape() as tape:
                    loss = probe_loss(model, z, labels)
                value = loss.item()
                if not np.isfinite(value):
                    raise RuntimeError(
                        f"non-finite probe loss at epoch {epoch}, clip {idx}: {value}"
                    )
                tape.backward(loss)
                epoch_loss += value
            inv = 1.0 / len(chunk)
            for p in opt.params.values():
                if p.grad is not None:
                    p.grad *= inv
            opt.step()
        epoch_loss /= len(order)
        _, val_acc = probe_accuracy(model, val)
        history.append((epoch, round(epoch_loss, 6), round(val_acc, 6)))
        if log:
            log(f"epoch {epoch}: train_loss={epoch_loss:.4f} val_acc={val_acc:.4f}")
        if val_acc > best_acc:
            best_acc = val_acc
            best_epoch = epoch
            best_params = {k: p.data.copy() for k, p in model.params.items()}

    for k, p in model.params.items():
        p.data = best_params[k]
        p.grad = None
    model.meta = {
        "epochs": epochs,
        "best_epoch": best_epoch,
        "val_accuracy": round(best_acc, 6),
        "lr": lr,
        "batch": batch,
        "seed": seed,
        "history": history,
    }
    return model


def freeze(model):
    """Mark all parameters as non-trainable (gradients skipped entirely)."""
    for p in model.params.values():
        p.requires_grad = False
        p.grad = None
    return model


def probe_checksum(model):
    """SHA-256 over config and raw parameter bytes, order-independent."""
    h = hashlib.sha256()
    h.update(repr(sorted(asdict(model.config).items())).encode())
    for name in sorted(model.params):
        h.update(name.encode())
        h.update(model.params[name].data.tobytes())
    return h.hexdigest()


def save_probe(model, path):
    config = {
        "kind": "probe",
        "probe_config": asdict(model.config),
        "meta": model.meta,
    }
    ad.save_checkpoint(path, model.params, config=config)


def load_probe(path):
    tensors, config = ad.load_checkpoint(path)
    if config.get("kind") != "probe":
        raise ValueError(f"{path}: not a probe checkpoint")
    pc = dict(config["probe_config"])
    pc["conv_widths"] = tuple(pc["conv_widths"])
    pc["kernel"] = tuple(pc["kernel"])
    cfg = ProbeConfig(**pc)
    params = {k: ad.Tensor(v, requires_grad=True) for k, v in tensors.items()}
    return ProbeModel(params=params, config=cfg, meta=config.get("meta", {}))
