"""Action-conditioned latent rollout generator trained against a frozen probe.

The generator here is deliberately small: an action-embedding MLP plus a
residual update network rolled out autoregressively in latent space,
ẑ_{t+1} = ẑ_t + f(ẑ_t, embed(ã_t)). It exists to demonstrate the
supervision mechanism (reconstruction + weighted frozen-probe CE with a
warm-up schedule), not to be a capable video model.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .metrics import aas_eval, build_report, pcr_eval
from .probe import probe_checksum, probe_loss
from .pseudovae import LatentTensor, label_pool, pool_actions
from .quantizer import causal_shift


@dataclass(frozen=True)
class GenConfig:
    embed_width: int = 32
    hidden: int = 64
    lambda_phys: float = 0.2
    warmup_steps: int = 500
    total_steps: int = 5000
    lr: float = 1e-3
    batch: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.embed_width < 1 or self.hidden < 1:
            raise ValueError("widths must be positive")
        if self.lambda_phys < 0:
            raise ValueError("lambda_phys must be >= 0")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError("need 0 <= warmup_steps <= total_steps")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")


class GenModel:
    def __init__(self, params, config, latent_shape, meta=None):
        self.params = params
        self.config = config
        self.latent_shape = tuple(latent_shape)  # (C, H_l, W_l) of one timestep
        self.meta = meta or {}


def init_generator(cfg, latent_shape):
    """Fresh model for per-timestep latents of shape (C, H_l, W_l).

    The final update layer starts at zero, so an untrained model rolls out a
    constant sequence equal to its initial latent.
    """
    if len(latent_shape) != 3:
        raise ValueError(f"latent_shape must be (C, H, W), got {latent_shape}")
    D = int(np.prod(latent_shape))
    E, H = cfg.embed_width, cfg.hidden
    rng = np.random.default_rng(cfg.seed)

    def he(shape, fan_in):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(np.float32)

    params = {
        "embed.w1": ad.Tensor(he((6, E), 6), requires_grad=True),
        "embed.b1": ad.Tensor(np.zeros(E, np.float32), requires_grad=True),
        "embed.w2": ad.Tensor(he((E, E), E), requires_grad=True),
        "embed.b2": ad.Tensor(np.zeros(E, np.float32), requires_grad=True),
        "update.w1": ad.Tensor(he((D + E, H), D + E), requires_grad=True),
        "update.b1": ad.Tensor(np.zeros(H, np.float32), requires_grad=True),
        "update.w2": ad.Tensor(np.zeros((H, D), np.float32), requires_grad=True),
        "update.b2": ad.Tensor(np.zeros(D, np.float32), requires_grad=True),
    }
    return GenModel(params, cfg, latent_shape)


def gen_forward(model, z_first, actions):
    """Autoregressive rollout; returns a differentiable (C, T_l, H, W) tensor.

    z_first: the first latent timestep, shape (C, H_l, W_l).
    actions: causally shifted AND pooled to latent time, one row per latent
    timestep; the continuous 6-vectors are used, not bins.
    """
    C, Hl, Wl = model.latent_shape
    z0 = z_first.data if isinstance(z_first, ad.Tensor) else np.asarray(z_first)
    if z0.shape != (C, Hl, Wl):
        raise ValueError(f"z_first shape {z0.shape}, model expects {(C, Hl, Wl)}")
    a = np.asarray(actions.actions, dtype=np.float32)
    if a.ndim != 2 or a.shape[1] != 6:
        raise ValueError(f"actions must be (T_l, 6), got {a.shape}")
    T_l = a.shape[0]
    D = C * Hl * Wl
    p = model.params

    z = ad.Tensor(z0.reshape(1, D).astype(np.float32))
    steps = [z]
    for t in range(T_l - 1):
        a_t = ad.Tensor(a[t : t + 1])  # conditioning is a constant input
        e = ad.relu(ad.linear(a_t, p["embed.w1"], p["embed.b1"]))
        e = ad.linear(e, p["embed.w2"], p["embed.b2"])
        h = ad.relu(ad.linear(ad.concat([z, e], axis=1), p["update.w1"], p["update.b1"]))
        delta = ad.linear(h, p["update.w2"], p["update.b2"])
        z = ad.add(z, delta)
        steps.append(z)
    out = ad.concat(steps, axis=0)  # (T_l, D)
    out = ad.reshape(out, (T_l, C, Hl, Wl))
    return ad.transpose(out, (1, 0, 2, 3))  # (C, T_l, H, W)


def _conditioning(commanded, ranges, s_t):
    """Shifted+pooled continuous actions and the matching target bins."""
    shifted = causal_shift(commanded)
    return pool_actions(shifted, s_t), label_pool(shifted, ranges, s_t)


def train_generator(dataset, probe, ranges, cfg, log=None):
    """Minimize L_rec + lambda_phys * L_probe over latent rollouts.

    dataset: (LatentTensor, commanded ActionSequence) pairs; commanded actions
    are raw per-frame rows, shifting/pooling happens here. probe must already
    be frozen. log, if given, receives CSV text (header plus one row per step:
    step,l_rec,l_probe,lambda,total).
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty training set")
    assert not any(
        p.requires_grad for p in probe.params.values()
    ), "probe must be frozen before generator training"
    checksum_before = probe_checksum(probe)

    z0_shape = dataset[0][0].data.shape
    model = init_generator(cfg, (z0_shape[0],) + z0_shape[2:])
    s_t = dataset[0][0].strides[0]
    prepared = []
    for z, commanded in dataset:
        if z.data.shape != z0_shape:
            raise ValueError(f"inconsistent latent shapes {z.data.shape} vs {z0_shape}")
        cond, bins = _conditioning(commanded, ranges, s_t)
        if cond.actions.shape[0] != z.data.shape[1]:
            raise ValueError(
                f"pooled actions length {cond.actions.shape[0]} vs latent time {z.data.shape[1]}"
            )
        prepared.append((z.data.astype(np.float32), cond, bins))

    opt = ad.AdamW(model.params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    if log:
        log.write("step,l_rec,l_probe,lambda,total\n")

    order = rng.permutation(len(prepared))
    pos = 0
    final_row = None
    for step in range(cfg.total_steps):
        lam = 0.0 if step < cfg.warmup_steps else cfg.lambda_phys
        chunk = []
        for _ in range(cfg.batch):
            if pos == len(order):
                order = rng.permutation(len(prepared))
                pos = 0
            chunk.append(order[pos])
            pos += 1

        opt.zero_grad()
        rec_sum = 0.0
        probe_sum = 0.0
        for idx in chunk:
            z_gt, cond, bins = prepared[idx]
            target = ad.Tensor(z_gt)
            with ad.Tape() as tape:
                zhat = gen_forward(model, z_gt[:, 0], cond)
                diff = ad.sub(zhat, target)
                l_rec = ad.mean(ad.mul(diff, diff))
                if lam > 0.0:
                    l_probe = probe_loss(probe, zhat, bins)
                    loss = ad.add(l_rec, ad.scale(l_probe, lam))
                    probe_sum += l_probe.item()
                else:
                    loss = l_rec
                rec_sum += l_rec.item()
                tape.backward(loss)
        inv = 1.0 / len(chunk)
        for p in opt.params.values():
            if p.grad is not None:
                p.grad *= inv

        l_rec_m = rec_sum * inv
        l_probe_m = probe_sum * inv  # 0.0 during warm-up by construction
        total = l_rec_m + lam * l_probe_m
        if not np.isfinite(total):
            raise RuntimeError(
                f"non-finite loss at step {step}: l_rec={l_rec_m} l_probe={l_probe_m}"
            )
        opt.step()
        final_row = (step, l_rec_m, l_probe_m, lam, total)
        if log:
            log.write(
                f"{step},{l_rec_m:.10e},{l_probe_m:.10e},{lam:.10e},{total:.10e}\n"
            )

    assert (
        probe_checksum(probe) == checksum_before
    ), "probe parameters changed during generator training"
    model.meta = {
        "steps": cfg.total_steps,
        "final_l_rec": round(final_row[1], 8),
        "final_l_probe": round(final_row[2], 8),
        "final_total": round(final_row[4], 8),
        "lambda_phys": cfg.lambda_phys,
        "warmup_steps": cfg.warmup_steps,
        "seed": cfg.seed,
        "n_clips": len(prepared),
    }
    return model


def eval_generator(model, probe, ranges, eval_set):
    """Roll out from each clip's first latent and score with the probe."""
    eval_set = list(eval_set)
    if not eval_set:
        raise ValueError("empty evaluation set")
    rollout_pairs = []
    for z, commanded in eval_set:
        s_t = z.strides[0]
        cond, _ = _conditioning(commanded, ranges, s_t)
        zhat = gen_forward(model, z.data[:, 0], cond)
        rollout_pairs.append(
            (LatentTensor(zhat.data, z.strides, z.source_dims), commanded)
        )
    aas_scores = aas_eval(probe, rollout_pairs, ranges)
    pcr_scores = pcr_eval(probe, [z for z, _ in rollout_pairs])
    return build_report(
        aas_scores=aas_scores,
        pcr_scores=pcr_scores,
        flow_imu=None,
        meta={
            "n_clips": len(eval_set),
            "lambda_phys": model.config.lambda_phys,
            "seed": model.config.seed,
        },
    )


def save_generator(model, path):
    cfg = {
        "kind": "generator",
        "latent_shape": list(model.latent_shape),
        "gen_config": dataclasses.asdict(model.config),
        "meta": model.meta,
    }
    ad.save_checkpoint(path, model.params, cfg)


def load_generator(path):
    tensors, cfg = ad.load_checkpoint(path)
    if cfg.get("kind") != "generator":
        raise ValueError(f"checkpoint kind {cfg.get('kind')!r}, expected 'generator'")
    gen_cfg = GenConfig(**cfg["gen_config"])
    return GenModel(tensors, gen_cfg, tuple(cfg["latent_shape"]), cfg.get("meta", {}))
