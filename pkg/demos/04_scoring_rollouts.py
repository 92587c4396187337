"""Score latent sequences with the two probe-based metrics.

Trains a quick probe, then contrasts:
  * action agreement on matched clips vs deliberately mispaired actions,
  * rate consistency on encoder latents vs time-shuffled and constant ones.
A frozen latent sequence scores exactly zero on the rate metric by design.
"""

import argparse
import os
import tempfile

import numpy as np

from aerokit import synthworld as sw
from aerokit.dataio import AXIS_NAMES, list_clip_dirs, load_clip, load_imu, resample_imu
from aerokit.metrics import aas_eval, pcr_eval
from aerokit.probe import ProbeConfig, train_probe
from aerokit.pseudovae import EncoderConfig, LatentTensor, encode, fit_stats, label_pool
from aerokit.quantizer import causal_shift, fit_ranges


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--clips", type=int, default=60)
    ap.add_argument("--epochs", type=int, default=50)
    args = ap.parse_args()

    tmp = tempfile.mkdtemp(prefix="score_demo_")
    sw.generate_dataset(tmp, args.clips, args.seed, T=33, height=64, width=64)
    raw = []
    for d in list_clip_dirs(tmp):
        clip = load_clip(d)
        stream = load_imu(os.path.join(d, "imu.csv"))
        cmd = resample_imu(stream, clip.fps, clip.frames.shape[0], clip.t0)
        raw.append((clip, cmd))

    val_idx = set(range(4, len(raw), 5))
    train_raw = [p for i, p in enumerate(raw) if i not in val_idx]
    eval_raw = [p for i, p in enumerate(raw) if i in val_idx]
    ranges = fit_ranges([cmd for _, cmd in train_raw])
    enc = fit_stats([clip for clip, _ in train_raw], EncoderConfig(seed=args.seed))
    s_t = enc.strides[0]

    train_set = [
        (encode(clip, enc), label_pool(causal_shift(cmd), ranges, s_t))
        for clip, cmd in train_raw
    ]
    model = train_probe(
        train_set,
        train_set[:8],
        cfg=ProbeConfig(),
        epochs=args.epochs,
        lr=1e-3,
        batch=8,
        seed=args.seed,
    )

    pairs = [(encode(clip, enc), cmd) for clip, cmd in eval_raw]

    matched, matched_mean = aas_eval(model, pairs, ranges)
    perm = np.roll(np.arange(len(pairs)), 1)  # every latent gets a wrong clip's actions
    mispaired = [(pairs[i][0], pairs[perm[i]][1]) for i in range(len(pairs))]
    wrong, wrong_mean = aas_eval(model, mispaired, ranges)

    print("action agreement (argmax vs pooled command bins):")
    for j, name in enumerate(AXIS_NAMES):
        print(f"  {name}: matched={matched[j]:.3f}  mispaired={wrong[j]:.3f}")
    print(f"  mean: matched={matched_mean:.3f}  mispaired={wrong_mean:.3f}")
    print(f"  chance level: {1.0 / ranges[0].K:.3f}")

    latents = [z for z, _ in pairs]
    rng = np.random.default_rng(args.seed)
    shuffled = [
        LatentTensor(z.data[:, rng.permutation(z.data.shape[1])], z.strides, z.source_dims)
        for z in latents
    ]
    frozen = [
        LatentTensor(
            np.repeat(z.data[:, :1], z.data.shape[1], axis=1), z.strides, z.source_dims
        )
        for z in latents
    ]

    _, smooth = pcr_eval(model, latents)
    _, jumpy = pcr_eval(model, shuffled)
    frozen_axis, frozen_mean = pcr_eval(model, frozen)
    print("\nrate consistency (mean |consecutive bin jump|, lower = smoother):")
    print(f"  encoder latents:   {smooth:.3f}")
    print(f"  time-shuffled:     {jumpy:.3f}")
    print(f"  frozen latent:     {frozen_mean:.3f}  per-axis={[round(float(v), 3) for v in frozen_axis]}")


if __name__ == "__main__":
    main()
