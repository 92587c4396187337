"""Train a physics probe on a small synthetic dataset and report accuracy.

Generates clips, encodes them into latents, fits quantization ranges on the
training split, trains the probe, and compares held-out per-axis accuracy
against the majority-bin baseline. Slower than the other demos (a couple of
minutes at the defaults).
"""

import argparse
import os
import tempfile
import time

import numpy as np

from aerokit import synthworld as sw
from aerokit.dataio import AXIS_NAMES, list_clip_dirs, load_clip, load_imu, resample_imu
from aerokit.probe import ProbeConfig, majority_baseline, probe_accuracy, save_probe, train_probe
from aerokit.pseudovae import EncoderConfig, encode, fit_stats, label_pool
from aerokit.quantizer import causal_shift, fit_ranges


def load_pairs(root):
    pairs = []
    for d in list_clip_dirs(root):
        clip = load_clip(d)
        stream = load_imu(os.path.join(d, "imu.csv"))
        cmd = resample_imu(stream, clip.fps, clip.frames.shape[0], clip.t0)
        pairs.append((clip, cmd))
    return pairs


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--clips", type=int, default=80)
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--out", default="", help="optional checkpoint path")
    args = ap.parse_args()

    tmp = tempfile.mkdtemp(prefix="probe_demo_")
    t0 = time.time()
    sw.generate_dataset(tmp, args.clips, args.seed, T=33, height=64, width=64)
    pairs = load_pairs(tmp)
    print(f"dataset: {args.clips} clips in {time.time() - t0:.1f}s")

    # held-out split: every fifth clip
    val_idx = set(range(4, len(pairs), 5))
    train_raw = [p for i, p in enumerate(pairs) if i not in val_idx]
    val_raw = [p for i, p in enumerate(pairs) if i in val_idx]

    ranges = fit_ranges([cmd for _, cmd in train_raw])
    enc = fit_stats([clip for clip, _ in train_raw], EncoderConfig(seed=args.seed))
    s_t = enc.strides[0]

    def prep(split):
        return [
            (encode(clip, enc), label_pool(causal_shift(cmd), ranges, s_t))
            for clip, cmd in split
        ]

    train_set, val_set = prep(train_raw), prep(val_raw)
    maj_axis, maj_mean = majority_baseline([labels for _, labels in val_set])

    t1 = time.time()
    model = train_probe(
        train_set,
        val_set,
        cfg=ProbeConfig(),
        epochs=args.epochs,
        lr=args.lr,
        batch=8,
        seed=args.seed,
        log=print,
    )
    print(f"trained in {time.time() - t1:.0f}s")

    per_axis, mean = probe_accuracy(model, val_set)
    print("\nheld-out accuracy vs majority baseline:")
    for j, name in enumerate(AXIS_NAMES):
        print(
            f"  {name}: probe={per_axis[j]:.3f}  majority={maj_axis[j]:.3f}"
            f"  gap={per_axis[j] - maj_axis[j]:+.3f}"
        )
    print(f"  mean: probe={mean:.3f}  majority={maj_mean:.3f}")
    print(f"  chance level: {1.0 / ranges[0].K:.3f}")

    if args.out:
        save_probe(model, args.out)
        print(f"saved checkpoint to {args.out}")


if __name__ == "__main__":
    main()
