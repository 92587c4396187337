"""Fit the optical-flow-to-IMU ridge readout and check it generalizes.

Extracts pyramidal flow features per frame pair, fits ridge per axis on a
training split, and reports held-out Pearson correlation. A shuffled-pair
control (features from one clip, commands from another) should sit near zero.
"""

import argparse
import os
import tempfile
import time

import numpy as np

from aerokit import synthworld as sw
from aerokit.dataio import AXIS_NAMES, list_clip_dirs, load_clip, load_imu, resample_imu
from aerokit.metrics import cv_lambda, fit_ridge, flow_imu_correlation, flow_imu_dataset

def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--clips", type=int, default=48)
    ap.add_argument("--auto-lambda", action="store_true", help="pick lambda by 5-fold CV")
    args = ap.parse_args()

    tmp = tempfile.mkdtemp(prefix="flow_demo_")
    sw.generate_dataset(tmp, args.clips, args.seed, T=33, height=64, width=64)
    pairs = []
    for d in list_clip_dirs(tmp):
        clip = load_clip(d)
        stream = load_imu(os.path.join(d, "imu.csv"))
        cmd = resample_imu(stream, clip.fps, clip.frames.shape[0], clip.t0)
        pairs.append((clip.frames, cmd))

    val_idx = set(range(4, len(pairs), 5))
    train = [p for i, p in enumerate(pairs) if i not in val_idx]
    held = [p for i, p in enumerate(pairs) if i in val_idx]

    t0 = time.time()
    X, Y = flow_imu_dataset(train)
    print(f"features: {X.shape[0]} rows x {X.shape[1]} dims in {time.time() - t0:.1f}s")

    lam = 1.0
    if args.auto_lambda:
        lam = cv_lambda(X, Y, seed=args.seed)
        print(f"cross-validated lambda: {lam}")
    model = fit_ridge(X, Y, lam=lam)

    per_axis, mean = flow_imu_correlation(model, held)
    rng = np.random.default_rng(args.seed)
    perm = rng.permutation(len(held))
    while (perm == np.arange(len(held))).any():
        perm = rng.permutation(len(held))
    control = [(held[i][0], held[perm[i]][1]) for i in range(len(held))]
    ctrl_axis, _ = flow_imu_correlation(model, control)

    print("\nheld-out Pearson r (flow-predicted vs commanded):")
    for j, name in enumerate(AXIS_NAMES):
        print(f"  {name}: r={per_axis[j]:+.3f}  shuffled-pair control={ctrl_axis[j]:+.3f}")
    print(f"  mean r: {mean:+.3f}")
    print(f"  mean |control r|: {np.abs(ctrl_axis).mean():.3f}")


if __name__ == "__main__":
    main()
