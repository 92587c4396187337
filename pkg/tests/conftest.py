import os

# single-threaded BLAS keeps runtimes comparable and results byte-stable
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import time

import numpy as np
import pytest

# desk-scale acceptance configuration, shared across criteria
ACCEPT_SEED = 123
ACCEPT_CLIPS = 200
ACCEPT_FRAMES = 33
ACCEPT_SIZE = 64
PROBE_EPOCHS = 50
PROBE_LR = 1e-3
PROBE_BATCH = 8


@pytest.fixture(scope="session")
def accept_dataset(tmp_path_factory):
    """The 200-clip synthetic corpus: (clip, commanded actions) pairs."""
    from aerokit import synthworld as sw
    from aerokit.dataio import list_clip_dirs, load_clip, load_imu, resample_imu

    root = tmp_path_factory.mktemp("accept_data")
    sw.generate_dataset(
        str(root),
        ACCEPT_CLIPS,
        ACCEPT_SEED,
        T=ACCEPT_FRAMES,
        height=ACCEPT_SIZE,
        width=ACCEPT_SIZE,
    )
    pairs = []
    for d in list_clip_dirs(str(root)):
        clip = load_clip(d)
        stream = load_imu(os.path.join(d, "imu.csv"))
        cmd = resample_imu(stream, clip.fps, clip.frames.shape[0], clip.t0)
        pairs.append((clip, cmd))
    return pairs


@pytest.fixture(scope="session")
def accept_splits(accept_dataset):
    """Train/val split plus frozen encoder, ranges, and labeled latent sets.

    The training set carries the four mirror variants of every clip; the
    validation set stays untouched.
    """
    from aerokit import synthworld as sw
    from aerokit.pseudovae import EncoderConfig, encode, fit_stats, label_pool
    from aerokit.quantizer import causal_shift, fit_ranges

    val_idx = set(range(4, len(accept_dataset), 5))
    train_raw = [p for i, p in enumerate(accept_dataset) if i not in val_idx]
    val_raw = [p for i, p in enumerate(accept_dataset) if i in val_idx]
    ranges = fit_ranges([cmd for _, cmd in train_raw])
    enc = fit_stats([clip for clip, _ in train_raw], EncoderConfig(seed=0))
    s_t = enc.strides[0]

    train_set = []
    for clip, cmd in train_raw:
        for mu, mv in ((False, False), (True, False), (False, True), (True, True)):
            c2 = sw.mirror_clip(clip, mu, mv) if (mu or mv) else clip
            a2 = sw.mirror_actions(cmd, mu, mv) if (mu or mv) else cmd
            train_set.append(
                (encode(c2, enc), label_pool(causal_shift(a2), ranges, s_t))
            )
    val_set = [
        (encode(clip, enc), label_pool(causal_shift(cmd), ranges, s_t))
        for clip, cmd in val_raw
    ]
    val_pairs = [(encode(clip, enc), cmd) for clip, cmd in val_raw]
    train_pairs = [(encode(clip, enc), cmd) for clip, cmd in train_raw]
    return {
        "train_raw": train_raw,
        "val_raw": val_raw,
        "ranges": ranges,
        "enc": enc,
        "train_set": train_set,
        "val_set": val_set,
        "train_pairs": train_pairs,
        "val_pairs": val_pairs,
    }


@pytest.fixture(scope="session")
def accept_probe(accept_splits):
    """Probe trained at acceptance scale; elapsed wall time rides along."""
    from aerokit.probe import ProbeConfig, train_probe

    t0 = time.monotonic()
    model = train_probe(
        accept_splits["train_set"],
        accept_splits["val_set"],
        cfg=ProbeConfig(),
        epochs=PROBE_EPOCHS,
        lr=PROBE_LR,
        batch=PROBE_BATCH,
        seed=0,
    )
    return {"model": model, "train_seconds": time.monotonic() - t0}
