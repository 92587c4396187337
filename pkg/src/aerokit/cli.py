"""Single-binary pipeline driver.

Subcommands cover the full loop: synthesize clips, train/evaluate the probe,
fit/evaluate the flow evaluator, train/evaluate the generator, and render
report tables. Exit codes: 0 success, 1 runtime failure, 2 usage error.
Verbosity via AEROKIT_LOG in {quiet, info, debug}.
"""

import argparse
import functools
import hashlib
import json
import logging
import os
import re
import sys

import numpy as np

from . import __version__, synthworld
from .dataio import (
    AXIS_NAMES,
    list_clip_dirs,
    load_clip,
    load_imu,
    read_report,
    resample_imu,
    write_report,
)
from .errors import AerokitError, MissingArtifactError, SchemaError
from .metrics import (
    aas_eval,
    build_report,
    cv_lambda,
    fit_ridge,
    flow_imu_correlation,
    flow_imu_rows,
    load_ridge,
    pcr_eval,
    save_ridge,
)
from .probe import (
    ProbeConfig,
    freeze,
    load_probe,
    majority_baseline,
    probe_accuracy,
    probe_checksum,
    save_probe,
    train_probe,
)
from .pseudovae import EncoderConfig, encode, fit_stats, label_pool
from .quantizer import causal_shift, fit_ranges, load_ranges, save_ranges
from .trainer import (
    GenConfig,
    eval_generator,
    load_generator,
    save_generator,
    train_generator,
)

log = logging.getLogger("aerokit")

_REPORT_SECTIONS = ("aas", "pcr", "flow_imu_r")


def _fingerprint(config):
    blob = json.dumps(config, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _stamp(seed, config):
    return {
        "seed": int(seed),
        "config_fingerprint": _fingerprint(config),
        "version": __version__,
    }


def _require(path, what):
    if not os.path.exists(path):
        raise MissingArtifactError(f"{what} not found: {path}")
    return path


def _clip_dirs(root):
    _require(root, "data directory")
    dirs = list_clip_dirs(root)
    if not dirs:
        raise MissingArtifactError(f"no clip directories under {root}")
    return dirs


def _map_clips(fn, items, workers):
    """Apply fn per clip; result order is input (sorted clip id) order, so the
    worker count never changes the merged output."""
    if workers <= 1:
        return [fn(it) for it in items]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=1))


# module-level so ProcessPoolExecutor can pickle them


def _read_clip_pair(clip_dir):
    clip = load_clip(clip_dir)
    stream = load_imu(os.path.join(clip_dir, "imu.csv"))
    commanded = resample_imu(stream, clip.fps, clip.frames.shape[0], clip.t0)
    return clip, commanded


def _read_latent_pair(clip_dir, enc):
    clip, commanded = _read_clip_pair(clip_dir)
    return encode(clip, enc), commanded


def _read_flow_rows(clip_dir):
    clip, commanded = _read_clip_pair(clip_dir)
    return flow_imu_rows(clip.frames, commanded)


def _synth_shard(out, count, seed, frames, height, width, start):
    synthworld.generate_dataset(
        out, count, seed, T=frames, height=height, width=width, start_index=start
    )
    return count


def _encoder_from_meta(meta, what):
    enc = meta.get("encoder")
    if not enc:
        raise SchemaError(f"{what} lacks embedded encoder stats")
    return EncoderConfig(
        channels=enc["channels"],
        strides=tuple(enc["strides"]),
        seed=enc["seed"],
        mean=tuple(enc["mean"]),
        std=tuple(enc["std"]),
    )


def _ranges_from_meta(meta, what):
    from .quantizer import AxisRange

    rs = meta.get("ranges")
    if not rs:
        raise SchemaError(f"{what} lacks embedded quantizer ranges")
    return tuple(AxisRange(m=r[0], M=r[1], K=int(r[2])) for r in rs)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth_gen(args):
    h, w = args.size
    os.makedirs(args.out, exist_ok=True)
    if args.workers <= 1:
        synthworld.generate_dataset(
            args.out, args.clips, args.seed, T=args.frames, height=h, width=w
        )
    else:
        from concurrent.futures import ProcessPoolExecutor

        per = -(-args.clips // args.workers)
        shards = []
        start = 0
        while start < args.clips:
            count = min(per, args.clips - start)
            shards.append((args.out, count, args.seed, args.frames, h, w, start))
            start += count
        with ProcessPoolExecutor(max_workers=args.workers) as ex:
            list(ex.map(_synth_shard, *zip(*shards)))
    config = {
        "clips": args.clips,
        "frames": args.frames,
        "height": h,
        "width": w,
    }
    manifest = {**config, **_stamp(args.seed, config)}
    with open(os.path.join(args.out, "manifest.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    log.info("wrote %d clips under %s", args.clips, args.out)
    return 0


def _labeled_pairs(dirs, enc, ranges, workers):
    pairs = _map_clips(functools.partial(_read_latent_pair, enc=enc), dirs, workers)
    s_t = enc.strides[0]
    return [
        (z, label_pool(causal_shift(cmd), ranges, s_t)) for z, cmd in pairs
    ], pairs


def cmd_probe_train(args):
    dirs = _clip_dirs(args.data)
    if len(dirs) < 2:
        raise ValueError("probe training needs at least 2 clips (train + val)")
    val_dirs = dirs[4::5] or [dirs[-1]]
    train_dirs = [d for d in dirs if d not in val_dirs]
    log.info("%d train / %d val clips", len(train_dirs), len(val_dirs))

    train_raw = _map_clips(_read_clip_pair, train_dirs, args.workers)
    ranges = fit_ranges([cmd for _, cmd in train_raw])
    enc = fit_stats([clip for clip, _ in train_raw], EncoderConfig(seed=args.seed))
    s_t = enc.strides[0]
    variants = [(False, False)]
    if not args.no_augment:
        variants += [(True, False), (False, True), (True, True)]
    train_set = []
    for clip, cmd in train_raw:
        for mu, mv in variants:
            c2 = synthworld.mirror_clip(clip, mu, mv) if (mu or mv) else clip
            a2 = synthworld.mirror_actions(cmd, mu, mv) if (mu or mv) else cmd
            train_set.append(
                (encode(c2, enc), label_pool(causal_shift(a2), ranges, s_t))
            )
    del train_raw
    val_set, _ = _labeled_pairs(val_dirs, enc, ranges, args.workers)

    model = train_probe(
        train_set,
        val_set,
        cfg=ProbeConfig(in_channels=enc.channels),
        epochs=args.epochs,
        lr=args.lr,
        batch=args.batch,
        seed=args.seed,
        log=log.info,
    )
    config = {
        "epochs": args.epochs,
        "lr": args.lr,
        "batch": args.batch,
        "augment": not args.no_augment,
        "n_train": len(train_dirs),
        "n_val": len(val_dirs),
    }
    model.meta.update(
        {
            "encoder": {
                "channels": enc.channels,
                "strides": list(enc.strides),
                "seed": enc.seed,
                "mean": list(enc.mean),
                "std": list(enc.std),
            },
            "ranges": [[r.m, r.M, r.K] for r in ranges],
            **_stamp(args.seed, config),
        }
    )
    save_probe(model, args.out)
    save_ranges(ranges, args.out + ".ranges")
    print(f"probe saved to {args.out}  val_accuracy={model.meta['val_accuracy']:.4f}")
    return 0


def cmd_probe_eval(args):
    _require(args.ckpt, "probe checkpoint")
    model = load_probe(args.ckpt)
    enc = _encoder_from_meta(model.meta, "probe checkpoint")
    ranges = _ranges_from_meta(model.meta, "probe checkpoint")
    dirs = _clip_dirs(args.data)
    eval_set, _ = _labeled_pairs(dirs, enc, ranges, args.workers)
    per_axis, mean = probe_accuracy(model, eval_set)
    maj_axis, maj_mean = majority_baseline(labels for _, labels in eval_set)
    chance = 1.0 / ranges[0].K
    print(f"{'axis':<6}{'accuracy':>10}{'majority':>10}{'chance':>10}")
    for j, name in enumerate(AXIS_NAMES):
        print(f"{name:<6}{per_axis[j]:>10.4f}{maj_axis[j]:>10.4f}{chance:>10.4f}")
    print(f"{'mean':<6}{mean:>10.4f}{maj_mean:>10.4f}{chance:>10.4f}")
    return 0


def cmd_eval(args):
    _require(args.probe, "probe checkpoint")
    _require(args.ranges, "ranges file")
    model = load_probe(args.probe)
    enc = _encoder_from_meta(model.meta, "probe checkpoint")
    ranges = load_ranges(args.ranges)
    dirs = _clip_dirs(args.data)
    pairs = _map_clips(functools.partial(_read_latent_pair, enc=enc), dirs, args.workers)
    aas_scores = aas_eval(model, pairs, ranges)
    pcr_scores = pcr_eval(model, [z for z, _ in pairs])
    config = {
        "probe_checksum": probe_checksum(model),
        "ranges": [[r.m, r.M, r.K] for r in ranges],
        "n_clips": len(dirs),
    }
    report = build_report(
        aas_scores=aas_scores,
        pcr_scores=pcr_scores,
        flow_imu=None,
        meta={"n_clips": len(dirs), **_stamp(model.meta.get("seed", 0), config)},
    )
    write_report(report, args.out)
    print(f"aas_mean={aas_scores[1]:.4f} pcr_mean={pcr_scores[1]:.4f} -> {args.out}")
    return 0


def cmd_flow_imu_fit(args):
    dirs = _clip_dirs(args.data)
    rows = _map_clips(_read_flow_rows, dirs, args.workers)
    X = np.vstack([r[0] for r in rows])
    Y = np.vstack([r[1] for r in rows])
    lam = cv_lambda(X, Y, seed=args.seed) if args.auto_lambda else args.lam
    model = fit_ridge(X, Y, lam=lam)
    config = {"lambda": lam, "auto": bool(args.auto_lambda), "n_clips": len(dirs)}
    save_ridge(model, args.out, meta=_stamp(args.seed, config))
    print(f"ridge lambda={lam:g} rows={X.shape[0]} -> {args.out}")
    return 0


def cmd_flow_imu_eval(args):
    _require(args.model, "ridge checkpoint")
    model = load_ridge(args.model)
    dirs = _clip_dirs(args.data)
    pairs = _map_clips(_read_clip_pair, dirs, args.workers)
    flow_pairs = [(clip.frames, cmd) for clip, cmd in pairs]
    per_axis, mean = flow_imu_correlation(model, flow_pairs)
    config = {"lambda": model.lam, "n_clips": len(dirs)}
    report = build_report(
        aas_scores=None,
        pcr_scores=None,
        flow_imu=(per_axis, mean),
        meta={"n_clips": len(dirs), **_stamp(model.meta.get("seed", 0), config)},
    )
    write_report(report, args.out)
    print(f"flow_imu_r mean={mean:.4f} -> {args.out}")
    return 0


def cmd_gen_train(args):
    _require(args.probe, "probe checkpoint")
    probe = load_probe(args.probe)
    freeze(probe)
    enc = _encoder_from_meta(probe.meta, "probe checkpoint")
    ranges = _ranges_from_meta(probe.meta, "probe checkpoint")
    dirs = _clip_dirs(args.data)
    dataset = _map_clips(
        functools.partial(_read_latent_pair, enc=enc), dirs, args.workers
    )
    cfg = GenConfig(
        lambda_phys=args.lambda_phys,
        warmup_steps=args.warmup,
        total_steps=args.steps,
        lr=args.lr,
        batch=args.batch,
        seed=args.seed,
    )
    log_path = args.out + ".log.csv"
    with open(log_path, "w", encoding="utf-8") as fh:
        model = train_generator(dataset, probe, ranges, cfg, log=fh)
    config = {
        "lambda_phys": args.lambda_phys,
        "warmup": args.warmup,
        "steps": args.steps,
        "lr": args.lr,
        "batch": args.batch,
        "probe_checksum": probe_checksum(probe),
        "n_clips": len(dirs),
    }
    model.meta.update(_stamp(args.seed, config))
    save_generator(model, args.out)
    print(
        f"generator saved to {args.out}  final_l_rec={model.meta['final_l_rec']:.6f}"
        f"  log={log_path}"
    )
    return 0


def cmd_gen_eval(args):
    _require(args.gen, "generator checkpoint")
    _require(args.probe, "probe checkpoint")
    gen = load_generator(args.gen)
    probe = load_probe(args.probe)
    freeze(probe)
    enc = _encoder_from_meta(probe.meta, "probe checkpoint")
    ranges = _ranges_from_meta(probe.meta, "probe checkpoint")
    dirs = _clip_dirs(args.data)
    eval_set = _map_clips(
        functools.partial(_read_latent_pair, enc=enc), dirs, args.workers
    )
    report = eval_generator(gen, probe, ranges, eval_set)
    config = {
        "probe_checksum": probe_checksum(probe),
        "lambda_phys": gen.config.lambda_phys,
        "n_clips": len(dirs),
    }
    report["meta"].update(_stamp(gen.config.seed, config))
    write_report(report, args.out)
    print(f"aas_mean={report['aas']['mean']:.4f} -> {args.out}")
    return 0


def _report_table(names, reports):
    for key in _REPORT_SECTIONS:
        present = [r[key] is not None for r in reports]
        if any(present) and not all(present):
            raise SchemaError(f"reports disagree on section {key!r}")
    delta = len(reports) == 2
    width = max(12, max(len(n) for n in names) + 2)
    head = f"{'section':<12}{'axis':<6}" + "".join(f"{n:>{width}}" for n in names)
    if delta:
        head += f"{'delta':>{width}}"
    lines = [head]
    csv_rows = [
        ["section", "axis"] + names + (["delta"] if delta else [])
    ]
    for key in _REPORT_SECTIONS:
        if reports[0][key] is None:
            continue
        rows = [(name, [r[key]["per_axis"][j] for r in reports]) for j, name in enumerate(AXIS_NAMES)]
        rows.append(("mean", [r[key]["mean"] for r in reports]))
        for axis, vals in rows:
            line = f"{key:<12}{axis:<6}" + "".join(f"{v:>{width}.4f}" for v in vals)
            row = [key, axis] + [f"{v:.6f}" for v in vals]
            if delta:
                d = vals[1] - vals[0]
                line += f"{d:>+{width}.4f}"
                row.append(f"{d:+.6f}")
            lines.append(line)
            csv_rows.append(row)
    return "\n".join(lines), csv_rows


def cmd_report(args):
    reports = [read_report(p) for p in args.reports]
    names = []
    for p in args.reports:
        base = os.path.splitext(os.path.basename(p))[0]
        names.append(base if base not in names else p)
    table, csv_rows = _report_table(names, reports)
    print(table)
    if args.csv:
        fps = [r["meta"].get("config_fingerprint", "?") if isinstance(r.get("meta"), dict) else "?" for r in reports]
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(f"# aerokit {__version__} sources={';'.join(fps)}\n")
            for row in csv_rows:
                fh.write(",".join(row) + "\n")
        log.info("wrote %s", args.csv)
    return 0


# ---------------------------------------------------------------------------
# argument plumbing


def _size(text):
    m = re.fullmatch(r"(\d+)x(\d+)", text)
    if not m:
        raise argparse.ArgumentTypeError(f"size must be HxW, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def _parser():
    p = argparse.ArgumentParser(
        prog="aerokit",
        description="synthetic aerial clips, inertial probe, alignment metrics",
    )
    p.add_argument("--version", action="version", version=f"aerokit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, workers=True):
        if workers:
            sp.add_argument("--workers", type=int, default=1, help="per-clip parallelism")

    sp = sub.add_parser("synth-gen", help="render a synthetic clip dataset")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--clips", type=int, required=True)
    sp.add_argument("--frames", type=int, default=33)
    sp.add_argument("--size", type=_size, default=(64, 64), help="HxW, default 64x64")
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_synth_gen)

    sp = sub.add_parser("probe-train", help="train the latent inertial probe")
    sp.add_argument("--data", required=True)
    sp.add_argument("--epochs", type=int, default=25)
    sp.add_argument("--lr", type=float, default=1e-4)
    sp.add_argument("--batch", type=int, default=32)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument(
        "--no-augment",
        action="store_true",
        help="skip the four mirror variants of each training clip",
    )
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_probe_train)

    sp = sub.add_parser("probe-eval", help="accuracy vs majority/chance baselines")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True)
    common(sp)
    sp.set_defaults(func=cmd_probe_eval)

    sp = sub.add_parser("eval", help="AAS/PCR report for encoded clips")
    sp.add_argument("--probe", required=True)
    sp.add_argument("--ranges", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("flow-imu-fit", help="fit the flow-based evaluator")
    sp.add_argument("--data", required=True)
    sp.add_argument("--lambda", dest="lam", type=float, default=1.0)
    sp.add_argument("--auto-lambda", action="store_true", help="pick lambda by CV")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_flow_imu_fit)

    sp = sub.add_parser("flow-imu-eval", help="per-axis correlation report")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_flow_imu_eval)

    sp = sub.add_parser("gen-train", help="train the probe-regularized generator")
    sp.add_argument("--data", required=True)
    sp.add_argument("--probe", required=True)
    sp.add_argument("--lambda-phys", type=float, default=0.2)
    sp.add_argument("--warmup", type=int, default=500)
    sp.add_argument("--steps", type=int, default=5000)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--batch", type=int, default=8)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_gen_train)

    sp = sub.add_parser("gen-eval", help="score generator rollouts with the probe")
    sp.add_argument("--gen", required=True)
    sp.add_argument("--probe", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_gen_eval)

    sp = sub.add_parser("report", help="side-by-side table from report files")
    sp.add_argument("reports", nargs="+")
    sp.add_argument("--csv", help="also write machine-readable CSV")
    sp.set_defaults(func=cmd_report)

    return p


def _setup_logging():
    level_name = os.environ.get("AEROKIT_LOG", "info")
    levels = {"quiet": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level_name not in levels:
        print(
            f"error: usage: AEROKIT_LOG must be one of quiet|info|debug, got {level_name!r}",
            file=sys.stderr,
        )
        return None
    logging.basicConfig(
        level=levels[level_name], format="%(levelname)s %(name)s: %(message)s"
    )
    return levels[level_name]


def main(argv=None):
    if _setup_logging() is None:
        return 2
    try:
        args = _parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except AerokitError as e:
        print(f"error: {e.category}: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError, RuntimeError, KeyError) as e:
        print(f"error: runtime_error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
