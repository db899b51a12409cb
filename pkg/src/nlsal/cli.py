"""Command-line front end: train, infer, eval, ablate, gradcheck.

Exit codes are a stable contract: 0 success, 1 usage or configuration
error, 2 runtime or data error.
"""

import argparse
import hashlib
import sys
import time
from pathlib import Path

import numpy as np

from . import gradcheck as gradcheck_mod
from .ablate import ablation_sweep, format_table, write_ablation_csv
from .config import ConfigError, RunConfig, load_config, write_resolved
from .data import (
    DataError,
    Sequence,
    dynamic_samples,
    list_images,
    load_frame,
    load_groundtruth,
    load_map_bytes,
    pair_consecutive,
    save_map,
    scan_dataset,
    static_samples,
    stem_id,
    stem_key,
    synth_frames,
)
from .metrics import (
    MetricInputError,
    evaluate_set,
    resize_bilinear,
    resize_nearest,
    write_pr_csv,
    write_roc_csv,
    write_summary,
)
from .nets import (
    build_dynamic_net,
    build_static_net,
    dynamic_forward,
    pad_amounts,
    static_forward,
)
from .tensor import ShapeError, Tensor
from .train import TrainingError, train_stage, write_loss_trace
from .weights import WeightFormatError, load_weights, save_weights

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; the contract here says 1
    def error(self, message):
        raise UsageError(message)


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _prep_frame(arr, resolution):
    if resolution and arr.shape[:2] != (resolution, resolution):
        arr = resize_bilinear(arr, resolution, resolution)
    return arr[None, :, :, :]


def _prep_mask(mask, resolution):
    if resolution and mask.shape != (resolution, resolution):
        mask = resize_nearest(mask, resolution, resolution)
    return mask


def _synth_sequences(cfg):
    return synth_frames(
        frames=cfg.synth_frames,
        size=cfg.synth_size,
        motion=cfg.synth_motion,
        seed=cfg.seed,
        distractor=cfg.synth_distractor,
        sequences=cfg.synth_sequences,
    )


def _static_training_samples(cfg):
    if cfg.dataset == "synth":
        samples = []
        for seq in _synth_sequences(cfg):
            for frame, mask in zip(seq["frames"], seq["masks"]):
                samples.append(
                    (_prep_frame(frame, cfg.resolution), _prep_mask(mask, cfg.resolution))
                )
        return samples
    frameset = scan_dataset(cfg.dataset)
    return static_samples(frameset, cfg.resolution, cfg.flatten_gt)


def _dynamic_training_samples(cfg, static_net):
    if cfg.dataset == "synth":
        samples = []
        for seq in _synth_sequences(cfg):
            frames = [_prep_frame(f, cfg.resolution) for f in seq["frames"]]
            masks = [_prep_mask(m, cfg.resolution) for m in seq["masks"]]
            for i, (i_t, gt) in enumerate(zip(frames, masks)):
                i_t1 = frames[i + 1] if i + 1 < len(frames) else i_t
                s_t = static_forward(static_net, Tensor(i_t)).data
                samples.append((i_t, i_t1, s_t, gt))
        return samples
    frameset = scan_dataset(cfg.dataset)
    return dynamic_samples(frameset, static_net, cfg.resolution, cfg.flatten_gt)


def _load_net_weights(net, path):
    net.load_state(load_weights(path))
    return net


def _apply_overrides(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "stage", None):
        cfg.stage = args.stage
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    return cfg.validate()


def _checkpointer(out_dir, stage, net):
    def write(iteration):
        save_weights(out_dir / f"checkpoint_{stage}_{iteration:05d}.nlw",
                     net.state_arrays())

    return write


def cmd_train(args):
    cfg = _apply_overrides(load_config(args.config), args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(out / "config_resolved.txt", cfg)

    stages = ("static", "dynamic") if cfg.stage == "both" else (cfg.stage,)
    static_path = args.static_weights

    if "static" in stages:
        net = build_static_net(cfg.network_spec(3), seed=[cfg.seed, 0])
        samples = _static_training_samples(cfg)
        trace = train_stage(
            net, samples, cfg.train_config("static"), seed=[cfg.seed, 1],
            checkpoint_every=cfg.checkpoint_every,
            checkpoint_fn=_checkpointer(out, "static", net),
        )
        save_weights(out / "static.nlw", net.state_arrays())
        write_loss_trace(out / "loss_static.txt", trace)
        static_path = out / "static.nlw"
        print(f"static: {len(trace)} iterations, "
              f"final loss {trace[-1][1]:.4f}, weights -> {out / 'static.nlw'}")

    if "dynamic" in stages:
        if static_path is None:
            raise UsageError(
                "training the dynamic stage requires --static-weights "
                "(or stage=both to train the static stage first)"
            )
        static_net = _load_net_weights(
            build_static_net(cfg.network_spec(3), seed=[cfg.seed, 0]), static_path
        )
        net = build_dynamic_net(cfg.network_spec(7), seed=[cfg.seed, 2])
        samples = _dynamic_training_samples(cfg, static_net)
        trace = train_stage(
            net, samples, cfg.train_config("dynamic"), seed=[cfg.seed, 3],
            checkpoint_every=cfg.checkpoint_every,
            checkpoint_fn=_checkpointer(out, "dynamic", net),
        )
        save_weights(out / "dynamic.nlw", net.state_arrays())
        write_loss_trace(out / "loss_dynamic.txt", trace)
        print(f"dynamic: {len(trace)} iterations, "
              f"final loss {trace[-1][1]:.4f}, weights -> {out / 'dynamic.nlw'}")
    return EXIT_OK


def cmd_infer(args):
    cfg = _apply_overrides(load_config(args.config), args)
    stage = cfg.stage if cfg.stage != "both" else "dynamic"
    in_dir, out = Path(args.in_dir), Path(args.out or cfg.out_dir)
    frames = list_images(in_dir)
    if not frames:
        raise DataError(f"no frames found in {in_dir}")
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(out / "config_resolved.txt", cfg)

    res = cfg.resolution
    meta = {
        "stage": stage,
        "resolution": res,
        "frames": len(frames),
        "weights": str(args.weights),
        "weights_sha256": _sha256(args.weights),
    }
    pb, pr = pad_amounts(res, res)
    meta["pad_bottom"], meta["pad_right"] = pb, pr

    if stage == "static":
        net = _load_net_weights(
            build_static_net(cfg.network_spec(3), seed=0), args.weights
        )
    else:
        if not args.static_weights:
            raise UsageError("dynamic inference requires --static-weights")
        net = _load_net_weights(
            build_dynamic_net(cfg.network_spec(7), seed=0), args.weights
        )
        static_net = _load_net_weights(
            build_static_net(cfg.network_spec(3), seed=0), args.static_weights
        )
        meta["static_weights"] = str(args.static_weights)
        meta["static_weights_sha256"] = _sha256(args.static_weights)

    records = pair_consecutive(Sequence(in_dir.name, [(str(p), None) for p in frames]))
    timings = []
    for rec in records:
        native = load_frame(rec.frame_t).data[0]
        h, w = native.shape[:2]
        x_t = Tensor(_prep_frame(native, res))
        t0 = time.perf_counter()
        if stage == "static":
            s = static_forward(net, x_t)
        else:
            nxt = load_frame(rec.frame_t1).data[0]
            x_t1 = Tensor(_prep_frame(nxt, res))
            s_t = static_forward(static_net, x_t)
            s = dynamic_forward(net, x_t, x_t1, s_t)
        timings.append(time.perf_counter() - t0)
        s_full = resize_bilinear(s.data[0, :, :, 0], h, w)
        save_map(out / (Path(rec.frame_t).stem + ".png"), s_full)

    mean_t = float(np.mean(timings[1:])) if len(timings) > 1 else float(timings[0])
    meta["mean_time_s"] = f"{mean_t:.4f}"
    with open(out / "timing.txt", "w") as fh:
        for rec, t in zip(records, timings):
            fh.write(f"{Path(rec.frame_t).stem}\t{t:.6f}\n")
    with open(out / "metadata.txt", "w") as fh:
        for k in sorted(meta):
            fh.write(f"{k} = {meta[k]}\n")
    print(f"{len(records)} maps -> {out} (mean {mean_t:.4f}s/frame, warm-up excluded)")
    return EXIT_OK


def cmd_eval(args):
    cfg = RunConfig() if not args.config else load_config(args.config)
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    maps_dir, gt_dir = Path(args.in_dir), Path(args.gt)
    maps = {stem_id(p.name): p for p in list_images(maps_dir)}
    gts = {stem_id(p.name): p for p in list_images(gt_dir)}
    shared = sorted(set(maps) & set(gts), key=stem_key)
    if not shared:
        raise DataError(f"no matching stems between {maps_dir} and {gt_dir}")
    report = evaluate_set(
        [load_map_bytes(maps[s]) for s in shared],
        [load_groundtruth(gts[s], flatten=cfg.flatten_gt) for s in shared],
    )
    if report.resized_frames:
        print(
            f"warning: {report.resized_frames} map(s) resized to ground-truth size",
            file=sys.stderr,
        )
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_summary(out / "summary.txt", report)
    write_pr_csv(out / "pr_curve.csv", report)
    write_roc_csv(out / "roc_curve.csv", report)
    print(report.summary(), end="")
    return EXIT_OK


def cmd_ablate(args):
    cfg = _apply_overrides(load_config(args.config), args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(out / "config_resolved.txt", cfg)

    timing_frame = synth_frames(frames=1, size=cfg.ablate_size, seed=cfg.seed)[0][
        "frames"
    ][0][None, :, :, :]
    samples = train_cfg = None
    if cfg.iterations > 0:
        samples = _static_training_samples(cfg)
        train_cfg = cfg.train_config("static")
    rows = ablation_sweep(
        cfg.network_spec(3),
        timing_frame,
        samples=samples,
        train_cfg=train_cfg,
        seed=cfg.seed,
        reps=cfg.ablate_reps,
    )
    write_ablation_csv(out / "ablation.csv", rows)
    table = format_table(rows)
    with open(out / "ablation.txt", "w") as fh:
        fh.write(table + "\n")
    print(table)
    return EXIT_OK


def cmd_gradcheck(args):
    results = gradcheck_mod.run_all(seed=args.seed if args.seed is not None else 0)
    print(gradcheck_mod.report(results))
    return EXIT_OK if all(p for _, _, p in results) else EXIT_RUNTIME


def build_parser():
    parser = _Parser(prog="nlsal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, **flags):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=fn)
        if flags.get("config"):
            p.add_argument("--config", required=flags["config"] == "required",
                           help="run configuration file (key=value lines)")
        if flags.get("weights"):
            p.add_argument("--weights", required=True, help="weight file")
        if flags.get("static_weights"):
            p.add_argument("--static-weights", dest="static_weights",
                           help="static-stage weight file (for the dynamic stage)")
        if flags.get("in_dir"):
            p.add_argument("--in", dest="in_dir", required=True,
                           help=flags["in_dir"])
        if flags.get("gt"):
            p.add_argument("--gt", required=True, help="ground-truth directory")
        if flags.get("out"):
            p.add_argument("--out", help="output directory")
        if flags.get("seed"):
            p.add_argument("--seed", type=int, help="deterministic seed override")
        if flags.get("stage"):
            p.add_argument("--stage", choices=flags["stage"], help="pipeline stage")
        return p

    add("train", cmd_train, "train the static and/or dynamic stage",
        config="required", static_weights=True, out=True, seed=True,
        stage=("static", "dynamic", "both"))
    add("infer", cmd_infer, "emit saliency maps for a directory of frames",
        config="required", weights=True, static_weights=True,
        in_dir="input frame directory", out=True, seed=True,
        stage=("static", "dynamic"))
    add("eval", cmd_eval, "score saliency maps against ground truth",
        config="optional", in_dir="saliency map directory", gt=True, out=True)
    add("ablate", cmd_ablate, "sweep non-local block placement and count",
        config="required", out=True, seed=True)
    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.set_defaults(func=cmd_gradcheck)
    p.add_argument("--seed", type=int, help="deterministic seed")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, WeightFormatError, ShapeError, TrainingError,
            MetricInputError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
