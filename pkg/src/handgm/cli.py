"""Command-line entry point: synth, cluster, init, train, infer, eval, ablation."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

import numpy as np

from . import io
from .clustering import purity
from .config import coerce, load_config, merge
from .experiment import (AblationConfig, WeightSource, empirical_pool, feature_of, fit_clusters,
                         predict_samples, run_ablation, score)
from .learning import TrainConfig, train_gm, write_loss_history
from .metrics import PckConfig, format_table
from .skeleton import build_default_hand_tree, message_schedule
from .synth import NoisyAngleProvider, SynthConfig, generate_dataset, unary_argmax_pose

log = logging.getLogger("handgm")


class CliError(Exception):
    pass


def _no_rotation(sample):
    return 0.0


def _angle_fn(opts):
    if opts["no_rotation"]:
        return _no_rotation
    return NoisyAngleProvider(opts["angle_noise"], opts["seed"])


def _load_samples(path):
    samples = io.read_dataset(path)
    if not samples:
        raise CliError(f"{path}: dataset is empty")
    shapes = {s.unaries.shape for s in samples}
    if len(shapes) != 1:
        raise CliError(f"{path}: heatmaps have mixed shapes {sorted(shapes)}")
    return samples


def _load_pool(path, tree, samples=None, clusters=None):
    pool = io.read_pool(path)
    if pool.edges != message_schedule(tree):
        raise CliError(f"{path}: pool edges do not match the 21-keypoint hand tree")
    if clusters is not None and clusters.n_clusters != pool.n_models:
        raise CliError(f"{path}: pool has {pool.n_models} models but the cluster model has "
                       f"{clusters.n_clusters} clusters; re-run init with the same cluster file")
    if samples is not None:
        h, w = samples[0].grid_shape
        if 2 * pool.radius + 1 > 2 * max(h, w) - 1:
            raise CliError(f"{path}: kernel radius {pool.radius} is too large for {h}x{w} heatmaps")
    return pool


def _load_clusters(path, tree):
    if path is None:
        return None
    model = io.read_clusters(path)
    expected = 2 * (tree.num_nodes - 1)
    if model.dim != expected:
        raise CliError(f"{path}: cluster features have {model.dim} dimensions, expected {expected}")
    return model


# subcommands

SYNTH_DEFAULTS = {f.name: f.default for f in dataclasses.fields(SynthConfig)}


def cmd_synth(opts):
    cfg = SynthConfig(**{k: opts[k] for k in SYNTH_DEFAULTS})
    samples = generate_dataset(cfg)
    io.write_dataset(opts["out"], samples)
    print(f"wrote {len(samples)} samples to {opts['out']}")


def cmd_cluster(opts):
    tree = build_default_hand_tree()
    samples = _load_samples(opts["data"])
    angle_fn = _angle_fn(opts)
    model = fit_clusters(samples, opts["clusters"], tree, angle_fn=angle_fn, seed=opts["seed"])
    io.write_clusters(opts["out"], model)
    labels = [int(model.assign(feature_of(s.grid_pose(), angle_fn(s), s.grid_shape, tree))[0]) for s in samples]
    counts = np.bincount(labels, minlength=model.n_clusters)
    print(f"clusters: {model.n_clusters}  sizes: {counts.tolist()}  tau: {model.tau:.6g}")
    truth = [s.prototype_id for s in samples]
    if all(t >= 0 for t in truth):
        print(f"purity vs prototypes: {purity(labels, truth):.4f}")


def cmd_init(opts):
    tree = build_default_hand_tree()
    samples = _load_samples(opts["data"])
    clusters = _load_clusters(opts["clusters"], tree)
    pool = empirical_pool(samples, clusters, tree, opts["radius"], angle_fn=_angle_fn(opts),
                          smoothing=opts["smoothing"])
    io.write_pool(opts["out"], pool)
    print(f"wrote pool with {pool.n_models} model(s), radius {pool.radius}, to {opts['out']}")


def cmd_train(opts):
    tree = build_default_hand_tree()
    samples = _load_samples(opts["data"])
    clusters = _load_clusters(opts["clusters"], tree)
    pool = _load_pool(opts["pool"], tree, samples, clusters)
    angle_fn = _angle_fn(opts)
    weights = WeightSource(clusters, tree, pool.n_models, opts["weights"], angle_fn)
    cfg = TrainConfig(lr=opts["lr"], epochs=opts["epochs"], batch_size=opts["batch_size"], seed=opts["seed"])
    trained, history = train_gm(pool, samples, tree, angle_fn, weights, cfg)
    io.write_pool(opts["out"], trained)
    if opts["loss_history"]:
        write_loss_history(opts["loss_history"], history)
    print("epoch,mean_loss")
    for epoch, loss in enumerate(history):
        print(f"{epoch},{loss!r}")


def cmd_infer(opts):
    tree = build_default_hand_tree()
    samples = _load_samples(opts["data"])
    clusters = _load_clusters(opts["clusters"], tree)
    pool = _load_pool(opts["pool"], tree, samples, clusters)
    angle_fn = _angle_fn(opts)
    angles = {s.sample_id: angle_fn(s) for s in samples}
    weight_src = WeightSource(clusters, tree, pool.n_models, opts["weights"], lambda s: angles[s.sample_id])
    preds = predict_samples(pool, tree, samples, lambda s: angles[s.sample_id], weight_src)
    records = [{"sample_id": s.sample_id, "keypoints": [[float(x), float(y)] for x, y in p],
                "angle": float(angles[s.sample_id]),
                "weights": [float(v) for v in weight_src(s)]}
               for s, p in zip(samples, preds)]
    io.write_predictions(opts["out"], records)
    print(f"wrote {len(records)} predictions to {opts['out']}")


def cmd_eval(opts):
    samples = _load_samples(opts["truth"])
    preds = {rec["sample_id"]: rec["keypoints"] for rec in io.read_predictions(opts["pred"])}
    missing = [s.sample_id for s in samples if s.sample_id not in preds]
    if missing:
        raise CliError(f"{opts['pred']}: no prediction for {len(missing)} sample(s), e.g. {missing[0]!r}")
    cfg = PckConfig(tuple(opts["thresholds"]))
    reports = {"mixture": score([preds[s.sample_id] for s in samples], samples, cfg)}
    if opts["baseline"] == "unary-argmax":
        reports["unary"] = score([unary_argmax_pose(s) for s in samples], samples, cfg)
    elif opts["baseline"] is not None:
        raise CliError(f"unknown baseline {opts['baseline']!r}; only 'unary-argmax' is available")
    print(format_table(reports))
    record = {"n_samples": len(samples), "reports": {k: r.as_record() for k, r in reports.items()}}
    line = json.dumps(record, sort_keys=True)
    print(line)
    if opts["report_out"]:
        with io.atomic_write(opts["report_out"], "w") as fh:
            fh.write(line + "\n")


ABLATION_DEFAULTS = {f.name: f.default for f in dataclasses.fields(AblationConfig) if f.name != "synth"}


def cmd_ablation(opts):
    cfg = AblationConfig(**{k: opts[k] for k in ABLATION_DEFAULTS})
    result = run_ablation(cfg)
    print(format_table(result.reports))
    print(f"cluster purity: {result.purity:.4f}   runtime: {result.seconds:.1f}s")
    print(json.dumps({"reports": {k: r.as_record() for k, r in result.reports.items()},
                      "purity": result.purity, "loss_history": result.histories}, sort_keys=True))


# argument parsing

COMMON = {"seed": 0, "no_rotation": False, "angle_noise": 0.0, "weights": "unary"}
COMMANDS = {
    "synth": (cmd_synth, {**SYNTH_DEFAULTS, "out": None}),
    "cluster": (cmd_cluster, {**COMMON, "data": None, "clusters": 4, "out": None}),
    "init": (cmd_init, {**COMMON, "data": None, "clusters": None, "radius": 12, "smoothing": 1.0, "out": None}),
    "train": (cmd_train, {**COMMON, "weights": "truth", "data": None, "pool": None, "clusters": None,
                          "lr": 1e-4, "epochs": 1, "batch_size": 32, "loss_history": None, "out": None}),
    "infer": (cmd_infer, {**COMMON, "data": None, "pool": None, "clusters": None, "out": None}),
    "eval": (cmd_eval, {"pred": None, "truth": None, "baseline": None, "report_out": None,
                        "thresholds": (0.01, 0.02, 0.03, 0.04, 0.05, 0.06)}),
    "ablation": (cmd_ablation, dict(ABLATION_DEFAULTS)),
}
REQUIRED = {
    "synth": ("out",), "cluster": ("data", "out"), "init": ("data", "out"),
    "train": ("data", "pool", "out"), "infer": ("data", "pool", "out"), "eval": ("pred", "truth"),
    "ablation": (),
}


def _flag_type(default):
    if isinstance(default, bool):
        return None
    if isinstance(default, (int, float)):
        return type(default)
    if isinstance(default, tuple):
        return lambda text: coerce(text, default)
    return str


def build_parser():
    parser = argparse.ArgumentParser(prog="handgm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    subs = parser.add_subparsers(dest="command", required=True)
    for name, (_, defaults) in COMMANDS.items():
        sub = subs.add_parser(name)
        sub.add_argument("--config", help="flat key = value file; flags win over it")
        for key, default in defaults.items():
            flag = "--" + key.replace("_", "-")
            if key == "thresholds":
                sub.add_argument(flag, type=float, nargs="+", default=None)
            elif isinstance(default, bool):
                sub.add_argument(flag, action="store_true", default=None)
            else:
                sub.add_argument(flag, type=_flag_type(default), default=None)
        if name == "eval":
            sub.add_argument("--json", dest="report_out", default=None, help=argparse.SUPPRESS)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func, defaults = COMMANDS[args.command]
    try:
        config = load_config(args.config) if args.config else {}
        flags = {k: v for k, v in vars(args).items() if k in defaults}
        opts = merge(defaults, config, flags)
        for key in REQUIRED[args.command]:
            if opts.get(key) is None:
                raise CliError(f"--{key.replace('_', '-')} is required (flag or config key)")
        func(opts)
    except (CliError, io.FormatError, FileNotFoundError, ValueError) as exc:
        print(f"handgm {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
