"""``recipekit`` command-line entry point.

Exit codes: 0 success, 1 run or audit failure, 2 usage or configuration error.
"""

import argparse
import logging
import os
import sys
import time

from ..checkpoint import CheckpointError
from ..imageops.pipeline import ConfigError
from ..imageops.policy import PolicyError
from ..inference import FusionError, ProbMatrixFormatError
from ..optim import TrainingError
from . import commands
from .config import apply_overrides, load_config, preset
from .data import DatasetError, centroid_baseline, load_dataset, make_synthetic

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _common(p, out_default=None):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--preset", default="desk", help="base preset: desk or paper")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", default=out_default, help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="recipekit", description=__doc__.splitlines()[0])
    parser.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training stage")
    _common(p)
    p.add_argument("--init-checkpoint", help="stage-1 checkpoint to fine-tune from")
    p.add_argument("--from-scratch", action="store_true",
                   help="allow a metric-loss mode without an init checkpoint")
    p.add_argument("--merge-splits", action="store_true",
                   help="train on train_manifest plus val_manifest")

    p = sub.add_parser("eval", help="predict a manifest and write a ProbMatrix file")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", help="defaults to val_manifest")
    p.add_argument("--tta", choices=("on", "off"), default="on")

    p = sub.add_parser("ensemble", help="average ProbMatrix files")
    _common(p)
    p.add_argument("probs", nargs="+", help="ProbMatrix files")
    p.add_argument("--manifest", help="labels; defaults to val_manifest")

    p = sub.add_parser("augment-preview", help="dump augmentation intermediates as PPM")
    _common(p, "preview")
    p.add_argument("-n", type=int, default=8)

    p = sub.add_parser("grad-check", help="finite-difference gradient audits")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=50)

    p = sub.add_parser("make-synthetic", help="generate the desk-scale synthetic dataset")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--val-per-class", type=int, default=50)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="data")
    return parser


def resolve_config(args):
    """Preset, then config file, then ``--set``, then dedicated flags."""
    cfg = preset(args.preset)
    if args.config:
        cfg = load_config(args.config, cfg)
    cfg = apply_overrides(cfg, args.overrides, os.getcwd())
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.threads is not None:
        changes["threads"] = args.threads
    if getattr(args, "out", None):
        changes["out_dir"] = os.path.abspath(args.out)
    if getattr(args, "init_checkpoint", None):
        changes["init_checkpoint"] = os.path.abspath(args.init_checkpoint)
    if getattr(args, "from_scratch", False):
        changes["from_scratch"] = True
    if getattr(args, "merge_splits", False):
        changes["merge_splits"] = True
    return cfg.replace(**changes).validate()


def _run(args, echo):
    if args.command == "make-synthetic":
        paths = make_synthetic(args.out, args.classes, args.per_class, args.val_per_class,
                               args.size, args.seed)
        base = centroid_baseline(load_dataset(paths["train"]), load_dataset(paths["val"]))
        echo(f"wrote {args.classes} classes to {args.out}; "
             f"mean-colour nearest-centroid val top1={base:.4f}")
        return EXIT_OK

    if args.command == "grad-check":
        from ..gradcheck import run_audits

        started = time.perf_counter()
        results = run_audits(args.seed, args.points)
        for r in results:
            echo(f"{'PASS' if r.passed else 'FAIL'} {r.name}: worst rel err {r.worst:.3e} "
                 f"(tol {r.tol:g}, {r.points} points)")
        echo(f"grad-check finished in {time.perf_counter() - started:.1f}s")
        return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL

    cfg = resolve_config(args)
    if args.command == "train":
        commands.train(cfg, echo)
    elif args.command == "eval":
        manifest = args.manifest or cfg.val_manifest
        if not manifest:
            raise ConfigError("eval needs --manifest or val_manifest")
        out = os.path.join(cfg.out_dir, commands.PROBS_NAME)
        commands.write_resolved(cfg, cfg.out_dir)
        commands.evaluate(cfg, args.checkpoint, manifest, args.tta == "on", out, echo)
    elif args.command == "ensemble":
        manifest = args.manifest or cfg.val_manifest
        if not manifest:
            raise ConfigError("ensemble needs --manifest or val_manifest")
        os.makedirs(cfg.out_dir, exist_ok=True)
        commands.ensemble(args.probs, manifest, os.path.join(cfg.out_dir, commands.PROBS_NAME),
                          echo)
    elif args.command == "augment-preview":
        commands.write_resolved(cfg, cfg.out_dir)
        commands.augment_preview(cfg, args.n, cfg.out_dir, echo)
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    echo = (lambda *_: None) if args.quiet else print
    try:
        return _run(args, echo)
    except (ConfigError, PolicyError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, CheckpointError, FusionError, ProbMatrixFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
