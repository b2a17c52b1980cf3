"""Command line entry point: train, gradient self-check, prune reporting."""

from __future__ import annotations

import argparse
import os
import sys

from .checkpoint import load_checkpoint
from .config import (ConfigError, build_datasets, build_model, load_config,
                     train_config_from)
from .gradcheck import CHECKS, run_checks
from .pruning import PruneManager
from .training import TrainDivergence, train


def cmd_train(args) -> int:
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg["seed"] = args.seed
    try:
        model = build_model(cfg)
        train_ds, test_ds = build_datasets(cfg)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    tcfg = train_config_from(cfg)
    manager = PruneManager(model) if model.gates() else None
    out_dir = cfg["out_dir"]
    try:
        train(model, train_ds, test_ds, tcfg, out_dir=out_dir, manager=manager,
              checkpoint_meta={"run_config": cfg})
    except TrainDivergence as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 1
    if manager is not None:
        report = manager.snapshot(step=-1)
        with open(os.path.join(out_dir, "prune_report.txt"), "w") as fh:
            fh.write(report.to_text())
    print(f"done: metrics and checkpoint under {out_dir}")
    return 0


def cmd_gradcheck(args) -> int:
    names = None if args.all else [args.op]
    try:
        results = run_checks(names, tolerance=args.tolerance)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 2
    failed = []
    for name, err, ok in results:
        print(f"{name:>16s}: max rel err {err:.3e}  {'pass' if ok else 'FAIL'}")
        if not ok:
            failed.append(name)
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_report(args) -> int:
    try:
        arrays, manifest = load_checkpoint(args.checkpoint)
        run_cfg = manifest["meta"].get("run_config")
        if run_cfg is None:
            raise ValueError("checkpoint carries no run_config; cannot rebuild model")
        model = build_model(run_cfg)
        model.load_params(arrays)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error reading checkpoint: {exc}", file=sys.stderr)
        return 2
    if not model.gates():
        print("model has no gates; nothing to report")
        return 0
    manager = PruneManager(model)
    report = manager.snapshot(step=manifest["meta"].get("step", 0))
    report.events = [tuple(e) for e in manifest["meta"].get("events", [])]
    print(report.to_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskprune",
        description="train networks while pruning them through threshold gates")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training configuration")
    p_train.add_argument("--config", required=True, help="path to a JSON run config")
    p_train.add_argument("--seed", type=int, default=None, help="override run seed")
    p_train.set_defaults(func=cmd_train)

    p_grad = sub.add_parser("gradcheck", help="finite-difference self check")
    group = p_grad.add_mutually_exclusive_group(required=True)
    group.add_argument("--op", choices=sorted(CHECKS), help="check one op")
    group.add_argument("--all", action="store_true", help="check every op")
    p_grad.add_argument("--tolerance", type=float, default=1e-4)
    p_grad.set_defaults(func=cmd_gradcheck)

    p_rep = sub.add_parser("report", help="print the prune report of a checkpoint")
    p_rep.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
