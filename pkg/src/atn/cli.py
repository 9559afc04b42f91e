"""Command line interface: train, gradcheck, stats, ksweep, gen-task, plot."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import harness, tasks
from .harness import ConfigError, TrainConfig, load_config
from .numkit import Rng

GRADCHECK_TOLERANCE = 1e-6


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--quick", action="store_true",
                        help="apply the config file's quick_* preset keys")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config field (repeatable)")


def _config_from_args(args) -> TrainConfig:
    overrides: dict = {}
    defaults = TrainConfig()
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        key = key.strip()
        if not hasattr(defaults, key):
            raise ConfigError(f"unknown config key {key!r}")
        overrides[key] = harness._coerce(value, type(getattr(defaults, key)))
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    return load_config(args.config, overrides, quick=args.quick)


def _cmd_train(args) -> int:
    cfg = _config_from_args(args)
    row = harness.run_training(cfg)
    print(f"final: iteration={row.iteration} train_loss={row.train_loss:.6g} "
          f"val_loss={row.val_loss:.6g}")
    print(f"metrics written to {os.path.join(cfg.output_dir, 'metrics.csv')}")
    return 0


def _cmd_gradcheck(args) -> int:
    report = harness.run_gradcheck(
        n=args.n, d=args.d, k=args.k, T=args.T, mode=args.mode,
        seed=args.seed, batch=args.batch,
        stop_window_gradient=args.stop_window_gradient)
    ok = True
    for name, err in sorted(report.items()):
        passed = err <= GRADCHECK_TOLERANCE
        ok = ok and passed
        print(f"{'PASS' if passed else 'FAIL'}  {name:12s} max relative error {err:.3e}")
    print(f"gradcheck {'passed' if ok else 'FAILED'} "
          f"(tolerance {GRADCHECK_TOLERANCE:g})")
    return 0 if ok else 1


def _cmd_stats(args) -> int:
    cfg = _config_from_args(args)
    records = harness.run_stats(cfg)
    print(f"{len(records)} records written to "
          f"{os.path.join(cfg.output_dir, 'stats.json')}")
    return 0


def _cmd_ksweep(args) -> int:
    cfg = _config_from_args(args)
    k_list = [int(k) for k in args.k_list.split(",")]
    finals = harness.run_ksweep(cfg, k_list)
    for k, row in zip(k_list, finals):
        print(f"k={k}: final train_loss={row.train_loss:.6g} "
              f"val_loss={row.val_loss:.6g}")
    return 0


def _cmd_gen_task(args) -> int:
    rng = Rng(args.seed)
    if args.task == "copy":
        batch = tasks.gen_copy(args.T, args.batch, rng)
    elif args.task == "add":
        batch = tasks.gen_add(args.T, args.batch, rng)
    elif args.task == "denoise":
        batch = tasks.gen_denoise(args.T, args.batch, rng)
    else:
        print(f"gen-task does not support task {args.task!r}", file=sys.stderr)
        return 2
    payload = {
        "task": batch.name,
        "T": batch.T,
        "batch": batch.batch,
        "inputs": batch.inputs.tolist(),
        "targets": np.asarray(batch.targets).tolist(),
        "loss_mask": batch.loss_mask.tolist(),
        "baseline": batch.baseline,
    }
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "batch.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"batch written to {path}")
    return 0


def _cmd_plot(args) -> int:
    from . import report
    if args.what == "metrics":
        out = report.plot_metrics(args.files, args.out, baseline=args.baseline)
    else:
        if len(args.files) != 1:
            print("plot stats expects exactly one JSON file", file=sys.stderr)
            return 2
        out = report.plot_stats(args.files[0], args.out)
    print(f"figure written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="atn",
        description="Train and analyze LSTMs with windowed (assorted-time) "
                    "normalization on synthetic sequence tasks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training experiment, emit metrics.csv")
    _add_common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("gradcheck",
                       help="verify analytic gradients against finite differences")
    p.add_argument("--mode", choices=harness.MODES, default="atn")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--T", type=int, default=10)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stop-window-gradient", action="store_true",
                   help="truncate the window backward path (expected to fail)")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("stats",
                       help="post-normalization statistics on the adding task, "
                            "emit stats.json")
    _add_common(p)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("ksweep", help="train once per window length")
    _add_common(p)
    p.add_argument("--k-list", required=True, help="comma-separated window lengths")
    p.set_defaults(func=_cmd_ksweep)

    p = sub.add_parser("gen-task", help="dump one generated batch as JSON")
    p.add_argument("--task", required=True, choices=("copy", "add", "denoise"))
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.set_defaults(func=_cmd_gen_task)

    p = sub.add_parser("plot", help="render figures from metrics.csv / stats.json")
    p.add_argument("what", choices=("metrics", "stats"))
    p.add_argument("files", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--baseline", type=float)
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
