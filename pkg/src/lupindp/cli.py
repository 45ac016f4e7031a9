"""``lupindp generate|train|evaluate|report``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config
from .data import TaskSpec, generate_dataset, read_dataset, write_dataset
from .errors import ConfigError, LupiNDPError
from .evaluation import evaluate
from .model import init_model
from .report import METRICS_FILE, build_table, format_table, load_run, table_to_csv
from .training import train

log = logging.getLogger("lupindp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "task", None):
        cfg.task = args.task
    if getattr(args, "mode", None):
        cfg.mode = args.mode
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.train = replace(cfg.train, seed=args.seed)
        cfg.eval = replace(cfg.eval, seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        if args.epochs < 0:
            raise UsageError("--epochs must be non-negative")
        cfg.train = replace(cfg.train, epochs=args.epochs)
    if getattr(args, "starred", False):
        cfg.eval = replace(cfg.eval, starred=True)
    for name in ("n_train", "n_test"):
        value = getattr(args, name, None)
        if value is not None:
            if value < 1:
                raise UsageError(f"--{name.replace('_', '-')} must be at least 1")
            setattr(cfg, name, value)
    try:
        cfg.__post_init__()
        TaskSpec.from_name(cfg.task)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def _write_config(out, cfg):
    with open(os.path.join(out, "config.ini"), "w") as fh:
        fh.write(cfg.to_ini())


def cmd_generate(args):
    cfg = _resolve(args)
    task = TaskSpec.from_name(cfg.task)
    os.makedirs(args.out, exist_ok=True)
    train_set = generate_dataset(task, cfg.n_train, cfg.seed)
    test_set = generate_dataset(task, cfg.n_test, cfg.seed, first_id=cfg.n_train)
    write_dataset(os.path.join(args.out, "train.txt"), train_set, task, cfg.seed)
    write_dataset(os.path.join(args.out, "test.txt"), test_set, task, cfg.seed)
    _write_config(args.out, cfg)
    print(f"wrote {cfg.n_train} train and {cfg.n_test} test series to {args.out}")


def cmd_train(args):
    cfg = _resolve(args)
    header, records = read_dataset(args.data)
    if records[0].obs_dim != cfg.model.obs_dim:
        cfg.model = replace(cfg.model, obs_dim=records[0].obs_dim)
    if cfg.model.max_step is None:
        spacing = float(np.min(np.diff(records[0].times)))
        cfg.model = replace(cfg.model, max_step=spacing / cfg.model.substeps)
    if cfg.model.time_scale is None:
        cfg.model = replace(cfg.model, time_scale=float(records[0].times[-1]) or 1.0)
    cfg.task = header["task"]
    os.makedirs(args.out, exist_ok=True)
    model = init_model(cfg.model, cfg.seed)
    result = train(model, records, cfg.train, cfg.mode)
    save_checkpoint(os.path.join(args.out, "checkpoint.txt"), model, cfg.mode, cfg.seed, cfg.train.epochs)
    result.write_csv(os.path.join(args.out, "trace.csv"))
    _write_config(args.out, cfg)
    last = result.trace[-1] if result.trace else None
    print(f"trained {cfg.mode} for {cfg.train.epochs} epochs" + (f"; final train/val loss {last[1]:.4f}/{last[2]:.4f}" if last else ""))


def cmd_evaluate(args):
    cfg = _resolve(args)
    ckpt = load_checkpoint(args.checkpoint)
    header, records = read_dataset(args.data)
    if records[0].obs_dim != ckpt.config.obs_dim:
        raise ConfigError(f"dataset has observation dim {records[0].obs_dim}, checkpoint expects {ckpt.config.obs_dim}")
    cfg.mode = ckpt.mode
    cfg.task = header["task"]
    cfg.model = ckpt.config
    report = evaluate(ckpt.build_model(), records, cfg.eval, ckpt.mode, task=header["task"])
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, METRICS_FILE), "w") as fh:
        fh.write(report.to_json() + "\n")
    with open(os.path.join(args.out, "calibration.csv"), "w") as fh:
        fh.write("level,empirical_frequency\n")
        for p, f in zip(report.levels, report.frequencies):
            fh.write(f"{p:.17g},{f:.17g}\n")
    _write_config(args.out, cfg)
    star = "*" if cfg.eval.starred else ""
    print(
        f"{header['task']} {ckpt.mode}{star}: MSE {report.mse:.4f} +/- {report.mse_se:.4f}, "
        f"calibration {report.calibration_error:.4f}, sharpness {report.sharpness:.4f}"
    )


def cmd_report(args):
    rows = build_table([load_run(d) for d in args.runs])
    text = format_table(rows)
    print(text, end="")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.txt"), "w") as fh:
            fh.write(text)
        with open(os.path.join(args.out, "report.csv"), "w") as fh:
            fh.write(table_to_csv(rows))


def build_parser():
    parser = _Parser(prog="lupindp", description="LUPI neural ODE process experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(p, *, mode=False):
        p.add_argument("--config", help="experiment config file (INI)")
        p.add_argument("--task", help="stiffness | damping | lv")
        p.add_argument("--seed", type=int)
        if mode:
            p.add_argument("--mode", choices=("lupi", "nopi"))

    g = sub.add_parser("generate", help="write train/test dataset files")
    common(g)
    g.add_argument("--n-train", dest="n_train", type=int)
    g.add_argument("--n-test", dest="n_test", type=int)
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    common(t, mode=True)
    t.add_argument("--data", required=True, help="training dataset file")
    t.add_argument("--epochs", type=int)
    t.add_argument("--out", required=True, help="run directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint on a test dataset")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="test dataset file")
    e.add_argument("--starred", action="store_true", help="evaluate in the training setting")
    e.add_argument("--out", required=True, help="output directory")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="tabulate evaluated runs")
    r.add_argument("runs", nargs="+", help="directories containing metrics.json")
    r.add_argument("--out", help="directory for report.txt / report.csv")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"lupindp {args.command}: {exc}", file=sys.stderr)
        return 1
    except (LupiNDPError, OSError) as exc:
        print(f"lupindp {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
