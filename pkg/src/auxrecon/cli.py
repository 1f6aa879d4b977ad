"""Command-line entry points: train, eval, ablate, inspect."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness
from .checkpoint import CorruptCheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config


def _config(path: str | None) -> RunConfig:
    return load_config(path) if path else RunConfig()


def cmd_train(args) -> int:
    cfg = _config(args.config)
    out = Path(args.out)
    model, tlog = harness.train(cfg)
    save_checkpoint(model, out)
    loss_path = Path(args.loss_log) if args.loss_log else out.with_suffix(".losses.csv")
    tlog.write_losses(loss_path)
    tlog.write_assignments(loss_path.with_name(loss_path.stem + ".assignments.csv"))
    first, last = harness.first_last_mean(tlog.rows) if tlog.rows else (float("nan"), float("nan"))
    print(f"trained {cfg.steps} steps: total loss {first:.4f} -> {last:.4f} (last-10 mean)")
    print(f"checkpoint: {out}\nloss log: {loss_path}")
    return 0


def _load_model(cfg: RunConfig, ckpt: str):
    model = harness.build_model(cfg)
    model.load_state_dict(load_checkpoint(ckpt))
    return model


def cmd_eval(args) -> int:
    cfg = _config(args.config)
    if not cfg.eval_schedule:
        raise ConfigError("evaluation schedule is empty")
    model = _load_model(cfg, args.ckpt)
    results = harness.run_sweep(model, cfg)
    table = harness.write_sweep(results, args.out_dir, cfg.eval_depth_subset)
    for c, d, rep in results:
        print(f"cam {c:3d}% depth {d:3d}%  abs_rel {rep.abs_rel:.4f}  auc30 {rep.auc30:.4f}  "
              f"acc {rep.acc_mean:.4f}  comp {rep.comp_mean:.4f}")
    print(f"sweep table: {table}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args.config)
    rows = harness.ablate(cfg)
    path = harness.write_ablation(rows, args.out)
    for r in rows:
        print(f"{r['variant']:16s} {r['aux']:5s} abs_rel {r['abs_rel']:.4f} auc30 {r['auc30']:.4f}")
    print(f"ablation table: {path}")
    return 0


def cmd_inspect(args) -> int:
    state = load_checkpoint(args.ckpt)
    width = max((len(n) for n in state), default=4)
    total = 0
    print(f"{'name':{width}s}  {'shape':>16s}  {'count':>9s}")
    for name, arr in state.items():
        total += arr.size
        print(f"{name:{width}s}  {str(tuple(arr.shape)):>16s}  {arr.size:9d}")
    print(f"total parameters: {total}")
    report = harness.zero_injection_report(state)
    if report:
        print("zero-initialised gates (deviation norm):")
        for name, norm in report:
            print(f"  {name}: {norm:.6g}")
        print(f"max deviation: {max(n for _, n in report):.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="auxrecon", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--loss-log")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="run the injection sweep on held-out scenes")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--config")
    e.add_argument("--out-dir", required=True)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and compare the adapter variants")
    a.add_argument("--config")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)

    i = sub.add_parser("inspect", help="summarise a checkpoint")
    i.add_argument("--ckpt", required=True)
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, CorruptCheckpointError, harness.TrainingDivergedError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (KeyError, ValueError) as exc:
        print(f"error: checkpoint does not match config: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
