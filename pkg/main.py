#!/usr/bin/env python3
"""
main.py
=======
CLI Entry Point: dynamic token-to-subspace alignment for anomaly detection.

Usage
-----
  # Generate the synthetic planted-anomaly benchmark
  python main.py gen --out data/synth
  python main.py gen --config synth.cfg --out data/synth --seed 7

  # Train (writes checkpoint.tkcp + history.csv)
  python main.py train --dataset data/synth --out runs/full
  python main.py train --dataset data/synth --out runs/van --van
  python main.py train --dataset data/synth --config sweep.cfg --out runs/lit --literal-hinge

  # Evaluate (metrics.csv + usage.csv); without --checkpoint a fresh seeded model is evaluated
  python main.py eval --dataset data/synth --checkpoint runs/full/checkpoint.tkcp --out runs/full

  # Per-image anomaly maps (PGM) + scores.csv
  python main.py score --dataset data/synth --checkpoint runs/full/checkpoint.tkcp --out runs/full/maps

  # Solver property suite (exit 3 when a property fails)
  python main.py sinkhorn-check --out runs/checks

  # Ablation sweeps over Q / k / epsilon (+ loss weights and modules with --extended)
  python main.py ablate --dataset data/synth --out runs/ablation --extended --seeds 3

Exit codes
----------
  0  success
  1  runtime / domain error (bad file, invalid config, degenerate data)
  2  usage error (unknown subcommand, missing required flag)
  3  sinkhorn-check found a failing property

Every run writes a JSON audit record to <log-dir>/run_<RUNID>_<date>.json.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from typing import Optional, Sequence

# Ensure project root is on path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from colorama import Fore, Style, init as colorama_init

from alignment_engine.ablation import run_ablation
from alignment_engine.assignment import IMAGE_SCORE_FORMULAS
from alignment_engine.config import TrainConfig, load_config_file
from alignment_engine.diagnostics import CheckSuiteConfig, run_sinkhorn_checks
from alignment_engine.evaluation import evaluate_model, metrics_frame, scores_frame, usage_frame
from alignment_engine.semantics import SubspaceModel, init_model
from alignment_engine.trainer import history_frame, train
from data_io.dataset import load_dataset, save_dataset
from data_io.formats import load_checkpoint, save_anomaly_map, save_checkpoint
from data_io.synthetic import SyntheticSpec, generate_synthetic
from graph.workflow import LANGGRAPH_AVAILABLE, build_workflow, score_sample
from middleware.audit import AuditRecord, write_audit_log
from middleware.guards import AlignmentError, DatasetError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_CHECK_FAILED = 3

_SEP = "━" * 70
_RULE = "═" * 70


# ── Console helpers ───────────────────────────────────────────────────────────

def _ok(message: str) -> None:
    print(f"{Fore.GREEN}[OK]{Style.RESET_ALL} {message}")


def _info(message: str) -> None:
    print(f"{Fore.CYAN}[INFO]{Style.RESET_ALL} {message}")


def _fail(message: str) -> None:
    print(f"{Fore.YELLOW}[FAIL]{Style.RESET_ALL} {message}")


def _error(message: str) -> None:
    print(f"{Fore.RED}[ERROR]{Style.RESET_ALL} {message}", file=sys.stderr)


def _banner(record: AuditRecord, args: argparse.Namespace) -> None:
    print("")
    print(_SEP)
    print("  Dynamic Token Alignment | Anomaly Detection Toolkit")
    print(_SEP)
    print(f"  Run ID     : {record.run_id}")
    print(f"  Command    : {record.subcommand}")
    for flag in ("dataset", "config", "checkpoint", "out"):
        value = getattr(args, flag, None)
        if value:
            print(f"  {flag.title():<10} : {value}")
    print(_SEP)
    print("")


def _summary(record: AuditRecord, log_path: Optional[str]) -> None:
    print("")
    print(_RULE)
    print(f"  {record.subcommand.upper()} | {record.status}")
    print(_RULE)
    for key, value in record.summary.items():
        if isinstance(value, float):
            value = f"{value:.6f}"
        print(f"  {key:<22} : {value}")
    for path in record.outputs:
        print(f"  wrote                  : {path}")
    if log_path:
        print(f"  audit log              : {log_path}")
    print(_RULE)


# ── Config resolution ─────────────────────────────────────────────────────────

def _resolve_config(args: argparse.Namespace, base: Optional[TrainConfig] = None) -> TrainConfig:
    """Checkpoint config (if any) ← config file ← command-line flags."""
    cfg = base or TrainConfig()
    if getattr(args, "config", None):
        cfg = load_config_file(args.config, TrainConfig, base=cfg)
    cfg = cfg.with_overrides(
        seed=args.seed,
        assignment="van" if getattr(args, "van", False) else None,
        hinge_literal=True if getattr(args, "literal_hinge", False) else None,
        image_score_formula=getattr(args, "image_score_formula", None),
    )
    return cfg.validate()


def _load_model_and_config(args: argparse.Namespace, samples) -> tuple[SubspaceModel, TrainConfig]:
    if args.checkpoint:
        if not os.path.exists(args.checkpoint):
            raise FileNotFoundError(f"Checkpoint not found: {args.checkpoint}")
        model, saved = load_checkpoint(args.checkpoint)
        return model.validate(), _resolve_config(args, saved)
    cfg = _resolve_config(args)
    _info(f"No checkpoint given; evaluating a freshly initialised model (seed {cfg.seed}).")
    return init_model(samples[0].grid.d, cfg.n_subspaces, cfg.seed, cfg.head_noise, cfg.fuse_noise), cfg


def _outputs_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


# ── Subcommands ───────────────────────────────────────────────────────────────

def cmd_gen(args: argparse.Namespace, record: AuditRecord) -> int:
    spec = load_config_file(args.config, SyntheticSpec) if args.config else SyntheticSpec()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    train_set, test_set = generate_synthetic(spec)
    written = save_dataset(args.out, {"train": train_set, "test": test_set}, spec)
    record.outputs += [os.path.join(args.out, "index.csv"), os.path.join(args.out, "spec.cfg")]
    record.summary.update({
        "train_images": len(train_set),
        "test_images": len(test_set),
        "train_anomalous": sum(s.label for s in train_set),
        "test_anomalous": sum(s.label for s in test_set),
        "files_written": len(written),
    })
    _ok(f"Dataset written to {args.out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace, record: AuditRecord) -> int:
    cfg = _resolve_config(args)
    train_set = load_dataset(args.dataset, "train")
    _info(f"Training on {len(train_set)} samples for {cfg.epochs} epochs (assignment={cfg.assignment}).")

    def report(epoch: int, loss) -> None:
        print(f"  epoch {epoch:>3}  total={loss.total:.6f}  base={loss.l_base:.4f}  "
              f"da={loss.l_da:.4f}  global={loss.l_global:.4f}  hinge={loss.l_hinge:.4f}  reg={loss.l_reg:.6f}")

    result = train(train_set, cfg, on_epoch=report)
    out = _outputs_dir(args.out)
    ckpt_path = os.path.join(out, "checkpoint.tkcp")
    history_path = os.path.join(out, "history.csv")
    save_checkpoint(ckpt_path, result.model, cfg)
    history_frame(result.history).to_csv(history_path, index=False)

    record.outputs += [ckpt_path, history_path]
    record.summary.update({"epochs": cfg.epochs, "initial_total": result.history[0].total,
                           "final_total": result.final.total})
    _ok(f"Checkpoint saved to {ckpt_path}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, record: AuditRecord) -> int:
    test_set = load_dataset(args.dataset, "test")
    model, cfg = _load_model_and_config(args, test_set)
    report = evaluate_model(model, cfg, test_set)

    out = _outputs_dir(args.out)
    metrics_path = os.path.join(out, "metrics.csv")
    usage_path = os.path.join(out, "usage.csv")
    metrics_frame(report.metrics).to_csv(metrics_path, index=False)
    usage_frame(report.usage).to_csv(usage_path, index=False)

    record.outputs += [metrics_path, usage_path]
    record.summary.update(report.metrics)
    record.summary.update({"assignment_rows": report.assignment_rows,
                           "assignment_violations": report.assignment_violations})
    _ok(f"Evaluated {len(test_set)} test samples.")
    return EXIT_OK


def cmd_score(args: argparse.Namespace, record: AuditRecord) -> int:
    test_set = load_dataset(args.dataset, "test")
    model, cfg = _load_model_and_config(args, test_set)
    runner = build_workflow()
    out = _outputs_dir(args.out)

    results, routes = [], {}
    for sample in test_set:
        state = score_sample(model, cfg, sample, runner)
        if state.status != "SCORED":
            raise DatasetError(f"Sample '{sample.name}' rejected: {' | '.join(state.errors)}")
        map_path = os.path.join(out, f"{sample.name}_anomaly.pgm")
        save_anomaly_map(map_path, state.pixel_map.as_grid())
        results.append(state.result)
        routes[sample.name] = {"route_taken": state.route_taken, "node_path": state.node_path}

    scores_path = os.path.join(out, "scores.csv")
    scores_frame(results).to_csv(scores_path, index=False)
    record.outputs.append(scores_path)
    record.summary.update({"images_scored": len(results), "maps_dir": out, "routes": routes})
    _ok(f"Scored {len(results)} images; maps in {out}")
    return EXIT_OK


def cmd_sinkhorn_check(args: argparse.Namespace, record: AuditRecord) -> int:
    suite = CheckSuiteConfig() if args.seed is None else CheckSuiteConfig(seed=args.seed)
    checks = run_sinkhorn_checks(suite)
    out = _outputs_dir(args.out)
    path = os.path.join(out, "sinkhorn_check.csv")
    checks.to_csv(path, index=False)
    record.outputs.append(path)

    failed = checks[~checks["passed"]]
    by_check = checks.groupby("check")["passed"].agg(["sum", "count"])
    for name, row in by_check.iterrows():
        line = f"{name:<18} {int(row['sum'])}/{int(row['count'])} passed"
        (_ok if row["sum"] == row["count"] else _fail)(line)
    record.summary.update({"checks": len(checks), "failed": len(failed)})
    if len(failed):
        record.status = "FAILED_CHECKS"
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace, record: AuditRecord) -> int:
    cfg = _resolve_config(args)
    train_set = load_dataset(args.dataset, "train")
    test_set = load_dataset(args.dataset, "test")

    def report(row: dict) -> None:
        print(f"  {row['axis']:<12} {str(row['value']):<14} pixel_auroc={row['pixel_auroc']:.4f} "
              f"image_auroc={row['image_auroc']:.4f}")

    table = run_ablation(train_set, test_set, cfg, extended=args.extended, n_seeds=args.seeds, on_cell=report)
    out = _outputs_dir(args.out)
    path = os.path.join(out, "ablation.csv")
    table.to_csv(path, index=False)
    record.outputs.append(path)
    record.summary.update({"cells": len(table), "n_seeds": args.seeds, "extended": args.extended})
    _ok(f"Ablation table written to {path}")
    return EXIT_OK


# ── Argument parsing ──────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-dir", default="logs", help="Directory for audit logs (default: ./logs).")
    common.add_argument("--seed", type=int, default=None, help="Override the seed.")

    model_flags = argparse.ArgumentParser(add_help=False)
    model_flags.add_argument("--config", help="key = value config file.")
    model_flags.add_argument("--van", action="store_true", help="Use argmax assignment instead of OT.")
    model_flags.add_argument("--literal-hinge", action="store_true", help="Use the literal hinge form.")
    model_flags.add_argument("--image-score-formula", choices=list(IMAGE_SCORE_FORMULAS), default=None,
                             help="Image score: paper (default; alias half_peak) or balanced.")

    parser = argparse.ArgumentParser(
        description="Dynamic token-to-subspace alignment for anomaly detection",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__,
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("gen", parents=[common], help="Generate the synthetic benchmark.")
    p.add_argument("--config", help="SyntheticSpec file (key = value).")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_gen)

    p = sub.add_parser("train", parents=[common, model_flags], help="Train a model.")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train)

    for name, handler, text in (("eval", cmd_eval, "Evaluate a checkpoint."),
                                ("score", cmd_score, "Write per-image anomaly maps.")):
        p = sub.add_parser(name, parents=[common, model_flags], help=text)
        p.add_argument("--dataset", required=True)
        p.add_argument("--checkpoint")
        p.add_argument("--out", required=True)
        p.set_defaults(handler=handler)

    p = sub.add_parser("sinkhorn-check", parents=[common], help="Run the solver property suite.")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_sinkhorn_check)

    p = sub.add_parser("ablate", parents=[common, model_flags], help="Run the ablation sweeps.")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--extended", action="store_true", help="Add loss-weight and module sweeps.")
    p.add_argument("--seeds", type=int, default=1, help="Seeds averaged per cell.")
    p.set_defaults(handler=cmd_ablate)

    return parser


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    colorama_init()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    arguments = {k: v for k, v in vars(args).items() if k != "handler"}
    record = AuditRecord(subcommand=args.command, arguments=arguments)
    _banner(record, args)
    if not LANGGRAPH_AVAILABLE and args.command in ("eval", "score", "ablate"):
        _info("LangGraph not found. Scoring runs in sequential fallback mode.")

    try:
        code = args.handler(args, record)
    except (AlignmentError, FileNotFoundError, OSError) as e:
        record.status = "ERROR"
        record.errors.append(f"{type(e).__name__}: {e}")
        _error(f"{type(e).__name__}: {e}")
        code = EXIT_ERROR
    else:
        record.status = record.status or "OK"

    log_path = None
    try:
        log_path = write_audit_log(record, args.log_dir)
    except OSError as e:
        _error(f"Could not write audit log: {e}")
    _summary(record, log_path)
    return code


def main() -> int:
    return run_cli()


if __name__ == "__main__":
    sys.exit(main())
