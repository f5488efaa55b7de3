"""Command-line entry point.

Subcommands:
  run        execute configured modes over all leave-one-subject-out folds
  gradcheck  finite-difference verification of every registered op
  report     re-emit result tables from a finished run directory
  synth      write the synthetic benchmark dataset to CSV
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _cmd_run(args) -> int:
    from . import config as config_mod
    from .experiment import FoldFailure, run_experiment
    from .training import ConfigError

    try:
        cfg = config_mod.load(args.config)
        if args.strict_determinism:
            cfg.eval["strict_determinism"] = True
        modes = args.modes.split(",") if args.modes else None
        payload = run_experiment(cfg, modes=modes, force=args.force,
                                 parallel_folds=args.parallel_folds,
                                 stop_after_epoch=args.stop_after_epoch)
    except (ConfigError, FoldFailure, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = cfg.output_dir()
    print(f"report written to {out}/report.{{json,csv,md}}")
    for row in payload["table"]:
        print(f"  {row['mode']:<9s} macro F1 {row['macro_f1']}  "
              f"improvement {row['improvement']:+.3f}")
    return 0


def _cmd_gradcheck(args) -> int:
    from . import tensor as T
    from .gradcheck import run_registry, CHECKS

    if args.inject_fault:
        T.set_fault_injection(args.inject_fault)
    try:
        reports = run_registry(tol=args.tol, seed=args.seed)
    finally:
        T.set_fault_injection(None)
    for rep in reports:
        print(rep.line())
    print(f"{len(reports)}/{len(CHECKS)} registered differentiable ops checked")
    failures = [r for r in reports if not r.passed]
    if failures:
        print(f"{len(failures)} op(s) FAILED", file=sys.stderr)
        return 1
    return 0


def _cmd_report(args) -> int:
    from .evaluation import emit_report

    path = os.path.join(args.run_dir, "report.json")
    if not os.path.exists(path):
        print(f"error: {path} not found (run the experiment first)", file=sys.stderr)
        return 2
    with open(path) as fh:
        payload = json.load(fh)
    text = emit_report(payload, args.format)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


def _cmd_synth(args) -> int:
    from . import config as config_mod
    from .synthetic import (DST_SPEC, LATENT_SPEC, SRC_SPEC, synth_class_names,
                            synth_transfer_dataset)

    if args.config:
        d = config_mod.load(args.config).dataset
        seed, n_subjects = d["seed"], d["n_subjects"]
        n_classes, noise = d["n_classes"], d["noise_dst"]
    else:
        seed, n_subjects, n_classes, noise = args.seed, 4, 6, 0.45
    recs = synth_transfer_dataset(seed, n_subjects, n_classes, noise)
    names = synth_class_names(n_classes)
    specs = [SRC_SPEC, DST_SPEC] + ([LATENT_SPEC] if args.latent else [])
    with open(args.out, "w") as fh:
        cols = ["timestamp", "subject", "activity"]
        for spec in specs:
            cols += [f"{spec.name}.{ch}" for ch in spec.channel_names]
        fh.write(",".join(cols) + "\n")
        for rec in recs:
            t0 = 0.0
            streams = [rec.streams[s.name] for s in specs]
            for i in range(rec.n_samples):
                row = [f"{t0 + i / rec.sample_rate:.6f}", rec.subject_id,
                       names[rec.labels[i]]]
                for arr in streams:
                    row += [f"{v:.6f}" for v in arr[:, i]]
                fh.write(",".join(row) + "\n")
    print(f"wrote {args.out} ({sum(r.n_samples for r in recs)} rows)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossloc",
        description="Cross-location sensor knowledge transfer for activity recognition")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run configured modes over all folds")
    p_run.add_argument("--config", required=True, help="experiment YAML")
    p_run.add_argument("--modes", default="",
                       help="comma-separated subset of eval.modes to run")
    p_run.add_argument("--force", action="store_true",
                       help="redo folds even if completed")
    p_run.add_argument("--parallel-folds", type=int, default=1, metavar="K")
    p_run.add_argument("--strict-determinism", action="store_true")
    p_run.add_argument("--stop-after-epoch", type=int, default=None,
                       help=argparse.SUPPRESS)  # testing hook: simulate interrupt
    p_run.set_defaults(fn=_cmd_run)

    p_gc = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p_gc.add_argument("--tol", type=float, default=1e-4)
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.add_argument("--inject-fault", default="",
                      help=argparse.SUPPRESS)  # testing hook: corrupt one op
    p_gc.set_defaults(fn=_cmd_gradcheck)

    p_rep = sub.add_parser("report", help="re-emit tables from a run directory")
    p_rep.add_argument("run_dir")
    p_rep.add_argument("--format", choices=("json", "csv", "markdown"),
                       default="markdown")
    p_rep.add_argument("--out", default="")
    p_rep.set_defaults(fn=_cmd_report)

    p_syn = sub.add_parser("synth", help="write the synthetic dataset to CSV")
    p_syn.add_argument("--out", required=True)
    p_syn.add_argument("--config", default="")
    p_syn.add_argument("--seed", type=int, default=7)
    p_syn.add_argument("--latent", action="store_true",
                       help="include the oracle latent channels")
    p_syn.set_defaults(fn=_cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
