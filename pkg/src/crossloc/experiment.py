"""End-to-end experiment orchestration.

For each requested mode and leave-one-subject-out fold: split, normalize on
the training subjects only, build a fresh bundle, train, reload the best
checkpoint, and score the held-out subject on the target path. Per-fold
artifacts (trace, checkpoints, audit, done marker) land in
<output_dir>/<mode>/fold_<subject>/; completed folds are skipped on re-run
unless forced, and interrupted folds resume from their last checkpoint.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .backend import backend_name
from .config import ExperimentConfig, echo
from .datasets import (Recording, SplitPlan, WindowPair, Normalizer, fuse_recording,
                       fused_spec, load_recordings, louo_splits, make_windows,
                       split_pairs)
from .evaluation import (ConfusionMatrix, EvalReport, FoldResult, emit_report,
                         report_payload)
from .models import build_bundle, load_bundle
from .seeding import derive_seed
from .synthetic import (DST_SPEC, SRC_SPEC, synth_class_names,
                        synth_transfer_dataset)
from .training import PairArrays, evaluate_path, train


class FoldFailure(RuntimeError):
    pass


def load_dataset(cfg: ExperimentConfig):
    """Returns (recordings, src_spec, dst_spec, all_specs, class_names)."""
    d = cfg.dataset
    if d["kind"] == "synthetic":
        recs = synth_transfer_dataset(d["seed"], d["n_subjects"], d["n_classes"],
                                      d["noise_dst"])
        return recs, SRC_SPEC, DST_SPEC, [SRC_SPEC, DST_SPEC], synth_class_names(d["n_classes"])
    src, dst, specs = cfg.modality_specs()
    recs = []
    for path in d["paths"]:
        recs.extend(load_recordings(path, specs, d["activities"], d["sample_rate"],
                                    d["max_gap_seconds"]))
    return recs, src, dst, specs, list(d["activities"])


def build_pairs(recordings: list[Recording], cfg: ExperimentConfig, mode: str,
                src_spec, dst_spec, all_specs) -> tuple[list[WindowPair], int, int]:
    """(pairs, src_channels, dst_channels) for the mode's modality layout.

    The fused mode trains one encoder on channel-concatenated windows, so
    both pair sides carry the fused modality.
    """
    d = cfg.dataset
    if mode == "fused":
        fspec = fused_spec(all_specs)
        pairs = []
        for rec in recordings:
            fused = fuse_recording(rec, all_specs)
            pairs.extend(make_windows(fused, fspec, fspec,
                                      d["window_seconds"], d["slide_seconds"]))
        return pairs, fspec.channel_count, fspec.channel_count
    pairs = []
    for rec in recordings:
        pairs.extend(make_windows(rec, src_spec, dst_spec,
                                  d["window_seconds"], d["slide_seconds"]))
    return pairs, src_spec.channel_count, dst_spec.channel_count


def run_fold(cfg: ExperimentConfig, mode: str, plan: SplitPlan, out_dir: str,
             recordings=None, force: bool = False,
             stop_after_epoch: int | None = None) -> FoldResult:
    """Train one (mode, fold) job and score the held-out subject."""
    done_path = os.path.join(out_dir, "done.json")
    if os.path.exists(done_path) and not force:
        with open(done_path) as fh:
            done = json.load(fh)
        return FoldResult(plan.test_subject,
                          ConfusionMatrix(np.asarray(done["confusion"], dtype=np.int64)))
    os.makedirs(out_dir, exist_ok=True)
    if force:
        for name in ("done.json", "ckpt_last.bin", "ckpt_best.bin", "trace.jsonl"):
            p = os.path.join(out_dir, name)
            if os.path.exists(p):
                os.remove(p)

    if recordings is None:
        recordings, src_spec, dst_spec, all_specs, class_names = load_dataset(cfg)
    else:
        src_spec, dst_spec, all_specs, class_names = _dataset_specs(cfg)
    n_classes = len(class_names)
    pairs, c_src, c_dst = build_pairs(recordings, cfg, mode, src_spec, dst_spec,
                                      all_specs)
    train_pairs, val_pairs, test_pairs = split_pairs(pairs, plan)
    if not train_pairs or not test_pairs:
        raise FoldFailure(f"fold {plan.test_subject}: empty train or test split")
    norm = Normalizer().fit_pairs(train_pairs)
    train_pairs = norm.transform_pairs(train_pairs)
    val_pairs = norm.transform_pairs(val_pairs)
    test_pairs = norm.transform_pairs(test_pairs)

    fold_seed = derive_seed(cfg.train["seed"], mode, plan.test_subject)
    n_w = int(round(cfg.dataset["window_seconds"] * cfg.dataset["sample_rate"]))
    bundle = build_bundle(c_src, c_dst, n_w, n_classes, cfg.encoder_cfg(),
                          seed=fold_seed, dtype=cfg.train_cfg(mode).np_dtype)
    tc = cfg.train_cfg(mode)
    tc.seed = fold_seed
    resume = os.path.exists(os.path.join(out_dir, "ckpt_last.bin"))
    result = train(bundle, train_pairs, val_pairs, n_classes, tc,
                   out_dir=out_dir, stop_after_epoch=stop_after_epoch,
                   resume=resume)
    if result.stopped_early:
        raise FoldFailure(f"fold {plan.test_subject}: stopped before completion")

    # test-time scoring: best checkpoint, target path only
    load_bundle(os.path.join(out_dir, "ckpt_best.bin"), bundle)
    test_arr = PairArrays.from_pairs(test_pairs, tc.np_dtype)
    src_calls = bundle.src_encoder.calls
    preds = evaluate_path(bundle, test_arr, "dst")
    audit = dict(result.audit)
    audit["test_src_encoder_calls"] = bundle.src_encoder.calls - src_calls
    audit["test_subject"] = plan.test_subject
    audit["leakage_free"] = (
        plan.test_subject not in audit["batch_subjects_seen"]
        and plan.test_subject not in audit["val_subjects"]
        and audit["test_src_encoder_calls"] == 0
        and audit["val_src_encoder_calls"] == 0)
    cm = ConfusionMatrix.from_predictions(test_arr.labels, preds, n_classes)
    fold = FoldResult(plan.test_subject, cm)
    with open(done_path, "w") as fh:
        json.dump({
            "mode": mode, "fold": plan.test_subject,
            "test_macro_f1": fold.macro_f1, "test_accuracy": fold.accuracy,
            "best_val_f1": result.best_val_f1, "best_epoch": result.best_epoch,
            "confusion": cm.counts.tolist(), "audit": audit,
            "backend": backend_name(),
        }, fh, sort_keys=True, indent=1)
    return fold


def _dataset_specs(cfg: ExperimentConfig):
    if cfg.dataset["kind"] == "synthetic":
        return SRC_SPEC, DST_SPEC, [SRC_SPEC, DST_SPEC], synth_class_names(
            cfg.dataset["n_classes"])
    src, dst, specs = cfg.modality_specs()
    return src, dst, specs, list(cfg.dataset["activities"])


def _job(args):
    cfg_dict, mode, plan, out_dir, force, stop_after = args
    from .config import from_dict
    cfg = from_dict(cfg_dict)
    fold = run_fold(cfg, mode, plan, out_dir, force=force,
                    stop_after_epoch=stop_after)
    return mode, plan.test_subject, fold.cm.counts.tolist()


def run_experiment(cfg: ExperimentConfig, modes: list[str] | None = None,
                   force: bool = False, parallel_folds: int = 1,
                   stop_after_epoch: int | None = None) -> dict:
    """Run all requested modes over all folds; write reports; return payload."""
    out_root = cfg.output_dir()
    os.makedirs(out_root, exist_ok=True)
    echo(cfg, os.path.join(out_root, "effective_config.yaml"))

    recordings, src_spec, dst_spec, all_specs, class_names = load_dataset(cfg)
    plans = louo_splits(recordings)
    if cfg.eval["folds"] != "all":
        wanted = set(map(str, cfg.eval["folds"]))
        plans = [p for p in plans if p.test_subject in wanted]
        if not plans:
            raise FoldFailure(f"eval.folds: no matching subjects {sorted(wanted)}")
    modes = list(modes) if modes else list(cfg.eval["modes"])
    baseline_mode = cfg.eval["baseline_mode"]
    if baseline_mode not in modes:
        modes = [baseline_mode] + modes

    report = EvalReport(class_names, src_spec.name, dst_spec.name)
    jobs = [(mode, plan) for mode in modes for plan in plans]
    if parallel_folds > 1:
        args = [(cfg.to_dict(), mode, plan,
                 os.path.join(out_root, mode, f"fold_{plan.test_subject}"),
                 force, stop_after_epoch) for mode, plan in jobs]
        with ProcessPoolExecutor(max_workers=parallel_folds) as pool:
            for mode, subject, counts in pool.map(_job, args):
                report.add_fold(mode, FoldResult(
                    subject, ConfusionMatrix(np.asarray(counts, dtype=np.int64))))
    else:
        for mode, plan in jobs:
            out_dir = os.path.join(out_root, mode, f"fold_{plan.test_subject}")
            fold = run_fold(cfg, mode, plan, out_dir, recordings=recordings,
                            force=force, stop_after_epoch=stop_after_epoch)
            report.add_fold(mode, fold)

    payload = report_payload(report, baseline_mode)
    payload["backend"] = backend_name()
    payload["strict_determinism"] = bool(cfg.eval["strict_determinism"])
    with open(os.path.join(out_root, "report.json"), "w") as fh:
        fh.write(emit_report(payload, "json"))
    with open(os.path.join(out_root, "report.csv"), "w") as fh:
        fh.write(emit_report(payload, "csv"))
    with open(os.path.join(out_root, "report.md"), "w") as fh:
        fh.write(emit_report(payload, "markdown"))
    return payload
