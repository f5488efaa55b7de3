"""Training protocols, checkpointing, and target-only model selection.

Five modes share one loop:

  baseline  target encoder + classifier on the target CE term only
  fused     baseline over channel-concatenated all-sensor windows
  tsr       all paths, classification loss only
  ctsr      classification + lambda * contrastive, jointly
  cfsr      contrastive-only pretraining (fresh optimizer), then
            classification-only training

Validation after every epoch scores the target path alone; the best epoch
by validation macro-F1 (classification phases only) is kept. Strict-mode
runs are bit-reproducible: batch order, dropout, and init all derive from
named streams of the config seed, and checkpoint resume restores them.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .datasets import WindowPair
from .evaluation import ConfusionMatrix, macro_f1
from .losses import Batch, classification_loss, contrastive_loss, joint_losses
from .models import ModelBundle, save_arrays, load_arrays
from .optim import Adam, lr_at_epoch
from .seeding import stream, generator_state, restore_generator

CONTRASTIVE_MODES = ("ctsr", "cfsr")
MODES = ("baseline", "fused", "tsr", "ctsr", "cfsr")

# which networks may receive updates, per mode (and per phase for cfsr)
TRAINABLE = {
    "baseline": ("dst_encoder", "classifier"),
    "fused": ("dst_encoder", "classifier"),
    "tsr": ("src_encoder", "dst_encoder", "to_dst", "classifier"),
    "ctsr": ("src_encoder", "dst_encoder", "to_dst", "to_src", "classifier"),
    "cfsr_phase1": ("src_encoder", "dst_encoder", "to_dst", "to_src"),
    "cfsr_phase2": ("src_encoder", "dst_encoder", "to_dst", "classifier"),
}


class ConfigError(ValueError):
    """Invalid training configuration; message names the offending key."""


@dataclass
class TrainConfig:
    mode: str = "baseline"
    tau: float = 0.07
    lam: float = 1.0
    batch_size: int = 128
    lr0: float = 0.001
    weight_decay: float = 0.0001
    lr_drop_every: int = 100
    lr_drop_factor: float = 10.0
    epochs_cls: int = 500
    epochs_contrastive: int = 100
    seed: int = 0
    dtype: str = "float32"
    decoupled_weight_decay: bool = False
    pool_spatial: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"train.mode: unknown mode {self.mode!r}")
        if self.tau <= 0:
            raise ConfigError(f"train.tau: must be > 0, got {self.tau}")
        if self.mode in CONTRASTIVE_MODES and self.batch_size < 2:
            raise ConfigError("train.batch_size: contrastive modes need >= 2")
        if self.lr_drop_every < 1:
            raise ConfigError("train.lr_drop_every: must be >= 1")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass
class PairArrays:
    """Window pairs stacked for fast slicing."""
    x_src: np.ndarray
    x_dst: np.ndarray
    labels: np.ndarray
    subjects: list[str]

    @classmethod
    def from_pairs(cls, pairs: list[WindowPair], dtype) -> "PairArrays":
        return cls(
            x_src=np.stack([p.src.values for p in pairs]).astype(dtype),
            x_dst=np.stack([p.dst.values for p in pairs]).astype(dtype),
            labels=np.asarray([p.dst.label for p in pairs], dtype=np.int64),
            subjects=[p.dst.subject_id for p in pairs],
        )

    def __len__(self):
        return len(self.labels)


@dataclass
class TrainResult:
    best_val_f1: float
    best_epoch: int
    trace: list[dict]
    audit: dict
    stopped_early: bool = False


def _batches(n: int, batch_size: int, perm: np.ndarray):
    """Consecutive index slices; a trailing remnant of size 1 is dropped."""
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        if len(idx) >= 2:
            yield idx


def evaluate_path(bundle: ModelBundle, data: PairArrays, path: str = "dst",
                  batch_size: int = 256) -> np.ndarray:
    """Argmax class predictions; test-time reporting always uses 'dst'."""
    bundle.set_training(False)
    preds = []
    with T.no_grad():
        for start in range(0, len(data), batch_size):
            if path == "dst":
                x = Tensor(data.x_dst[start:start + batch_size])
                logits = bundle.classifier(bundle.encode_dst(x))
            elif path == "src_via_translator":
                x = Tensor(data.x_src[start:start + batch_size])
                logits = bundle.classifier(bundle.translate("s2d", bundle.encode_src(x)))
            else:
                raise ValueError(f"unknown path {path!r}")
            preds.append(np.argmax(logits.data, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def _val_macro_f1(bundle: ModelBundle, val: PairArrays, n_classes: int) -> float:
    """Target-path validation score; asserts the source encoder stays cold."""
    src_calls = bundle.src_encoder.calls
    preds = evaluate_path(bundle, val, "dst")
    assert bundle.src_encoder.calls == src_calls, "validation touched the source encoder"
    cm = ConfusionMatrix.from_predictions(val.labels, preds, n_classes)
    return macro_f1(cm)


def _phase_plan(cfg: TrainConfig) -> list[tuple[str, str, int]]:
    """(phase name, trainable-table key, epoch count) sequence for the mode."""
    if cfg.mode == "cfsr":
        return [("contrastive", "cfsr_phase1", cfg.epochs_contrastive),
                ("classification", "cfsr_phase2", cfg.epochs_cls)]
    return [("classification", cfg.mode, cfg.epochs_cls)]


class _TraceWriter:
    def __init__(self, out_dir, records: list[dict]):
        self.records = records
        self.path = os.path.join(out_dir, "trace.jsonl") if out_dir else None
        if self.path and not records and os.path.exists(self.path):
            os.remove(self.path)
        if self.path and records:
            # resume: rewrite the retained prefix so a stale tail cannot survive
            with open(self.path, "w") as fh:
                for rec in records:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def append(self, rec: dict):
        self.records.append(rec)
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def train(bundle: ModelBundle, train_pairs: list[WindowPair],
          val_pairs: list[WindowPair], n_classes: int, cfg: TrainConfig,
          out_dir: str | None = None, stop_after_epoch: int | None = None,
          resume: bool = False) -> TrainResult:
    """Run one mode end to end; returns the best-epoch result.

    With out_dir set, writes trace.jsonl, ckpt_last.bin (resume point) and
    ckpt_best.bin (selected model). stop_after_epoch halts after that many
    total completed epochs (testing hook for resume).
    """
    dtype = cfg.np_dtype
    tr = PairArrays.from_pairs(train_pairs, dtype)
    va = PairArrays.from_pairs(val_pairs, dtype)
    audit: dict = {
        "mode": cfg.mode,
        "train_subjects": sorted(set(tr.subjects)),
        "val_subjects": sorted(set(va.subjects)),
        "val_src_encoder_calls": 0,
        "batch_subjects_seen": set(),
    }
    subj_arr = np.asarray(tr.subjects)
    if cfg.mode in CONTRASTIVE_MODES and len(tr) < 2:
        raise ConfigError("train.batch_size: contrastive modes need >= 2 windows")

    shuffle_rng = stream(cfg.seed, "shuffle")
    plan = _phase_plan(cfg)
    trace: list[dict] = []
    best_val, best_epoch, total_epoch = -1.0, -1, 0
    phase_idx, epoch_in_phase = 0, 0
    optimizer: Adam | None = None

    if resume:
        if not out_dir:
            raise ValueError("resume requires out_dir")
        last = os.path.join(out_dir, "ckpt_last.bin")
        arrays, meta = load_arrays(last)
        params = bundle.parameters()
        for name, arr in arrays.items():
            if name in params:
                params[name].data = arr.astype(dtype)
        phase_idx = meta["phase_idx"]
        epoch_in_phase = meta["epoch_in_phase"]
        total_epoch = meta["total_epoch"]
        best_val = meta["best_val_f1"]
        best_epoch = meta["best_epoch"]
        shuffle_rng = restore_generator(meta["shuffle_rng"])
        bundle.state.dropout_rng = restore_generator(meta["dropout_rng"])
        optimizer = _make_optimizer(bundle, plan[phase_idx][1], cfg)
        optimizer.load_state_arrays(arrays, meta["opt_t"])
        trace = _load_trace(out_dir, total_epoch)

    writer = _TraceWriter(out_dir, trace)

    stopped = False
    while phase_idx < len(plan) and not stopped:
        phase_name, table_key, n_epochs = plan[phase_idx]
        if optimizer is None:
            optimizer = _make_optimizer(bundle, table_key, cfg)
        while epoch_in_phase < n_epochs:
            lr = lr_at_epoch(cfg.lr0, epoch_in_phase, cfg.lr_drop_every, cfg.lr_drop_factor)
            optimizer.lr = lr
            has_cl = phase_name != "contrastive"
            has_co = phase_name == "contrastive" or cfg.mode == "ctsr"
            sum_cl = sum_co = sum_total = 0.0
            n_b = 0
            bundle.set_training(True)
            perm = shuffle_rng.permutation(len(tr))
            for idx in _batches(len(tr), cfg.batch_size, perm):
                audit["batch_subjects_seen"].update(subj_arr[idx].tolist())
                batch = Batch(Tensor(tr.x_src[idx]), Tensor(tr.x_dst[idx]), tr.labels[idx])
                bundle.zero_grad()
                if phase_name == "contrastive":
                    loss = contrastive_loss(bundle, batch, cfg.tau, cfg.pool_spatial)
                    sum_co += loss.item()
                elif cfg.mode == "ctsr":
                    l_cl, l_co = joint_losses(bundle, batch, n_classes,
                                              cfg.tau, cfg.pool_spatial)
                    loss = l_cl + cfg.lam * l_co
                    sum_cl += l_cl.item()
                    sum_co += l_co.item()
                else:
                    baseline_only = cfg.mode in ("baseline", "fused")
                    loss = classification_loss(bundle, batch, n_classes, baseline_only)
                    sum_cl += loss.item()
                loss.backward()
                optimizer.step()
                sum_total += loss.item()
                n_b += 1
            src_calls_before = bundle.src_encoder.calls
            val_f1 = _val_macro_f1(bundle, va, n_classes)
            audit["val_src_encoder_calls"] += bundle.src_encoder.calls - src_calls_before
            is_best = phase_name == "classification" and val_f1 > best_val
            if is_best:
                best_val, best_epoch = val_f1, total_epoch
                if out_dir:
                    _save_ckpt(os.path.join(out_dir, "ckpt_best.bin"), bundle, optimizer,
                               cfg, phase_idx, epoch_in_phase, total_epoch,
                               best_val, best_epoch, shuffle_rng)
            writer.append({
                "phase": phase_name, "epoch": epoch_in_phase, "total_epoch": total_epoch,
                "lr": lr,
                "loss_cl": sum_cl / n_b if has_cl and n_b else None,
                "loss_co": sum_co / n_b if has_co and n_b else None,
                "loss_total": sum_total / n_b if n_b else None,
                "val_macro_f1": val_f1, "best": is_best,
            })
            epoch_in_phase += 1
            total_epoch += 1
            if out_dir:
                _save_ckpt(os.path.join(out_dir, "ckpt_last.bin"), bundle, optimizer,
                           cfg, phase_idx, epoch_in_phase, total_epoch,
                           best_val, best_epoch, shuffle_rng)
            if stop_after_epoch is not None and total_epoch >= stop_after_epoch:
                stopped = True
                break
        if not stopped:
            phase_idx += 1
            epoch_in_phase = 0
            optimizer = None  # fresh optimizer (and schedule) per phase

    if best_epoch < 0:  # contrastive-only runs (no classification epochs)
        best_val = _val_macro_f1(bundle, va, n_classes) if len(va) else 0.0
        best_epoch = total_epoch - 1
        if out_dir:
            _save_ckpt(os.path.join(out_dir, "ckpt_best.bin"), bundle, None,
                       cfg, phase_idx, epoch_in_phase, total_epoch,
                       best_val, best_epoch, shuffle_rng)
    audit["batch_subjects_seen"] = sorted(audit["batch_subjects_seen"])
    return TrainResult(best_val, best_epoch, writer.records, audit, stopped)


def _make_optimizer(bundle: ModelBundle, table_key: str, cfg: TrainConfig) -> Adam:
    params = bundle.net_parameters(TRAINABLE[table_key])
    return Adam(params, lr=cfg.lr0, weight_decay=cfg.weight_decay,
                decoupled=cfg.decoupled_weight_decay)


def _save_ckpt(path, bundle, optimizer, cfg, phase_idx, epoch_in_phase,
               total_epoch, best_val, best_epoch, shuffle_rng) -> None:
    extra = optimizer.state_arrays() if optimizer is not None else {}
    meta = {
        "phase_idx": phase_idx,
        "epoch_in_phase": epoch_in_phase,
        "total_epoch": total_epoch,
        "best_val_f1": best_val,
        "best_epoch": best_epoch,
        "opt_t": optimizer.t if optimizer is not None else 0,
        "shuffle_rng": generator_state(shuffle_rng),
        "dropout_rng": generator_state(bundle.state.dropout_rng),
        "mode": cfg.mode,
    }
    arrays = {name: p.data for name, p in bundle.parameters().items()}
    arrays.update(extra)
    save_arrays(path, arrays, meta)


def _load_trace(out_dir, upto_total_epoch: int) -> list[dict]:
    path = os.path.join(out_dir, "trace.jsonl")
    if not os.path.exists(path):
        return []
    records = []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            if rec["total_epoch"] < upto_total_epoch:
                records.append(rec)
    return records
