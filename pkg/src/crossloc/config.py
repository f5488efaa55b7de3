"""Experiment configuration: one YAML file drives ingest, training, and
evaluation. Unknown keys and invalid values fail fast with the dotted key
path named; the default-filled effective config is echoed into the output
directory so a run can be reproduced from one artifact.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass

import yaml

from .datasets import ModalitySpec
from .models import EncoderCfg
from .training import TrainConfig, MODES, ConfigError

DATASET_DEFAULTS = {
    "kind": "synthetic",
    "seed": 7,
    "n_subjects": 4,
    "n_classes": 6,
    "noise_dst": 0.45,
    "paths": [],
    "sample_rate": 50.0,
    "activities": [],
    "modalities": [],
    "window_seconds": 2.0,
    "slide_seconds": 0.5,
    "max_gap_seconds": 1.0,
}

MODEL_DEFAULTS = {
    "kind": "st_transformer",
    "d": 64,
    "patch_len": 0,   # 0 = derive as 0.1 s of samples
    "layers": 4,
    "heads": 4,
    "mlp_ratio": 2,
    "dropout": 0.1,
}

TRAIN_DEFAULTS = {
    "tau": 0.07,
    "lambda": 1.0,
    "batch_size": 128,
    "lr0": 0.001,
    "weight_decay": 0.0001,
    "lr_drop_every": 100,
    "lr_drop_factor": 10.0,
    "epochs_cls": 500,
    "epochs_contrastive": 100,
    "seed": 0,
    "dtype": "float32",
    "decoupled_weight_decay": False,
    "pool_spatial": False,
}

EVAL_DEFAULTS = {
    "modes": ["baseline", "cfsr"],
    "baseline_mode": "baseline",
    "output_dir": "outputs/run",
    "folds": "all",
    "strict_determinism": False,
}


@dataclass
class ExperimentConfig:
    dataset: dict
    model: dict
    train: dict
    eval: dict

    def to_dict(self) -> dict:
        return {"dataset": copy.deepcopy(self.dataset),
                "model": copy.deepcopy(self.model),
                "train": copy.deepcopy(self.train),
                "eval": copy.deepcopy(self.eval)}

    # -- derived objects ---------------------------------------------------

    def encoder_cfg(self) -> EncoderCfg:
        patch = self.model["patch_len"]
        if patch == 0:
            patch = max(1, int(round(0.1 * self.dataset["sample_rate"])))
        return EncoderCfg(kind=self.model["kind"], d=self.model["d"],
                          patch_len=patch, layers=self.model["layers"],
                          heads=self.model["heads"],
                          mlp_ratio=self.model["mlp_ratio"],
                          dropout=self.model["dropout"])

    def train_cfg(self, mode: str) -> TrainConfig:
        t = self.train
        return TrainConfig(
            mode=mode, tau=t["tau"], lam=t["lambda"], batch_size=t["batch_size"],
            lr0=t["lr0"], weight_decay=t["weight_decay"],
            lr_drop_every=t["lr_drop_every"], lr_drop_factor=t["lr_drop_factor"],
            epochs_cls=t["epochs_cls"], epochs_contrastive=t["epochs_contrastive"],
            seed=t["seed"], dtype=t["dtype"],
            decoupled_weight_decay=t["decoupled_weight_decay"],
            pool_spatial=t["pool_spatial"])

    def modality_specs(self) -> tuple[ModalitySpec, ModalitySpec, list[ModalitySpec]]:
        """(source, target, all declared) for csv datasets."""
        specs, roles = [], {}
        for m in self.dataset["modalities"]:
            spec = ModalitySpec(m["name"], tuple(m["channels"]))
            specs.append(spec)
            roles.setdefault(m.get("role", ""), []).append(spec)
        src = roles.get("source", [])
        dst = roles.get("target", [])
        if len(src) != 1 or len(dst) != 1:
            raise ConfigError(
                "dataset.modalities: exactly one modality must be marked "
                "role=source and one role=target")
        return src[0], dst[0], specs

    def output_dir(self) -> str:
        root = os.environ.get("CROSSLOC_OUTPUT_ROOT", "")
        path = self.eval["output_dir"]
        return os.path.join(root, path) if root and not os.path.isabs(path) else path


def _fill(section: str, raw: dict, defaults: dict) -> dict:
    out = dict(defaults)
    for key, val in (raw or {}).items():
        if key not in defaults:
            raise ConfigError(f"{section}.{key}: unknown key")
        out[key] = val
    return out


def _require(cond: bool, key: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{key}: {msg}")


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    d, m, t, e = cfg.dataset, cfg.model, cfg.train, cfg.eval
    _require(d["kind"] in ("synthetic", "csv"), "dataset.kind",
             f"must be synthetic or csv, got {d['kind']!r}")
    _require(d["window_seconds"] > 0, "dataset.window_seconds", "must be > 0")
    _require(d["slide_seconds"] > 0, "dataset.slide_seconds", "must be > 0")
    if d["kind"] == "csv":
        _require(bool(d["paths"]), "dataset.paths", "csv dataset needs input files")
        _require(bool(d["activities"]), "dataset.activities",
                 "declare the activity vocabulary explicitly")
        _require(bool(d["modalities"]), "dataset.modalities", "declare modalities")
        cfg.modality_specs()
    else:
        _require(d["n_classes"] >= 2, "dataset.n_classes", "must be >= 2")
        _require(d["n_subjects"] >= 3, "dataset.n_subjects",
                 "leave-one-user-out needs >= 3 subjects")
    _require(m["kind"] in ("st_transformer", "conv"), "model.kind",
             f"must be st_transformer or conv, got {m['kind']!r}")
    _require(m["d"] % m["heads"] == 0, "model.d", "must be divisible by model.heads")
    _require(t["tau"] > 0, "train.tau", f"must be > 0, got {t['tau']}")
    _require(t["batch_size"] >= 2, "train.batch_size", "must be >= 2")
    _require(t["lr0"] > 0, "train.lr0", "must be > 0")
    _require(t["epochs_cls"] >= 0, "train.epochs_cls", "must be >= 0")
    _require(t["epochs_contrastive"] >= 0, "train.epochs_contrastive", "must be >= 0")
    _require(t["dtype"] in ("float32", "float64"), "train.dtype",
             "must be float32 or float64")
    for mode in e["modes"]:
        _require(mode in MODES, "eval.modes", f"unknown mode {mode!r}")
    _require(e["baseline_mode"] in MODES, "eval.baseline_mode",
             f"unknown mode {e['baseline_mode']!r}")
    _require(e["folds"] == "all" or isinstance(e["folds"], list), "eval.folds",
             "must be 'all' or a list of test subjects")
    return cfg


def from_dict(raw: dict) -> ExperimentConfig:
    known = {"dataset", "model", "train", "eval"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{key}: unknown top-level section")
    cfg = ExperimentConfig(
        dataset=_fill("dataset", raw.get("dataset"), DATASET_DEFAULTS),
        model=_fill("model", raw.get("model"), MODEL_DEFAULTS),
        train=_fill("train", raw.get("train"), TRAIN_DEFAULTS),
        eval=_fill("eval", raw.get("eval"), EVAL_DEFAULTS),
    )
    return validate(cfg)


def load(path) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return from_dict(raw)


def echo(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)
