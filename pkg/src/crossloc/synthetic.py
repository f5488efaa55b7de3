"""Synthetic two-modality benchmark with a controllable transfer benefit.

A shared latent process drives both modalities: each activity bout picks a
class-specific oscillation frequency (random phase) and a class-group
offset pattern. The source modality observes the latent channels almost
cleanly. The target modality sees them attenuated and mixed, buried under
a larger-amplitude coherent distractor oscillation whose frequency is
drawn from the same band but carries no class information, plus white
noise.

Consequences, by construction: a linear probe on raw target windows can
recover the offset groups (window means survive averaging) but not the
within-group frequency distinction, while the latent channels support
near-perfect linear classification. That gap is what cross-modality
alignment is supposed to close.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import f1_score
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from .datasets import ModalitySpec, Recording, SplitPlan, window_recording
from .seeding import stream

SRC_SPEC = ModalitySpec("SRC", ("s0", "s1", "s2", "s3"))
DST_SPEC = ModalitySpec("DST", ("d0", "d1", "d2"))
LATENT_SPEC = ModalitySpec("LATENT", ("osc_a", "osc_b", "off_a", "off_b", "freq"))

FREQ_SLOW = 2.0
FREQ_FAST = 4.5
DISTRACTOR_BAND = (1.2, 7.0)
OFFSET_AMP = 0.8


@dataclass
class SynthParams:
    n_subjects: int = 4
    n_classes: int = 6
    noise_dst: float = 0.45
    sample_rate: float = 50.0
    bout_seconds: float = 10.0
    bouts_per_class: int = 3
    attenuation: float = 0.35
    distractor_amp: float = 1.2
    src_noise: float = 0.05

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")


def _class_freq(cls: int) -> float:
    return FREQ_SLOW if cls % 2 == 0 else FREQ_FAST


def _group_offsets(cls: int, n_classes: int) -> tuple[float, float]:
    n_groups = (n_classes + 1) // 2
    g = cls // 2
    angle = 2.0 * np.pi * g / n_groups
    return OFFSET_AMP * np.cos(angle), OFFSET_AMP * np.sin(angle)


def synth_transfer_dataset(seed: int, n_subjects: int = 4, n_classes: int = 6,
                           noise_dst: float = 0.45,
                           params: SynthParams | None = None) -> list[Recording]:
    """Generate one Recording per synthetic subject, fully seeded.

    Streams: SRC (clean latent observation), DST (attenuated + distracted),
    LATENT (oracle channels, never used for training).
    """
    p = params or SynthParams(n_subjects=n_subjects, n_classes=n_classes,
                              noise_dst=noise_dst)
    rng = stream(seed, "synth")
    # fixed mixing of latent channels into the target channels, shared by all
    # subjects so the mapping itself is learnable
    mix = rng.normal(0.0, 1.0, size=(DST_SPEC.channel_count, 4))
    mix /= np.linalg.norm(mix, axis=1, keepdims=True)

    n_bout = int(round(p.bout_seconds * p.sample_rate))
    t_axis = np.arange(n_bout) / p.sample_rate
    recordings = []
    for si in range(p.n_subjects):
        bouts = [c for c in range(p.n_classes) for _ in range(p.bouts_per_class)]
        rng.shuffle(bouts)
        src_parts, dst_parts, lat_parts, label_parts = [], [], [], []
        for cls in bouts:
            f = _class_freq(cls)
            off_a, off_b = _group_offsets(cls, p.n_classes)
            phase = rng.uniform(0, 2 * np.pi)
            slow_phase = rng.uniform(0, 2 * np.pi)
            osc_a = np.sin(2 * np.pi * f * t_axis + phase)
            osc_b = np.cos(2 * np.pi * f * t_axis + phase)
            wobble = 0.2 * np.sin(2 * np.pi * 0.3 * t_axis + slow_phase)
            z = np.stack([osc_a, osc_b,
                          off_a + wobble, off_b - wobble])  # (4, n)
            src = z + p.src_noise * rng.normal(size=(4, n_bout))
            # coherent class-independent distractor in the same frequency band
            f_d = rng.uniform(*DISTRACTOR_BAND)
            psi = rng.uniform(0, 2 * np.pi)
            amp = p.distractor_amp * rng.uniform(0.8, 1.2)
            weights = rng.normal(size=DST_SPEC.channel_count)
            weights /= max(np.linalg.norm(weights), 1e-9)
            distract = amp * weights[:, None] * np.sin(2 * np.pi * f_d * t_axis + psi)[None, :]
            dst = (p.attenuation * (mix @ z) + distract
                   + p.noise_dst * rng.normal(size=(DST_SPEC.channel_count, n_bout)))
            lat = np.vstack([z, np.full((1, n_bout), f / FREQ_FAST)])
            src_parts.append(src)
            dst_parts.append(dst)
            lat_parts.append(lat)
            label_parts.append(np.full(n_bout, cls, dtype=np.int64))
        recordings.append(Recording(
            subject_id=f"S{si}",
            sample_rate=p.sample_rate,
            streams={
                SRC_SPEC.name: np.concatenate(src_parts, axis=1),
                DST_SPEC.name: np.concatenate(dst_parts, axis=1),
                LATENT_SPEC.name: np.concatenate(lat_parts, axis=1),
            },
            labels=np.concatenate(label_parts),
            rec_id=f"S{si}#0"))
    return recordings


def synth_class_names(n_classes: int) -> list[str]:
    return [f"act{g}{'_slow' if v == 0 else '_fast'}"
            for g in range((n_classes + 1) // 2) for v in (0, 1)][:n_classes]


# -- probe oracles -----------------------------------------------------------------
#
# Independent linear probes (scikit-learn logistic regression) establishing
# the dataset's information ceiling (latent channels) and raw-target floor.


def _probe_xy(recordings, spec, plan_subjects, window_seconds, slide_seconds,
              featurize):
    xs, ys = [], []
    for rec in recordings:
        if rec.subject_id not in plan_subjects:
            continue
        for win in window_recording(rec, spec, window_seconds, slide_seconds):
            xs.append(featurize(win.values))
            ys.append(win.label)
    return np.asarray(xs), np.asarray(ys)


def _flat(values: np.ndarray) -> np.ndarray:
    return values.reshape(-1)


def _summary(values: np.ndarray) -> np.ndarray:
    return np.concatenate([values.mean(axis=1), values.std(axis=1)])


def linear_probe_f1(recordings: list[Recording], plan: SplitPlan,
                    which: str, n_classes: int,
                    window_seconds: float = 2.0, slide_seconds: float = 0.5,
                    seed: int = 0) -> float:
    """Macro-F1 of a linear probe trained on the plan's train+val subjects.

    which='latent' probes per-window summaries of the oracle channels;
    which='raw_dst' probes flattened raw target windows.
    """
    if which == "latent":
        spec, feat = LATENT_SPEC, _summary
    elif which == "raw_dst":
        spec, feat = DST_SPEC, _flat
    else:
        raise ValueError(f"unknown probe {which!r}")
    train_subjects = set(plan.train_subjects) | {plan.validation_subject}
    x_tr, y_tr = _probe_xy(recordings, spec, train_subjects,
                           window_seconds, slide_seconds, feat)
    x_te, y_te = _probe_xy(recordings, spec, {plan.test_subject},
                           window_seconds, slide_seconds, feat)
    clf = make_pipeline(StandardScaler(),
                        LogisticRegression(max_iter=3000, random_state=seed))
    clf.fit(x_tr, y_tr)
    preds = clf.predict(x_te)
    return float(f1_score(y_te, preds, labels=list(range(n_classes)),
                          average="macro", zero_division=0))
