"""Recording ingestion, sliding windows, subject-wise splits, normalization.

Input CSV layout: header `timestamp,subject,activity,<modality>.<channel>,...`,
one row per sample, timestamps monotonically increasing per subject. Missing
channel values (empty or NaN) are linearly interpolated when the gap is
short; longer dropouts split the recording into segments so no window ever
spans a discontinuity.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

NULL_ACTIVITY = {"", "nan", "null", "undefined", "none"}


class LoadError(ValueError):
    """Malformed input file; message names the file and offending line."""


@dataclass(frozen=True)
class ModalitySpec:
    name: str
    channel_names: tuple[str, ...]

    def __post_init__(self):
        if len(self.channel_names) < 1:
            raise ValueError(f"modality {self.name!r} declares no channels")

    @property
    def channel_count(self) -> int:
        return len(self.channel_names)


@dataclass
class Recording:
    """One contiguous multi-modality segment for one subject."""
    subject_id: str
    sample_rate: float
    streams: dict[str, np.ndarray]   # modality name -> (channels, samples)
    labels: np.ndarray               # (samples,) activity ids
    rec_id: str = ""

    def __post_init__(self):
        n = len(self.labels)
        for name, arr in self.streams.items():
            if arr.shape[1] != n:
                raise ValueError(f"stream {name!r} length {arr.shape[1]} != labels {n}")

    @property
    def n_samples(self) -> int:
        return len(self.labels)


@dataclass
class SensorWindow:
    modality: ModalitySpec
    values: np.ndarray    # (channels, n_w)
    label: int
    subject_id: str
    window_index: int     # start sample within the recording
    rec_id: str = ""


@dataclass
class WindowPair:
    src: SensorWindow
    dst: SensorWindow

    def __post_init__(self):
        if (self.src.window_index != self.dst.window_index
                or self.src.subject_id != self.dst.subject_id
                or self.src.rec_id != self.dst.rec_id):
            raise ValueError("window pair sides cover different intervals")


@dataclass
class SplitPlan:
    test_subject: str
    validation_subject: str
    train_subjects: tuple[str, ...]


# -- CSV loading -----------------------------------------------------------------


def _parse_header(fields: list[str], schema: list[ModalitySpec], path) -> dict[str, int]:
    expected = {"timestamp", "subject", "activity"}
    for spec in schema:
        for ch in spec.channel_names:
            expected.add(f"{spec.name}.{ch}")
    seen = {}
    for i, col in enumerate(fields):
        if col not in expected:
            raise LoadError(f"{path}:1: unknown column {col!r}")
        seen[col] = i
    missing = expected - set(seen)
    if missing:
        raise LoadError(f"{path}:1: missing columns {sorted(missing)}")
    return seen


def _split_segments(good: np.ndarray, max_gap: int) -> list[tuple[int, int]]:
    """Contiguous [start, end) runs of good samples, treating bad runs longer
    than max_gap as hard boundaries and short internal bad runs as repairable."""
    n = len(good)
    segments = []
    i = 0
    while i < n:
        if not good[i]:
            i += 1
            continue
        j = i
        while j < n:
            if good[j]:
                j += 1
                continue
            k = j
            while k < n and not good[k]:
                k += 1
            if k - j <= max_gap and k < n:  # short internal gap: repairable
                j = k
                continue
            break
        segments.append((i, j))
        i = j
    return segments


def load_recordings(path, schema: list[ModalitySpec], vocabulary: list[str],
                    sample_rate: float, max_gap_seconds: float = 1.0) -> list[Recording]:
    """Parse one CSV into per-subject, per-segment Recordings.

    Rows with a null/undefined activity are dropped; unknown activities are
    an error. NaN runs no longer than max_gap_seconds are linearly
    interpolated, longer ones split the recording.
    """
    vocab_index = {name: i for i, name in enumerate(vocabulary)}
    path = str(path)
    columns: list[str] = []
    for spec in schema:
        for ch in spec.channel_names:
            columns.append(f"{spec.name}.{ch}")

    by_subject: dict[str, dict] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError(f"{path}:1: empty file") from None
        idx = _parse_header([h.strip() for h in header], schema, path)
        col_idx = [idx[c] for c in columns]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            act = row[idx["activity"]].strip()
            if act.lower() in NULL_ACTIVITY:
                continue
            if act not in vocab_index:
                raise LoadError(f"{path}:{lineno}: unknown activity label {act!r}")
            subj = row[idx["subject"]].strip()
            try:
                ts = float(row[idx["timestamp"]])
            except ValueError:
                raise LoadError(f"{path}:{lineno}: bad timestamp {row[idx['timestamp']]!r}") from None
            rec = by_subject.setdefault(subj, {"ts": [], "vals": [], "labels": [], "lines": []})
            if rec["ts"] and ts <= rec["ts"][-1]:
                raise LoadError(f"{path}:{lineno}: non-monotonic timestamp for subject {subj!r}")
            vals = []
            for c in col_idx:
                cell = row[c].strip()
                vals.append(float("nan") if cell == "" or cell.lower() == "nan" else float(cell))
            rec["ts"].append(ts)
            rec["vals"].append(vals)
            rec["labels"].append(vocab_index[act])
            rec["lines"].append(lineno)

    max_gap = max(1, int(round(max_gap_seconds * sample_rate)))
    recordings: list[Recording] = []
    for subj in sorted(by_subject):
        data = by_subject[subj]
        ts = np.asarray(data["ts"])
        vals = np.asarray(data["vals"], dtype=np.float64)  # (n, n_cols)
        labels = np.asarray(data["labels"], dtype=np.int64)
        # hard boundaries where dropped rows or pauses broke continuity
        dt = np.diff(ts)
        breaks = np.flatnonzero(dt > 1.5 / sample_rate) + 1
        chunks = np.split(np.arange(len(ts)), breaks)
        seg_counter = 0
        for chunk in chunks:
            if len(chunk) == 0:
                continue
            v = vals[chunk]
            lab = labels[chunk]
            good = np.all(np.isfinite(v), axis=1)
            for start, end in _split_segments(good, max_gap):
                seg = v[start:end].copy()
                xs = np.arange(end - start)
                for col in range(seg.shape[1]):
                    bad = ~np.isfinite(seg[:, col])
                    if bad.any():
                        seg[bad, col] = np.interp(xs[bad], xs[~bad], seg[~bad, col])
                streams = {}
                pos = 0
                for spec in schema:
                    c = spec.channel_count
                    streams[spec.name] = np.ascontiguousarray(seg[:, pos:pos + c].T)
                    pos += c
                recordings.append(Recording(
                    subject_id=subj, sample_rate=sample_rate, streams=streams,
                    labels=lab[start:end].copy(),
                    rec_id=f"{subj}#{seg_counter}"))
                seg_counter += 1
    return recordings


# -- windowing -------------------------------------------------------------------


def _window_samples(seconds: float, rate: float, what: str) -> int:
    n = seconds * rate
    if abs(n - round(n)) > 1e-9:
        raise ValueError(f"{what} of {seconds}s is not integral at {rate} Hz")
    return int(round(n))


def window_count(n_samples: int, w: int, s: int) -> int:
    if n_samples < w:
        return 0
    return (n_samples - w) // s + 1


def _majority_label(labels: np.ndarray) -> int:
    """Most frequent label; ties break toward the center sample's label."""
    vals, counts = np.unique(labels, return_counts=True)
    top = counts.max()
    winners = set(vals[counts == top].tolist())
    if len(winners) == 1:
        return int(next(iter(winners)))
    center = int(labels[len(labels) // 2])
    if center in winners:
        return center
    return int(min(winners))


def window_recording(rec: Recording, spec: ModalitySpec, window_seconds: float,
                     slide_seconds: float) -> list[SensorWindow]:
    w = _window_samples(window_seconds, rec.sample_rate, "window")
    s = _window_samples(slide_seconds, rec.sample_rate, "slide")
    stream = rec.streams[spec.name]
    out = []
    for start in range(0, rec.n_samples - w + 1, s):
        out.append(SensorWindow(
            modality=spec,
            values=np.ascontiguousarray(stream[:, start:start + w]),
            label=_majority_label(rec.labels[start:start + w]),
            subject_id=rec.subject_id,
            window_index=start,
            rec_id=rec.rec_id))
    return out


def make_windows(rec: Recording, src_spec: ModalitySpec, dst_spec: ModalitySpec,
                 window_seconds: float, slide_seconds: float) -> list[WindowPair]:
    """Index-aligned (source, target) windows over one recording."""
    srcs = window_recording(rec, src_spec, window_seconds, slide_seconds)
    dsts = window_recording(rec, dst_spec, window_seconds, slide_seconds)
    return [WindowPair(a, b) for a, b in zip(srcs, dsts)]


def fused_spec(specs: list[ModalitySpec], name: str = "FUSED") -> ModalitySpec:
    names = tuple(f"{s.name}.{c}" for s in specs for c in s.channel_names)
    return ModalitySpec(name, names)


def fuse_recording(rec: Recording, specs: list[ModalitySpec],
                   name: str = "FUSED") -> Recording:
    """Channel-concatenate several modalities into one."""
    spec = fused_spec(specs, name)
    stacked = np.concatenate([rec.streams[s.name] for s in specs], axis=0)
    streams = dict(rec.streams)
    streams[name] = stacked
    return Recording(rec.subject_id, rec.sample_rate, streams, rec.labels, rec.rec_id)


# -- splits ----------------------------------------------------------------------


def louo_splits(recordings: list[Recording]) -> list[SplitPlan]:
    """One plan per subject as test; validation is the next subject in sorted
    order (wrapping), train is the rest."""
    subjects = sorted({r.subject_id for r in recordings})
    if len(subjects) < 3:
        raise ValueError(f"leave-one-user-out needs >= 3 subjects, got {len(subjects)}")
    plans = []
    for i, test in enumerate(subjects):
        val = subjects[(i + 1) % len(subjects)]
        train = tuple(s for s in subjects if s not in (test, val))
        plans.append(SplitPlan(test, val, train))
    return plans


def split_pairs(pairs: list[WindowPair], plan: SplitPlan):
    train = [p for p in pairs if p.dst.subject_id in plan.train_subjects]
    val = [p for p in pairs if p.dst.subject_id == plan.validation_subject]
    test = [p for p in pairs if p.dst.subject_id == plan.test_subject]
    return train, val, test


# -- normalization ----------------------------------------------------------------


@dataclass
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray   # zero-variance channels carry std 1 (pass-through)


class Normalizer:
    """Per-channel z-scoring with statistics from the training split only."""

    def __init__(self):
        self.stats: dict[str, ChannelStats] = {}

    def fit(self, windows: list[SensorWindow]) -> "Normalizer":
        by_mod: dict[str, list[np.ndarray]] = {}
        for win in windows:
            by_mod.setdefault(win.modality.name, []).append(win.values)
        for name, arrs in sorted(by_mod.items()):
            data = np.concatenate(arrs, axis=1)
            mean = data.mean(axis=1)
            std = data.std(axis=1)
            std = np.where(std == 0.0, 1.0, std)
            self.stats[name] = ChannelStats(mean, std)
        return self

    def fit_pairs(self, pairs: list[WindowPair]) -> "Normalizer":
        flat: list[SensorWindow] = []
        for p in pairs:
            flat.append(p.src)
            flat.append(p.dst)
        return self.fit(flat)

    def transform_window(self, win: SensorWindow) -> SensorWindow:
        st = self.stats[win.modality.name]
        vals = (win.values - st.mean[:, None]) / st.std[:, None]
        return SensorWindow(win.modality, vals, win.label, win.subject_id,
                            win.window_index, win.rec_id)

    def inverse_window(self, win: SensorWindow) -> SensorWindow:
        st = self.stats[win.modality.name]
        vals = win.values * st.std[:, None] + st.mean[:, None]
        return SensorWindow(win.modality, vals, win.label, win.subject_id,
                            win.window_index, win.rec_id)

    def transform_pairs(self, pairs: list[WindowPair]) -> list[WindowPair]:
        return [WindowPair(self.transform_window(p.src), self.transform_window(p.dst))
                for p in pairs]


def normalize(windows: list[SensorWindow], stats_source: list[SensorWindow]) -> list[SensorWindow]:
    norm = Normalizer().fit(stats_source)
    return [norm.transform_window(w) for w in windows]


# -- windowed cache (flat binary + JSON header) ------------------------------------

CACHE_MAGIC = "crossloc-windows-v1"


def save_window_cache(path, arrays: dict[str, np.ndarray], labels: np.ndarray,
                      subjects: list[str], window_indices: list[int]) -> None:
    """Write per-modality window stacks as little-endian float32 blocks after
    one JSON header line declaring shapes and provenance."""
    entries = []
    bufs = []
    offset = 0
    for name in sorted(arrays):
        buf = np.ascontiguousarray(arrays[name], dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arrays[name].shape),
                        "dtype": "<f4", "offset": offset, "nbytes": len(buf)})
        bufs.append(buf)
        offset += len(buf)
    header = json.dumps({
        "format": CACHE_MAGIC,
        "entries": entries,
        "labels": np.asarray(labels).astype(int).tolist(),
        "subjects": list(subjects),
        "window_indices": [int(i) for i in window_indices],
    }, sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        for buf in bufs:
            fh.write(buf)


def load_window_cache(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != CACHE_MAGIC:
            raise LoadError(f"{path}: not a {CACHE_MAGIC} file")
        blob = fh.read()
    arrays = {}
    for ent in header["entries"]:
        raw = blob[ent["offset"]:ent["offset"] + ent["nbytes"]]
        arrays[ent["name"]] = np.frombuffer(raw, dtype=ent["dtype"]).reshape(ent["shape"]).copy()
    labels = np.asarray(header["labels"], dtype=np.int64)
    return arrays, labels, header["subjects"], header["window_indices"]
