"""Plain-text record, label-run, manifest and prediction formats.

Record file: one decimal sample per line.
Label file: one ``start,end,quality`` run per line (``end`` exclusive,
``quality`` in {good, bad}); runs must tile ``[0, len)`` exactly.
Manifest: tab-separated ``subject_id record_path label_path fs split`` with a
header row; relative paths resolve against the manifest's directory.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..dsp import Label, SignalRecord
from ..errors import CoverageGap, IoFailure, MalformedFile, RangeError

MANIFEST_FIELDS = ("subject_id", "record_path", "label_path", "fs", "split")


def read_samples(path) -> np.ndarray:
    values = []
    with open(path) as fh:
        for i, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                continue
            try:
                values.append(float(text))
            except ValueError:
                raise MalformedFile(path, i, f"not a number: {text!r}") from None
    return np.asarray(values, dtype=np.float64)


def write_samples(path, samples: Sequence[float]) -> None:
    with open(path, "w") as fh:
        fh.writelines(f"{float(v)!r}\n" for v in samples)


def read_label_runs(path) -> list[tuple[int, int, bool]]:
    runs = []
    with open(path) as fh:
        for i, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                continue
            parts = [p.strip() for p in text.split(",")]
            if len(parts) != 3:
                raise MalformedFile(path, i, "expected start,end,quality")
            try:
                start, end = int(parts[0]), int(parts[1])
            except ValueError:
                raise MalformedFile(path, i, "start/end must be integers") from None
            quality = parts[2].lower()
            if quality not in ("good", "bad"):
                raise MalformedFile(path, i, f"quality must be good or bad, got {parts[2]!r}")
            if start < 0 or end <= start:
                raise MalformedFile(path, i, f"empty or negative run {start},{end}")
            runs.append((start, end, quality == "good"))
    return runs


def mask_to_runs(mask: Sequence[bool]) -> list[tuple[int, int, bool]]:
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        return []
    edges = np.nonzero(np.diff(mask.astype(np.int8)))[0] + 1
    starts = np.r_[0, edges]
    ends = np.r_[edges, mask.size]
    return [(int(s), int(e), bool(mask[s])) for s, e in zip(starts, ends)]


def write_label_runs(path, runs) -> None:
    with open(path, "w") as fh:
        for start, end, good in runs:
            fh.write(f"{start},{end},{'good' if good else 'bad'}\n")


def runs_to_mask(runs, length: int) -> np.ndarray:
    mask = np.zeros(length, dtype=bool)
    pos = 0
    for start, end, good in sorted(runs):
        if start < pos:
            raise CoverageGap(f"label run {start},{end} overlaps the previous run ending at {pos}")
        if start > pos:
            raise CoverageGap(f"samples {pos}..{start} are unlabeled")
        mask[start:end] = good
        pos = end
    if pos != length:
        raise CoverageGap(f"label runs cover {pos} samples, record has {length}")
    return mask


def load_record(record_path, label_path, fs: float, subject_id: str | None = None) -> SignalRecord:
    samples = read_samples(record_path)
    mask = runs_to_mask(read_label_runs(label_path), samples.size)
    return SignalRecord(subject_id or Path(record_path).stem, samples, fs, mask)


def load_unlabeled_record(record_path, fs: float, subject_id: str | None = None) -> SignalRecord:
    samples = read_samples(record_path)
    return SignalRecord(subject_id or Path(record_path).stem, samples, fs,
                        np.ones(samples.size, dtype=bool))


def save_record(rec: SignalRecord, record_path, label_path) -> None:
    write_samples(record_path, rec.samples)
    write_label_runs(label_path, mask_to_runs(rec.quality_mask))


# -- manifest ----------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    record_path: str
    label_path: str
    fs: float
    split: str = "train"


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        ids = [e.subject_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate subject ids in manifest")
        self.root = Path(self.root)

    def subjects(self, split: str | None = None) -> list[str]:
        return [e.subject_id for e in self.entries if split is None or e.split == split]

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def load(self, entry: ManifestEntry) -> SignalRecord:
        rec, lab = self.resolve(entry.record_path), self.resolve(entry.label_path)
        for p in (rec, lab):
            if not p.exists():
                raise IoFailure(f"manifest references missing file {p}")
        return load_record(rec, lab, entry.fs, entry.subject_id)

    def __eq__(self, other):
        return isinstance(other, DatasetManifest) and self.entries == other.entries


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for e in manifest.entries:
            w.writerow([e.subject_id, e.record_path, e.label_path, repr(float(e.fs)), e.split])


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise IoFailure(f"cannot open manifest {path}: {exc}") from exc
    with fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if not rows or tuple(rows[0]) != MANIFEST_FIELDS:
        raise MalformedFile(path, 1, "header must be " + " ".join(MANIFEST_FIELDS))
    entries = []
    for i, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != len(MANIFEST_FIELDS):
            raise MalformedFile(path, i, "wrong number of fields")
        try:
            fs = float(row[3])
        except ValueError:
            raise MalformedFile(path, i, "fs is not a number") from None
        entries.append(ManifestEntry(row[0], row[1], row[2], fs, row[4]))
    return DatasetManifest(entries, root=path.parent)


# -- predictions -------------------------------------------------------------

PREDICTION_FIELDS = ("subject_id", "start_sample", "score", "predicted_label", "true_label")


def write_predictions(sources, scores, path, true_labels=None, threshold: float = 0.5) -> None:
    """Write one row per segment, sorted by (subject_id, start_sample).

    ``sources`` are ``(subject_id, start_sample)`` pairs; ``true_labels`` may be
    None, in which case that column is left empty.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if np.any(~np.isfinite(scores)) or np.any((scores < 0) | (scores > 1)):
        raise RangeError("prediction scores must lie in [0, 1]")
    sources = [(str(s), int(i)) for s, i in sources]
    if len(sources) != scores.size:
        raise ValueError("sources and scores differ in length")
    order = sorted(range(len(sources)), key=lambda k: sources[k])
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PREDICTION_FIELDS)
            for k in order:
                pred = Label.GOOD if scores[k] >= threshold else Label.BAD
                true = "" if true_labels is None else Label(int(true_labels[k])).name.lower()
                w.writerow([sources[k][0], sources[k][1], f"{scores[k]:.6f}",
                            pred.name.lower(), true])
    except OSError as exc:
        raise IoFailure(f"cannot write predictions to {path}: {exc}") from exc
