"""Turn records into a stacked segment dataset ready for training."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..dsp import (GOOD_THRESHOLD, SEGMENT_SECONDS, ChannelKind, SignalRecord, build_channel_stack,
                   design_bandpass, preprocess_record, segment_record)
from ..errors import DegenerateSignal
from .formats import DatasetManifest


@dataclass
class SegmentDataset:
    """Segments in (subject_id, start) order; ``y`` is 1 for Good."""

    X: np.ndarray
    y: np.ndarray
    subjects: np.ndarray
    starts: np.ndarray
    channels: tuple[ChannelKind, ...]
    n_degenerate: int = 0

    def __len__(self) -> int:
        return int(self.y.size)

    def subject_ids(self) -> list[str]:
        return sorted(set(self.subjects.tolist()))

    def subset(self, subjects: Iterable[str]) -> "SegmentDataset":
        keep = np.isin(self.subjects, list(subjects))
        return SegmentDataset(self.X[keep], self.y[keep], self.subjects[keep], self.starts[keep],
                              self.channels)

    @property
    def sources(self) -> list[tuple[str, int]]:
        return list(zip(self.subjects.tolist(), self.starts.tolist()))


def records_to_dataset(records: Sequence[SignalRecord], kinds: Iterable[ChannelKind],
                       seconds: float = SEGMENT_SECONDS,
                       good_threshold: float = GOOD_THRESHOLD) -> SegmentDataset:
    """Filter each record, cut it into windows and build channel stacks.

    Constant windows are counted in ``n_degenerate`` and left out.
    """
    kinds = tuple(sorted(set(kinds)))
    X, y, subj, starts = [], [], [], []
    skipped = 0
    coeffs = {}
    for rec in sorted(records, key=lambda r: r.subject_id):
        if rec.fs not in coeffs:
            coeffs[rec.fs] = design_bandpass(rec.fs)
        filtered = preprocess_record(rec, coeffs[rec.fs])
        for seg in segment_record(filtered, seconds, good_threshold):
            try:
                stack = build_channel_stack(seg, kinds, rec.fs)
            except DegenerateSignal:
                skipped += 1
                continue
            X.append(stack.data.astype(np.float32))
            y.append(int(seg.label))
            subj.append(seg.source[0])
            starts.append(seg.source[1])
    n = int(round(seconds * records[0].fs)) if records else 0
    X = np.stack(X) if X else np.zeros((0, len(kinds), n), dtype=np.float32)
    return SegmentDataset(X, np.asarray(y, dtype=np.int64), np.array(subj, dtype=str),
                          np.asarray(starts, dtype=np.int64), kinds, skipped)


def load_dataset(manifest: DatasetManifest, kinds: Iterable[ChannelKind],
                 split: str | None = None) -> SegmentDataset:
    records = [manifest.load(e) for e in manifest.entries if split is None or e.split == split]
    return records_to_dataset(records, kinds)
