"""Synthetic PPG corpus for desk-scale end-to-end runs.

Each subject gets a pulse train built from two Gaussian bumps per beat
(systolic peak plus a smaller, wider dicrotic wave) driven by a heart rate
that wanders inside the configured range, with respiratory amplitude
modulation and light sensor noise. Corruption is decided per 30 s window:
with probability ``corruption_prob`` a span covering ``span_fraction`` of the
window is overwritten by one artefact kind and marked bad in the mask.

Nothing here is meant to mimic a clinical cohort's statistics.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..dsp import SignalRecord
from ..rng import SplitMix64
from .formats import DatasetManifest, ManifestEntry, save_record, write_manifest

CORRUPTION_KINDS = ("gaussian_burst", "baseline_wander", "flatline", "motion_spikes")


@dataclass(frozen=True)
class SynthesisConfig:
    n_subjects: int = 12
    minutes_per_subject: float = 30.0
    heart_rate_range: tuple[float, float] = (50.0, 110.0)
    corruption_prob: float = 0.4
    corruption_kinds: tuple[str, ...] = CORRUPTION_KINDS
    span_fraction: tuple[float, float] = (0.4, 1.0)
    n_test_subjects: int = 3
    fs: float = 32.0
    segment_seconds: float = 30.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.heart_rate_range
        if not 30 < lo <= hi < 220:
            raise ValueError("heart rates must lie within (30, 220) bpm")
        if not 0.0 <= self.corruption_prob <= 1.0:
            raise ValueError("corruption_prob must be in [0, 1]")
        if not 0.0 < self.span_fraction[0] <= self.span_fraction[1] <= 1.0:
            raise ValueError("span_fraction must satisfy 0 < lo <= hi <= 1")
        unknown = set(self.corruption_kinds) - set(CORRUPTION_KINDS)
        if unknown or not self.corruption_kinds:
            raise ValueError(f"bad corruption kinds {sorted(unknown)}")
        if not 0 <= self.n_test_subjects < self.n_subjects:
            raise ValueError("n_test_subjects must leave at least one training subject")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["heart_rate_range"] = list(self.heart_rate_range)
        d["corruption_kinds"] = list(self.corruption_kinds)
        d["span_fraction"] = list(self.span_fraction)
        return d


def _clean_ppg(rng: SplitMix64, n: int, fs: float, hr_range) -> np.ndarray:
    lo, hi = hr_range
    seconds = int(np.ceil(n / fs)) + 1
    base = rng.uniform(lo, hi, 1)[0]
    walk = np.cumsum(rng.normal(seconds) * 0.8)
    span = hi - lo
    if span > 0:
        # triangle-wave fold keeps the wander inside [lo, hi]
        y = (base + walk - lo) % (2 * span)
        hr_sec = lo + span - np.abs(y - span)
    else:
        hr_sec = np.full(seconds, lo)
    t = np.arange(n) / fs
    hr = np.interp(t, np.arange(seconds), hr_sec)
    phase = np.cumsum(hr / 60.0 / fs) + rng.random()
    frac = phase % 1.0

    sys_c, sys_w = 0.2, 0.07 * rng.uniform(0.85, 1.15, 1)[0]
    dia_c, dia_w = 0.47, 0.11 * rng.uniform(0.85, 1.15, 1)[0]
    dia_a = rng.uniform(0.25, 0.6, 1)[0]

    def bump(c, w):
        d = (frac - c + 0.5) % 1.0 - 0.5
        return np.exp(-0.5 * (d / w) ** 2)

    pulse = bump(sys_c, sys_w) + dia_a * bump(dia_c, dia_w)
    resp_f = rng.uniform(0.2, 0.35, 1)[0]
    resp_phase = 2 * np.pi * rng.random()
    pulse *= 1.0 + 0.1 * np.sin(2 * np.pi * resp_f * t + resp_phase)
    pulse += 0.15 * np.sin(2 * np.pi * resp_f * t + resp_phase + 1.0)
    pulse += 0.02 * rng.normal(n)
    return pulse


def _corrupt(rng: SplitMix64, x: np.ndarray, start: int, length: int, kind: str, fs: float) -> None:
    seg = slice(start, start + length)
    t = np.arange(length) / fs
    if kind == "gaussian_burst":
        x[seg] += rng.uniform(0.8, 2.5, 1)[0] * rng.normal(length)
    elif kind == "baseline_wander":
        f = rng.uniform(0.15, 0.45, 1)[0]
        amp = rng.uniform(4.0, 10.0, 1)[0]
        x[seg] += amp * np.sin(2 * np.pi * f * t + 2 * np.pi * rng.random())
        x[seg] *= rng.uniform(0.1, 0.4, 1)[0]
        x[seg] += 0.3 * rng.normal(length)
    elif kind == "flatline":
        x[seg] = x[start] + rng.uniform(-2.0, 2.0, 1)[0]
    elif kind == "motion_spikes":
        rate = rng.uniform(0.5, 2.0, 1)[0]
        count = max(1, int(round(rate * length / fs)))
        centers = rng.uniform(0, length, count)
        widths = rng.uniform(1.0, 4.0, count)
        amps = rng.uniform(3.0, 10.0, count) * np.where(rng.random(count) < 0.5, -1.0, 1.0)
        idx = np.arange(length)
        spikes = np.zeros(length)
        for c, w, a in zip(centers, widths, amps):
            spikes += a * np.exp(-0.5 * ((idx - c) / w) ** 2)
        x[seg] += spikes + 0.2 * rng.normal(length)
    else:
        raise ValueError(f"unknown corruption kind {kind}")


def synthesize_record(cfg: SynthesisConfig, subject_index: int, rng: SplitMix64) -> SignalRecord:
    fs = cfg.fs
    n = int(round(cfg.minutes_per_subject * 60 * fs))
    win = int(round(cfg.segment_seconds * fs))
    x = _clean_ppg(rng, n, fs, cfg.heart_rate_range)
    mask = np.ones(n, dtype=bool)
    for w0 in range(0, n - win + 1, win):
        if rng.random() >= cfg.corruption_prob:
            continue
        kind = cfg.corruption_kinds[int(rng.random() * len(cfg.corruption_kinds))]
        frac = rng.uniform(cfg.span_fraction[0], cfg.span_fraction[1], 1)[0]
        length = max(1, int(round(frac * win)))
        start = w0 + int(rng.random() * (win - length + 1))
        _corrupt(rng, x, start, length, kind, fs)
        mask[start:start + length] = False
    gain = rng.uniform(0.5, 2.0, 1)[0]
    offset = rng.uniform(50.0, 150.0, 1)[0]
    return SignalRecord(f"S{subject_index:03d}", offset + gain * x, fs, mask)


def synthesize_records(cfg: SynthesisConfig) -> list[SignalRecord]:
    seeds = SplitMix64(cfg.seed).next_uint64(cfg.n_subjects)
    return [synthesize_record(cfg, i, SplitMix64(int(s))) for i, s in enumerate(seeds)]


def synthesize_corpus(cfg: SynthesisConfig, out_dir) -> DatasetManifest:
    """Write records, label runs and ``manifest.tsv`` under ``out_dir``.

    The last ``n_test_subjects`` subjects are tagged ``test``.
    """
    out = Path(out_dir)
    (out / "records").mkdir(parents=True, exist_ok=True)
    entries = []
    n_train = cfg.n_subjects - cfg.n_test_subjects
    for i, rec in enumerate(synthesize_records(cfg)):
        rp = f"records/{rec.subject_id}.txt"
        lp = f"records/{rec.subject_id}.labels"
        save_record(rec, out / rp, out / lp)
        entries.append(ManifestEntry(rec.subject_id, rp, lp, cfg.fs,
                                     "train" if i < n_train else "test"))
    manifest = DatasetManifest(entries, root=out)
    write_manifest(manifest, out / "manifest.tsv")
    return manifest
