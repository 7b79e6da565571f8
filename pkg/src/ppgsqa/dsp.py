"""PPG preprocessing: bandpass filter, z-scoring, segmentation and the
derived input channels (FDP, SDP, ATC)."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import signal

from .errors import DegenerateSignal, InvalidBand, NonFinite, RecordTooShort

FS_DEFAULT = 32.0
SEGMENT_SECONDS = 30.0
GOOD_THRESHOLD = 0.8
BAND = (0.5, 8.0)
FILTER_ORDER = 3


class Label(enum.IntEnum):
    BAD = 0
    GOOD = 1


class ChannelKind(enum.IntEnum):
    """Input channel kinds; the integer value is the canonical row order."""

    CLEAN = 0
    FDP = 1
    SDP = 2
    ATC = 3

    @property
    def cli_name(self) -> str:
        return "ppg" if self is ChannelKind.CLEAN else self.name.lower()

    @classmethod
    def parse(cls, name: str) -> "ChannelKind":
        key = name.strip().lower()
        if key in ("ppg", "clean"):
            return cls.CLEAN
        try:
            return cls[key.upper()]
        except KeyError:
            raise ValueError(f"unknown channel kind {name!r}") from None


def parse_channels(spec: str | Iterable[str]) -> tuple[ChannelKind, ...]:
    """Parse ``"ppg,fdp"`` style lists; duplicates are rejected."""
    names = spec.split(",") if isinstance(spec, str) else list(spec)
    kinds = [ChannelKind.parse(n) for n in names if str(n).strip()]
    if not kinds:
        raise ValueError("empty channel set")
    if len(set(kinds)) != len(kinds):
        raise ValueError(f"duplicate channel in {spec!r}")
    return tuple(sorted(kinds))


@dataclass
class SignalRecord:
    subject_id: str
    samples: np.ndarray
    fs: float
    quality_mask: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.quality_mask = np.asarray(self.quality_mask, dtype=bool)
        if self.samples.ndim != 1 or self.quality_mask.shape != self.samples.shape:
            raise ValueError("samples and quality_mask must be 1-D and equally long")
        if not self.fs > 0:
            raise ValueError("fs must be positive")


@dataclass
class Segment:
    values: np.ndarray
    label: Label
    source: tuple[str, int]


@dataclass
class ChannelStack:
    channels: tuple[ChannelKind, ...]
    data: np.ndarray
    label: Label | None = None
    source: tuple[str, int] | None = field(default=None)


@dataclass(frozen=True)
class FilterCoefficients:
    b: np.ndarray
    a: np.ndarray

    @property
    def poles(self) -> np.ndarray:
        return np.roots(self.a)

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles) < 1.0))

    def response(self, freqs_hz: np.ndarray, fs: float) -> np.ndarray:
        """Complex frequency response evaluated on the unit circle."""
        z = np.exp(-1j * 2 * np.pi * np.asarray(freqs_hz, dtype=float) / fs)
        return np.polyval(self.b[::-1], z) / np.polyval(self.a[::-1], z)


def design_bandpass(fs: float = FS_DEFAULT, low: float = BAND[0], high: float = BAND[1],
                    order: int = FILTER_ORDER) -> FilterCoefficients:
    """Digital Butterworth bandpass via prewarped bilinear transform.

    The analog lowpass prototype (poles on the left unit half-circle) is
    mapped to a bandpass around ``sqrt(wl * wh)`` with bandwidth ``wh - wl``;
    each prototype pole yields a conjugate-symmetric pole pair, giving a
    digital filter of twice the prototype order.
    """
    if order != FILTER_ORDER:
        raise InvalidBand(f"only order {FILTER_ORDER} is supported, got {order}")
    if not (0 < low < high < fs / 2):
        raise InvalidBand(f"need 0 < low < high < fs/2, got low={low}, high={high}, fs={fs}")

    k = np.arange(1, order + 1)
    proto = np.exp(1j * np.pi * (2 * k + order - 1) / (2 * order))

    # prewarp band edges so the -3 dB points land exactly on low/high
    c = 2.0 * fs
    wl = c * np.tan(np.pi * low / fs)
    wh = c * np.tan(np.pi * high / fs)
    bw = wh - wl
    w0sq = wl * wh

    # s^2 - p*bw*s + w0^2 = 0 for each prototype pole p
    half = proto * bw / 2.0
    disc = np.sqrt(half * half - w0sq)
    poles_s = np.concatenate([half + disc, half - disc])
    gain_s = bw ** order  # n zeros at s = 0, n at infinity

    poles_z = (c + poles_s) / (c - poles_s)
    zeros_z = np.concatenate([np.ones(order), -np.ones(order)])
    # zeros at s=0 contribute (c - 0) each; zeros at infinity contribute nothing
    gain_z = np.real(gain_s * c ** order / np.prod(c - poles_s))

    b = gain_z * np.real(np.poly(zeros_z))
    a = np.real(np.poly(poles_z))
    coeffs = FilterCoefficients(b=b, a=a)
    if not coeffs.is_stable():
        raise InvalidBand("design produced an unstable filter")
    return coeffs


def filter_signal(coeffs: FilterCoefficients, x: Sequence[float]) -> np.ndarray:
    """Causal single pass, direct form II transposed, zero initial state."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 1:
        raise ValueError("empty input")
    y = signal.lfilter(coeffs.b, coeffs.a, x)
    if not np.all(np.isfinite(y)):
        raise NonFinite("filter output is not finite")
    return y


def zscore(x: Sequence[float]) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise ValueError("zscore needs at least two samples")
    centered = x - x.mean()
    sd = np.sqrt(np.mean(centered * centered))
    if sd < 1e-8:
        raise DegenerateSignal("constant segment")
    return centered / sd


def segment_record(rec: SignalRecord, seconds: float = SEGMENT_SECONDS,
                   good_threshold: float = GOOD_THRESHOLD) -> list[Segment]:
    """Cut non-overlapping, left-aligned windows; the tail is dropped.

    A window is Good only if strictly more than ``good_threshold`` of its
    mask is true.
    """
    n = int(round(seconds * rec.fs))
    total = rec.samples.size
    if total < n:
        raise RecordTooShort(f"{rec.subject_id}: {total} samples < one window of {n}")
    out = []
    for start in range(0, total - n + 1, n):
        good = int(np.count_nonzero(rec.quality_mask[start:start + n]))
        label = Label.GOOD if good / n > good_threshold else Label.BAD
        out.append(Segment(values=rec.samples[start:start + n].copy(), label=label,
                           source=(rec.subject_id, start)))
    return out


def first_derivative(x: Sequence[float], fs: float) -> np.ndarray:
    """Central differences inside, one-sided at both ends, scaled by fs."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 3:
        raise ValueError("need at least 3 samples")
    return np.gradient(x, 1.0 / fs, edge_order=1)


def second_derivative(x: Sequence[float], fs: float) -> np.ndarray:
    return first_derivative(first_derivative(x, fs), fs)


def autocorrelation(x: Sequence[float]) -> np.ndarray:
    """Biased autocorrelation normalised by the zero-lag energy."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least 2 samples")
    energy = float(np.dot(x, x))
    if energy < 1e-12:
        raise DegenerateSignal("zero-energy segment")
    r = np.correlate(x, x, mode="full")[x.size - 1:] / energy
    r[0] = 1.0
    return r


def build_channel_stack(segment: Segment, kinds: Iterable[ChannelKind],
                        fs: float = FS_DEFAULT) -> ChannelStack:
    kinds = tuple(sorted(set(ChannelKind(k) for k in kinds)))
    if not kinds:
        raise ValueError("at least one channel kind required")
    clean = zscore(segment.values)
    rows = {}
    for kind in kinds:
        if kind is ChannelKind.CLEAN:
            rows[kind] = clean
        elif kind is ChannelKind.FDP:
            rows[kind] = zscore(first_derivative(clean, fs))
        elif kind is ChannelKind.SDP:
            rows[kind] = zscore(second_derivative(clean, fs))
        else:
            rows[kind] = autocorrelation(clean)
    data = np.stack([rows[k] for k in kinds])
    return ChannelStack(channels=kinds, data=data, label=segment.label, source=segment.source)


def preprocess_record(rec: SignalRecord, coeffs: FilterCoefficients | None = None) -> SignalRecord:
    """Bandpass a whole record; the mask is carried over unchanged."""
    coeffs = coeffs or design_bandpass(rec.fs)
    return SignalRecord(rec.subject_id, filter_signal(coeffs, rec.samples), rec.fs,
                        rec.quality_mask.copy())
