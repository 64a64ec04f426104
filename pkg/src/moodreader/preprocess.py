"""Raw EEG to differential-entropy (DE) features.

Chain: zero-phase bandpass (0.1-70 Hz) -> 50 Hz notch -> decimate to 200 Hz ->
reverse-anchored 4 s Hanning segments -> STFT band power -> DE per band ->
groups of four consecutive windows.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import signal

BANDS: tuple[tuple[str, float, float], ...] = (
    ("delta", 1.0, 4.0),
    ("theta", 4.0, 8.0),
    ("alpha", 8.0, 14.0),
    ("beta", 14.0, 31.0),
    ("gamma", 31.0, 50.0),
)
TARGET_FS = 200.0
WINDOW_SECONDS = 4.0
GROUP_SIZE = 4
POWER_FLOOR = 1e-12


class PreprocessConfigError(ValueError):
    """Filter or resampling parameters are not realizable at the given rate."""


class PreprocessWarning(UserWarning):
    """Emitted when a step yields an empty or floored result."""


@dataclass
class RawRecording:
    data: np.ndarray  # channels x samples
    fs: float
    channel_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"recording must be channels x samples, got shape {self.data.shape}")
        if not self.channel_names:
            self.channel_names = [f"ch{i}" for i in range(self.data.shape[0])]
        if len(self.channel_names) != self.data.shape[0]:
            raise ValueError("channel_names length does not match channel count")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def replace(self, data: np.ndarray, fs: float | None = None) -> "RawRecording":
        return RawRecording(data, self.fs if fs is None else fs, list(self.channel_names))


@dataclass(frozen=True)
class FilterSpec:
    kind: str  # "bandpass" | "notch"
    edges: tuple[float, ...]
    order: int

    def validate(self, fs: float) -> None:
        nyq = fs / 2
        if self.order < 1:
            raise PreprocessConfigError("filter order must be positive")
        if self.kind == "bandpass":
            lo, hi = self.edges
            if not 0 < lo < hi:
                raise PreprocessConfigError(f"bandpass edges must satisfy 0 < low < high, got {self.edges}")
            if hi >= nyq:
                raise PreprocessConfigError(f"bandpass high edge {hi} Hz is not below Nyquist {nyq} Hz")
        elif self.kind == "notch":
            (f0,) = self.edges
            if not 0 < f0 < nyq:
                raise PreprocessConfigError(f"notch frequency {f0} Hz is not below Nyquist {nyq} Hz")
        else:
            raise PreprocessConfigError(f"unknown filter kind {self.kind!r}")


def bandpass(rec: RawRecording, low: float = 0.1, high: float = 70.0, order: int = 4) -> RawRecording:
    """Zero-phase Butterworth bandpass (forward-backward, second-order sections)."""
    FilterSpec("bandpass", (low, high), order).validate(rec.fs)
    sos = signal.butter(order, [low, high], btype="bandpass", fs=rec.fs, output="sos")
    return rec.replace(signal.sosfiltfilt(sos, rec.data, axis=-1))


def notch(rec: RawRecording, freq: float = 50.0, quality: float = 30.0) -> RawRecording:
    """Zero-phase second-order IIR notch."""
    FilterSpec("notch", (freq,), 2).validate(rec.fs)
    b, a = signal.iirnotch(freq, quality, fs=rec.fs)
    return rec.replace(signal.filtfilt(b, a, rec.data, axis=-1))


def resample(rec: RawRecording, target: float = TARGET_FS) -> RawRecording:
    """Polyphase decimation with a built-in anti-aliasing FIR. Upsampling is refused."""
    if rec.fs < target:
        raise PreprocessConfigError(f"upsampling from {rec.fs} Hz to {target} Hz is not supported")
    if rec.fs == target:
        return rec
    ratio = Fraction(target / rec.fs).limit_denominator(10_000)
    out = signal.resample_poly(rec.data, ratio.numerator, ratio.denominator, axis=-1)
    return rec.replace(out, fs=target)


def preprocess_recording(rec: RawRecording, target_fs: float = TARGET_FS) -> RawRecording:
    return resample(notch(bandpass(rec)), target_fs)


@dataclass
class Segments:
    windows: np.ndarray  # n x channels x window, Hanning-tapered
    starts: np.ndarray  # sample index of each window in the source recording
    length: int  # samples per window


def segment(
    rec: RawRecording,
    window_seconds: float = WINDOW_SECONDS,
    taper: bool = True,
    detrend: bool = True,
) -> Segments:
    """Non-overlapping windows anchored at the trial end; the head remainder is discarded.

    Windows are returned in chronological order. With ``detrend`` each window
    has its per-channel mean removed before the Hanning taper, so constant
    offsets never leak into the low bands.
    """
    W = int(round(window_seconds * rec.fs))
    n = rec.n_samples // W
    if n == 0:
        warnings.warn(
            f"trial of {rec.n_samples} samples is shorter than one {W}-sample window",
            PreprocessWarning,
            stacklevel=2,
        )
        return Segments(np.zeros((0, rec.n_channels, W)), np.zeros(0, dtype=np.int64), W)
    starts = rec.n_samples - W * np.arange(n, 0, -1)
    idx = starts[:, None] + np.arange(W)[None, :]
    windows = np.transpose(rec.data[:, idx], (1, 0, 2))
    if detrend:
        windows = windows - windows.mean(axis=-1, keepdims=True)
    if taper:
        windows = windows * np.hanning(W)
    return Segments(windows, starts.astype(np.int64), W)


def band_power(
    seg: np.ndarray,
    fs: float,
    bands: Sequence[tuple] = BANDS,
    taper: np.ndarray | None = None,
    subwindow_seconds: float = 1.0,
    overlap: float = 0.5,
) -> np.ndarray:
    """Mean STFT power per band, shape ``(..., n_bands)``.

    ``seg`` is ``(..., samples)``. Each sub-window's periodogram is normalized by
    the energy of the total window applied to it (segment taper times STFT
    window), so a stationary signal with flat spectrum of variance s^2 yields
    s^2 in every band. Power is pooled across sub-windows before averaging.
    """
    n = seg.shape[-1]
    if taper is None:
        taper = np.hanning(n)
    M = int(round(subwindow_seconds * fs))
    hop = max(1, int(round(M * (1 - overlap))))
    if M > n:
        raise PreprocessConfigError(f"STFT sub-window of {M} samples exceeds segment length {n}")
    n_frames = 1 + (n - M) // hop
    idx = np.arange(M)[None, :] + hop * np.arange(n_frames)[:, None]
    win = signal.get_window("hann", M)
    frames = seg[..., idx] * win
    power = np.abs(np.fft.rfft(frames, axis=-1)) ** 2
    energy = ((taper[idx] * win) ** 2).sum(axis=-1)
    freqs = np.fft.rfftfreq(M, 1.0 / fs)
    out = []
    for band in bands:
        lo, hi = band[-2], band[-1]
        sel = (freqs >= lo) & (freqs < hi)
        if not sel.any():
            raise PreprocessConfigError(f"band {band} contains no STFT bins at {fs} Hz / {M} samples")
        pooled = power[..., sel].sum(axis=(-1, -2))
        out.append(pooled / (sel.sum() * energy.sum()))
    return np.stack(out, axis=-1)


def de_features(
    seg: np.ndarray,
    fs: float = TARGET_FS,
    bands: Sequence[tuple] = BANDS,
    taper: np.ndarray | None = None,
) -> np.ndarray:
    """Gaussian differential entropy ``0.5 * ln(2 pi e var)`` per band.

    ``seg`` is ``(channels, samples)`` or any ``(..., samples)`` stack; the
    result has a trailing band axis. ``taper`` is the window already applied
    to ``seg`` (Hanning by default, as produced by :func:`segment`).
    """
    var = band_power(np.asarray(seg, dtype=np.float64), fs, bands, taper)
    if np.any(var < POWER_FLOOR):
        warnings.warn("zero band power floored before the logarithm", PreprocessWarning, stacklevel=2)
        var = np.maximum(var, POWER_FLOOR)
    return 0.5 * np.log(2 * np.pi * np.e * var)


@dataclass
class FeatureGroup:
    de: np.ndarray  # N x F x C
    span: np.ndarray  # C x (N * window) raw (untapered) samples
    start: int
    stop: int


def group_windows(
    de_windows: np.ndarray,
    starts: np.ndarray,
    window: int,
    raw: np.ndarray | None = None,
    group: int = GROUP_SIZE,
) -> list[FeatureGroup]:
    """Consecutive non-overlapping groups of ``group`` windows; the trailing remainder is dropped.

    ``de_windows`` is ``n x F x C``. When ``raw`` (channels x samples) is given,
    each group carries the raw span covering its windows.
    """
    n = len(de_windows)
    if n < group:
        warnings.warn(f"{n} windows cannot form a group of {group}", PreprocessWarning, stacklevel=2)
        return []
    out = []
    for g in range(n // group):
        sl = slice(g * group, (g + 1) * group)
        start = int(starts[sl][0])
        stop = int(starts[sl][-1]) + window
        span = raw[:, start:stop] if raw is not None else np.zeros((0, 0))
        out.append(FeatureGroup(np.asarray(de_windows[sl]), span, start, stop))
    return out


def extract_features(
    rec: RawRecording,
    bands: Sequence[tuple] = BANDS,
    group: int = GROUP_SIZE,
    target_fs: float = TARGET_FS,
    filtered: bool = False,
) -> list[FeatureGroup]:
    """Full pipeline for one trial. ``filtered=True`` skips filtering and resampling."""
    clean = rec if filtered else preprocess_recording(rec, target_fs)
    segs = segment(clean)
    if len(segs.windows) == 0:
        return group_windows(np.zeros((0, len(bands), rec.n_channels)), segs.starts, segs.length, group=group)
    de = de_features(segs.windows, clean.fs, bands)  # n x C x F
    return group_windows(np.transpose(de, (0, 2, 1)), segs.starts, segs.length, clean.data, group)
