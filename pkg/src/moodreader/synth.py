"""Seeded synthetic corpora for desk-scale verification.

``synth_generate`` produces labelled multimodal samples whose class signal is a
per-band power profile on a designated subset of channels plus a class-shifted
eye-feature sequence. ``pretraining_spans`` produces unlabelled band-limited
spans with shared spatial structure for masked-reconstruction pretraining.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .preprocess import BANDS, GROUP_SIZE, TARGET_FS, WINDOW_SECONDS, RawRecording, extract_features


@dataclass
class DatasetSample:
    de: np.ndarray  # N x F x C
    raw_span: np.ndarray  # C x samples
    eye: np.ndarray | None  # N_e x d_eye
    label: int
    subject: str
    trial: str


def band_limited_noise(
    rng: np.random.Generator, n_channels: int, n_samples: int, fs: float, band_gain: np.ndarray,
    bands=BANDS, background: float = 0.3,
) -> np.ndarray:
    """Gaussian noise shaped in the frequency domain.

    ``band_gain`` is ``channels x bands`` of power multipliers applied inside each
    band; outside the bands (and underneath them) a weak flat floor of power
    ``background`` remains.
    """
    spec = np.fft.rfft(rng.normal(size=(n_channels, n_samples)), axis=-1)
    freqs = np.fft.rfftfreq(n_samples, 1.0 / fs)
    power = np.full((n_channels, len(freqs)), background)
    for b, band in enumerate(bands):
        sel = (freqs >= band[-2]) & (freqs < band[-1])
        power[:, sel] += band_gain[:, b : b + 1]
    return np.fft.irfft(spec * np.sqrt(power), n=n_samples, axis=-1)


def class_patterns(n_classes: int, n_bands: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-norm log-power profiles, one row per class, centred across classes before scaling."""
    p = rng.normal(size=(n_classes, n_bands))
    p -= p.mean(axis=0, keepdims=True)
    return p / np.linalg.norm(p, axis=1, keepdims=True)


def synth_generate(
    n_classes: int = 3,
    n_subjects: int = 10,
    trials_per_subject: int = 15,
    samples_per_trial: int = 2,
    separability: float = 1.0,
    seed: int = 0,
    n_channels: int = 62,
    informative: tuple[int, ...] = tuple(range(8)),
    eye_dim: int = 8,
    fs: float = TARGET_FS,
    class_strength: float = 0.5,
    eye_strength: float = 0.3,
    subject_spread: float = 0.3,
    trial_jitter: float = 0.35,
    sample_jitter: float = 0.25,
    response_spread: float = 1.0,
    channel_spread: float = 0.2,
) -> list[DatasetSample]:
    """Labelled multimodal corpus; identical arguments give bit-identical output.

    Class-dependent log-power offsets (``separability * class_strength`` times a
    unit profile over the five bands) are added on ``informative`` channels only.
    Eye features carry ``separability * eye_strength`` times a class direction.
    ``response_spread`` gives each subject its own per-class band-profile
    deviation, shared by all informative channels and independent of
    ``separability``. It is the part of the EEG signal that does not transfer
    across subjects. With ``separability == 0`` every class shares the same
    distribution. ``channel_spread`` sets how far each channel's fixed baseline
    spectrum departs from the common profile.
    """
    if separability < 0:
        raise ValueError("separability must be non-negative")
    design = np.random.default_rng([seed, 0])
    patterns = class_patterns(n_classes, len(BANDS), design)
    eye_dirs = class_patterns(n_classes, eye_dim, design) * np.sqrt(eye_dim)
    base = design.normal(0.0, channel_spread, size=(n_channels, len(BANDS))) + np.log([4.0, 3.0, 2.5, 1.5, 1.0])
    info_mask = np.zeros(n_channels, dtype=bool)
    info_mask[list(informative)] = True

    window = int(WINDOW_SECONDS * fs)
    n_samples_span = window * GROUP_SIZE
    out: list[DatasetSample] = []
    for s in range(n_subjects):
        srng = np.random.default_rng([seed, 1, s])
        subj_power = srng.normal(0.0, subject_spread, size=(n_channels, len(BANDS)))
        subj_eye = srng.normal(0.0, subject_spread, size=eye_dim)
        subj_response = srng.normal(0.0, response_spread, size=(n_classes, len(BANDS)))
        for t in range(trials_per_subject):
            label = t % n_classes
            trng = np.random.default_rng([seed, 2, s, t])
            trial_power = trng.normal(0.0, trial_jitter, size=(n_channels, len(BANDS)))
            log_power = base + subj_power + trial_power
            log_power[info_mask] += class_strength * (separability * patterns[label] + subj_response[label])
            for k in range(samples_per_trial):
                krng = np.random.default_rng([seed, 3, s, t, k])
                lp = log_power + krng.normal(0.0, sample_jitter, size=log_power.shape)
                data = band_limited_noise(krng, n_channels, n_samples_span, fs, np.exp(lp))
                groups = extract_features(RawRecording(data, fs), filtered=True)
                g = groups[0]
                eye = (
                    subj_eye
                    + separability * eye_strength * eye_dirs[label]
                    + krng.normal(0.0, 1.0, size=(GROUP_SIZE, eye_dim))
                )
                out.append(DatasetSample(g.de, g.span, eye, label, f"s{s:02d}", f"s{s:02d}-t{t:02d}"))
    return out


def pretraining_spans(
    n_spans: int = 64,
    n_channels: int = 62,
    n_samples: int = 3200,
    fs: float = TARGET_FS,
    n_sources: int = 4,
    seed: int = 0,
    noise: float = 0.1,
    centre_range: tuple[float, float] = (0.02, 0.1),
    bandwidth: float = 0.03,
) -> list[np.ndarray]:
    """Unlabelled spans: a fixed spatial mixture of slow band-limited sources plus sensor noise.

    The default source band sits below 0.1 Hz, so a source drifts over a
    16 s span rather than oscillating inside one 0.2 s token. Per-token
    normalized targets are then predictable from visible neighbours. Faster
    sources would make each normalized token depend on its own phase.
    """
    design = np.random.default_rng([seed, 10])
    mixing = design.normal(size=(n_channels, n_sources))
    freqs = np.fft.rfftfreq(n_samples, 1.0 / fs)
    centres = design.uniform(*centre_range, size=n_sources)
    spans = []
    for i in range(n_spans):
        rng = np.random.default_rng([seed, 11, i])
        spec = np.fft.rfft(rng.normal(size=(n_sources, n_samples)), axis=-1)
        shape = np.exp(-0.5 * ((freqs[None, :] - centres[:, None]) / bandwidth) ** 2)
        sources = np.fft.irfft(spec * shape, n=n_samples, axis=-1)
        sources /= np.maximum(sources.std(axis=-1, keepdims=True), 1e-12)
        spans.append(mixing @ sources + noise * rng.normal(size=(n_channels, n_samples)))
    return spans
