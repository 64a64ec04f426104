"""Dataset manifests and train/test splitting.

A manifest is a YAML (or JSON) file::

    n_classes: 3            # 3 for SEED-style labels, 5 for SEED-V-style
    fs: 1000                # default sampling rate of the raw files
    eye_dim: 8              # optional; width of eye-feature rows
    filtered: false         # true if files are already filtered and at 200 Hz
    trials:
      - subject: s01
        trial: s01-t01
        label: 0
        file: raw/s01_t01.npy      # channels x samples, .npy or whitespace .txt
        fs: 1000                   # optional per-trial override
        eye: eye/s01_t01.npy       # optional, one row per 4 s window

Relative paths resolve against the manifest's directory.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .preprocess import GROUP_SIZE, PreprocessWarning, RawRecording, extract_features
from .synth import DatasetSample

SPLIT_MODES = ("subject", "trial", "sample")


class DatasetError(ValueError):
    """A manifest or one of its trials is unusable."""


class SplitError(ValueError):
    pass


@dataclass
class Dataset:
    samples: list[DatasetSample]
    n_classes: int

    def __len__(self) -> int:
        return len(self.samples)


def read_structured(path) -> dict:
    """Parse a YAML or JSON mapping."""
    path = Path(path)
    text = path.read_text()
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    if not isinstance(data, dict):
        raise DatasetError(f"{path}: expected a mapping at the top level")
    return data


def _read_array(path: Path, trial: str) -> np.ndarray:
    if not path.exists():
        raise DatasetError(f"trial {trial}: file not found: {path}")
    try:
        return np.load(path) if path.suffix == ".npy" else np.loadtxt(path, ndmin=2)
    except (OSError, ValueError) as exc:
        raise DatasetError(f"trial {trial}: cannot read {path}: {exc}") from exc


def load_dataset(manifest) -> Dataset:
    manifest = Path(manifest)
    if not manifest.exists():
        raise DatasetError(f"manifest not found: {manifest}")
    spec = read_structured(manifest)
    root = manifest.parent
    n_classes = int(spec.get("n_classes", 3))
    if n_classes not in (3, 5):
        raise DatasetError(f"n_classes must be 3 (SEED-style) or 5 (SEED-V-style), got {n_classes}")
    trials = spec.get("trials") or []
    if not trials:
        raise DatasetError(f"{manifest}: manifest lists no trials")
    filtered = bool(spec.get("filtered", False))
    samples: list[DatasetSample] = []
    for entry in trials:
        trial = str(entry.get("trial", "?"))
        for key in ("subject", "trial", "label", "file"):
            if key not in entry:
                raise DatasetError(f"trial {trial}: missing field {key!r}")
        label = int(entry["label"])
        if not 0 <= label < n_classes:
            raise DatasetError(f"trial {trial}: label {label} outside [0, {n_classes})")
        fs = float(entry.get("fs", spec.get("fs", 200.0)))
        if filtered and fs != 200.0:
            raise DatasetError(f"trial {trial}: filtered data must be at 200 Hz, got {fs}")
        data = _read_array(root / entry["file"], trial)
        try:
            rec = RawRecording(data, fs)
            groups = extract_features(rec, filtered=filtered)
        except ValueError as exc:
            raise DatasetError(f"trial {trial}: {exc}") from exc
        eye = None
        if entry.get("eye"):
            eye = _read_array(root / entry["eye"], trial)
            if len(eye) < GROUP_SIZE * len(groups):
                raise DatasetError(
                    f"trial {trial}: {len(eye)} eye rows for {GROUP_SIZE * len(groups)} windows"
                )
        for g_idx, g in enumerate(groups):
            rows = eye[g_idx * GROUP_SIZE : (g_idx + 1) * GROUP_SIZE] if eye is not None else None
            samples.append(DatasetSample(g.de, g.span, rows, label, str(entry["subject"]), trial))
    if not samples:
        warnings.warn(f"{manifest}: no trial is long enough to form a sample", PreprocessWarning, stacklevel=2)
    return Dataset(samples, n_classes)


def split(
    samples: Sequence[DatasetSample], ratio: float = 0.8, seed: int = 0, by: str = "subject"
) -> tuple[list[int], list[int]]:
    """Seeded random partition into train/test index lists.

    Units (subjects, trials or single samples) are shuffled and the first
    ``round(ratio * n_units)`` go to training, so no unit straddles the split.
    """
    if by not in SPLIT_MODES:
        raise SplitError(f"unknown split mode {by!r}; choose from {SPLIT_MODES}")
    if len(samples) < 5:
        raise SplitError(f"dataset of {len(samples)} samples is too small to split (need at least 5)")
    if by == "sample":
        keys = list(range(len(samples)))
    else:
        keys = [s.subject if by == "subject" else s.trial for s in samples]
    units = list(dict.fromkeys(keys))
    if len(units) < 2:
        raise SplitError(f"need at least two {by} units to split, got {len(units)}")
    order = np.random.default_rng([seed, 7]).permutation(len(units))
    n_train = min(max(int(round(ratio * len(units))), 1), len(units) - 1)
    train_units = {units[i] for i in order[:n_train]}
    train = [i for i, k in enumerate(keys) if k in train_units]
    test = [i for i, k in enumerate(keys) if k not in train_units]
    return train, test
