"""From raw multichannel EEG to grouped differential-entropy samples.

Run: python demos/01_features.py
"""
import math

import numpy as np

from moodreader.interlink import to_reps
from moodreader.preprocess import BANDS, RawRecording, de_features, extract_features, preprocess_recording, segment

rng = np.random.default_rng(0)

# 40 s of 62-channel recording at 1000 Hz: white noise plus a 10 Hz rhythm on the first channels
fs = 1000.0
t = np.arange(int(40 * fs)) / fs
raw = rng.normal(size=(62, t.size))
raw[:8] += 3 * np.sin(2 * np.pi * 10 * t)
rec = RawRecording(raw, fs)

clean = preprocess_recording(rec)
print(f"after bandpass, notch and resampling: {clean.data.shape} at {clean.fs:.0f} Hz")

windows = segment(clean)
print(f"{len(windows.starts)} four-second windows, the last one ending at the final sample")

de = de_features(windows.windows)
alpha = [b[0] for b in BANDS].index("alpha")
print(f"alpha-band DE, rhythm channels vs the rest: {de[:, :8, alpha].mean():.2f} vs {de[:, 8:, alpha].mean():.2f}")

groups = extract_features(rec)
print(f"{len(groups)} samples of four consecutive windows, each {groups[0].de.shape} (window, band, channel)")

xs, xt = to_reps(groups[0].de)
print(f"spatial view {xs.shape}, temporal view {xt.shape}")

# sanity check against the closed form for unit-variance Gaussian noise
noise = segment(RawRecording(rng.normal(size=(1, 800 * 50)), 200.0)).windows
full = de_features(noise, 200.0, [("full", 0.0, 101.0)]).mean()
print(f"white-noise DE {full:.3f}, closed form {0.5 * math.log(2 * math.pi * math.e):.3f}")
