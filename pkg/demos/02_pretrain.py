"""Masked brain-signal pretraining on unlabelled synthetic spans, then freezing the encoder.

Run: python demos/02_pretrain.py [steps]
"""
import sys

import numpy as np

from moodreader.mbsm import MbsmConfig, MbsmModel, PretrainConfig, export_encoder, pretrain
from moodreader.synth import pretraining_spans

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 200
cfg = MbsmConfig()
print(f"{cfg.n_tokens} tokens of {cfg.token_size} samples x {cfg.n_channels} channels, "
      f"{cfg.mask_ratio:.0%} masked per span")

spans = pretraining_spans(64, n_channels=cfg.n_channels, n_samples=cfg.span_samples, seed=0)
model = MbsmModel(cfg, seed=0).astype(np.float32)
history = pretrain(model, spans, PretrainConfig(steps=steps, seed=0))
for step in range(0, steps, max(1, steps // 8)):
    print(f"step {step:4d}  masked loss {history[step]:.3f}")
print(f"last ten steps average {np.mean(history[-10:]):.3f} ({np.mean(history[-10:]) / history[0]:.2f} of the first)")

encoder = export_encoder(model)
latents = encoder.extract(spans[0])
print(f"frozen encoder: {latents.shape[0]} latents of width {latents.shape[1]} per span; "
      f"trainable parameters left: {len(encoder.parameters(trainable_only=True))}")
