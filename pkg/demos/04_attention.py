"""Watch spatial attention evolve while training, and draw it on the scalp.

The class signal of the synthetic corpus sits on the first eight channels.
Run: python demos/04_attention.py [out_dir]
"""
import sys
from pathlib import Path

import numpy as np

from moodreader.config import load_config
from moodreader.electrodes import SEED62
from moodreader.pipeline import build_dataset, full_batch, run_once
from moodreader.viz import render_topomap, write_attention_json

out = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/demo_attention")
out.mkdir(parents=True, exist_ok=True)
cfg = load_config(None, {"dataset": {"synthetic": {"class_strength": 2.0, "response_spread": 0.0}},
                         "model": {"preset": "STIB+Eye+MLF"}, "train": {"steps": 600, "lr": 3e-3}})
ds = build_dataset(cfg)
run = run_once(cfg, ds, full_batch(ds), cfg["seed"])
print(f"test accuracy {run.metrics.accuracy:.3f}")

signal = list(SEED62[:8])
for snap in run.result.snapshots:
    w = snap["weights"]
    top = [SEED62[i] for i in np.argsort(w)[::-1][:5]]
    print(f"{snap['tag']:>4}: {w[:8].sum() / (8 / 62):.2f}x uniform mass on {signal[0]}..{signal[-1]}, "
          f"top channels {top}")
    render_topomap(w, out / f"topomap_{snap['tag'].rstrip('%')}.png", title=f"{snap['tag']} of training")
write_attention_json(out / "attention.json", run.result.snapshots)
print(f"topomaps and attention data in {out}")
