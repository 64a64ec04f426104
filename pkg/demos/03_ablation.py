"""Train every ablation preset on one synthetic corpus and split, then compare.

Run: python demos/03_ablation.py [steps]
The encoder presets pretrain a small encoder first.
"""
import sys

from moodreader.cli import metrics_table
from moodreader.config import load_config
from moodreader.pipeline import run_ablation

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
cfg = load_config(None, {"train": {"steps": steps}, "pretrain": {"steps": 100}})
print(f"corpus: {cfg['dataset']['synthetic']}, split by {cfg['split']['by']}")
rows = run_ablation(cfg)
print(metrics_table(rows))
for r in rows:
    print(f"{r['arm']:<22} built {', '.join(r['components'])}")
