"""Command-line entry point: ``moodreader <command>``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, checkpoint
from .checkpoint import CheckpointError
from .config import load_config, mbsm_config
from .data import DatasetError, SplitError
from .experiment import Metrics, channel_attention, evaluate
from .mbsm import FrozenEncoder
from .model import ABLATION_ARMS, MoodReader
from .nn import ConfigError
from .pipeline import (
    ATTENTION_SAMPLES,
    build_dataset,
    full_batch,
    needs_encoder,
    pretrain_encoder,
    resolve_encoder,
    run_ablation,
    run_repeats,
    subset,
)
from .viz import render_topomap, write_attention_json

log = logging.getLogger("moodreader")

STD_NOTE = "std is across seeded repeats of the run, not across subjects"


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    return path


def metrics_table(rows: list[dict]) -> str:
    lines = [f"# {STD_NOTE}", f"{'arm':<26}{'accuracy':>10}{'std':>10}{'n_test':>8}"]
    for r in rows:
        std = "-" if r.get("accuracy_std") is None else f"{r['accuracy_std']:.4f}"
        lines.append(f"{r['arm']:<26}{r['accuracy']:>10.4f}{std:>10}{r['n_test']:>8}")
    return "\n".join(lines) + "\n"


def metrics_row(arm: str, m: Metrics) -> dict:
    return {"arm": arm, "accuracy": m.accuracy, "accuracy_std": m.accuracy_std, "n_test": m.n,
            "confusion": m.confusion, "runs": m.runs}


# -- commands -------------------------------------------------------------------
def cmd_features(cfg: dict, args, out: Path) -> int:
    if args.manifest:
        cfg["dataset"]["source"], cfg["dataset"]["manifest"] = "manifest", args.manifest
    ds = build_dataset(cfg)
    if not ds.samples:
        raise DatasetError("no samples could be formed")
    arrays = {
        "de": np.stack([s.de for s in ds.samples]),
        "labels": np.array([s.label for s in ds.samples], dtype=np.int64),
    }
    if all(s.eye is not None for s in ds.samples):
        arrays["eye"] = np.stack([s.eye for s in ds.samples]).astype(np.float64)
    if args.spans:
        arrays["raw_spans"] = np.stack([s.raw_span for s in ds.samples]).astype(np.float32)
    meta = {"kind": "features", "n_classes": ds.n_classes,
            "subjects": [s.subject for s in ds.samples], "trials": [s.trial for s in ds.samples]}
    path = checkpoint.save(out / "features.bin", arrays, meta)
    write_json(out / "features.json", {"n_samples": len(ds), "n_classes": ds.n_classes,
                                       "de_shape": list(arrays["de"].shape[1:]), "arrays": sorted(arrays)})
    print(f"{len(ds)} samples, DE shape {arrays['de'].shape[1:]} -> {path}")
    return 0


def cmd_pretrain(cfg: dict, args, out: Path) -> int:
    pc = cfg["pretrain"]
    for key in ("steps", "manifest", "mask_ratio", "token_size", "encoder_depth", "decoder_depth"):
        if getattr(args, key) is not None:
            pc[key] = getattr(args, key)
    mbsm_config(cfg).validate()
    encoder, history = pretrain_encoder(cfg, cfg["seed"])
    encoder.save(out / "encoder.ckpt")
    write_json(out / "pretrain_loss.json", {"loss": history, "ratio_last_to_first": history[-1] / history[0]})
    print(f"masked loss {history[0]:.4f} -> {history[-1]:.4f} over {len(history)} steps -> {out / 'encoder.ckpt'}")
    return 0


def _encoder_for(cfg: dict, presets, args, out: Path) -> FrozenEncoder | None:
    if args.encoder:
        cfg["pretrain"]["encoder"] = args.encoder
    if not needs_encoder(presets):
        return None
    encoder = resolve_encoder(cfg, cfg["seed"])
    if not cfg["pretrain"]["encoder"]:
        path = encoder.save(out / "encoder.ckpt")
        cfg["pretrain"]["encoder"] = str(path)
    return encoder


def cmd_train(cfg: dict, args, out: Path) -> int:
    if args.preset:
        cfg["model"]["preset"] = args.preset
    if args.repeats:
        cfg["repeats"] = args.repeats
    if args.split_by:
        cfg["split"]["by"] = args.split_by
    preset = cfg["model"]["preset"]
    ds = build_dataset(cfg)
    encoder = _encoder_for(cfg, [preset], args, out)
    batch = full_batch(ds, encoder)
    summary, runs = run_repeats(cfg, ds, batch, preset)
    first = runs[0]
    first.model.save(out / "model.ckpt", {
        "test_idx": first.test_idx, "train_idx": first.train_idx, "seed": cfg["seed"],
        "encoder": cfg["pretrain"]["encoder"], "best_step": first.result.best_step, "dataset": cfg["dataset"],
    })
    row = metrics_row(preset, summary)
    write_json(out / "metrics.json", {"note": STD_NOTE, **row})
    (out / "metrics.txt").write_text(metrics_table([row]))
    write_json(out / "loss_curve.json", {"loss": first.result.history, "evals": first.result.evals})
    write_json(out / "audit.json", {"preset": preset, "components": first.model.audit})
    write_json(out / "fusion_monitor.json", {"checks": first.result.monitor.checks,
                                             "max_deviation": first.result.monitor.max_deviation})
    write_attention_json(out / "attention.json", first.result.snapshots)
    sys.stdout.write(metrics_table([row]))
    return 0


def _load_run(cfg: dict, checkpoint: str):
    model, meta = MoodReader.load(checkpoint)
    # the stored split indices only make sense against the corpus the model was trained on
    if "dataset" in meta:
        cfg = {**cfg, "dataset": meta["dataset"]}
    ds = build_dataset(cfg, meta.get("seed"))
    encoder = FrozenEncoder.load(meta["encoder"]) if model.preset.encoder else None
    return model, meta, ds, full_batch(ds, encoder)


def cmd_eval(cfg: dict, args, out: Path) -> int:
    model, meta, ds, batch = _load_run(cfg, args.checkpoint)
    if ds.n_classes != model.cfg.n_classes:
        raise ConfigError(f"dataset has {ds.n_classes} classes, checkpoint has {model.cfg.n_classes}")
    idx = meta["train_idx"] if args.on == "train" else meta["test_idx"]
    m = evaluate(model, subset(batch, idx))
    row = metrics_row(model.cfg.preset, m)
    write_json(out / "eval_metrics.json", {"note": STD_NOTE, "split": args.on, **row})
    (out / "eval_metrics.txt").write_text(metrics_table([row]))
    sys.stdout.write(metrics_table([row]))
    return 0


def cmd_ablate(cfg: dict, args, out: Path) -> int:
    arms = args.arms.split(",") if args.arms else list(cfg["ablation"]["arms"] or ABLATION_ARMS)
    if args.repeats:
        cfg["repeats"] = args.repeats
    ds = build_dataset(cfg)
    encoder = _encoder_for(cfg, arms, args, out)
    rows = run_ablation(cfg, arms, ds, encoder)
    write_json(out / "ablation.json", {"note": STD_NOTE, "rows": rows})
    (out / "ablation.txt").write_text(metrics_table(rows))
    sys.stdout.write(metrics_table(rows))
    bad = [r["arm"] for r in rows if not r["audit_ok"]]
    if bad:
        print(f"construction audit mismatch: {bad}", file=sys.stderr)
        return 1
    return 0


def cmd_viz(cfg: dict, args, out: Path) -> int:
    if args.attention:
        snapshots = json.loads(Path(args.attention).read_text())
        for snap in snapshots:
            weights = np.array([c["weight"] for c in snap["channels"]])
            tag = snap["tag"].rstrip("%")
            render_topomap(weights, out / f"topomap_{tag}.png", title=f"{snap['tag']} of training")
        print(f"rendered {len(snapshots)} topomaps into {out}")
        return 0
    if not args.checkpoint:
        raise ConfigError("viz needs --checkpoint or --attention")
    model, meta, ds, batch = _load_run(cfg, args.checkpoint)
    idx = meta["train_idx"][: args.samples or ATTENTION_SAMPLES]
    weights = channel_attention(model, subset(batch, idx))
    write_attention_json(out / "attention_final.json", [{"tag": "final", "step": meta.get("best_step", 0),
                                                         "weights": weights}])
    render_topomap(weights, out / "topomap_final.png", title="final")
    print(f"attention data and topomap written to {out}")
    return 0


COMMANDS = {
    "features": cmd_features,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "viz": cmd_viz,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="moodreader", description="Multimodal EEG emotion recognition toolkit.")
    p.add_argument("--config", help="YAML or JSON experiment config")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", default="runs/latest", help="output directory (created if missing)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("features", help="extract DE feature groups from a manifest or the synthetic corpus")
    f.add_argument("--manifest")
    f.add_argument("--spans", action="store_true", help="also store the raw 16 s spans (large)")

    pt = sub.add_parser("pretrain", help="masked-signal pretraining of the EEG encoder")
    pt.add_argument("--steps", type=int)
    pt.add_argument("--manifest", help="pretrain on the raw spans of a dataset manifest")
    pt.add_argument("--mask-ratio", type=float)
    pt.add_argument("--token-size", type=int, help="samples per token")
    pt.add_argument("--encoder-depth", type=int)
    pt.add_argument("--decoder-depth", type=int)

    t = sub.add_parser("train", help="train and evaluate one preset")
    t.add_argument("--preset", help=f"e.g. {ABLATION_ARMS[-1]} or STIB+Encoder+Eye+MLF")
    t.add_argument("--repeats", type=int)
    t.add_argument("--split-by", choices=["subject", "trial", "sample"])
    t.add_argument("--encoder", help="pretrained encoder checkpoint")

    e = sub.add_parser("eval", help="evaluate a trained checkpoint on its held-out split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--on", choices=["test", "train"], default="test")

    a = sub.add_parser("ablate", help="run the ablation presets")
    a.add_argument("--arms", help="comma-separated preset names (default: all six)")
    a.add_argument("--repeats", type=int)
    a.add_argument("--encoder", help="pretrained encoder checkpoint")

    v = sub.add_parser("viz", help="export channel attention data and topomaps")
    v.add_argument("--checkpoint")
    v.add_argument("--attention", help="render every snapshot of an attention.json from a train run")
    v.add_argument("--samples", type=int)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        overrides = {"seed": args.seed} if args.seed is not None else None
        cfg = load_config(args.config, overrides)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args, out)
    except (ConfigError, DatasetError, SplitError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
