"""Config-driven orchestration shared by the CLI and the acceptance tests."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass

import numpy as np

from .config import mbsm_config
from .data import Dataset, load_dataset, split
from .experiment import FusionMonitor, Metrics, TrainConfig, TrainResult, encoder_latents, evaluate, summarize_runs
from .experiment import train
from .mbsm import FrozenEncoder, MbsmConfig, MbsmModel, PretrainConfig, export_encoder, pretrain
from .model import ABLATION_ARMS, Batch, ModelConfig, MoodReader, batch_from_samples, parse_preset
from .nn import ConfigError
from .synth import pretraining_spans, synth_generate

log = logging.getLogger(__name__)

ATTENTION_SAMPLES = 64


def build_dataset(cfg: dict, seed: int | None = None) -> Dataset:
    ds = cfg["dataset"]
    if ds["source"] == "manifest":
        return load_dataset(ds["manifest"])
    syn = dict(ds["synthetic"])
    samples = synth_generate(seed=cfg["seed"] if seed is None else seed,
                             n_channels=cfg["model"]["n_channels"], eye_dim=cfg["model"]["d_eye"], **syn)
    return Dataset(samples, syn.get("n_classes", 3))


def pretraining_corpus(cfg: dict, mcfg: MbsmConfig, seed: int) -> list[np.ndarray]:
    pc = cfg["pretrain"]
    if pc["manifest"]:
        spans = [s.raw_span for s in load_dataset(pc["manifest"]).samples]
        if not spans:
            raise ConfigError(f"pretraining manifest {pc['manifest']} yields no spans")
        if spans[0].shape[0] != mcfg.n_channels:
            raise ConfigError(f"manifest spans have {spans[0].shape[0]} channels, encoder expects {mcfg.n_channels}")
        return spans
    return pretraining_spans(pc["n_spans"], n_channels=mcfg.n_channels, n_samples=mcfg.span_samples, seed=seed)


def pretrain_encoder(cfg: dict, seed: int) -> tuple[FrozenEncoder, list[float]]:
    pc = cfg["pretrain"]
    mcfg = mbsm_config(cfg)
    spans = pretraining_corpus(cfg, mcfg, seed)
    model = MbsmModel(mcfg, seed).astype(np.float32)
    history = pretrain(model, spans, PretrainConfig(pc["steps"], pc["batch_size"], pc["lr"], seed=seed))
    return export_encoder(model), history


def resolve_encoder(cfg: dict, seed: int) -> FrozenEncoder:
    path = cfg["pretrain"]["encoder"]
    if path:
        return FrozenEncoder.load(path)
    log.info("no encoder checkpoint configured; pretraining one on synthetic spans")
    return pretrain_encoder(cfg, seed)[0]


def needs_encoder(presets) -> bool:
    return any(parse_preset(p).encoder for p in presets)


def full_batch(dataset: Dataset, encoder: FrozenEncoder | None = None) -> Batch:
    latents = encoder_latents(encoder, dataset.samples) if encoder is not None else None
    return batch_from_samples(dataset.samples, latents)


def subset(batch: Batch, idx) -> Batch:
    idx = np.asarray(idx, dtype=np.int64)
    return Batch(batch.de[idx], batch.labels[idx], None if batch.eye is None else batch.eye[idx],
                 None if batch.latents is None else batch.latents[idx])


@dataclass
class RunOutput:
    model: MoodReader
    result: TrainResult
    metrics: Metrics
    train_idx: list[int]
    test_idx: list[int]


def model_config(cfg: dict, dataset: Dataset, preset: str | None = None) -> ModelConfig:
    mc = dict(cfg["model"])
    if preset is not None:
        mc["preset"] = preset
    mc["n_classes"] = dataset.n_classes
    sample = dataset.samples[0]
    mc["n_windows"], mc["n_bands"], mc["n_channels"] = sample.de.shape
    if sample.eye is not None:
        mc["eye_len"], mc["d_eye"] = sample.eye.shape
    return ModelConfig.from_dict(mc)


def run_once(cfg: dict, dataset: Dataset, batch: Batch, seed: int, preset: str | None = None,
             monitor: FusionMonitor | None = None) -> RunOutput:
    """Split, train, restore the best state and evaluate on the held-out part."""
    if not dataset.samples:
        raise ConfigError("dataset is empty")
    train_idx, test_idx = split(dataset.samples, cfg["split"]["ratio"], seed, cfg["split"]["by"])
    mcfg = model_config(cfg, dataset, preset)
    model = MoodReader(mcfg, seed)
    tr = subset(batch, train_idx)
    attn = subset(batch, train_idx[:ATTENTION_SAMPLES])
    result = train(model, tr, TrainConfig.from_dict(cfg["train"]), seed=seed, attention_batch=attn,
                   monitor=monitor)
    model.load_state_dict(result.best_state)
    metrics = evaluate(model, subset(batch, test_idx))
    return RunOutput(model, result, metrics, train_idx, test_idx)


def run_repeats(cfg: dict, dataset: Dataset, batch: Batch, preset: str | None = None) -> tuple[Metrics, list[RunOutput]]:
    runs = [run_once(cfg, dataset, batch, cfg["seed"] + r, preset) for r in range(int(cfg["repeats"]))]
    return summarize_runs([r.metrics for r in runs]), runs


def run_ablation(cfg: dict, arms=None, dataset: Dataset | None = None,
                 encoder: FrozenEncoder | None = None) -> list[dict]:
    """Train and evaluate each arm on the same data and split; one row per arm."""
    arms = list(arms or cfg["ablation"]["arms"] or ABLATION_ARMS)
    for arm in arms:
        parse_preset(arm)
    dataset = dataset or build_dataset(cfg)
    if encoder is None and needs_encoder(arms):
        encoder = resolve_encoder(cfg, cfg["seed"])
    batch = full_batch(dataset, encoder)
    rows = []
    for arm in arms:
        summary, runs = run_repeats(cfg, dataset, batch, arm)
        rows.append({
            "arm": arm,
            "accuracy": summary.accuracy,
            "accuracy_std": summary.accuracy_std,
            "runs": summary.runs,
            "n_test": runs[0].metrics.n,
            "components": runs[0].model.audit,
            "audit_ok": runs[0].model.audit == parse_preset(arm).components,
            "test_subjects": sorted({dataset.samples[i].subject for i in runs[0].test_idx}),
        })
    return rows


def with_overrides(cfg: dict, **sections) -> dict:
    out = copy.deepcopy(cfg)
    for key, value in sections.items():
        if isinstance(value, dict):
            out[key].update(value)
        else:
            out[key] = value
    return out
