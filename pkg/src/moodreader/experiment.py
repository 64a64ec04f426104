"""Training, evaluation and the ablation matrix."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .fusion import classification_loss
from .mbsm import FrozenEncoder
from .model import Batch, MoodReader
from .nn import Adam, ConfigError, RngState, no_grad
from .synth import DatasetSample

log = logging.getLogger(__name__)

SNAPSHOT_FRACTIONS = (0.0, 0.25, 0.5, 1.0)


class FusionInvariantError(AssertionError):
    """A pair of fusion weights left the probability simplex."""


class TrainDivergedError(RuntimeError):
    def __init__(self, message: str, last_good: dict | None):
        super().__init__(message)
        self.last_good = last_good


@dataclass
class TrainConfig:
    steps: int = 300
    batch_size: int = 16
    lr: float = 1e-3
    min_lr_ratio: float = 0.1
    weight_decay: float = 0.0
    clip_norm: float | None = 1.0
    eval_every: int = 50

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


class FusionMonitor:
    """Checks every emitted ``(c_a, c_b)`` pair online: non-negative, summing to one."""

    def __init__(self, tol: float = 1e-6):
        self.tol = tol
        self.checks = 0
        self.max_deviation = 0.0

    def __call__(self, name: str, ca: np.ndarray, cb: np.ndarray) -> None:
        total = ca.astype(np.float64) + cb.astype(np.float64)
        dev = float(np.max(np.abs(total - 1.0))) if total.size else 0.0
        self.checks += 1
        self.max_deviation = max(self.max_deviation, dev)
        if dev > self.tol or np.any(ca < 0) or np.any(cb < 0):
            raise FusionInvariantError(f"fusion weights {name!r} deviate from the simplex by {dev:.3g}")


@dataclass
class Metrics:
    accuracy: float
    n: int
    confusion: list[list[int]]
    accuracy_std: float | None = None
    runs: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    history: list[float]
    evals: list[dict]
    best_state: dict
    best_step: int
    snapshots: list[dict]  # {"tag", "step", "weights"}
    monitor: FusionMonitor


def encoder_latents(encoder: FrozenEncoder, samples: Sequence[DatasetSample], batch_size: int = 16) -> np.ndarray:
    """Mean-pooled encoder latents, one row per sample."""
    span = encoder.cfg.span_samples
    spans = np.stack([s.raw_span[:, :span] for s in samples]).astype(encoder.core.embed.weight.dtype)
    return encoder.extract_batch(spans, batch_size).mean(axis=1)


def _subset(batch: Batch, idx) -> Batch:
    return Batch(
        batch.de[idx],
        None if batch.labels is None else batch.labels[idx],
        None if batch.eye is None else batch.eye[idx],
        None if batch.latents is None else batch.latents[idx],
    )


def predict(model: MoodReader, batch: Batch, chunk: int = 64) -> np.ndarray:
    """Class probabilities in inference mode."""
    was = model.training
    model.eval()
    out = []
    with no_grad():
        for i in range(0, len(batch), chunk):
            out.append(model(_subset(batch, slice(i, i + chunk))).data)
    model.train(was)
    return np.concatenate(out) if out else np.zeros((0, model.cfg.n_classes))


def metrics_from_predictions(pred: np.ndarray, labels: np.ndarray, n_classes: int) -> Metrics:
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (labels.astype(int), pred.astype(int)), 1)
    n = len(labels)
    acc = float(np.trace(confusion) / n) if n else 0.0
    return Metrics(acc, n, confusion.tolist())


def evaluate(model: MoodReader, batch: Batch) -> Metrics:
    if batch.labels is None:
        raise ConfigError("evaluation needs labels")
    if batch.labels.size and batch.labels.max() >= model.cfg.n_classes:
        raise ConfigError(
            f"labels reach class {int(batch.labels.max())} but the model has {model.cfg.n_classes} classes"
        )
    probs = predict(model, batch)
    return metrics_from_predictions(probs.argmax(axis=1), batch.labels, model.cfg.n_classes)


def channel_attention(model: MoodReader, batch: Batch, chunk: int = 64) -> np.ndarray:
    """Mean attention each channel receives in the last spatial block, normalized to sum 1.

    Averages over heads, query rows and samples.
    """
    was = model.training
    model.eval()
    total = np.zeros(model.cfg.n_channels)
    with no_grad():
        for i in range(0, len(batch), chunk):
            model(_subset(batch, slice(i, i + chunk)))
            w = model.spatial_attention.astype(np.float64)  # B x h x C x C
            total += w.mean(axis=(1, 2)).sum(axis=0)
    model.train(was)
    return total / total.sum()


def train(
    model: MoodReader,
    train_batch: Batch,
    cfg: TrainConfig = TrainConfig(),
    seed: int = 0,
    test_batch: Batch | None = None,
    attention_batch: Batch | None = None,
    monitor: FusionMonitor | None = None,
) -> TrainResult:
    """Mini-batch training with Adam on cross-entropy.

    The best state is the one with the lowest full-train-set loss at an
    evaluation point, so the test split never influences selection.
    """
    n = len(train_batch)
    if n < 2:
        raise ConfigError("training needs at least two samples (batch normalization)")
    rng = RngState(seed)
    monitor = monitor or FusionMonitor()
    model.set_fusion_hook(monitor)
    for mod in model.modules():
        if hasattr(mod, "rng") and isinstance(getattr(mod, "rng"), RngState):
            mod.rng = rng
    opt = Adam(model.parameters(trainable_only=True), lr=cfg.lr, weight_decay=cfg.weight_decay,
               total_steps=cfg.steps, min_lr_ratio=cfg.min_lr_ratio, clip_norm=cfg.clip_norm)
    bs = min(cfg.batch_size, n)
    snap_steps = {int(round(f * cfg.steps)): f for f in SNAPSHOT_FRACTIONS}
    snapshots, history, evals = [], [], []
    best_loss, best_state, best_step = math.inf, model.state_dict(), 0
    last_good = model.state_dict()
    order = np.zeros(0, dtype=np.int64)
    model.train()
    for step in range(cfg.steps + 1):
        if step in snap_steps and attention_batch is not None:
            snapshots.append({"tag": f"{int(snap_steps[step] * 100)}%", "step": step,
                              "weights": channel_attention(model, attention_batch)})
        if step % cfg.eval_every == 0 or step == cfg.steps:
            probs = predict(model, train_batch)
            full_loss = float(-np.mean(np.log(np.maximum(probs[np.arange(n), train_batch.labels], 1e-12))))
            record = {"step": step, "train_loss": full_loss,
                      "train_accuracy": float(np.mean(probs.argmax(1) == train_batch.labels))}
            if test_batch is not None and len(test_batch):
                record["test_accuracy"] = evaluate(model, test_batch).accuracy
            evals.append(record)
            if full_loss < best_loss:
                best_loss, best_state, best_step = full_loss, model.state_dict(), step
        if step == cfg.steps:
            break
        if len(order) < bs:
            order = np.concatenate([order, rng.permutation(n)])
        idx, order = np.sort(order[:bs]), order[bs:]
        opt.zero_grad()
        loss = classification_loss(model(_subset(train_batch, idx)), train_batch.labels[idx])
        value = float(loss.data)
        if not math.isfinite(value):
            model.load_state_dict(last_good)
            raise TrainDivergedError(f"non-finite training loss at step {step}", last_good)
        loss.backward()
        opt.step()
        history.append(value)
        if step % cfg.eval_every == 0:
            last_good = model.state_dict()
            log.info("step %d loss %.4f", step, value)
    model.set_fusion_hook(None)
    return TrainResult(history, evals, best_state, best_step, snapshots, monitor)


def summarize_runs(runs: Sequence[Metrics]) -> Metrics:
    """Pool confusion counts over repeated runs; std is across runs."""
    accs = [m.accuracy for m in runs]
    confusion = np.sum([np.array(m.confusion) for m in runs], axis=0).tolist()
    std = float(np.std(accs)) if len(accs) > 1 else None
    return Metrics(float(np.mean(accs)), int(sum(m.n for m in runs)), confusion, std, accs)
