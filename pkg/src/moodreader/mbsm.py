"""Masked brain-signal modeling (MBSM).

An asymmetric masked autoencoder over raw multichannel EEG spans: spans are cut
into fixed-size all-channel time tokens, most tokens are hidden, a deep encoder
sees only the visible ones and a shallow decoder reconstructs every token. After
pretraining the decoder is dropped and the encoder extracts latents.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint
from .nn import (
    Adam,
    ConfigError,
    Dropout,
    LayerNorm,
    Linear,
    Module,
    ModuleList,
    MultiHeadAttention,
    Parameter,
    RngState,
    Tensor,
    no_grad,
    sinusoidal_positions,
)
from .nn import tensor as T

log = logging.getLogger(__name__)


class DegenerateMaskError(ValueError):
    """Every token is masked; the encoder has nothing to look at."""


class PretrainDivergedError(RuntimeError):
    pass


@dataclass
class MbsmConfig:
    n_channels: int = 62
    token_size: int = 40
    span_samples: int = 3200
    d_model: int = 128
    d_decoder: int = 64
    encoder_depth: int = 6
    decoder_depth: int = 2
    heads: int = 4
    mlp_ratio: int = 2
    dropout: float = 0.0
    mask_ratio: float = 0.75
    normalize_targets: bool = True

    def validate(self) -> None:
        if self.decoder_depth < 1:
            raise ConfigError("decoder depth must be at least 1")
        if self.encoder_depth <= self.decoder_depth:
            raise ConfigError("encoder must be deeper than the decoder")
        if self.token_size > self.span_samples:
            raise ConfigError(f"token size {self.token_size} exceeds span length {self.span_samples}")
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ConfigError(f"mask ratio must lie in [0, 1), got {self.mask_ratio}")

    @property
    def n_tokens(self) -> int:
        return self.span_samples // self.token_size

    @property
    def token_dim(self) -> int:
        return self.n_channels * self.token_size


@dataclass
class TokenSequence:
    tokens: np.ndarray  # L x (channels * token_size)
    positions: np.ndarray  # L
    token_size: int
    n_channels: int
    start: int = 0  # sample offset of the first token in the source span

    def sample_range(self, i: int) -> tuple[int, int]:
        return self.start + i * self.token_size, self.start + (i + 1) * self.token_size

    def to_span(self) -> np.ndarray:
        L = len(self.tokens)
        x = self.tokens.reshape(L, self.n_channels, self.token_size)
        return np.transpose(x, (1, 0, 2)).reshape(self.n_channels, L * self.token_size)


@dataclass
class MaskPattern:
    masked: np.ndarray  # sorted indices
    ratio: float
    length: int

    @property
    def visible(self) -> np.ndarray:
        keep = np.ones(self.length, dtype=bool)
        keep[self.masked] = False
        return np.flatnonzero(keep)


def tokenize(span: np.ndarray, token_size: int) -> TokenSequence:
    """Cut a ``channels x samples`` span into all-channel time slices.

    Samples beyond the last whole token are trimmed from the end.
    """
    span = np.asarray(span)
    C, n = span.shape
    if token_size < 1 or token_size > n:
        raise ConfigError(f"token size {token_size} does not fit a span of {n} samples")
    L = n // token_size
    x = span[:, : L * token_size].reshape(C, L, token_size)
    tokens = np.transpose(x, (1, 0, 2)).reshape(L, C * token_size)
    return TokenSequence(tokens, np.arange(L), token_size, C)


def sample_mask(length: int, ratio: float, rng: RngState) -> MaskPattern:
    """Uniformly random subset of exactly ``round(ratio * length)`` token indices."""
    if not 0.0 <= ratio < 1.0:
        raise ConfigError(f"mask ratio must lie in [0, 1), got {ratio}")
    k = int(round(ratio * length))
    masked = np.sort(rng.permutation(length)[:k]) if k else np.zeros(0, dtype=np.int64)
    return MaskPattern(masked.astype(np.int64), ratio, length)


class TransformerBlock(Module):
    """Pre-norm block: x + MHA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, d: int, heads: int, mlp_ratio: int, dropout: float, rng: RngState):
        super().__init__()
        self.norm1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.norm2 = LayerNorm(d)
        self.fc1 = Linear(d, d * mlp_ratio, rng)
        self.fc2 = Linear(d * mlp_ratio, d, rng)
        self.drop = Dropout(dropout, rng)

    def forward(self, x: Tensor) -> Tensor:
        h = self.norm1(x)
        x = x + self.drop(self.attn(h))
        return x + self.drop(self.fc2(T.gelu(self.fc1(self.norm2(x)))))


class _EncoderCore(Module):
    """Token embedding + positional encoding + encoder stack. Shared by the
    pretraining model and the exported frozen encoder."""

    def __init__(self, cfg: MbsmConfig, rng: RngState):
        super().__init__()
        self.cfg = cfg
        self.embed = Linear(cfg.token_dim, cfg.d_model, rng)
        self.blocks = ModuleList(
            TransformerBlock(cfg.d_model, cfg.heads, cfg.mlp_ratio, cfg.dropout, rng) for _ in range(cfg.encoder_depth)
        )
        self.norm = LayerNorm(cfg.d_model)
        self.register_buffer("input_scale", np.ones(1))
        self._pos = sinusoidal_positions(cfg.n_tokens, cfg.d_model)

    def encode_visible(self, tokens: np.ndarray, positions: np.ndarray) -> Tensor:
        """``tokens`` is ``B x K x token_dim`` (visible only), ``positions`` is ``B x K``."""
        x = Tensor((tokens / self.input_scale[0]).astype(self.embed.weight.dtype))
        h = self.embed(x) + Tensor(self._pos[positions].astype(x.dtype))
        for blk in self.blocks:
            h = blk(h)
        return self.norm(h)


class MbsmModel(Module):
    def __init__(self, cfg: MbsmConfig, seed: int = 0):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        rng = RngState(seed)
        self.encoder = _EncoderCore(cfg, rng)
        self.dec_embed = Linear(cfg.d_model, cfg.d_decoder, rng)
        self.mask_token = Parameter(rng.normal(0.0, 0.02, size=cfg.d_decoder))
        self.dec_blocks = ModuleList(
            TransformerBlock(cfg.d_decoder, cfg.heads, cfg.mlp_ratio, cfg.dropout, rng)
            for _ in range(cfg.decoder_depth)
        )
        self.dec_norm = LayerNorm(cfg.d_decoder)
        self.head = Linear(cfg.d_decoder, cfg.token_dim, rng)
        self._dec_pos = sinusoidal_positions(cfg.n_tokens, cfg.d_decoder)

    # -- forward pieces ------------------------------------------------------
    def encode(self, tokens: np.ndarray, masks: Sequence[MaskPattern]) -> Tensor:
        """Latents for the visible tokens of each sequence: ``B x L_vis x d_model``."""
        tokens = np.asarray(tokens)
        if tokens.ndim == 2:
            tokens = tokens[None]
        vis = np.stack([m.visible for m in masks])
        if vis.shape[1] == 0:
            raise DegenerateMaskError("all tokens are masked")
        batch = np.arange(len(tokens))[:, None]
        return self.encoder.encode_visible(tokens[batch, vis], vis)

    def reconstruct(self, latent: Tensor, masks: Sequence[MaskPattern]) -> Tensor:
        """Decoder pass over visible latents interleaved with the mask token: ``B x L x token_dim``."""
        L = masks[0].length
        vis = np.stack([m.visible for m in masks])
        if latent.shape[:2] != vis.shape:
            raise ValueError(f"latent shape {latent.shape} does not match mask layout {vis.shape}")
        h = self.dec_embed(latent)
        full = T.scatter_rows(h, vis, L)
        masked = np.ones((len(masks), L, 1), dtype=h.dtype)
        masked[np.arange(len(masks))[:, None], vis] = 0.0
        full = full + self.mask_token * Tensor(masked)
        full = full + Tensor(self._dec_pos[:L].astype(h.dtype))
        for blk in self.dec_blocks:
            full = blk(full)
        return self.head(self.dec_norm(full))

    def targets(self, tokens: np.ndarray) -> np.ndarray:
        if self.cfg.normalize_targets:
            mu = tokens.mean(axis=-1, keepdims=True)
            sd = np.sqrt(tokens.var(axis=-1, keepdims=True) + 1e-6)
            return (tokens - mu) / sd
        return tokens / self.encoder.input_scale[0]

    def masked_loss(self, tokens: np.ndarray, masks: Sequence[MaskPattern]) -> Tensor:
        """Mean squared reconstruction error over masked tokens only."""
        n_masked = sum(len(m.masked) for m in masks)
        if n_masked == 0:
            return Tensor(np.zeros((), dtype=self.head.weight.dtype))
        pred = self.reconstruct(self.encode(tokens, masks), masks)
        weight = np.zeros(pred.shape[:2] + (1,), dtype=pred.dtype)
        for b, m in enumerate(masks):
            weight[b, m.masked] = 1.0
        target = self.targets(np.asarray(tokens)).astype(pred.dtype)
        diff = pred - Tensor(target)
        return T.tsum(diff * diff * Tensor(weight)) * (1.0 / (n_masked * self.cfg.token_dim))


@dataclass
class PretrainConfig:
    steps: int = 200
    batch_size: int = 8
    lr: float = 3e-3
    min_lr_ratio: float = 0.05
    clip_norm: float | None = 1.0
    seed: int = 0


def fit_input_scale(model: MbsmModel, spans: Sequence[np.ndarray]) -> None:
    """Store a corpus-level amplitude scale so inputs reach the encoder near unit variance."""
    sd = float(np.sqrt(np.mean([np.mean(np.asarray(s, dtype=np.float64) ** 2) for s in spans])))
    model.encoder.input_scale = np.array([sd if sd > 0 else 1.0])


def pretrain_step(
    model: MbsmModel, opt: Adam, tokens: np.ndarray, rng: RngState, mask_ratio: float | None = None
) -> float:
    """One masked-reconstruction update on a ``B x L x token_dim`` batch; returns the loss."""
    if len(tokens) == 0:
        raise ValueError("empty pretraining batch")
    ratio = model.cfg.mask_ratio if mask_ratio is None else mask_ratio
    L = tokens.shape[1]
    masks = [sample_mask(L, ratio, rng) for _ in range(len(tokens))]
    if all(len(m.masked) == 0 for m in masks):
        return 0.0
    model.train()
    opt.zero_grad()
    loss = model.masked_loss(tokens, masks)
    value = float(loss.data)
    if not math.isfinite(value):
        raise PretrainDivergedError(f"non-finite pretraining loss {value} at step {opt.t}")
    loss.backward()
    opt.step()
    return value


def pretrain(
    model: MbsmModel, spans: Sequence[np.ndarray], cfg: PretrainConfig = PretrainConfig()
) -> list[float]:
    """Run ``cfg.steps`` updates on mini-batches drawn from ``spans``; returns the loss curve."""
    if len(spans) == 0:
        raise ValueError("empty pretraining corpus")
    fit_input_scale(model, spans)
    tokens = np.stack([tokenize(s[:, : model.cfg.span_samples], model.cfg.token_size).tokens for s in spans])
    rng = RngState(cfg.seed)
    for blk in model.modules():
        if isinstance(blk, Dropout):
            blk.rng = rng
    opt = Adam(model.parameters(), lr=cfg.lr, total_steps=cfg.steps, min_lr_ratio=cfg.min_lr_ratio,
               clip_norm=cfg.clip_norm)
    history = []
    for step in range(cfg.steps):
        idx = rng.choice(len(tokens), size=min(cfg.batch_size, len(tokens)), replace=False)
        history.append(pretrain_step(model, opt, tokens[np.sort(idx)], rng))
        if step % 50 == 0:
            log.info("pretrain step %d loss %.4f", step, history[-1])
    return history


class FrozenEncoder(Module):
    """The encoder half of a pretrained :class:`MbsmModel`, decoder discarded."""

    def __init__(self, core: _EncoderCore, frozen: bool = True):
        super().__init__()
        self.cfg = core.cfg
        self.core = core
        if frozen:
            self.freeze()
        self.eval()

    def forward(self, spans: np.ndarray) -> Tensor:
        """Differentiable latents for a batch of spans ``B x C x samples``: ``B x L x d_model``."""
        tokens = np.stack([tokenize(s, self.cfg.token_size).tokens for s in spans])
        pos = np.broadcast_to(np.arange(tokens.shape[1]), tokens.shape[:2])
        return self.core.encode_visible(tokens, pos)

    def extract(self, span: np.ndarray) -> np.ndarray:
        """Latents ``L x d_model`` for one span with nothing masked."""
        return self.extract_batch(np.asarray(span)[None])[0]

    def extract_batch(self, spans: np.ndarray, batch_size: int = 32) -> np.ndarray:
        was_training = self.training
        self.eval()
        out = []
        with no_grad():
            for i in range(0, len(spans), batch_size):
                out.append(self.forward(np.asarray(spans[i : i + batch_size])).data)
        self.train(was_training)
        return np.concatenate(out) if out else np.zeros((0, self.cfg.n_tokens, self.cfg.d_model))

    def save(self, path) -> Path:
        return checkpoint.save(path, self.core.state_dict(), {"kind": "mbsm-encoder", "config": asdict(self.cfg)})

    @classmethod
    def load(cls, path, frozen: bool = True) -> "FrozenEncoder":
        arrays, meta = checkpoint.load(path)
        if meta.get("kind") not in ("mbsm-encoder", "mbsm-model"):
            raise checkpoint.CheckpointError(f"{path} does not hold an MBSM encoder")
        cfg = MbsmConfig(**meta["config"])
        core = _EncoderCore(cfg, RngState(0))
        prefix = "encoder." if meta["kind"] == "mbsm-model" else ""
        core.load_state_dict({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})
        return cls(core, frozen)


def export_encoder(model: MbsmModel, frozen: bool = True) -> FrozenEncoder:
    """Drop the decoder; the returned encoder shares no state with ``model``."""
    core = _EncoderCore(model.cfg, RngState(0))
    core.load_state_dict(model.encoder.state_dict())
    return FrozenEncoder(core, frozen)


def save_model(model: MbsmModel, path) -> Path:
    return checkpoint.save(path, model.state_dict(), {"kind": "mbsm-model", "config": asdict(model.cfg)})


def load_model(path) -> MbsmModel:
    arrays, meta = checkpoint.load(path)
    if meta.get("kind") != "mbsm-model":
        raise checkpoint.CheckpointError(f"{path} does not hold an MBSM model")
    model = MbsmModel(MbsmConfig(**meta["config"]))
    model.load_state_dict(arrays)
    return model
