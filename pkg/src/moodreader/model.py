"""End-to-end classifier wiring and the named ablation presets.

A preset name is a ``+``-joined list: ``STB`` (attention blocks only) or
``STIB`` (blocks plus interlinks), optionally ``Encoder`` and/or ``Eye``, then
``CF`` (concatenation fusion) or ``MLF`` (multi-level fusion). Every model
records the components it actually built in ``audit``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import checkpoint
from .fusion import Classifier, ConcatFusion, MultiLevelFusion, UnifiedProjection
from .interlink import EyeBranch, SpatialTemporal, to_reps
from .nn import ConfigError, DataError, Module, RngState, Tensor

ABLATION_ARMS = ("STB+CF", "STIB+CF", "STIB+Encoder+CF", "STIB+Encoder+MLF", "STIB+Eye+CF", "STIB+Eye+MLF")
FULL = "STIB+Encoder+Eye+MLF"


@dataclass(frozen=True)
class Preset:
    interlink: bool
    encoder: bool
    eye: bool
    fusion: str  # "mlf" | "cf"

    @property
    def components(self) -> list[str]:
        out = ["spatial_block", "temporal_block"]
        if self.interlink:
            out.append("interlink")
        if self.encoder:
            out.append("encoder_stream")
        if self.eye:
            out.append("eye_branch")
        out.append("multi_level_fusion" if self.fusion == "mlf" else "concat_fusion")
        out.append("classifier")
        return out


def parse_preset(name: str) -> Preset:
    parts = [p.strip() for p in name.split("+")]
    if len(parts) < 2 or parts[0] not in ("STB", "STIB") or parts[-1] not in ("CF", "MLF"):
        raise ConfigError(f"unknown preset {name!r}; expected e.g. {ABLATION_ARMS[0]!r} or {FULL!r}")
    middle = parts[1:-1]
    if any(p not in ("Encoder", "Eye") for p in middle) or len(set(middle)) != len(middle):
        raise ConfigError(f"unknown preset {name!r}: middle terms must be Encoder and/or Eye")
    if middle == ["Eye", "Encoder"]:
        raise ConfigError(f"preset {name!r}: write Encoder before Eye")
    preset = Preset(parts[0] == "STIB", "Encoder" in middle, "Eye" in middle, parts[-1].lower())
    if preset.fusion == "mlf" and not (preset.encoder or preset.eye):
        raise ConfigError(f"preset {name!r}: multi-level fusion needs an encoder or eye stream")
    return preset


@dataclass
class ModelConfig:
    preset: str = FULL
    n_channels: int = 62
    n_windows: int = 4
    n_bands: int = 5
    n_classes: int = 3
    d_unified: int = 32
    spatial_heads: int = 4
    temporal_heads: int = 5
    eye_heads: int = 2
    fusion_heads: int = 4
    depth: int = 1
    eye_depth: int = 2
    eye_len: int = 4
    d_eye: int = 8
    d_encoder: int = 128
    dropout: float = 0.1
    dtype: str = "float32"

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Batch:
    de: np.ndarray  # B x N x F x C
    labels: np.ndarray | None = None
    eye: np.ndarray | None = None  # B x N_e x d_eye
    latents: np.ndarray | None = None  # B x d_encoder, pooled encoder latents

    def __len__(self) -> int:
        return len(self.de)


class MoodReader(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.preset = parse_preset(cfg.preset)
        p = self.preset
        rng = RngState(seed)
        C, N, F, D = cfg.n_channels, cfg.n_windows, cfg.n_bands, cfg.d_unified
        self.audit: list[str] = ["spatial_block", "temporal_block"]
        self.blocks = SpatialTemporal(C, N, F, rng, cfg.spatial_heads, cfg.temporal_heads, depth=cfg.depth,
                                      dropout=cfg.dropout, interlink=p.interlink)
        if p.interlink:
            self.audit.append("interlink")
        self.proj_s = UnifiedProjection(C, N * F, D, rng)
        self.proj_t = UnifiedProjection(N, C * F, D, rng)
        n_streams = 2
        if p.encoder:
            self.proj_enc = UnifiedProjection(1, cfg.d_encoder, D, rng)
            self.audit.append("encoder_stream")
            n_streams += 1
        if p.eye:
            self.eye_branch = EyeBranch(cfg.d_eye, cfg.eye_heads, rng, cfg.eye_depth, cfg.dropout)
            self.proj_eye = UnifiedProjection(cfg.eye_len, cfg.d_eye, D, rng)
            self.audit.append("eye_branch")
            n_streams += 1
        if p.fusion == "mlf":
            self.fusion = MultiLevelFusion(D, cfg.fusion_heads, rng, paired_extra=p.encoder and p.eye)
            self.audit.append("multi_level_fusion")
        else:
            self.fusion = ConcatFusion(n_streams, D, rng)
            self.audit.append("concat_fusion")
        self.classifier = Classifier(2 * D, D, cfg.n_classes, rng)
        self.audit.append("classifier")
        self.astype(np.dtype(cfg.dtype))

    @property
    def dtype(self):
        return self.classifier.fc1.weight.dtype

    def streams(self, batch: Batch) -> tuple[Tensor, Tensor, list[Tensor]]:
        """Unified ``B x D`` streams: spatial, temporal, then encoder/eye as configured."""
        cfg, p = self.cfg, self.preset
        de = np.asarray(batch.de)
        if de.shape[1:] != (cfg.n_windows, cfg.n_bands, cfg.n_channels):
            raise DataError(
                f"DE batch has shape {de.shape[1:]}, model expects "
                f"{(cfg.n_windows, cfg.n_bands, cfg.n_channels)}"
            )
        xs, xt = to_reps(de.astype(self.dtype))
        fs, ft = self.blocks(Tensor(xs), Tensor(xt))
        extra = []
        if p.encoder:
            if batch.latents is None:
                raise DataError(f"preset {cfg.preset} needs encoder latents")
            lat = np.asarray(batch.latents, dtype=self.dtype)
            extra.append(self.proj_enc(Tensor(lat[:, None, :])))
        if p.eye:
            if batch.eye is None:
                raise DataError(f"preset {cfg.preset} needs eye features")
            eye = Tensor(np.asarray(batch.eye, dtype=self.dtype))
            extra.append(self.proj_eye(self.eye_branch(eye)))
        return self.proj_s(fs), self.proj_t(ft), extra

    def fused(self, batch: Batch) -> Tensor:
        f_s, f_t, extra = self.streams(batch)
        return self.fusion(f_s, f_t, extra)

    def forward(self, batch: Batch) -> Tensor:
        """Class probabilities ``B x n_classes``."""
        return self.classifier(self.fused(batch))

    def set_fusion_hook(self, hook) -> None:
        if isinstance(self.fusion, MultiLevelFusion):
            self.fusion.set_hook(hook)

    @property
    def spatial_attention(self) -> np.ndarray | None:
        return self.blocks.spatial_attention

    # -- persistence ------------------------------------------------------------
    def save(self, path, extra_meta: dict | None = None) -> Path:
        meta = {"kind": "moodreader", "config": asdict(self.cfg)}
        meta.update(extra_meta or {})
        return checkpoint.save(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path) -> tuple["MoodReader", dict]:
        arrays, meta = checkpoint.load(path)
        if meta.get("kind") != "moodreader":
            raise checkpoint.CheckpointError(f"{path} does not hold a classifier checkpoint")
        model = cls(ModelConfig.from_dict(meta["config"]))
        model.load_state_dict(arrays)
        return model, meta


def batch_from_samples(samples, latents: np.ndarray | None = None, with_labels: bool = True) -> Batch:
    """Stack dataset samples into a :class:`Batch`. ``latents`` rows align with ``samples``."""
    de = np.stack([s.de for s in samples])
    eye = None
    if all(s.eye is not None for s in samples) and samples:
        eye = np.stack([s.eye for s in samples])
    labels = np.array([s.label for s in samples]) if with_labels else None
    return Batch(de, labels, eye, latents)


__all__ = ["ABLATION_ARMS", "FULL", "Batch", "ModelConfig", "MoodReader", "Preset", "batch_from_samples",
           "parse_preset"]
