"""Multi-level score-filtered fusion of feature streams, and the classification head.

Streams are first brought to a common width ``D`` (``UnifiedProjection``).
Pairs of streams compete element-wise through a two-way softmax over learned
scores (``PairFusion``); the two fused vectors are then normalized, treated as a
two-token sequence, passed through self-attention and flattened
(``FinalFusion``). ``ConcatFusion`` is the plain-concatenation baseline.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .nn import BatchNorm, LayerNorm, Linear, Module, MultiHeadAttention, Parameter, RngState, ShapeError, Tensor
from .nn import cross_entropy, linear
from .nn import tensor as T
from .nn.module import uniform_fan_in

FusionHook = Callable[[str, np.ndarray, np.ndarray], None]


class UnifiedProjection(Module):
    """Layer-normalize each row, flatten, then map linearly to ``D``.

    Accepts ``(..., rows, width)`` and returns ``(..., D)``.
    """

    def __init__(self, rows: int, width: int, d_unified: int, rng: RngState):
        super().__init__()
        self.rows, self.width = rows, width
        self.norm = LayerNorm(width)
        self.proj = Linear(rows * width, d_unified, rng)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-2:] != (self.rows, self.width):
            raise ShapeError(f"projection expects (..., {self.rows}, {self.width}), got {x.shape}")
        h = self.norm(x)
        return self.proj(T.reshape(h, x.shape[:-2] + (self.rows * self.width,)))


def pair_fuse(fa: Tensor, fb: Tensor, wa: Tensor, wb: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Element-wise two-way softmax over ``fa @ wa`` and ``fb @ wb``.

    Returns ``(fused, c_a, c_b)`` with ``fused = c_a * fa + c_b * fb``.
    """
    if fa.shape != fb.shape:
        raise ShapeError(f"pair_fuse: streams differ in shape, {fa.shape} vs {fb.shape}")
    if fa.shape[-1] != wa.shape[0] or fb.shape[-1] != wb.shape[0]:
        raise ShapeError(f"pair_fuse: stream width {fa.shape[-1]} does not match score weights {wa.shape}/{wb.shape}")
    scores = T.stack([linear(fa, wa), linear(fb, wb)], axis=0)
    c = T.softmax(scores, axis=0)
    ca, cb = c[0], c[1]
    return ca * fa + cb * fb, ca, cb


class PairFusion(Module):
    def __init__(self, d_unified: int, rng: RngState, name: str = "pair"):
        super().__init__()
        self.name = name
        self.wa = Parameter(uniform_fan_in(rng, d_unified, (d_unified, d_unified)))
        self.wb = Parameter(uniform_fan_in(rng, d_unified, (d_unified, d_unified)))
        self.hook: FusionHook | None = None
        self.last_weights: tuple[np.ndarray, np.ndarray] | None = None

    def forward(self, fa: Tensor, fb: Tensor) -> Tensor:
        out, ca, cb = pair_fuse(fa, fb, self.wa, self.wb)
        self.last_weights = (ca.data, cb.data)
        if self.hook is not None:
            self.hook(self.name, ca.data, cb.data)
        return out


class FinalFusion(Module):
    """Normalize both fused vectors, attend over them as two tokens, flatten to ``2 * D``."""

    def __init__(self, d_unified: int, heads: int, rng: RngState):
        super().__init__()
        self.norm_a = LayerNorm(d_unified)
        self.norm_b = LayerNorm(d_unified)
        self.attn = MultiHeadAttention(d_unified, heads, rng)

    def forward(self, f_st: Tensor, f_ee: Tensor) -> Tensor:
        seq = T.stack([self.norm_a(f_st), self.norm_b(f_ee)], axis=-2)
        out = self.attn(seq)
        return T.reshape(out, out.shape[:-2] + (2 * out.shape[-1],))


class MultiLevelFusion(Module):
    """``(F_S_T, F_T_S)`` and ``(F_EEG, F_EYE)`` pairs, then the final two-token fusion.

    When only one of EEG-encoder/eye streams exists, it stands in for the
    second fused vector directly.
    """

    def __init__(self, d_unified: int, heads: int, rng: RngState, paired_extra: bool = True):
        super().__init__()
        self.st = PairFusion(d_unified, rng, "st")
        self.ee = PairFusion(d_unified, rng, "ee") if paired_extra else None
        self.final = FinalFusion(d_unified, heads, rng)

    def set_hook(self, hook: FusionHook | None) -> None:
        self.st.hook = hook
        if self.ee is not None:
            self.ee.hook = hook

    def forward(self, f_s: Tensor, f_t: Tensor, extra: list[Tensor]) -> Tensor:
        f_st = self.st(f_s, f_t)
        if self.ee is not None:
            if len(extra) != 2:
                raise ShapeError(f"paired fusion needs two extra streams, got {len(extra)}")
            f_ee = self.ee(*extra)
        else:
            if len(extra) != 1:
                raise ShapeError(f"unpaired fusion needs one extra stream, got {len(extra)}")
            f_ee = extra[0]
        return self.final(f_st, f_ee)


class ConcatFusion(Module):
    """Baseline: concatenate every stream and project linearly to ``2 * D``."""

    def __init__(self, n_streams: int, d_unified: int, rng: RngState):
        super().__init__()
        self.proj = Linear(n_streams * d_unified, 2 * d_unified, rng)

    def forward(self, f_s: Tensor, f_t: Tensor, extra: list[Tensor]) -> Tensor:
        return self.proj(T.concat([f_s, f_t, *extra], axis=-1))


class Classifier(Module):
    """Batch norm, then three linear layers with GELU between, then softmax."""

    def __init__(self, d_in: int, d_hidden: int, n_classes: int, rng: RngState):
        super().__init__()
        self.norm = BatchNorm(d_in)
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, max(1, d_hidden // 2), rng)
        self.fc3 = Linear(max(1, d_hidden // 2), n_classes, rng)

    def logits(self, m: Tensor) -> Tensor:
        h = T.gelu(self.fc1(self.norm(m)))
        h = T.gelu(self.fc2(h))
        return self.fc3(h)

    def forward(self, m: Tensor) -> Tensor:
        return T.softmax(self.logits(m), axis=-1)


def classification_loss(probs: Tensor, labels) -> Tensor:
    return cross_entropy(probs, labels)
