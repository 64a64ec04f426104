"""Layers built on the autodiff kernel: linear, normalization, dropout, attention, loss."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .module import Module, Parameter, uniform_fan_in
from .rng import RngState
from .tensor import ShapeError, Tensor


class ConfigError(ValueError):
    """Invalid layer or model configuration."""


class DegenerateBatchError(ValueError):
    """Batch statistics requested from a batch that cannot provide them."""


class DataError(ValueError):
    """Inputs violate the data contract (labels, empty sequences, ...)."""


# -- functional -------------------------------------------------------------
def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input shape {x.shape} does not match weight shape {weight.shape}")
    out = T.matmul(x, weight) if x.ndim >= 2 else T.matmul(T.reshape(x, (1, -1)), weight)[0]
    if bias is not None:
        out = out + bias
    return out


def dropout(x: Tensor, rate: float, rng: RngState | None, training: bool) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep


def cross_entropy(probs: Tensor, labels, floor: float = 1e-12) -> Tensor:
    """Mean over the batch of ``-sum_c onehot * log(probs)``.

    ``labels`` may be integer class indices or a one-hot matrix.
    """
    n, c = probs.shape
    labels = np.asarray(labels)
    if labels.ndim == 1:
        if labels.size != n:
            raise DataError(f"{labels.size} labels for a batch of {n}")
        if np.any(labels < 0) or np.any(labels >= c):
            raise DataError(f"label index out of range [0, {c}): {labels[(labels < 0) | (labels >= c)]}")
        onehot = np.zeros((n, c), dtype=probs.dtype)
        onehot[np.arange(n), labels.astype(int)] = 1.0
    else:
        if labels.shape != probs.shape:
            raise DataError(f"one-hot labels {labels.shape} do not match predictions {probs.shape}")
        onehot = labels.astype(probs.dtype)
    return T.tsum(T.log(probs, floor=floor) * onehot) * (-1.0 / n)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """``softmax(q k^T / sqrt(d_k)) v`` over the last two axes; returns (output, weights)."""
    d_k = q.shape[-1]
    scores = T.matmul(q, T.transpose(k)) * (1.0 / math.sqrt(d_k))
    weights = T.softmax(scores, axis=-1)
    return T.matmul(weights, v), weights


def multi_head_attention(q_in: Tensor, kv_in: Tensor, heads: int, params: dict) -> tuple[Tensor, Tensor]:
    """Multi-head attention with parameters ``wq, wk, wv, wo`` and optional ``bo``.

    Inputs are ``(..., L, d)``; returns the projected output and the attention
    weights of shape ``(..., heads, L_q, L_k)``.
    """
    d = q_in.shape[-1]
    if d % heads:
        raise ConfigError(f"model width {d} is not divisible by {heads} heads")
    d_k = d // heads

    def split(x: Tensor) -> Tensor:
        lead = x.shape[:-2]
        L = x.shape[-2]
        x = T.reshape(x, lead + (L, heads, d_k))
        nd = x.ndim
        return T.transpose(x, tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))

    q = split(linear(q_in, params["wq"]))
    k = split(linear(kv_in, params["wk"]))
    v = split(linear(kv_in, params["wv"]))
    out, weights = scaled_dot_attention(q, k, v)
    nd = out.ndim
    out = T.transpose(out, tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))
    out = T.reshape(out, out.shape[:-2] + (d,))
    return linear(out, params["wo"], params.get("bo")), weights


# -- modules ------------------------------------------------------------------
class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: RngState, bias: bool = True, dtype=np.float64):
        super().__init__()
        self.weight = Parameter(uniform_fan_in(rng, d_in, (d_in, d_out), dtype))
        self.bias = Parameter(uniform_fan_in(rng, d_in, (d_out,), dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5, dtype=np.float64):
        super().__init__()
        if d < 1:
            raise ShapeError("layer_norm needs a trailing extent of at least 1")
        self.eps = eps
        self.gain = Parameter(np.ones(d, dtype=dtype))
        self.shift = Parameter(np.zeros(d, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.shift, self.eps)


class BatchNorm(Module):
    """Per-feature batch normalization with exponential-moving-average running stats."""

    def __init__(self, d: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float64):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gain = Parameter(np.ones(d, dtype=dtype))
        self.shift = Parameter(np.zeros(d, dtype=dtype))
        self.register_buffer("running_mean", np.zeros(d, dtype=dtype))
        self.register_buffer("running_var", np.ones(d, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        if self.training:
            B = x.shape[0]
            if B < 2:
                raise DegenerateBatchError("batch normalization in training mode needs a batch of at least 2")
            out, mu, var = T.batch_norm_train(x, self.gain, self.shift, self.eps)
            m = self.momentum
            unbiased = var * B / (B - 1)
            self.running_mean = ((1 - m) * self.running_mean + m * mu).astype(self.running_mean.dtype)
            self.running_var = ((1 - m) * self.running_var + m * unbiased).astype(self.running_var.dtype)
            return out
        inv = 1.0 / np.sqrt(self.running_var + self.eps)
        return (x - self.running_mean.astype(x.dtype)) * Tensor(inv.astype(x.dtype)) * self.gain + self.shift


class Dropout(Module):
    def __init__(self, rate: float, rng: RngState):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        return dropout(x, self.rate, self.rng, self.training)


class MultiHeadAttention(Module):
    """Scaled dot-product attention over ``heads`` subspaces.

    Query/key/value projections carry no bias; the output projection does.
    The last attention weights are kept on ``last_weights`` (numpy) for inspection.
    """

    def __init__(self, d: int, heads: int, rng: RngState, dtype=np.float64):
        super().__init__()
        if heads < 1 or d % heads:
            raise ConfigError(f"model width {d} is not divisible by {heads} heads")
        self.d = d
        self.heads = heads
        self.wq = Parameter(uniform_fan_in(rng, d, (d, d), dtype))
        self.wk = Parameter(uniform_fan_in(rng, d, (d, d), dtype))
        self.wv = Parameter(uniform_fan_in(rng, d, (d, d), dtype))
        self.wo = Parameter(uniform_fan_in(rng, d, (d, d), dtype))
        self.bo = Parameter(uniform_fan_in(rng, d, (d,), dtype))
        self.last_weights: np.ndarray | None = None

    def params(self) -> dict:
        return {"wq": self.wq, "wk": self.wk, "wv": self.wv, "wo": self.wo, "bo": self.bo}

    def forward(self, q_in: Tensor, kv_in: Tensor | None = None) -> Tensor:
        kv_in = q_in if kv_in is None else kv_in
        out, weights = multi_head_attention(q_in, kv_in, self.heads, self.params())
        self.last_weights = weights.data
        return out


def sinusoidal_positions(length: int, d: int, dtype=np.float64) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    enc = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return enc.astype(dtype)
