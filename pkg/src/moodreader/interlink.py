"""Spatial and temporal attention over DE features, and the interlink blocks that cross-feed them.

A DE tensor ``N x F x C`` (windows, bands, channels) is viewed two ways:

* spatial rows, one per channel: ``C x (N*F)``
* temporal rows, one per window: ``N x (C*F)``

Each view passes through an attention block whose sequence axis is its row
axis. An interlink block then lets one view attend jointly over its own rows and
over the other view realigned to its row space. All functions accept an optional
leading batch axis.
"""
from __future__ import annotations

import numpy as np

from .nn import ConfigError, DataError, Dropout, LayerNorm, Linear, Module, ModuleList, MultiHeadAttention, RngState
from .nn import Tensor, sinusoidal_positions
from .nn import tensor as T


# -- representations ----------------------------------------------------------------
def to_reps(de: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(..., N, F, C)`` to spatial ``(..., C, N*F)`` and temporal ``(..., N, C*F)``.

    ``xs[..., c, n*F + f] == de[..., n, f, c]`` and ``xt[..., n, c*F + f] == de[..., n, f, c]``.
    """
    de = np.asarray(de)
    if de.ndim < 3:
        raise ValueError(f"DE tensor must be (..., N, F, C), got shape {de.shape}")
    *lead, N, F, C = de.shape
    nd = de.ndim
    lead_axes = tuple(range(nd - 3))
    xs = np.transpose(de, lead_axes + (nd - 1, nd - 3, nd - 2)).reshape(*lead, C, N * F)
    xt = np.transpose(de, lead_axes + (nd - 3, nd - 1, nd - 2)).reshape(*lead, N, C * F)
    return np.ascontiguousarray(xs), np.ascontiguousarray(xt)


def spatial_to_de(xs: np.ndarray, n_windows: int, n_bands: int) -> np.ndarray:
    *lead, C, _ = xs.shape
    x = np.asarray(xs).reshape(*lead, C, n_windows, n_bands)
    nd = x.ndim
    return np.transpose(x, tuple(range(nd - 3)) + (nd - 2, nd - 1, nd - 3))


def temporal_to_de(xt: np.ndarray, n_channels: int, n_bands: int) -> np.ndarray:
    *lead, N, _ = xt.shape
    x = np.asarray(xt).reshape(*lead, N, n_channels, n_bands)
    nd = x.ndim
    return np.transpose(x, tuple(range(nd - 3)) + (nd - 3, nd - 1, nd - 2))


def _swap_rows(x: Tensor, rows: int, cols: int) -> Tensor:
    """``(..., rows, cols*k)`` laid out as ``[row, col, k]`` to ``(..., cols, rows*k)``."""
    *lead, r, width = x.shape
    if r != rows or width % cols:
        raise ConfigError(f"cannot realign shape {x.shape} to {cols} rows")
    k = width // cols
    y = T.reshape(x, tuple(lead) + (rows, cols, k))
    nd = y.ndim
    y = T.transpose(y, tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))
    return T.reshape(y, tuple(lead) + (cols, rows * k))


# -- blocks --------------------------------------------------------------------------
class AttentionBlock(Module):
    """``LN_b(Dropout(MHA(LN_a(x))) + LN_a(x))`` with the sequence along the row axis.

    The residual branch carries the normalized input, so a zeroed value path
    leaves ``LN_b(LN_a(x))``.
    """

    def __init__(self, d: int, heads: int, rng: RngState, dropout: float = 0.1):
        super().__init__()
        self.norm_in = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.drop = Dropout(dropout, rng)
        self.norm_out = LayerNorm(d)

    def forward(self, x: Tensor) -> Tensor:
        h = self.norm_in(x)
        return self.norm_out(self.drop(self.attn(h)) + h)


SpatialAttentionBlock = AttentionBlock
TemporalAttentionBlock = AttentionBlock


class Interlink(Module):
    """Joint attention over primary rows and secondary rows realigned to the primary row space.

    Primary ``(..., P, d_p)`` passes through one linear map. Secondary
    ``(..., S, d_s)`` is transposed/reshaped so that it has ``P`` rows, then
    passes through ``Linear -> tanh -> Linear``. The two row sets are
    concatenated, attended over jointly, and only the primary rows are kept.
    """

    def __init__(self, primary_rows: int, secondary_rows: int, d_primary: int, d_secondary: int, d_out: int,
                 heads: int, rng: RngState):
        super().__init__()
        if d_secondary % primary_rows:
            raise ConfigError(f"secondary width {d_secondary} does not split over {primary_rows} primary rows")
        self.primary_rows = primary_rows
        self.secondary_rows = secondary_rows
        aligned = secondary_rows * d_secondary // primary_rows
        self.primary_proj = Linear(d_primary, d_out, rng)
        self.align1 = Linear(aligned, d_out, rng)
        self.align2 = Linear(d_out, d_out, rng)
        self.attn = MultiHeadAttention(d_out, heads, rng)

    def align(self, secondary: Tensor) -> Tensor:
        x = _swap_rows(secondary, self.secondary_rows, self.primary_rows)
        return self.align2(T.tanh(self.align1(x)))

    def forward(self, primary: Tensor, secondary: Tensor) -> Tensor:
        if primary.shape[-2] != self.primary_rows or secondary.shape[-2] != self.secondary_rows:
            raise ConfigError(
                f"interlink built for {self.primary_rows}/{self.secondary_rows} rows, "
                f"got {primary.shape} and {secondary.shape}"
            )
        p = self.primary_proj(primary)
        joint = T.concat([p, self.align(secondary)], axis=-2)
        out = self.attn(joint)
        return out[..., : self.primary_rows, :]


def spatial_interlink(C: int, N: int, F: int, heads: int, rng: RngState, d_out: int | None = None) -> Interlink:
    """Primary = spatial rows (C), secondary = temporal rows (N); output ``C x d_out``."""
    return Interlink(C, N, N * F, C * F, d_out or N * F, heads, rng)


def temporal_interlink(C: int, N: int, F: int, heads: int, rng: RngState, d_out: int | None = None) -> Interlink:
    """Primary = temporal rows (N), secondary = spatial rows (C); output ``N x d_out``."""
    return Interlink(N, C, C * F, N * F, d_out or C * F, heads, rng)


class EyeBranch(Module):
    """A stack of temporal attention blocks over an eye-feature sequence ``(..., N_e, d_eye)``."""

    def __init__(self, d_eye: int, heads: int, rng: RngState, depth: int = 2, dropout: float = 0.1,
                 positions: bool = True):
        super().__init__()
        self.blocks = ModuleList(AttentionBlock(d_eye, heads, rng, dropout) for _ in range(depth))
        self.positions = positions
        self.d_eye = d_eye

    def forward(self, eye: Tensor) -> Tensor:
        if eye.shape[-2] == 0:
            raise DataError("eye-feature sequence is empty")
        h = eye
        if self.positions:
            h = h + Tensor(sinusoidal_positions(eye.shape[-2], self.d_eye, eye.dtype))
        for blk in self.blocks:
            h = blk(h)
        return h


class SpatialTemporal(Module):
    """Spatial and temporal attention stacks, optionally followed by the two interlinks.

    Returns ``(F_spatial, F_temporal)``: ``C x d_s`` and ``N x d_t``. Without
    interlinks they are the attention-block outputs. Channel rows get no
    positional encoding; window rows get sinusoidal positions.
    """

    def __init__(self, C: int, N: int, F: int, rng: RngState, spatial_heads: int = 4, temporal_heads: int = 5,
                 interlink_heads: tuple[int, int] | None = None, depth: int = 1, dropout: float = 0.1,
                 interlink: bool = True):
        super().__init__()
        self.C, self.N, self.F = C, N, F
        self.spatial = ModuleList(AttentionBlock(N * F, spatial_heads, rng, dropout) for _ in range(depth))
        self.temporal = ModuleList(AttentionBlock(C * F, temporal_heads, rng, dropout) for _ in range(depth))
        self.use_interlink = interlink
        if interlink:
            hs, ht = interlink_heads or (spatial_heads, temporal_heads)
            self.link_s = spatial_interlink(C, N, F, hs, rng)
            self.link_t = temporal_interlink(C, N, F, ht, rng)
        self._pos = sinusoidal_positions(N, C * F)

    @property
    def spatial_attention(self) -> np.ndarray | None:
        """Attention weights of the last spatial block's most recent call, ``(..., heads, C, C)``."""
        return self.spatial[len(self.spatial) - 1].attn.last_weights

    def forward(self, xs: Tensor, xt: Tensor) -> tuple[Tensor, Tensor]:
        for blk in self.spatial:
            xs = blk(xs)
        xt = xt + Tensor(self._pos.astype(xt.dtype))
        for blk in self.temporal:
            xt = blk(xt)
        if not self.use_interlink:
            return xs, xt
        return self.link_s(xs, xt), self.link_t(xt, xs)
