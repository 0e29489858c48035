"""Multi-head quadratic-form attention and the spatial/temporal modules.

Both modules attend over a complete graph: every channel (spatial) or every
encoded timestamp (temporal) is a neighbour of every other. Each module emits
one ``H x L x L`` map per window and an ``n x T`` output so modules can be
chained.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, InputTooShortError, ShapeError
from .ndtensor import (
    Tensor,
    add,
    conv1d,
    einsum,
    layer_norm,
    matmul,
    mean,
    mul,
    reshape,
    softmax,
    sorted_sum,
    swapaxes,
    tanh,
    tsum,
)
from .nn import Linear, ones, xavier, zeros

KERNEL = 2


@dataclass
class HeadParams:
    w: Tensor  # [H, e, e], one quadratic form per head
    a: Tensor  # [H] mixing logits

    @classmethod
    def init(cls, rng: np.random.Generator, heads: int, dim: int) -> "HeadParams":
        return cls(xavier(rng, (heads, dim, dim), dim, dim), zeros(heads))

    @property
    def heads(self) -> int:
        return self.w.shape[0]

    @property
    def dim(self) -> int:
        return self.w.shape[-1]


@dataclass
class SpatialModuleParams:
    enc_w: Tensor  # [e, 1, 2], shared by every channel
    enc_b: Tensor  # [e, 1]
    heads: HeadParams
    out: Linear  # e -> T
    ln_gain: Tensor
    ln_bias: Tensor

    @classmethod
    def init(cls, rng, T: int, dim: int = 50, heads: int = 4) -> "SpatialModuleParams":
        return cls(
            enc_w=xavier(rng, (dim, 1, KERNEL), KERNEL, dim * KERNEL),
            enc_b=zeros(dim, 1),
            heads=HeadParams.init(rng, heads, dim),
            out=Linear.init(rng, dim, T),
            ln_gain=ones(T),
            ln_bias=zeros(T),
        )


@dataclass
class TemporalModuleParams:
    enc_w: Tensor  # [e, n, 2], shared by every timestamp
    enc_b: Tensor  # [e, 1]
    heads: HeadParams
    feat: Linear  # e -> n
    time: Linear  # T' -> T
    ln_gain: Tensor
    ln_bias: Tensor

    @classmethod
    def init(cls, rng, n: int, T: int, dim: int = 100, heads: int = 4) -> "TemporalModuleParams":
        return cls(
            enc_w=xavier(rng, (dim, n, KERNEL), n * KERNEL, dim * KERNEL),
            enc_b=zeros(dim, 1),
            heads=HeadParams.init(rng, heads, dim),
            feat=Linear.init(rng, dim, n),
            time=Linear.init(rng, T - KERNEL + 1, T),
            ln_gain=ones(T),
            ln_bias=zeros(T),
        )


@dataclass
class AttentionMap:
    """Per-head row-stochastic maps, shape ``[..., H, L, L]``."""

    values: Tensor
    kind: str  # "spatial" or "temporal"

    @property
    def L(self) -> int:
        return self.values.shape[-1]

    @property
    def heads(self) -> int:
        return self.values.shape[-3]

    def check(self, atol: float = 1e-6) -> None:
        v = self.values.data
        if v.shape[-1] != v.shape[-2]:
            raise ShapeError(f"attention map must be square, got {v.shape}")
        if (v < 0).any() or (v > 1).any():
            raise ContractError("attention map entries outside [0, 1]")
        if np.abs(v.sum(axis=-1) - 1.0).max() > atol:
            raise ContractError("attention map rows do not sum to 1")


def alignment_scores(z: Tensor, w: Tensor, order_invariant: bool = False) -> Tensor:
    """Pairwise quadratic forms ``z_i^T W z_j``.

    ``z`` is ``[..., L, e]``; ``w`` is ``[e, e]`` or ``[H, e, e]`` giving
    ``[..., L, L]`` or ``[..., H, L, L]`` respectively. ``order_invariant``
    avoids BLAS, whose rounding can depend on a node's position, so that
    permuting the nodes permutes the scores bitwise.
    """
    if z.shape[-1] != w.shape[-1] or w.shape[-1] != w.shape[-2]:
        raise ShapeError(f"embedding {z.shape} incompatible with form {w.shape}")
    if order_invariant:
        if w.ndim == 2:
            return einsum("...if,...jf->...ij", einsum("...ie,ef->...if", z, w), z)
        return einsum("...hif,...jf->...hij", einsum("...ie,hef->...hif", z, w), z)
    if w.ndim == 2:
        return matmul(matmul(z, w), swapaxes(z, -1, -2))
    h, e, _ = w.shape
    # all heads in one [e, H*e] product, then split heads out of the last axis
    w_cat = reshape(swapaxes(w, 0, 1), (e, h * e))
    zw = reshape(matmul(z, w_cat), z.shape[:-1] + (h, e))
    zw = swapaxes(zw, -2, -3)  # [..., H, L, e]
    zt = reshape(swapaxes(z, -1, -2), z.shape[:-2] + (1, e, z.shape[-2]))
    return matmul(zw, zt)


def attention_map(scores: Tensor, order_invariant: bool = False) -> Tensor:
    return softmax(scores, axis=-1, order_invariant=order_invariant)


def aggregate_heads(maps: Tensor, values: Tensor, a: Tensor, order_invariant: bool = False) -> Tensor:
    """``tanh(sum_k alpha_k A^k V)`` with ``alpha = softmax(a)``."""
    if maps.shape[-1] != values.shape[-2]:
        raise ShapeError(f"maps {maps.shape} and values {values.shape} disagree on node count")
    alpha = reshape(softmax(a, axis=-1), (a.shape[-1], 1, 1))
    mixed = tsum(mul(maps, alpha), axis=-3)
    if not order_invariant:
        return tanh(matmul(mixed, values))
    L, e = values.shape[-2:]
    terms = mul(reshape(mixed, mixed.shape + (1,)), reshape(values, values.shape[:-2] + (1, L, e)))
    return tanh(sorted_sum(terms, axis=-2))


def _attend(z: Tensor, heads: HeadParams, order_invariant: bool = False) -> tuple[Tensor, Tensor]:
    maps = attention_map(alignment_scores(z, heads.w, order_invariant), order_invariant)
    return aggregate_heads(maps, z, heads.a, order_invariant), maps


def time_encode(x: Tensor, p: SpatialModuleParams) -> Tensor:
    """Per-channel temporal embedding, mean-pooled over time: ``[..., n, e]``."""
    per_channel = reshape(x, x.shape[:-1] + (1, x.shape[-1]))
    h = tanh(add(conv1d(per_channel, p.enc_w), p.enc_b))  # [..., n, e, T-1]
    return mean(h, axis=-1)


def spatial_forward(x: Tensor, p: SpatialModuleParams) -> tuple[Tensor, AttentionMap]:
    """Attention over channels. ``x`` is ``[..., n, T]``; output has the same shape.

    Every reduction that runs over channels is order-invariant, so permuting
    the input channels permutes the maps and the output bitwise.
    """
    if x.shape[-1] < KERNEL:
        raise InputTooShortError(f"window of {x.shape[-1]} samples is shorter than kernel {KERNEL}")
    z = time_encode(x, p)
    attended, maps = _attend(z, p.heads, order_invariant=True)
    proj = add(einsum("...ne,et->...nt", attended, p.out.w), p.out.b)
    out = layer_norm(add(x, tanh(proj)), p.ln_gain, p.ln_bias)
    return out, AttentionMap(maps, "spatial")


def channel_encode(x: Tensor, p: TemporalModuleParams) -> Tensor:
    """Cross-channel embedding per timestamp: ``[..., T-1, e]``."""
    h = tanh(add(conv1d(x, p.enc_w), p.enc_b))  # [..., e, T-1]
    return swapaxes(h, -1, -2)


def temporal_forward(x: Tensor, p: TemporalModuleParams) -> tuple[Tensor, AttentionMap]:
    """Attention over timestamps. ``x`` is ``[..., n, T]``; output has the same shape."""
    if x.shape[-2] < 2:
        raise ContractError(f"temporal attention needs at least 2 channels, got {x.shape[-2]}")
    if x.shape[-2] != p.enc_w.shape[1]:
        raise ShapeError(f"input has {x.shape[-2]} channels, encoder expects {p.enc_w.shape[1]}")
    z = channel_encode(x, p)
    attended, maps = _attend(z, p.heads)
    back = p.time(swapaxes(p.feat(attended), -1, -2))  # [..., n, T]
    out = layer_norm(add(x, tanh(back)), p.ln_gain, p.ln_bias)
    return out, AttentionMap(maps, "temporal")
