"""Critic over attention maps, trained with a Wasserstein gradient-penalty loss.

Score convention: the critic's logit is high for interictal windows and low
for preictal ones, so ``risk = sigmoid(logit)`` tends to 0 ahead of a seizure.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, ContractError, InputTooShortError, ShapeError
from .model import AttentionMapSet, StanConfig
from .ndtensor import (
    Tensor,
    add,
    concat,
    conv2d,
    dropout,
    l2_norm,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    sigmoid,
    softplus,
    stack,
    sub,
    tsum,
)
from .nn import Linear, xavier, zeros


@dataclass(frozen=True)
class DiscriminatorConfig:
    spatial_kernel: int = 5
    temporal_kernel: int = 8
    spatial_filters: int = 4
    temporal_filters: int = 2
    spatial_stride: int = 1
    temporal_stride: int = 8
    feature_dim: int = 512
    fc_units: int = 256
    fc_layers: int = 3
    dropout_p: float = 0.2
    lambda_gp: float = 0.05
    fusion: str = "concat"

    def __post_init__(self):
        ints = (self.spatial_kernel, self.temporal_kernel, self.spatial_filters, self.temporal_filters,
                self.spatial_stride, self.temporal_stride, self.feature_dim, self.fc_units, self.fc_layers)
        if min(ints) <= 0:
            raise ConfigError("discriminator sizes must all be positive")
        if self.lambda_gp < 0 or not 0 <= self.dropout_p < 1:
            raise ConfigError("need lambda_gp >= 0 and 0 <= dropout_p < 1")
        if self.fusion not in ("concat", "sum"):
            raise ConfigError(f"unknown fusion {self.fusion!r}; expected 'concat' or 'sum'")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CriticOutput:
    logit: np.ndarray
    risk: np.ndarray


@dataclass
class ExtractorParams:
    conv_w: Tensor  # [f, H, k, k]
    conv_b: Tensor  # [f, 1, 1]
    stride: int
    lin: Linear

    @classmethod
    def init(cls, rng, heads: int, L: int, kernel: int, filters: int, stride: int, out_dim: int):
        if L < kernel:
            raise InputTooShortError(f"attention maps of size {L} are smaller than the {kernel}x{kernel} kernel")
        side = (L - kernel) // stride + 1
        fan = heads * kernel * kernel
        return cls(
            conv_w=xavier(rng, (filters, heads, kernel, kernel), fan, filters * kernel * kernel),
            conv_b=zeros(filters, 1, 1),
            stride=stride,
            lin=Linear.init(rng, filters * side * side, out_dim),
        )


@dataclass
class DiscriminatorParams:
    spatial: ExtractorParams | None
    temporal: ExtractorParams | None
    fc: list[Linear]
    head: Linear

    @classmethod
    def init(cls, cfg: DiscriminatorConfig, stan: StanConfig, rng: np.random.Generator) -> "DiscriminatorParams":
        sp = tp = None
        n_maps = 0
        if stan.use_spatial:
            sp = ExtractorParams.init(rng, stan.H, stan.n, cfg.spatial_kernel, cfg.spatial_filters,
                                      cfg.spatial_stride, cfg.feature_dim)
            n_maps += stan.M
        if stan.use_temporal:
            tp = ExtractorParams.init(rng, stan.H, stan.t_prime, cfg.temporal_kernel, cfg.temporal_filters,
                                      cfg.temporal_stride, cfg.feature_dim)
            n_maps += stan.M
        width = cfg.feature_dim * (n_maps if cfg.fusion == "concat" else 1)
        fc = []
        for _ in range(cfg.fc_layers):
            fc.append(Linear.init(rng, width, cfg.fc_units))
            width = cfg.fc_units
        return cls(sp, tp, fc, Linear.init(rng, width, 1))


def _extract(maps: list[Tensor], p: ExtractorParams, cfg: DiscriminatorConfig, training, rng, use_relu) -> list[Tensor]:
    """Run one kind's shared extractor over its maps in a single batched pass."""
    x = stack(maps, axis=0)  # [k, ..., H, L, L]
    kernel = p.conv_w.shape[-1]
    if x.shape[-1] < kernel:
        raise InputTooShortError(f"attention maps of size {x.shape[-1]} are smaller than the {kernel}x{kernel} kernel")
    h = add(conv2d(x, p.conv_w, stride=p.stride), p.conv_b)
    h = reshape(h, h.shape[:-3] + (-1,))
    h = p.lin(dropout(h, cfg.dropout_p, rng, training))
    if use_relu:
        h = relu(h)
    return [h[i] for i in range(len(maps))]


def extract_features(
    maps: AttentionMapSet,
    cfg: DiscriminatorConfig,
    params: DiscriminatorParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
    use_relu: bool = True,
) -> Tensor:
    """Map an attention-map set to the fused feature vector ``[..., D]``.

    ``use_relu=False`` exposes the pre-activation features for linearity probes.
    """
    parts: list[Tensor] = []
    if maps.spatial:
        if params.spatial is None:
            raise ContractError("discriminator has no spatial extractor for spatial maps")
        parts += _extract([m.values for m in maps.spatial], params.spatial, cfg, training, rng, use_relu)
    if maps.temporal:
        if params.temporal is None:
            raise ContractError("discriminator has no temporal extractor for temporal maps")
        parts += _extract([m.values for m in maps.temporal], params.temporal, cfg, training, rng, use_relu)
    if not parts:
        raise ContractError("empty attention-map set")
    if cfg.fusion == "sum":
        return tsum(stack(parts, axis=0), axis=0)
    return concat(parts, axis=-1)


def _mlp(f: Tensor, params: DiscriminatorParams, p_drop: float, training: bool, rng):
    """Critic MLP. Returns the logit ``[...]`` and, per hidden layer, the
    elementwise derivative factor (ReLU gate times dropout scale)."""
    factors = []
    h = f
    for layer in params.fc:
        pre = layer(h)
        gate = (pre.data > 0).astype(np.float64)
        h = relu(pre)
        if training and p_drop > 0:
            scale = (rng.random(h.shape) >= p_drop) / (1.0 - p_drop)
            h = mul(h, Tensor._wrap(scale, False))
            gate = gate * scale
        factors.append(gate)
    logit = params.head(h)
    return reshape(logit, logit.shape[:-1]), factors


def score(
    F: Tensor,
    params: DiscriminatorParams,
    cfg: DiscriminatorConfig | None = None,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, CriticOutput]:
    """Critic logit for fused features ``[..., D]``, plus its sigmoid risk."""
    p_drop = cfg.dropout_p if cfg is not None else 0.0
    if F.ndim == 1:
        logit, _ = _mlp(reshape(F, (1, F.shape[0])), params, p_drop, training, rng)
        logit = reshape(logit, ())
    else:
        logit, _ = _mlp(F, params, p_drop, training, rng)
    return logit, CriticOutput(logit.data.copy(), sigmoid(logit.detach()).data)


class MLPCritic:
    """Adapter exposing the discriminator MLP as a differentiable critic."""

    def __init__(self, params: DiscriminatorParams, cfg: DiscriminatorConfig, training=False, rng=None):
        self.params, self.cfg, self.training, self.rng = params, cfg, training, rng

    def __call__(self, f: Tensor) -> Tensor:
        return _mlp(f, self.params, self.cfg.dropout_p, self.training, self.rng)[0]

    def input_gradient(self, f: Tensor) -> Tensor:
        """``dD/df`` built from tape ops so it can itself be differentiated.

        ReLU has zero curvature almost everywhere, so the Jacobian chain is a
        product of the weight matrices and the gating factors at ``f``.
        """
        with no_grad():
            _, factors = _mlp(f, self.params, self.cfg.dropout_p, self.training, self.rng)
        w_head = self.params.head.w  # [units, 1]
        g = mul(reshape(w_head, (w_head.shape[0],)), Tensor._wrap(factors[-1], False))
        for layer, gate in zip(reversed(self.params.fc[1:]), reversed(factors[:-1])):
            g = mul(matmul(g, layer.w.T), Tensor._wrap(gate, False))
        return matmul(g, self.params.fc[0].w.T)


def gradient_penalty(
    F_inter: Tensor,
    F_pre: Tensor,
    critic,
    rng: np.random.Generator | None = None,
    alpha: np.ndarray | None = None,
) -> Tensor:
    """Mean of ``(||grad_f D(f_hat)||_2 - 1)^2`` over interpolated pairs.

    ``critic`` needs an ``input_gradient(f) -> Tensor`` method. Interpolation
    weights are drawn per pair from U(0, 1) unless ``alpha`` is given.
    """
    if F_inter.shape != F_pre.shape:
        raise ShapeError(f"feature batches differ in shape: {F_inter.shape} vs {F_pre.shape}")
    lead = F_inter.shape[:-1]
    if alpha is None:
        alpha = rng.uniform(0.0, 1.0, size=lead + (1,))
    alpha = np.asarray(alpha, dtype=np.float64).reshape(lead + (1,))
    f_hat = Tensor(alpha * F_inter.data + (1.0 - alpha) * F_pre.data)
    norm = l2_norm(critic.input_gradient(f_hat), axis=-1)
    d = sub(norm, 1.0)
    return mean(mul(d, d))


@dataclass
class LossTerms:
    loss: Tensor
    mean_logit_inter: float
    mean_logit_pre: float
    gp: float


def discriminator_loss(
    maps_inter: AttentionMapSet,
    maps_pre: AttentionMapSet,
    params: DiscriminatorParams,
    cfg: DiscriminatorConfig,
    rng: np.random.Generator | None = None,
    training: bool = False,
    alpha: np.ndarray | None = None,
    objective: str = "wgan-gp",
) -> LossTerms:
    """``E_pre[D] - E_inter[D] + lambda * GP``; minimising pushes interictal logits up.

    ``objective="bce"`` swaps in binary cross-entropy on the sigmoid risk
    (interictal labelled 1, preictal 0) and drops the penalty.
    """
    if len(maps_inter) == 0 or len(maps_pre) == 0:
        raise ContractError("discriminator loss needs non-empty batches of both classes")
    f_inter = extract_features(maps_inter, cfg, params, training, rng)
    f_pre = extract_features(maps_pre, cfg, params, training, rng)
    logit_inter, _ = score(f_inter, params, cfg, training, rng)
    logit_pre, _ = score(f_pre, params, cfg, training, rng)
    mi, mp = float(logit_inter.data.mean()), float(logit_pre.data.mean())
    if objective == "bce":
        loss = mul(add(mean(softplus(mul(logit_inter, -1.0))), mean(softplus(logit_pre))), 0.5)
        return LossTerms(loss, mi, mp, 0.0)
    if objective != "wgan-gp":
        raise ConfigError(f"unknown discriminator objective {objective!r}")
    loss = sub(mean(logit_pre), mean(logit_inter))
    gp_value = 0.0
    if cfg.lambda_gp > 0:
        critic = MLPCritic(params, cfg, training, rng)
        gp = gradient_penalty(f_inter, f_pre, critic, rng=rng, alpha=alpha)
        gp_value = gp.item()
        loss = add(loss, mul(gp, cfg.lambda_gp))
    return LossTerms(loss, mi, mp, gp_value)


def critic_risk(maps: AttentionMapSet, cfg: DiscriminatorConfig, params: DiscriminatorParams) -> CriticOutput:
    """Inference-mode risk for a batch of map sets."""
    with no_grad():
        _, out = score(extract_features(maps, cfg, params), params, cfg)
    return out
