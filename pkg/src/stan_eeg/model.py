"""The cascaded spatio-temporal backbone and its reconstruction head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .attention import (
    AttentionMap,
    SpatialModuleParams,
    TemporalModuleParams,
    spatial_forward,
    temporal_forward,
)
from .errors import ConfigError, FrozenModelError, ShapeError, TrainingDivergedError
from .ndtensor import Tape, Tensor, mean, mul, no_grad, sub
from .nn import Linear, named_parameters, parameter_count, parameters, set_requires_grad
from .optim import Adam


@dataclass(frozen=True)
class StanConfig:
    M: int = 3
    H: int = 4
    n: int = 19
    T: int = 256
    spatial_dim: int = 50
    temporal_dim: int = 100
    kernel: int = 2
    use_spatial: bool = True
    use_temporal: bool = True

    def __post_init__(self):
        if self.M < 1 or self.H < 1:
            raise ConfigError(f"need M >= 1 and H >= 1, got M={self.M}, H={self.H}")
        if self.T < 2 or self.n < 2:
            raise ConfigError(f"need T >= 2 and n >= 2, got T={self.T}, n={self.n}")
        if self.kernel != 2:
            raise ConfigError("only kernel size 2 encoders are supported")
        if not (self.use_spatial or self.use_temporal):
            raise ConfigError("at least one of the spatial/temporal modules must be enabled")

    @property
    def t_prime(self) -> int:
        return self.T - self.kernel + 1

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BlockParams:
    spatial: SpatialModuleParams | None
    temporal: TemporalModuleParams | None


@dataclass
class StanParams:
    blocks: list[BlockParams]
    decoder: Linear  # T -> T, shared by every channel

    @classmethod
    def init(cls, cfg: StanConfig, rng: np.random.Generator) -> "StanParams":
        blocks = []
        for _ in range(cfg.M):
            sp = SpatialModuleParams.init(rng, cfg.T, cfg.spatial_dim, cfg.H) if cfg.use_spatial else None
            tp = TemporalModuleParams.init(rng, cfg.n, cfg.T, cfg.temporal_dim, cfg.H) if cfg.use_temporal else None
            blocks.append(BlockParams(sp, tp))
        return cls(blocks, Linear.init(rng, cfg.T, cfg.T))

    def backbone(self) -> list[BlockParams]:
        return self.blocks


@dataclass
class AttentionMapSet:
    spatial: list[AttentionMap] = field(default_factory=list)
    temporal: list[AttentionMap] = field(default_factory=list)

    def all(self) -> list[AttentionMap]:
        return self.spatial + self.temporal

    def detach(self) -> "AttentionMapSet":
        return AttentionMapSet(
            [AttentionMap(m.values.detach(), m.kind) for m in self.spatial],
            [AttentionMap(m.values.detach(), m.kind) for m in self.temporal],
        )

    def select(self, index) -> "AttentionMapSet":
        """Sub-batch along the leading window axis."""
        return AttentionMapSet(
            [AttentionMap(Tensor(m.values.data[index]), m.kind) for m in self.spatial],
            [AttentionMap(Tensor(m.values.data[index]), m.kind) for m in self.temporal],
        )

    def __len__(self) -> int:
        return len(self.all()[0].values.data)


def forward_with_maps(x: Tensor, cfg: StanConfig, params: StanParams) -> tuple[Tensor, AttentionMapSet]:
    """Run the cascade over ``x`` (``[n, T]`` or ``[B, n, T]``)."""
    if x.shape[-2:] != (cfg.n, cfg.T):
        raise ShapeError(f"input shape {x.shape} does not end in (n={cfg.n}, T={cfg.T})")
    maps = AttentionMapSet()
    h = x
    for block in params.blocks:
        if block.spatial is not None:
            h, m = spatial_forward(h, block.spatial)
            maps.spatial.append(m)
        if block.temporal is not None:
            h, m = temporal_forward(h, block.temporal)
            maps.temporal.append(m)
    return h, maps


def reconstruct(features: Tensor, params: StanParams) -> Tensor:
    return params.decoder(features)


def reconstruction_loss(x_hat: Tensor, x: Tensor) -> Tensor:
    """Mean squared error over every sample of every window."""
    d = sub(x_hat, x)
    return mean(mul(d, d))


@dataclass
class StanModel:
    cfg: StanConfig
    params: StanParams
    frozen: bool = False

    @classmethod
    def create(cls, cfg: StanConfig, seed: int) -> "StanModel":
        return cls(cfg, StanParams.init(cfg, np.random.default_rng(seed)))

    def parameter_count(self) -> int:
        return parameter_count(self.params)

    def named_parameters(self):
        return named_parameters(self.params)

    def attention_maps(self, x: np.ndarray | Tensor) -> AttentionMapSet:
        """Inference-only map extraction for a batch of windows."""
        with no_grad():
            _, maps = forward_with_maps(x if isinstance(x, Tensor) else Tensor(x), self.cfg, self.params)
        return maps


def make_pretrain_optimizer(model: StanModel, lr: float = 1e-3) -> Adam:
    return Adam(parameters(model.params), lr=lr)


def pretrain_step(batch: np.ndarray, model: StanModel, opt: Adam) -> float:
    """One Adam step on reconstruction error; returns the batch loss."""
    if model.frozen:
        raise FrozenModelError("backbone is frozen; pretraining updates are not allowed")
    x = Tensor(batch)
    with Tape() as tape:
        features, _ = forward_with_maps(x, model.cfg, model.params)
        loss = reconstruction_loss(reconstruct(features, model.params), x)
        value = loss.item()
        if not np.isfinite(value):
            norms = {n: float(np.linalg.norm(t.data)) for n, t in model.named_parameters()}
            raise TrainingDivergedError(f"non-finite reconstruction loss; parameter norms: {norms}")
        opt.zero_grad()
        tape.backward(loss)
    opt.step()
    return value


def freeze(model: StanModel) -> StanModel:
    """Mark the backbone immutable; later updates raise :class:`FrozenModelError`."""
    set_requires_grad(model.params, False)
    model.frozen = True
    return model
