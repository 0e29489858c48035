"""Two-stage training: reconstruction pretraining, then the critic on frozen maps."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .data import INTERICTAL, PREICTAL, LabeledWindow
from .discriminator import DiscriminatorConfig, DiscriminatorParams, critic_risk, discriminator_loss
from .errors import ConfigError, ContractError, FrozenModelError, NonFiniteError, TrainingDivergedError
from .model import AttentionMap, AttentionMapSet, StanModel, make_pretrain_optimizer, pretrain_step
from .ndtensor import Tape, Tensor
from .nn import parameters
from .optim import Adam

log = logging.getLogger(__name__)

GP_LIMIT = 100.0
GP_PATIENCE = 10


@dataclass(frozen=True)
class TrainConfig:
    pretrain_epochs: int = 50
    pretrain_lr: float = 1e-3
    disc_epochs: int = 100
    disc_lr: float = 4e-5
    batch_size: int = 32
    lambda_gp: float = 0.05
    seed: int = 0
    objective: str = "wgan-gp"
    map_cache_dtype: str = "float32"
    # interictal logit quantile used as the decision boundary; None = class-mean midpoint
    calibration_quantile: float | None = 0.01

    def __post_init__(self):
        if self.pretrain_epochs < 0 or self.disc_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.pretrain_lr < 0 or self.disc_lr < 0 or self.lambda_gp < 0:
            raise ConfigError("learning rates and lambda_gp must be non-negative")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if self.objective not in ("wgan-gp", "bce"):
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.calibration_quantile is not None and not 0.0 <= self.calibration_quantile < 1.0:
            raise ConfigError("calibration_quantile must lie in [0, 1) or be None")
        if self.map_cache_dtype not in ("float32", "float64"):
            raise ConfigError("map_cache_dtype must be float32 or float64")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PretrainResult:
    losses: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_loss: float = float("inf")


@dataclass
class DiscHistory:
    epoch: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    mean_logit_inter: list[float] = field(default_factory=list)
    mean_logit_pre: list[float] = field(default_factory=list)
    gp: list[float] = field(default_factory=list)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "mean_logit_inter", "mean_logit_pre"])
            for row in zip(self.epoch, self.loss, self.mean_logit_inter, self.mean_logit_pre):
                w.writerow([row[0], *(repr(float(v)) for v in row[1:])])


def _as_array(windows) -> np.ndarray:
    if isinstance(windows, np.ndarray):
        return windows
    return np.stack([w.window if isinstance(w, LabeledWindow) else w for w in windows])


def pretrain(
    model: StanModel,
    windows,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
) -> PretrainResult:
    """Adam on reconstruction error for ``cfg.pretrain_epochs`` epochs.

    ``windows`` is ``[N, n, T]`` or a list of windows. With ``out_dir`` the
    best and last states go to ``pretrain_best.ckpt``/``pretrain_last.ckpt``
    and the curve to ``pretrain_loss.csv``.
    """
    x = _as_array(windows)
    if len(x) == 0:
        raise ContractError("pretraining needs at least one window")
    if model.frozen:
        raise FrozenModelError("cannot pretrain a frozen backbone")
    rng = np.random.default_rng([cfg.seed, 1])
    opt = make_pretrain_optimizer(model, cfg.pretrain_lr)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    result = PretrainResult()
    for epoch in range(cfg.pretrain_epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for b, start in enumerate(range(0, len(x), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            try:
                loss = pretrain_step(x[idx], model, opt)
            except (NonFiniteError, TrainingDivergedError) as exc:
                norms = {n: float(np.linalg.norm(t.data)) for n, t in model.named_parameters()}
                raise TrainingDivergedError(
                    f"pretraining diverged at epoch {epoch + 1}, batch {b}: {exc}; parameter norms: {norms}"
                ) from exc
            total += loss * len(idx)
        mean_loss = total / len(x)
        result.losses.append(mean_loss)
        log.info("pretrain epoch %d loss %.6f", epoch + 1, mean_loss)
        if out is not None:
            meta = {"stage": "pretrain", "epoch": epoch + 1, "loss": mean_loss}
            if mean_loss < result.best_loss:
                save_checkpoint(out / "pretrain_best.ckpt", model, meta=meta)
            save_checkpoint(out / "pretrain_last.ckpt", model, meta=meta)
        if mean_loss < result.best_loss:
            result.best_loss, result.best_epoch = mean_loss, epoch + 1
    if out is not None:
        with open(out / "pretrain_loss.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss"])
            for i, v in enumerate(result.losses, 1):
                w.writerow([i, repr(float(v))])
    return result


class MapCache:
    """Attention maps of a fixed window set under a frozen backbone.

    Maps are computed once in chunks and stored per kind as
    ``[blocks, N, H, L, L]`` arrays.
    """

    def __init__(self, model: StanModel, x: np.ndarray, chunk: int = 64, dtype: str = "float32"):
        if not model.frozen:
            raise FrozenModelError("map caching requires a frozen backbone")
        spatial, temporal = [], []
        for start in range(0, len(x), chunk):
            maps = model.attention_maps(x[start:start + chunk])
            spatial.append([m.values.data.astype(dtype) for m in maps.spatial])
            temporal.append([m.values.data.astype(dtype) for m in maps.temporal])
        self.spatial = [np.concatenate(parts) for parts in zip(*spatial)]
        self.temporal = [np.concatenate(parts) for parts in zip(*temporal)]

    def __len__(self) -> int:
        return len((self.spatial or self.temporal)[0])

    def batch(self, idx) -> AttentionMapSet:
        return AttentionMapSet(
            [AttentionMap(Tensor(m[idx]), "spatial") for m in self.spatial],
            [AttentionMap(Tensor(m[idx]), "temporal") for m in self.temporal],
        )


def train_discriminator(
    model: StanModel,
    disc: DiscriminatorParams,
    dcfg: DiscriminatorConfig,
    windows: list[LabeledWindow],
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
) -> DiscHistory:
    """Train the critic on cached maps of a frozen backbone.

    One epoch walks a shuffled pass over the preictal windows in batches and
    pairs each batch with an equally sized interictal batch drawn without
    replacement (reshuffled whenever the interictal pool runs out). Each
    epoch's history row is the mean over its steps.
    """
    if not model.frozen:
        raise FrozenModelError("discriminator training needs a frozen backbone; call freeze() first")
    labels = np.array([w.label for w in windows])
    pre_idx = np.flatnonzero(labels == PREICTAL)
    inter_idx = np.flatnonzero(labels == INTERICTAL)
    if len(pre_idx) == 0 or len(inter_idx) == 0:
        raise ContractError(
            f"discriminator training needs both classes; got {len(pre_idx)} preictal and {len(inter_idx)} interictal"
        )
    if dcfg.lambda_gp != cfg.lambda_gp:
        dcfg = DiscriminatorConfig(**{**dcfg.to_dict(), "lambda_gp": cfg.lambda_gp})
    cache = MapCache(model, _as_array(windows), dtype=cfg.map_cache_dtype)
    rng = np.random.default_rng([cfg.seed, 2])
    opt = Adam(parameters(disc), lr=cfg.disc_lr)
    hist = DiscHistory()
    inter_queue: list[int] = []
    high_gp = 0
    for epoch in range(cfg.disc_epochs):
        order = rng.permutation(pre_idx)
        sums = np.zeros(4)
        steps = 0
        for start in range(0, len(order), cfg.batch_size):
            bp = order[start:start + cfg.batch_size]
            while len(inter_queue) < len(bp):
                inter_queue.extend(rng.permutation(inter_idx).tolist())
            bi, inter_queue = np.array(inter_queue[:len(bp)]), inter_queue[len(bp):]
            with Tape() as tape:
                terms = discriminator_loss(cache.batch(bi), cache.batch(bp), disc, dcfg, rng=rng,
                                           training=True, objective=cfg.objective)
                opt.zero_grad()
                tape.backward(terms.loss)
            opt.step()
            value = float(terms.loss.data)
            if not np.isfinite(value):
                raise TrainingDivergedError(f"non-finite discriminator loss at epoch {epoch + 1}, step {steps}")
            high_gp = high_gp + 1 if dcfg.lambda_gp * terms.gp > GP_LIMIT else 0
            if high_gp >= GP_PATIENCE:
                raise TrainingDivergedError(
                    f"weighted gradient penalty above {GP_LIMIT} for {GP_PATIENCE} consecutive steps (epoch {epoch + 1})"
                )
            sums += (value, terms.mean_logit_inter, terms.mean_logit_pre, terms.gp)
            steps += 1
        means = sums / steps
        hist.epoch.append(epoch + 1)
        hist.loss.append(float(means[0]))
        hist.mean_logit_inter.append(float(means[1]))
        hist.mean_logit_pre.append(float(means[2]))
        hist.gp.append(float(means[3]))
        log.info("disc epoch %d loss %.5f inter %.4f pre %.4f", epoch + 1, *means[:3])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        hist.write_csv(out / "disc_loss.csv")
        save_checkpoint(out / "model.ckpt", model, disc, dcfg, meta={"stage": "discriminator",
                                                                     "epochs": cfg.disc_epochs})
    return hist


def calibrate_offset(
    model: StanModel,
    disc: DiscriminatorParams,
    dcfg: DiscriminatorConfig,
    windows: list[LabeledWindow],
    quantile: float | None = 0.01,
) -> float:
    """Shift the critic head so that logit 0 marks the decision boundary.

    The Wasserstein objective is blind to a constant added to every logit, so
    without this step the 0.5 risk threshold has no fixed meaning. With
    ``quantile`` the boundary sits at that quantile of the interictal training
    logits (a fixed per-window false-positive rate); with ``None`` it sits
    midway between the two class-mean logits. Returns the subtracted offset.
    """
    labels = np.array([w.label for w in windows])
    if not (labels == PREICTAL).any() or not (labels == INTERICTAL).any():
        raise ContractError("calibration needs windows of both classes")
    cache = MapCache(model, _as_array(windows))
    logits = np.concatenate([
        critic_risk(cache.batch(slice(i, i + 256)), dcfg, disc).logit for i in range(0, len(cache), 256)
    ])
    if quantile is None:
        offset = 0.5 * (logits[labels == PREICTAL].mean() + logits[labels == INTERICTAL].mean())
    else:
        offset = np.quantile(logits[labels == INTERICTAL], quantile)
    disc.head.b.data = disc.head.b.data - offset
    return float(offset)
