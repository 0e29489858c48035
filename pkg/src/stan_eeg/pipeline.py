"""Fit both stages on a window set and persist or restore the result."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RUN_CONFIG_NAME, RunConfig
from .data import LabeledWindow, Normalizer, stack_windows
from .discriminator import DiscriminatorConfig, DiscriminatorParams
from .errors import ConfigError
from .model import StanModel, freeze
from .monitor import risk_scorer
from .training import DiscHistory, PretrainResult, calibrate_offset, pretrain, train_discriminator

MODEL_NAME = "model.ckpt"


@dataclass
class FittedModels:
    model: StanModel
    disc: DiscriminatorParams
    dcfg: DiscriminatorConfig
    normalizer: Normalizer
    pretrain: PretrainResult | None = None
    history: DiscHistory | None = None
    offset: float = 0.0

    def scorer(self):
        return risk_scorer(self.model, self.disc, self.dcfg)


def normalized(windows: list[LabeledWindow], norm: Normalizer) -> list[LabeledWindow]:
    return [LabeledWindow(norm(w.window), w.label, w.subject, w.recording, w.offset) for w in windows]


def fit_normalizer(windows: list[LabeledWindow], cfg: RunConfig, n: int) -> Normalizer:
    if not cfg.normalize:
        return Normalizer.identity(n)
    x, _ = stack_windows(windows)
    return Normalizer.fit(x)


def fit(windows: list[LabeledWindow], cfg: RunConfig, seed: int | None = None,
        out_dir: str | Path | None = None) -> FittedModels:
    """Pretrain, freeze, train the critic and calibrate it, all from one seed."""
    seed = cfg.seed if seed is None else seed
    tcfg = replace(cfg.train, seed=seed)
    if windows and windows[0].window.shape != (cfg.stan.n, cfg.stan.T):
        raise ConfigError(
            f"windows are {windows[0].window.shape} but the model expects (n={cfg.stan.n}, T={cfg.stan.T})"
        )
    norm = fit_normalizer(windows, cfg, cfg.stan.n)
    data = normalized(windows, norm)
    model = StanModel.create(cfg.stan, seed)
    pre = pretrain(model, data, tcfg, out_dir)
    freeze(model)
    disc = DiscriminatorParams.init(cfg.disc, cfg.stan, np.random.default_rng([seed, 3]))
    hist = train_discriminator(model, disc, cfg.disc, data, tcfg)
    offset = calibrate_offset(model, disc, cfg.disc, data, tcfg.calibration_quantile)
    fitted = FittedModels(model, disc, cfg.disc, norm, pre, hist, offset)
    if out_dir is not None:
        save_run(out_dir, fitted, cfg)
    return fitted


def save_run(out_dir: str | Path, fitted: FittedModels, cfg: RunConfig) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / RUN_CONFIG_NAME)
    meta = {"normalizer": fitted.normalizer.to_dict(), "offset": fitted.offset, "seed": cfg.seed}
    save_checkpoint(out / MODEL_NAME, fitted.model, fitted.disc, fitted.dcfg, meta)
    if fitted.history is not None:
        fitted.history.write_csv(out / "disc_loss.csv")


def load_run(run_dir: str | Path) -> tuple[FittedModels, RunConfig]:
    run = Path(run_dir)
    ckpt = run / MODEL_NAME
    if not ckpt.exists():
        raise ConfigError(f"{run} has no {MODEL_NAME}; train a model first")
    model, disc, dcfg, meta = load_checkpoint(ckpt)
    if disc is None:
        raise ConfigError(f"{ckpt} holds no discriminator")
    cfg = RunConfig.load(run / RUN_CONFIG_NAME) if (run / RUN_CONFIG_NAME).exists() else RunConfig(stan=model.cfg)
    norm = Normalizer.from_dict(meta["normalizer"]) if "normalizer" in meta else Normalizer.identity(model.cfg.n)
    return FittedModels(freeze(model), disc, dcfg, norm, offset=float(meta.get("offset", 0.0))), cfg


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
