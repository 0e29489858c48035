"""Run configuration: every knob of one pipeline run, serialised next to its outputs."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .data import LabelConfig
from .discriminator import DiscriminatorConfig
from .errors import ConfigError
from .model import StanConfig
from .monitor import MonitorConfig
from .training import TrainConfig

RUN_CONFIG_NAME = "run_config.json"

_SECTIONS = {
    "stan": StanConfig,
    "disc": DiscriminatorConfig,
    "train": TrainConfig,
    "monitor": MonitorConfig,
    "labels": LabelConfig,
}


@dataclass(frozen=True)
class RunConfig:
    stan: StanConfig = field(default_factory=StanConfig)
    disc: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    monitor: MonitorConfig = field(default_factory=MonitorConfig)
    labels: LabelConfig = field(default_factory=LabelConfig)
    seed: int = 0
    normalize: bool = True
    same_subject_only: bool = False
    data_dir: str | None = None
    exclude_channels: tuple[str, ...] = ()

    def __post_init__(self):
        # one seed drives everything; the training section mirrors it
        if self.train.seed != self.seed:
            object.__setattr__(self, "train", replace(self.train, seed=self.seed))
        if self.disc.lambda_gp != self.train.lambda_gp:
            object.__setattr__(self, "disc", replace(self.disc, lambda_gp=self.train.lambda_gp))

    def to_dict(self) -> dict:
        d = {name: asdict(getattr(self, name)) for name in _SECTIONS}
        for f in fields(self):
            if f.name not in _SECTIONS:
                d[f.name] = getattr(self, f.name)
        d["exclude_channels"] = list(self.exclude_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown run-config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in d.items():
            if key in _SECTIONS:
                section = _SECTIONS[key]
                names = {f.name for f in fields(section)}
                bad = set(value) - names
                if bad:
                    raise ConfigError(f"unknown keys in [{key}]: {sorted(bad)}")
                kwargs[key] = section(**value)
            elif key == "exclude_channels":
                kwargs[key] = tuple(value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    def with_overrides(self, **sections) -> "RunConfig":
        """Replace fields section-wise, e.g. ``with_overrides(stan={"M": 1}, seed=3)``."""
        d = self.to_dict()
        for key, value in sections.items():
            if key in _SECTIONS:
                d[key] = {**d[key], **value}
            else:
                d[key] = value
        if "train" in sections and "seed" in sections["train"] and "seed" not in sections:
            d["seed"] = sections["train"]["seed"]
        return RunConfig.from_dict(d)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        except TypeError as exc:
            raise ConfigError(f"{path}: {exc}") from None


def desk_config(seed: int = 0) -> RunConfig:
    """Scaled-down protocol for the synthetic dataset (32 Hz, 32-minute recordings)."""
    return RunConfig(
        stan=StanConfig(n=6, T=32),
        train=TrainConfig(pretrain_epochs=3, disc_epochs=6, disc_lr=1e-4, seed=seed),
        monitor=MonitorConfig(span=15 * 60.0),
        labels=LabelConfig(horizon=5 * 60.0, margin=20 * 60.0),
        seed=seed,
    )


def toy_config(seed: int = 0) -> RunConfig:
    """Tiny shapes for smoke tests and one-epoch harness runs."""
    return RunConfig(
        stan=StanConfig(M=1, H=2, n=6, T=16, spatial_dim=8, temporal_dim=12),
        disc=DiscriminatorConfig(spatial_kernel=3, temporal_kernel=4, temporal_stride=4,
                                 feature_dim=16, fc_units=16, fc_layers=1),
        train=TrainConfig(pretrain_epochs=1, disc_epochs=1, disc_lr=1e-3, batch_size=16, seed=seed),
        monitor=MonitorConfig(span=5 * 60.0, refractory=300.0),
        labels=LabelConfig(horizon=60.0, margin=240.0),
        seed=seed,
    )


PRESETS = {"default": RunConfig, "desk": desk_config, "toy": toy_config}


def preset(name: str, seed: int = 0) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name](seed=seed) if name != "default" else RunConfig(seed=seed)
