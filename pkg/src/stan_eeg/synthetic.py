"""Seeded synthetic multichannel EEG with a controllable preictal signature.

Background activity is per-channel low-pass AR(1) noise with a weak shared
component. Over the ``ramp`` seconds before each onset two things ramp up
linearly: the weight of the shared component (inter-channel coupling) and the
weight of a high-frequency AR(1) source (spectral shift). Every mixture keeps
unit variance, so amplitude alone carries no label information.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .data import Recording
from .errors import ConfigError

LOW_POLE = 0.9
HIGH_POLE = -0.6
BASE_COUPLING = 0.1
MAX_COUPLING = 0.9
MAX_SHIFT = 0.7
AMPLITUDE_UV = 50.0
_BURN_IN = 200


@dataclass(frozen=True)
class SyntheticSpec:
    n_channels: int = 6
    duration: float = 1920.0
    onsets: tuple[float, ...] = (1800.0,)
    strength: float = 10.0
    noise: float = 0.1
    seed: int = 0
    sample_rate: int = 32
    ramp: float = 300.0
    subject_id: str = "s01"
    name: str = "s01_r01"

    def __post_init__(self):
        if self.strength < 0 or self.noise < 0:
            raise ConfigError("synthetic strength and noise must be non-negative")
        if self.n_channels < 2 or self.sample_rate <= 0 or self.duration <= 0 or self.ramp <= 0:
            raise ConfigError("synthetic spec needs >= 2 channels and positive rate, duration and ramp")


def _ar1(rng: np.random.Generator, pole: float, shape: tuple[int, int]) -> np.ndarray:
    """Unit-variance stationary AR(1) rows."""
    white = rng.standard_normal((shape[0], shape[1] + _BURN_IN))
    out = lfilter([np.sqrt(1.0 - pole * pole)], [1.0, -pole], white, axis=1)
    return out[:, _BURN_IN:]


def ramp_profile(times: np.ndarray, onsets, ramp: float) -> np.ndarray:
    """0 outside preictal spans, rising linearly to 1 at each onset."""
    r = np.zeros_like(times)
    for onset in onsets:
        inside = (times >= onset - ramp) & (times < onset)
        r[inside] = np.maximum(r[inside], (times[inside] - (onset - ramp)) / ramp)
    return r


def generate_synthetic(spec: SyntheticSpec) -> Recording:
    rng = np.random.default_rng(spec.seed)
    n = spec.n_channels
    total = int(round(spec.duration * spec.sample_rate))
    t = np.arange(total) / spec.sample_rate

    gain = spec.strength / (1.0 + spec.strength)
    r = ramp_profile(t, spec.onsets, spec.ramp) * gain
    coupling = BASE_COUPLING + (MAX_COUPLING - BASE_COUPLING) * r
    shift = MAX_SHIFT * r

    low = _ar1(rng, LOW_POLE, (n + 1, total))
    high = _ar1(rng, HIGH_POLE, (n + 1, total))
    sources = np.sqrt(1.0 - shift) * low + np.sqrt(shift) * high  # row n is the shared source
    x = np.sqrt(1.0 - coupling) * sources[:n] + np.sqrt(coupling) * sources[n]
    x = x + spec.noise * rng.standard_normal((n, total))
    channels = [f"CH{i + 1:02d}" for i in range(n)]
    return Recording(channels, float(spec.sample_rate), AMPLITUDE_UV * x, list(spec.onsets), spec.subject_id, spec.name)


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    """Several subjects, each with one recording per seizure."""

    subjects: int = 4
    recordings_per_subject: int = 2
    n_channels: int = 6
    sample_rate: int = 32
    duration: float = 1920.0
    onset: float = 1800.0
    ramp: float = 300.0
    strength: float = 10.0
    noise: float = 0.1
    seed: int = 0
    extra: dict = field(default_factory=dict, compare=False)

    def recordings(self) -> list[SyntheticSpec]:
        seeds = np.random.SeedSequence(self.seed).generate_state(self.subjects * self.recordings_per_subject)
        out = []
        for s in range(self.subjects):
            for r in range(self.recordings_per_subject):
                k = s * self.recordings_per_subject + r
                out.append(SyntheticSpec(
                    n_channels=self.n_channels, duration=self.duration, onsets=(self.onset,),
                    strength=self.strength, noise=self.noise, seed=int(seeds[k]),
                    sample_rate=self.sample_rate, ramp=self.ramp,
                    subject_id=f"s{s + 1:02d}", name=f"s{s + 1:02d}_r{r + 1:02d}",
                ))
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("extra")
        return d


def generate_dataset(spec: SyntheticDatasetSpec) -> list[Recording]:
    return [generate_synthetic(s) for s in spec.recordings()]


def read_spec(path: str | Path) -> SyntheticDatasetSpec:
    """Parse the ``[synthetic]`` section of an INI-style spec file."""
    cp = configparser.ConfigParser()
    if not cp.read(path, encoding="utf-8"):
        raise ConfigError(f"cannot read synthetic spec {path}")
    if "synthetic" not in cp:
        raise ConfigError(f"{path}: missing [synthetic] section")
    sec = cp["synthetic"]
    known = {f.name: f.type for f in fields(SyntheticDatasetSpec) if f.name != "extra"}
    kwargs = {}
    for key, value in sec.items():
        if key not in known:
            raise ConfigError(f"{path}: unknown synthetic key {key!r}")
        kwargs[key] = int(value) if known[key] == "int" else float(value)
    return SyntheticDatasetSpec(**kwargs)
