"""Recordings, the three-zone label function, windowing and class balancing."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import edf
from .errors import ConfigError, DataInsufficiencyError, ValidationError

PREICTAL = 0
INTERICTAL = 1

ONSET_SUFFIX = ".onsets"
CHBMIT_EXCLUDE = ("P7-T7", "T8-P8")


@dataclass(frozen=True)
class LabelConfig:
    """Label-zone geometry in seconds."""

    horizon: float = 15 * 60.0
    margin: float = 4 * 3600.0
    window_len: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Recording:
    channels: list[str]
    sample_rate: float
    samples: np.ndarray  # [n, total]
    seizure_onsets: list[float] = field(default_factory=list)
    subject_id: str = "subject"
    name: str = "recording"

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValidationError(f"sample rate must be positive, got {self.sample_rate}")
        if self.samples.ndim != 2 or self.samples.shape[0] != len(self.channels):
            raise ValidationError(f"samples shape {self.samples.shape} does not match {len(self.channels)} channels")
        onsets = list(map(float, self.seizure_onsets))
        if any(b <= a for a, b in zip(onsets, onsets[1:])):
            raise ValidationError(f"{self.name}: seizure onsets must be strictly increasing: {onsets}")
        if onsets and (onsets[0] < 0 or onsets[-1] > self.duration):
            raise ValidationError(
                f"{self.name}: onset outside recording duration {self.duration:.1f}s: {onsets}"
            )
        self.seizure_onsets = onsets

    @property
    def n(self) -> int:
        return len(self.channels)

    @property
    def duration(self) -> float:
        return self.samples.shape[1] / self.sample_rate

    def window(self, t_start: float, length: float = 1.0) -> np.ndarray:
        """View of ``[t_start, t_start + length)`` as ``[n, T]``."""
        i = int(round(t_start * self.sample_rate))
        T = int(round(length * self.sample_rate))
        return self.samples[:, i:i + T]


@dataclass
class LabeledWindow:
    window: np.ndarray  # [n, T]
    label: int
    subject: str
    recording: str
    offset: float  # seconds from recording start


# ---------------------------------------------------------------- labelling


def label_window(
    t_start: float,
    onsets: Iterable[float],
    horizon: float = 15 * 60.0,
    margin: float = 4 * 3600.0,
    window_len: float = 0.0,
) -> int | None:
    """Label the span ``[t_start, t_start + window_len]``.

    Preictal (0) when the whole span lies in ``[onset - horizon, onset)`` for
    some onset; interictal (1) when it is more than ``margin`` away from every
    onset on both sides; ``None`` otherwise.
    """
    onsets = list(onsets)
    t_end = t_start + window_len
    for onset in onsets:
        if onset - horizon <= t_start and t_start < onset and t_end <= onset:
            return PREICTAL
    if all(t_end < onset - margin or t_start > onset + margin for onset in onsets):
        return INTERICTAL
    return None


def window_offsets(rec: Recording, window_len: float = 1.0) -> np.ndarray:
    """Start times of the non-overlapping, gap-free windows tiling ``rec``."""
    count = int(rec.duration // window_len)
    return np.arange(count) * window_len


def labeled_windows(rec: Recording, cfg: LabelConfig = LabelConfig()) -> list[LabeledWindow]:
    out = []
    for t in window_offsets(rec, cfg.window_len):
        lab = label_window(float(t), rec.seizure_onsets, cfg.horizon, cfg.margin, cfg.window_len)
        if lab is not None:
            out.append(LabeledWindow(rec.window(float(t), cfg.window_len), lab, rec.subject_id, rec.name, float(t)))
    return out


def balance(windows: list[LabeledWindow], rng: np.random.Generator) -> list[LabeledWindow]:
    """Keep every preictal window; subsample interictal ones to match, per subject."""
    by_subject: dict[str, list[LabeledWindow]] = {}
    for w in windows:
        by_subject.setdefault(w.subject, []).append(w)
    out = []
    for subject in sorted(by_subject):
        ws = by_subject[subject]
        pre = [w for w in ws if w.label == PREICTAL]
        inter = [w for w in ws if w.label == INTERICTAL]
        if not pre or not inter:
            missing = "preictal" if not pre else "interictal"
            raise DataInsufficiencyError(f"subject {subject!r} has no {missing} windows")
        if len(inter) > len(pre):
            keep = np.sort(rng.choice(len(inter), size=len(pre), replace=False))
            inter = [inter[i] for i in keep]
        out.extend(pre + inter)
    return out


def make_training_set(
    recordings: list[Recording], seed: int, cfg: LabelConfig = LabelConfig()
) -> list[LabeledWindow]:
    """All labelled windows of ``recordings``, class-balanced per subject."""
    windows = [w for rec in recordings for w in labeled_windows(rec, cfg)]
    return balance(windows, np.random.default_rng(seed))


def stack_windows(windows: list[LabeledWindow]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([w.window for w in windows]), np.array([w.label for w in windows])


# ---------------------------------------------------------------- normalisation


@dataclass
class Normalizer:
    """Per-channel z-scoring fitted on training windows only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Normalizer":
        mu = x.mean(axis=(0, 2))
        sd = x.std(axis=(0, 2))
        return cls(mu, np.where(sd > 0, sd, 1.0))

    @classmethod
    def identity(cls, n: int) -> "Normalizer":
        return cls(np.zeros(n), np.ones(n))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean[:, None]) / self.std[:, None]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(np.array(d["mean"]), np.array(d["std"]))


# ---------------------------------------------------------------- files


def read_onsets(path: str | Path) -> list[float]:
    """Sidecar annotations: one onset in seconds per line; ``#`` starts a comment."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            out.append(float(line))
    return out


def write_onsets(path: str | Path, onsets: Iterable[float]) -> None:
    Path(path).write_text("".join(f"{o:g}\n" for o in onsets), encoding="utf-8")


def sidecar_path(edf_path: str | Path) -> Path:
    return Path(edf_path).with_suffix(ONSET_SUFFIX)


def subject_of(path: str | Path) -> str:
    """Subject id from a ``<subject>_<recording>.edf`` file name."""
    return Path(path).stem.split("_", 1)[0]


def load_edf(
    path: str | Path,
    exclude: Iterable[str] = (),
    channels: list[str] | None = None,
    onsets: list[float] | None = None,
    subject_id: str | None = None,
) -> Recording:
    """Load an EDF file as a :class:`Recording`.

    ``channels`` picks channels by label (in that order); ``exclude`` drops
    labels case-insensitively. Onsets come from ``onsets`` or, failing that,
    the sidecar file next to ``path`` (no sidecar means no seizures).
    """
    raw = Path(path).read_bytes()
    hdr = edf.read_header(raw)
    drop = {e.strip().upper() for e in exclude}
    labels = [lab for lab in hdr.labels if lab != edf.ANNOTATION_LABEL]
    if channels is not None:
        lookup = {lab.upper(): i for i, lab in enumerate(hdr.labels)}
        missing = [c for c in channels if c.upper() not in lookup]
        if missing:
            raise ConfigError(f"{path}: channels not found: {missing}")
        select = [lookup[c.upper()] for c in channels if c.strip().upper() not in drop]
    else:
        select = [i for i, lab in enumerate(hdr.labels)
                  if lab in labels and lab.strip().upper() not in drop and lab.strip() not in ("", "-")]
    if not select:
        raise ConfigError(f"{path}: no channels left after exclusions")
    _, names, samples, rate = edf.read_edf(path, select)
    if onsets is None:
        side = sidecar_path(path)
        onsets = read_onsets(side) if side.exists() else []
    return Recording(names, rate, samples, onsets, subject_id or subject_of(path), Path(path).stem)


def load_dataset(root: str | Path, exclude: Iterable[str] = (), channels: list[str] | None = None) -> list[Recording]:
    """Every ``*.edf`` under ``root`` (sorted by name) with its sidecar onsets."""
    paths = sorted(Path(root).glob("*.edf"))
    if not paths:
        raise ConfigError(f"no EDF files found in {root}")
    return [load_edf(p, exclude=exclude, channels=channels) for p in paths]


def save_dataset(root: str | Path, recordings: list[Recording]) -> list[Path]:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    written = []
    for rec in recordings:
        p = root / f"{rec.name}.edf"
        edf.write_edf(p, rec.samples, int(rec.sample_rate), rec.channels, patient=rec.subject_id)
        write_onsets(sidecar_path(p), rec.seizure_onsets)
        written.append(p)
    return written


_SUMMARY_FILE = re.compile(r"^File Name:\s*(\S+)", re.M)
_SUMMARY_ONSET = re.compile(r"^Seizure(?:\s+\d+)?\s+Start Time:\s*([\d.]+)\s*seconds", re.M)


def parse_chbmit_summary(text: str) -> dict[str, list[float]]:
    """Map each EDF file name in a CHB-MIT ``*-summary.txt`` to its onsets."""
    out: dict[str, list[float]] = {}
    blocks = _SUMMARY_FILE.split(text)
    for name, body in zip(blocks[1::2], blocks[2::2]):
        out[name] = [float(m) for m in _SUMMARY_ONSET.findall(body)]
    return out


def convert_chbmit(summary: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Write one sidecar onset file per EDF listed in a CHB-MIT summary."""
    summary = Path(summary)
    out_dir = Path(out_dir) if out_dir is not None else summary.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, onsets in parse_chbmit_summary(summary.read_text(encoding="utf-8", errors="replace")).items():
        p = sidecar_path(out_dir / name)
        write_onsets(p, onsets)
        written.append(p)
    return written


def dump_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
