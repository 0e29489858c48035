"""Strided risk scoring, trailing moving average and threshold alarms."""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import Normalizer, Recording
from .discriminator import DiscriminatorConfig, DiscriminatorParams, critic_risk
from .errors import ConfigError, ContractError, SpanTruncationError
from .model import StanModel


@dataclass(frozen=True)
class MonitorConfig:
    """Times in seconds."""

    stride: float = 5.0
    window_len: float = 1.0
    ma_span: float = 30.0
    threshold: float = 0.5
    refractory: float = 1800.0
    span: float = 90 * 60.0

    def __post_init__(self):
        if self.stride <= 0 or self.window_len <= 0 or self.span <= 0 or self.refractory < 0:
            raise ConfigError("stride, window_len and span must be positive; refractory non-negative")
        if self.window_len > self.stride:
            raise ConfigError("window_len must not exceed stride")
        ratio = self.ma_span / self.stride
        if self.ma_span <= 0 or abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError(f"ma_span {self.ma_span} must be a positive multiple of stride {self.stride}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")

    @property
    def ma_points(self) -> int:
        return int(round(self.ma_span / self.stride))

    def n_scores(self, span: float | None = None) -> int:
        return int(np.floor((self.span if span is None else span) / self.stride))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AlarmEvent:
    time: float  # seconds relative to the trajectory origin
    trigger_score: float


@dataclass
class RiskTrajectory:
    times: np.ndarray
    raw: np.ndarray
    smoothed: np.ndarray
    alarms: list[AlarmEvent] = field(default_factory=list)

    def __post_init__(self):
        if not len(self.times) == len(self.raw) == len(self.smoothed):
            raise ContractError("trajectory arrays differ in length")

    @property
    def earliest_alarm(self) -> float | None:
        return self.alarms[0].time if self.alarms else None

    def alarm_flags(self) -> np.ndarray:
        flags = np.zeros(len(self.times), dtype=int)
        hits = {a.time for a in self.alarms}
        for i, t in enumerate(self.times):
            flags[i] = t in hits
        return flags

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t_rel_seconds", "raw", "smoothed", "alarm_flag"])
            for t, r, s, a in zip(self.times, self.raw, self.smoothed, self.alarm_flags()):
                w.writerow([f"{t:g}", repr(float(r)), repr(float(s)), int(a)])

    def write_alarm_log(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t_rel_seconds", "trigger_score"])
            for a in self.alarms:
                w.writerow([f"{a.time:g}", repr(float(a.trigger_score))])


# ---------------------------------------------------------------- smoothing and alarms


def _trailing_mean(buf) -> float:
    # left-to-right accumulation; online and offline paths share this exact order
    s = 0.0
    for v in buf:
        s += v
    return s / len(buf)


def moving_average(raw, cfg: MonitorConfig = MonitorConfig()) -> np.ndarray:
    """Trailing mean over ``min(i + 1, ma_points)`` scores."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        raise ContractError("moving average of an empty series")
    k = cfg.ma_points
    return np.array([_trailing_mean(raw[max(0, i - k + 1):i + 1].tolist()) for i in range(len(raw))])


def detect_alarms(times, smoothed, cfg: MonitorConfig = MonitorConfig()) -> list[AlarmEvent]:
    """One alarm per downward crossing of the threshold, with refractory suppression.

    The state before the first sample counts as above threshold, so a series
    that starts below it alarms at its first sample.
    """
    state = _AlarmState(cfg)
    out = []
    for t, s in zip(times, smoothed):
        ev = state.push(float(t), float(s))
        if ev is not None:
            out.append(ev)
    return out


class _AlarmState:
    def __init__(self, cfg: MonitorConfig):
        self.cfg = cfg
        self.above = True
        self.last: float | None = None

    def push(self, t: float, s: float) -> AlarmEvent | None:
        below = s < self.cfg.threshold
        crossed = below and self.above
        self.above = not below
        if crossed and (self.last is None or t - self.last >= self.cfg.refractory):
            self.last = t
            return AlarmEvent(t, s)
        return None


class StreamingMonitor:
    """Online monitor: feed raw scores one at a time in tick order."""

    def __init__(self, cfg: MonitorConfig = MonitorConfig()):
        self.cfg = cfg
        self._buf: deque[float] = deque(maxlen=cfg.ma_points)
        self._alarms = _AlarmState(cfg)
        self.times: list[float] = []
        self.raw: list[float] = []
        self.smoothed: list[float] = []
        self.alarms: list[AlarmEvent] = []

    def push(self, t: float, score: float) -> tuple[float, AlarmEvent | None]:
        self._buf.append(float(score))
        s = _trailing_mean(self._buf)
        ev = self._alarms.push(float(t), s)
        self.times.append(float(t))
        self.raw.append(float(score))
        self.smoothed.append(s)
        if ev is not None:
            self.alarms.append(ev)
        return s, ev

    def trajectory(self) -> RiskTrajectory:
        return RiskTrajectory(np.array(self.times), np.array(self.raw), np.array(self.smoothed), list(self.alarms))


# ---------------------------------------------------------------- scoring


def tick_starts(start: float, span: float, cfg: MonitorConfig) -> np.ndarray:
    """Window start times: one window per stride, the first at ``start``."""
    return start + np.arange(cfg.n_scores(span)) * cfg.stride


def check_span(rec: Recording, start: float, span: float) -> None:
    if start < 0 or start + span > rec.duration + 1e-9:
        raise SpanTruncationError(
            f"{rec.name}: span [{start:g}, {start + span:g}] s outside available [0, {rec.duration:g}] s"
        )


def risk_scorer(
    model: StanModel,
    disc: DiscriminatorParams,
    dcfg: DiscriminatorConfig,
    chunk: int = 128,
) -> Callable[[np.ndarray], np.ndarray]:
    """Batch scoring function ``[N, n, T] -> risk[N]`` for frozen models."""

    def score(x: np.ndarray) -> np.ndarray:
        out = [critic_risk(model.attention_maps(x[i:i + chunk]), dcfg, disc).risk
               for i in range(0, len(x), chunk)]
        return np.concatenate(out)

    return score


def score_stream(
    rec: Recording,
    start: float,
    span: float,
    scorer: Callable[[np.ndarray], np.ndarray],
    cfg: MonitorConfig = MonitorConfig(),
    normalizer: Normalizer | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Raw risk at every tick of ``[start, start + span]``.

    Returns ``(tick_times, raw)`` where each tick time is the end of its
    scored window (absolute seconds from the recording start).
    """
    check_span(rec, start, span)
    starts = tick_starts(start, span, cfg)
    if len(starts) == 0:
        return np.zeros(0), np.zeros(0)
    x = np.stack([rec.window(float(t), cfg.window_len) for t in starts])
    if normalizer is not None:
        x = normalizer(x)
    return starts + cfg.window_len, scorer(x)


def monitor_span(
    rec: Recording,
    start: float,
    span: float,
    scorer: Callable[[np.ndarray], np.ndarray],
    cfg: MonitorConfig = MonitorConfig(),
    normalizer: Normalizer | None = None,
    origin: float = 0.0,
) -> RiskTrajectory:
    """Score, smooth and alarm over one span; times are relative to ``origin``."""
    ticks, raw = score_stream(rec, start, span, scorer, cfg, normalizer)
    if len(raw) == 0:
        return RiskTrajectory(ticks, raw, raw.copy())
    times = ticks - origin
    smoothed = moving_average(raw, cfg)
    return RiskTrajectory(times, raw, smoothed, detect_alarms(times, smoothed, cfg))


def monitor_preictal(
    rec: Recording,
    onset: float,
    scorer: Callable[[np.ndarray], np.ndarray],
    cfg: MonitorConfig = MonitorConfig(),
    normalizer: Normalizer | None = None,
) -> RiskTrajectory:
    """The ``cfg.span`` seconds before ``onset``; times are negative seconds to onset."""
    return monitor_span(rec, onset - cfg.span, cfg.span, scorer, cfg, normalizer, origin=onset)
