"""Leave-one-seizure-out folds, Sn/FDR metrics, the ablation matrix and efficiency accounting."""

from __future__ import annotations

import csv
import io
import time
import tracemalloc
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import INTERICTAL, LabeledWindow, Recording, balance, labeled_windows
from .discriminator import DiscriminatorParams, critic_risk
from .errors import ConfigError, InsufficientFoldsError, UndefinedMetricError
from .model import StanParams
from .monitor import RiskTrajectory, monitor_preictal, monitor_span
from .nn import parameter_count
from .pipeline import fit


@dataclass(frozen=True)
class Seizure:
    subject: str
    recording: str
    onset: float


@dataclass
class FoldSpec:
    fold_id: int
    test: Seizure
    train_windows: list[LabeledWindow]
    # (recording name, start, length) spans scored for false alarms, all held out of training
    interictal_spans: list[tuple[str, float, float]] = field(default_factory=list)

    def audit(self, cfg: RunConfig) -> None:
        """Raise if any training window leaks test-seizure or peri-onset data."""
        lo, hi = self.test.onset - cfg.monitor.span, self.test.onset + cfg.monitor.span
        held = {(name, s, s + n) for name, s, n in self.interictal_spans}
        for w in self.train_windows:
            if w.recording == self.test.recording:
                end = w.offset + cfg.labels.window_len
                if end > lo and w.offset < hi:
                    raise AssertionError(f"fold {self.fold_id}: window at {w.offset} s leaks peri-onset data")
            for name, s, e in held:
                if w.recording == name and w.offset < e and w.offset + cfg.labels.window_len > s:
                    raise AssertionError(f"fold {self.fold_id}: window at {w.offset} s overlaps a monitored span")


def seizures(recordings: list[Recording]) -> list[Seizure]:
    return [Seizure(r.subject_id, r.name, o) for r in recordings for o in r.seizure_onsets]


def _interictal_spans(rec: Recording, cfg: RunConfig) -> list[tuple[str, float, float]]:
    """Maximal runs of consecutive interictal windows as ``(name, start, length)``."""
    spans = []
    run_start = prev = None
    wl = cfg.labels.window_len
    for w in labeled_windows(rec, cfg.labels):
        if w.label != INTERICTAL:
            continue
        if prev is not None and abs(w.offset - prev - wl) < 1e-9:
            prev = w.offset
            continue
        if run_start is not None:
            spans.append((rec.name, run_start, prev + wl - run_start))
        run_start = prev = w.offset
    if run_start is not None:
        spans.append((rec.name, run_start, prev + wl - run_start))
    return spans


def loso_folds(recordings: list[Recording], cfg: RunConfig, seed: int | None = None) -> list[FoldSpec]:
    """One fold per seizure.

    Training pools every other seizure (the same subject's and, unless
    ``cfg.same_subject_only``, every other subject's). Held out of training:
    all windows within ``monitor.span`` of the test onset and the interictal
    spans monitored for false alarms. Those spans are the test recording's
    own interictal runs plus any seizure-free recordings of the test subject,
    dealt round-robin over that subject's folds.
    """
    events = seizures(recordings)
    if len(events) < 2:
        raise InsufficientFoldsError(f"leave-one-seizure-out needs at least 2 seizures, found {len(events)}")
    seed = cfg.seed if seed is None else seed
    by_name = {r.name: r for r in recordings}
    windows = {r.name: labeled_windows(r, cfg.labels) for r in recordings}

    monitored: dict[int, list[tuple[str, float, float]]] = {i: [] for i in range(len(events))}
    for i, ev in enumerate(events):
        monitored[i] += _interictal_spans(by_name[ev.recording], cfg)
    for subject in sorted({r.subject_id for r in recordings}):
        fold_ids = [i for i, ev in enumerate(events) if ev.subject == subject]
        free = [r for r in recordings if r.subject_id == subject and not r.seizure_onsets]
        for k, rec in enumerate(free):
            if fold_ids:
                monitored[fold_ids[k % len(fold_ids)]] += _interictal_spans(rec, cfg)

    folds = []
    wl = cfg.labels.window_len
    for i, ev in enumerate(events):
        lo, hi = ev.onset - cfg.monitor.span, ev.onset + cfg.monitor.span
        held = monitored[i]
        pool = []
        for rec in recordings:
            if cfg.same_subject_only and rec.subject_id != ev.subject:
                continue
            for w in windows[rec.name]:
                end = w.offset + wl
                if rec.name == ev.recording and end > lo and w.offset < hi:
                    continue
                if any(rec.name == name and w.offset < s + n and end > s for name, s, n in held):
                    continue
                pool.append(w)
        train = balance(pool, np.random.default_rng([seed, 100 + i]))
        folds.append(FoldSpec(i, ev, train, held))
    return folds


# ---------------------------------------------------------------- metrics


@dataclass
class FoldMetrics:
    fold_id: int
    subject: str
    predicted: bool
    detection_time: float | None  # minutes before onset
    false_alarms: int
    interictal_hours: float


@dataclass
class Metrics:
    sensitivity: float  # percent
    fdr: float  # false alarms per hour
    seizures: int
    predicted: int
    false_alarms: int
    interictal_hours: float


def compute_metrics(results: list[FoldMetrics]) -> Metrics:
    if not results:
        raise UndefinedMetricError("no folds to summarise")
    hours = float(sum(r.interictal_hours for r in results))
    if hours <= 0:
        raise UndefinedMetricError("zero interictal hours monitored; FDR is undefined")
    predicted = sum(bool(r.predicted) for r in results)
    alarms = sum(r.false_alarms for r in results)
    return Metrics(100.0 * predicted / len(results), alarms / hours, len(results), predicted, alarms, hours)


def per_patient(results: list[FoldMetrics]) -> list[tuple[str, Metrics | None]]:
    """Per-subject metrics (``None`` FDR slot when a subject had no interictal hours)."""
    rows = []
    for subject in sorted({r.subject for r in results}):
        sub = [r for r in results if r.subject == subject]
        try:
            rows.append((subject, compute_metrics(sub)))
        except UndefinedMetricError:
            pred = sum(r.predicted for r in sub)
            rows.append((subject, Metrics(100.0 * pred / len(sub), float("nan"), len(sub), pred, 0, 0.0)))
    return rows


def metrics_table(results: list[FoldMetrics]) -> list[tuple[str, float, float]]:
    rows = [(s, m.sensitivity, m.fdr) for s, m in per_patient(results)]
    total = compute_metrics(results)
    rows.append(("Average", total.sensitivity, total.fdr))
    return rows


def format_table(rows, header=("patient", "Sn", "FDR")) -> str:
    """Aligned text table; floats as ``Sn`` with one decimal and ``FDR`` with three."""
    cells = [list(header)]
    for name, sn, fdr in rows:
        cells.append([str(name), f"{sn:.1f}", "n/a" if np.isnan(fdr) else f"{fdr:.3f}"])
    widths = [max(len(r[c]) for r in cells) for c in range(len(header))]
    lines = []
    for i, r in enumerate(cells):
        lines.append("  ".join([r[0].ljust(widths[0])] + [r[c].rjust(widths[c]) for c in range(1, len(r))]))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def table_csv(rows, header=("patient", "Sn", "FDR")) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for name, sn, fdr in rows:
        w.writerow([name, f"{sn:.1f}", "" if np.isnan(fdr) else f"{fdr:.4f}"])
    return buf.getvalue()


# ---------------------------------------------------------------- fold evaluation


@dataclass
class FoldResult:
    metrics: FoldMetrics
    preictal: RiskTrajectory
    interictal: list[RiskTrajectory]
    disc_loss: list[float]


def evaluate_fold(fold: FoldSpec, recordings: list[Recording], cfg: RunConfig, out_dir: str | Path | None = None):
    """Fit on the fold's training windows, then monitor the test seizure and held-out interictal spans."""
    by_name = {r.name: r for r in recordings}
    seed = cfg.seed * 1000 + fold.fold_id
    fitted = fit(fold.train_windows, cfg, seed=seed)
    scorer = fitted.scorer()
    rec = by_name[fold.test.recording]
    pre = monitor_preictal(rec, fold.test.onset, scorer, cfg.monitor, fitted.normalizer)
    inter = [monitor_span(by_name[name], s, n, scorer, cfg.monitor, fitted.normalizer, origin=s)
             for name, s, n in fold.interictal_spans]
    first = pre.earliest_alarm
    metrics = FoldMetrics(
        fold_id=fold.fold_id,
        subject=fold.test.subject,
        predicted=first is not None,
        detection_time=None if first is None else -first / 60.0,
        false_alarms=sum(len(t.alarms) for t in inter),
        interictal_hours=sum(n for _, _, n in fold.interictal_spans) / 3600.0,
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        pre.write_csv(out / f"fold{fold.fold_id:02d}_trajectory.csv")
        pre.write_alarm_log(out / f"fold{fold.fold_id:02d}_alarms.csv")
        fitted.history.write_csv(out / f"fold{fold.fold_id:02d}_disc_loss.csv")
    return FoldResult(metrics, pre, inter, list(fitted.history.loss))


@dataclass
class LosoReport:
    folds: list[FoldResult]
    metrics: Metrics

    @property
    def fold_metrics(self) -> list[FoldMetrics]:
        return [f.metrics for f in self.folds]

    def table(self) -> str:
        return format_table(metrics_table(self.fold_metrics))

    def csv(self) -> str:
        return table_csv(metrics_table(self.fold_metrics))

    def fold_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fold", "patient", "predicted", "detection_min", "false_alarms", "interictal_hours"])
        for m in self.fold_metrics:
            det = "" if m.detection_time is None else f"{m.detection_time:.3f}"
            w.writerow([m.fold_id, m.subject, int(m.predicted), det, m.false_alarms, f"{m.interictal_hours:.4f}"])
        return buf.getvalue()

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(self.table() + "\n", encoding="utf-8")
        (out / "report.csv").write_text(self.csv(), encoding="utf-8")
        (out / "folds.csv").write_text(self.fold_csv(), encoding="utf-8")


def run_loso(recordings: list[Recording], cfg: RunConfig, out_dir: str | Path | None = None,
             folds: list[int] | None = None, log=None) -> LosoReport:
    specs = loso_folds(recordings, cfg)
    if folds is not None:
        specs = [specs[i] for i in folds]
    results = []
    for spec in specs:
        spec.audit(cfg)
        t0 = time.perf_counter()
        res = evaluate_fold(spec, recordings, cfg, out_dir)
        if log is not None:
            m = res.metrics
            log(f"fold {spec.fold_id} ({spec.test.recording}): predicted={m.predicted} "
                f"detection={m.detection_time} false_alarms={m.false_alarms} ({time.perf_counter() - t0:.0f} s)")
        results.append(res)
    results.sort(key=lambda r: r.metrics.fold_id)
    report = LosoReport(results, compute_metrics([r.metrics for r in results]))
    if out_dir is not None:
        report.write(out_dir)
    return report


# ---------------------------------------------------------------- ablations

ABLATIONS = ("full", "no-adversarial", "no-GP", "M=1", "M=2", "M=3", "spatial-only", "temporal-only")


def ablation_config(name: str, base: RunConfig) -> RunConfig:
    if name == "full":
        return base
    if name == "no-adversarial":
        return base.with_overrides(train={"objective": "bce"})
    if name == "no-GP":
        return base.with_overrides(train={"lambda_gp": 0.0})
    if name in ("M=1", "M=2", "M=3"):
        return base.with_overrides(stan={"M": int(name[2:])})
    if name == "spatial-only":
        return base.with_overrides(stan={"use_temporal": False})
    if name == "temporal-only":
        return base.with_overrides(stan={"use_spatial": False})
    raise ConfigError(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}")


def model_parameter_count(cfg: RunConfig) -> dict[str, int]:
    rng = np.random.default_rng(0)
    backbone = parameter_count(StanParams.init(cfg.stan, rng))
    disc = parameter_count(DiscriminatorParams.init(cfg.disc, cfg.stan, rng))
    return {"backbone": backbone, "discriminator": disc, "total": backbone + disc}


@dataclass
class AblationRow:
    name: str
    parameters: int
    sensitivity: float
    fdr: float


def run_ablation(names, recordings: list[Recording], base: RunConfig, folds: list[int] | None = None,
                 log=None) -> list[AblationRow]:
    """Train and evaluate each named config on identical folds and seeds."""
    configs = [(n, ablation_config(n, base)) for n in names]  # validate every name before training
    rows = []
    for name, cfg in configs:
        report = run_loso(recordings, cfg, folds=folds)
        rows.append(AblationRow(name, model_parameter_count(cfg)["total"],
                                report.metrics.sensitivity, report.metrics.fdr))
        if log is not None:
            log(f"{name}: Sn={report.metrics.sensitivity:.1f} FDR={report.metrics.fdr:.3f}")
    return rows


def ablation_table(rows: list[AblationRow]) -> str:
    cells = [("config", "params", "Sn", "FDR")]
    cells += [(r.name, str(r.parameters), f"{r.sensitivity:.1f}", f"{r.fdr:.3f}") for r in rows]
    widths = [max(len(c[i]) for c in cells) for i in range(4)]
    return "\n".join("  ".join([c[0].ljust(widths[0])] + [c[i].rjust(widths[i]) for i in range(1, 4)])
                     for c in cells)


# ---------------------------------------------------------------- efficiency


@dataclass
class EfficiencyReport:
    parameters: dict[str, int]
    latency_ms_median: float
    latency_ms_iqr: tuple[float, float]
    calls: int
    peak_memory_mb: float

    def to_dict(self) -> dict:
        return asdict(self)

    def text(self) -> str:
        lo, hi = self.latency_ms_iqr
        return "\n".join([
            f"parameters      {self.parameters['total']:,} "
            f"(backbone {self.parameters['backbone']:,}, discriminator {self.parameters['discriminator']:,})",
            f"latency         {self.latency_ms_median:.2f} ms median, IQR [{lo:.2f}, {hi:.2f}] over {self.calls} calls",
            f"peak memory     {self.peak_memory_mb:.1f} MB (traced allocations during one scoring call)",
        ])


def efficiency_report(model, disc, dcfg, calls: int = 100, seed: int = 0) -> EfficiencyReport:
    """Exact parameter counts, single-window latency and traced peak allocation."""
    if calls < 1:
        raise ConfigError("need at least one timed call")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, model.cfg.n, model.cfg.T))

    def call():
        return critic_risk(model.attention_maps(x), dcfg, disc).risk

    call()  # warm-up
    times = []
    for _ in range(calls):
        t0 = time.perf_counter()
        call()
        times.append((time.perf_counter() - t0) * 1e3)
    tracemalloc.start()
    try:
        call()
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    backbone = model.parameter_count()
    d = parameter_count(disc)
    q1, med, q3 = np.percentile(times, [25, 50, 75])
    return EfficiencyReport({"backbone": backbone, "discriminator": d, "total": backbone + d},
                            float(med), (float(q1), float(q3)), calls, peak / 2**20)
