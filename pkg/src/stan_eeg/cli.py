"""Command-line entry point: ``stan <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .config import PRESETS, RUN_CONFIG_NAME, RunConfig, preset
from .errors import ConfigError, StanError

log = logging.getLogger("stan_eeg")

DATA_ENV = "STAN_DATA_DIR"


def _say(msg: str) -> None:
    print(msg, flush=True)


# ---------------------------------------------------------------- config resolution


def resolve_config(args) -> RunConfig:
    """Config file or preset, then command-line overrides."""
    source = getattr(args, "config", None)
    if source is None and getattr(args, "model", None):
        run_cfg = Path(args.model) / RUN_CONFIG_NAME
        source = str(run_cfg) if run_cfg.exists() else None
    if source is None:
        cfg = RunConfig()
    elif source in PRESETS:
        cfg = preset(source)
    else:
        if not Path(source).exists():
            raise ConfigError(f"config {source!r} is neither a file nor a preset ({', '.join(PRESETS)})")
        cfg = RunConfig.load(source)
    over: dict = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "no_normalize", False):
        over["normalize"] = False
    if getattr(args, "same_subject_only", False):
        over["same_subject_only"] = True
    data_dir = _data_dir(args, required=False)
    if data_dir is not None:
        over["data_dir"] = str(data_dir)
    return cfg.with_overrides(**over) if over else cfg


def _data_dir(args, required: bool = True) -> Path | None:
    d = getattr(args, "data", None) or os.environ.get(DATA_ENV)
    if d is None and required:
        raise ConfigError(f"no dataset given; pass --data or set {DATA_ENV}")
    return Path(d) if d is not None else None


def _load(args, cfg: RunConfig):
    recs = data_mod.load_dataset(_data_dir(args), exclude=cfg.exclude_channels)
    rate = recs[0].sample_rate
    T = int(round(rate * cfg.labels.window_len))
    if recs[0].n != cfg.stan.n or T != cfg.stan.T:
        raise ConfigError(
            f"dataset gives n={recs[0].n} channels and T={T} samples per window, but the config expects "
            f"n={cfg.stan.n}, T={cfg.stan.T}; pick a matching --config (presets: {', '.join(PRESETS)})"
        )
    return recs


def _out(args, default: str) -> Path:
    out = Path(getattr(args, "out", None) or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- subcommands


def cmd_synth(args) -> int:
    from .synthetic import SyntheticDatasetSpec, generate_dataset, read_spec

    spec = read_spec(args.spec) if args.spec else SyntheticDatasetSpec()
    if args.seed is not None:
        spec = SyntheticDatasetSpec(**{**spec.to_dict(), "seed": args.seed})
    out = _out(args, "synthetic")
    paths = data_mod.save_dataset(out, generate_dataset(spec))
    data_mod.dump_json(out / "synthetic_spec.json", spec.to_dict())
    _say(f"wrote {len(paths)} recordings to {out}")
    return 0


def cmd_convert(args) -> int:
    written = data_mod.convert_chbmit(args.summary, args.out)
    _say(f"wrote {len(written)} onset sidecar files")
    return 0


def cmd_pretrain(args) -> int:
    from .model import StanModel
    from .pipeline import fit_normalizer, normalized
    from .training import pretrain

    cfg = resolve_config(args)
    recs = _load(args, cfg)
    out = _out(args, "run")
    windows = data_mod.make_training_set(recs, cfg.seed, cfg.labels)
    norm = fit_normalizer(windows, cfg, cfg.stan.n)
    model = StanModel.create(cfg.stan, cfg.seed)
    result = pretrain(model, normalized(windows, norm), cfg.train, out)
    cfg.save(out / RUN_CONFIG_NAME)
    _say(f"pretrained {len(result.losses)} epochs; final loss {result.losses[-1] if result.losses else float('nan'):.6f}")
    return 0


def cmd_train(args) -> int:
    from .pipeline import fit

    cfg = resolve_config(args)
    recs = _load(args, cfg)
    out = _out(args, "run")
    windows = data_mod.make_training_set(recs, cfg.seed, cfg.labels)
    fitted = fit(windows, cfg, out_dir=out)
    _say(f"trained on {len(windows)} windows; checkpoints and loss curves in {out}")
    _say(f"final critic loss {fitted.history.loss[-1] if fitted.history.loss else float('nan'):.6f}")
    return 0


def cmd_monitor(args) -> int:
    from .monitor import monitor_preictal, monitor_span
    from .pipeline import load_run

    fitted, _ = load_run(args.model)
    cfg = resolve_config(args)
    recs = _load(args, cfg)
    out = _out(args, "monitor")
    if args.recording:
        recs = [r for r in recs if r.name == args.recording]
        if not recs:
            raise ConfigError(f"no recording named {args.recording!r}")
    scorer = fitted.scorer()
    count = 0
    for rec in recs:
        if args.start is not None:
            span = args.span if args.span is not None else cfg.monitor.span
            traj = monitor_span(rec, args.start, span, scorer, cfg.monitor, fitted.normalizer, origin=args.start)
            stem = f"{rec.name}_t{args.start:g}"
            trajs = [(stem, traj)]
        else:
            trajs = [(f"{rec.name}_onset{o:g}", monitor_preictal(rec, o, scorer, cfg.monitor, fitted.normalizer))
                     for o in rec.seizure_onsets]
        for stem, traj in trajs:
            traj.write_csv(out / f"{stem}_trajectory.csv")
            traj.write_alarm_log(out / f"{stem}_alarms.csv")
            first = traj.earliest_alarm
            when = "no alarm" if first is None else f"first alarm at {first:g} s"
            _say(f"{stem}: {len(traj.times)} scores, {len(traj.alarms)} alarms ({when})")
            count += 1
    if count == 0:
        _say("nothing to monitor: no seizure onsets found (use --start for a fixed span)")
    return 0


def cmd_evaluate(args) -> int:
    from .evaluation import run_loso

    cfg = resolve_config(args)
    recs = _load(args, cfg)
    out = _out(args, "evaluation")
    cfg.save(out / RUN_CONFIG_NAME)
    if args.fixed:
        report = _fixed_model_report(args, cfg, recs)
    else:
        folds = [int(f) for f in args.folds.split(",")] if args.folds else None
        report = run_loso(recs, cfg, out_dir=out, folds=folds, log=_say)
    report.write(out)
    _say(report.table())
    return 0


def _fixed_model_report(args, cfg, recs):
    """Score every seizure and interictal span with one already-trained model (no refitting)."""
    from .evaluation import FoldMetrics, FoldResult, LosoReport, _interictal_spans, compute_metrics, seizures
    from .monitor import monitor_preictal, monitor_span
    from .pipeline import load_run

    if not args.model:
        raise ConfigError("--fixed needs --model")
    fitted, _ = load_run(args.model)
    scorer = fitted.scorer()
    by_name = {r.name: r for r in recs}
    results = []
    for i, ev in enumerate(seizures(recs)):
        rec = by_name[ev.recording]
        pre = monitor_preictal(rec, ev.onset, scorer, cfg.monitor, fitted.normalizer)
        spans = _interictal_spans(rec, cfg)
        inter = [monitor_span(rec, s, n, scorer, cfg.monitor, fitted.normalizer, origin=s) for _, s, n in spans]
        first = pre.earliest_alarm
        m = FoldMetrics(i, ev.subject, first is not None, None if first is None else -first / 60.0,
                        sum(len(t.alarms) for t in inter), sum(n for *_, n in spans) / 3600.0)
        results.append(FoldResult(m, pre, inter, []))
    return LosoReport(results, compute_metrics([r.metrics for r in results]))


def cmd_ablate(args) -> int:
    from .evaluation import ABLATIONS, ablation_table, run_ablation

    cfg = resolve_config(args)
    recs = _load(args, cfg)
    out = _out(args, "ablation")
    names = args.configs.split(",") if args.configs else list(ABLATIONS)
    folds = [int(f) for f in args.folds.split(",")] if args.folds else None
    rows = run_ablation(names, recs, cfg, folds=folds, log=_say)
    table = ablation_table(rows)
    (out / "ablation.txt").write_text(table + "\n", encoding="utf-8")
    with open(out / "ablation.csv", "w", encoding="utf-8") as fh:
        fh.write("config,params,Sn,FDR\n")
        for r in rows:
            fh.write(f"{r.name},{r.parameters},{r.sensitivity:.1f},{r.fdr:.4f}\n")
    _say(table)
    return 0


def cmd_bench(args) -> int:
    from .discriminator import DiscriminatorParams
    from .evaluation import efficiency_report
    from .model import StanModel, freeze
    from .pipeline import load_run, write_json

    cfg = resolve_config(args)
    if args.model:
        fitted, _ = load_run(args.model)
        model, disc, dcfg = fitted.model, fitted.disc, fitted.dcfg
    else:
        model = freeze(StanModel.create(cfg.stan, cfg.seed))
        dcfg = cfg.disc
        disc = DiscriminatorParams.init(dcfg, cfg.stan, np.random.default_rng(cfg.seed))
    rep = efficiency_report(model, disc, dcfg, calls=args.calls, seed=cfg.seed)
    if args.out:
        out = _out(args, "bench")
        write_json(out / "efficiency.json", rep.to_dict())
    _say(rep.text())
    return 0


# ---------------------------------------------------------------- parser


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS,
                   help=f"run-config JSON file or preset name ({', '.join(PRESETS)})")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="run seed (all randomness derives from it)")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    p.add_argument("--no-normalize", action="store_true", default=argparse.SUPPRESS,
                   help="disable per-channel z-scoring")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="stan", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_, description=help_)
        p.set_defaults(func=fn)
        return p

    p = add("synth", cmd_synth, "generate a synthetic EDF dataset with onset sidecars")
    p.add_argument("--spec", help="INI file with a [synthetic] section")

    p = add("convert-chbmit", cmd_convert, "turn a CHB-MIT summary file into onset sidecars")
    p.add_argument("--summary", required=True)

    data_help = f"dataset directory of EDF files (default: ${DATA_ENV})"
    p = add("pretrain", cmd_pretrain, "reconstruction pretraining only")
    p.add_argument("--data", help=data_help)

    p = add("train", cmd_train, "pretrain, freeze and train the critic on a whole dataset")
    p.add_argument("--data", help=data_help)

    p = add("monitor", cmd_monitor, "write risk trajectories for each seizure (or a fixed span)")
    p.add_argument("--data", help=data_help)
    p.add_argument("--model", required=True, help="run directory from `train`")
    p.add_argument("--recording", help="only this recording (file stem)")
    p.add_argument("--start", type=float, help="monitor from this time (s) instead of before each onset")
    p.add_argument("--span", type=float, help="span in seconds with --start")

    p = add("evaluate", cmd_evaluate, "leave-one-seizure-out Sn/FDR report")
    p.add_argument("--data", help=data_help)
    p.add_argument("--model", help="run directory whose run_config.json to reuse")
    p.add_argument("--fixed", action="store_true", help="score with --model as-is instead of refitting per fold")
    p.add_argument("--folds", help="comma-separated fold ids to run (default: all)")
    p.add_argument("--same-subject-only", action="store_true", help="train each fold on the test subject only")

    p = add("ablate", cmd_ablate, "run the ablation matrix under identical folds and seeds")
    p.add_argument("--data", help=data_help)
    p.add_argument("--configs", help="comma-separated names (default: all eight)")
    p.add_argument("--folds", help="comma-separated fold ids to run (default: all)")

    p = add("bench", cmd_bench, "parameter count, latency and peak memory")
    p.add_argument("--model", help="run directory (default: freshly initialised models)")
    p.add_argument("--calls", type=int, default=100)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("config", "seed", "out", "no_normalize", "verbose"):
        if not hasattr(args, name):
            setattr(args, name, None if name not in ("no_normalize", "verbose") else False)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (StanError, OSError) as exc:
        print(f"stan {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
