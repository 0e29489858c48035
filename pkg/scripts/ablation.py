"""Ablation matrix on a synthetic dataset under identical folds and seeds.

    python scripts/ablation.py --preset toy            # one epoch each, seconds
    python scripts/ablation.py --preset desk --folds 0,1
"""

import argparse

from stan_eeg.config import preset
from stan_eeg.evaluation import ABLATIONS, ablation_table, run_ablation
from stan_eeg.synthetic import SyntheticDatasetSpec, generate_dataset

DATASETS = {
    "toy": SyntheticDatasetSpec(subjects=2, sample_rate=16, duration=400, onset=360, ramp=60, seed=7),
    "desk": SyntheticDatasetSpec(),
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", choices=sorted(DATASETS), default="toy")
    ap.add_argument("--configs", help="comma-separated ablation names (default: all eight)")
    ap.add_argument("--folds", help="comma-separated fold ids (default: all)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    recs = generate_dataset(DATASETS[args.preset])
    names = args.configs.split(",") if args.configs else list(ABLATIONS)
    folds = [int(f) for f in args.folds.split(",")] if args.folds else None
    rows = run_ablation(names, recs, preset(args.preset, args.seed), folds=folds, log=print)
    print(ablation_table(rows))


if __name__ == "__main__":
    main()
