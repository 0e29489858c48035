"""Parameter count, single-window latency and peak memory for a preset's shapes.

    python scripts/bench.py [--preset default] [--calls 100]
"""

import argparse

import numpy as np

from stan_eeg.config import PRESETS, preset
from stan_eeg.discriminator import DiscriminatorParams
from stan_eeg.evaluation import efficiency_report
from stan_eeg.model import StanModel, freeze


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", choices=sorted(PRESETS), default="default")
    ap.add_argument("--calls", type=int, default=100)
    args = ap.parse_args()

    cfg = preset(args.preset)
    model = freeze(StanModel.create(cfg.stan, cfg.seed))
    disc = DiscriminatorParams.init(cfg.disc, cfg.stan, np.random.default_rng(cfg.seed))
    print(efficiency_report(model, disc, cfg.disc, calls=args.calls, seed=cfg.seed).text())


if __name__ == "__main__":
    main()
