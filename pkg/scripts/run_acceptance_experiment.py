"""Train L2 and NoL2 models on the default synthetic spec for several seeds.

Writes one run directory per (seed, setting) plus compare.json in the L2 run,
then prints the seed-averaged AUROC table and the directional checks.

    python3 scripts/run_acceptance_experiment.py --out runs/acceptance --seeds 0 1 2
"""

import argparse
import time
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from l2ood.config import ExperimentConfig, load_config
from l2ood.experiment import cmd_compare, run_all


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config")
    ap.add_argument("--out", default="runs/acceptance")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()

    base = load_config(args.config) if args.config else ExperimentConfig()
    out = Path(args.out)
    results = {}
    for seed in args.seeds:
        for normalize in (True, False):
            tag = "l2" if normalize else "nol2"
            t0 = time.perf_counter()
            cfg = base.with_overrides(seed=seed, normalize=normalize, output_dir=out / f"seed{seed}_{tag}")
            res = run_all(cfg)
            results[seed, normalize] = res
            print(f"seed {seed} {tag:>4}: acc {res['summary']['id_test_accuracy']:.4f} "
                  f"({time.perf_counter() - t0:.1f}s)")
        cmd_compare(out / f"seed{seed}_l2", out / f"seed{seed}_nol2")

    rules = base.rules
    print(f"\nmean AUROC over seeds {args.seeds}")
    print(f"{'dataset':<18}{'setting':<7}" + "".join(f"{r:>14}" for r in rules))
    for ds in base.ood:
        for normalize in (True, False):
            vals = [np.mean([[row[2] for row in results[s, normalize]["eval"]
                              if row[0] == ds and row[1] == r] for s in args.seeds]) for r in rules]
            print(f"{ds:<18}{'L2' if normalize else 'NoL2':<7}" + "".join(f"{v:>14.4f}" for v in vals))

    print("\nper-seed directional checks (L2 vs NoL2)")
    for s in args.seeds:
        l2, nol2 = results[s, True]["analysis"], results[s, False]["analysis"]
        traj = l2["cv_trajectory"]
        print(f"seed {s}: cv L2 {traj[1, 3]:.3f}->{traj[-1, 3]:.3f}, "
              f"NoL2 {nol2['cv_trajectory'][1, 3]:.3f}->{nol2['cv_trajectory'][-1, 3]:.3f}; "
              f"norm growth rho {spearmanr(traj[:, 0], traj[:, 1])[0]:.3f}; "
              f"bins rho {l2['bins'].spearman():.3f} vs {nol2['bins'].spearman():.3f}; "
              f"feature change hi/lo {l2['feature_change'].totals[-1]:.3g}/"
              f"{l2['feature_change'].totals[0]:.3g}")


if __name__ == "__main__":
    main()
