"""Dynamic versus static models on synthetic cohorts whose mortality hazard
depends on how fast the latent state moves.

    python demos/synthetic_benchmark.py            # shipped acceptance config, 3 seeds (~6 min)
    python demos/synthetic_benchmark.py --quick    # seed 0 only (~2 min)
"""

import argparse

import numpy as np

from icudyn.config import demo_config_path, load_config
from icudyn.experiment import run_benchmark

parser = argparse.ArgumentParser()
parser.add_argument("--quick", action="store_true")
args = parser.parse_args()

cfg = load_config(demo_config_path("acceptance"))
seeds = [0] if args.quick else [0, 1, 2]

results = []
for seed in seeds:
    r = run_benchmark(cfg.with_seed(seed))
    results.append(r)
    print(f"seed {seed}: {r.n_encounters} encounters, mortality {r.mortality:.1%}, "
          f"{r.n_eval} holdout encounters with 12 h of data ({r.n_eval_deaths} deaths)")
    print("   AUC  " + "  ".join(f"{k} {v:.3f}" for k, v in r.auc.items()) + f"  oracle {r.oracle_auc:.3f}")
    print("   by observation time  " + "  ".join(f"{h:g}h {a:.3f}" for h, a in zip(r.sweep.hours, r.sweep.aucs)))
    print("   seconds  " + "  ".join(f"{k} {v:.0f}" for k, v in r.seconds.items()))

if len(results) > 1:
    print(f"\nmedian RNN - LR  {np.median([r.margin('lr') for r in results]):+.3f}")
    print(f"median RNN - MLP {np.median([r.margin('mlp') for r in results]):+.3f}")
