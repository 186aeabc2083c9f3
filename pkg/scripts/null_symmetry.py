"""Null-feature symmetry of high-dimensional logistic DS statistics.

Pools the half-sample debiased statistics and mirror statistics of null
features over replications and prints sign balance, mean and the
Kolmogorov distance between M and -M. Optionally writes the pooled values.

    python scripts/null_symmetry.py [--reps 20] [--save null_stats.npz]
"""

import argparse

import numpy as np
from scipy import stats

from mirrorfdr.baselines import debiased_lasso_pvalues
from mirrorfdr.bench import Scenario, method_seed, simulate_replication
from mirrorfdr.core import MirrorConfig
from mirrorfdr.datagen import SignalSpec
from mirrorfdr.mirror import HighDimRules, ds_high_glm


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=250)
    ap.add_argument("--p", type=int, default=500)
    ap.add_argument("--p1", type=int, default=10)
    ap.add_argument("--magnitude", type=float, default=4.0)
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--seed", type=int, default=2021)
    ap.add_argument("--save", default=None)
    args = ap.parse_args()
    sc = Scenario(
        args.n, args.p, args.p1, regime="high", family="logistic",
        signal=SignalSpec(args.p1, args.magnitude), reps=args.reps, seed=args.seed,
    )
    t, m, pv = [], [], []
    for rep in range(sc.reps):
        data, _, s1 = simulate_replication(sc, rep)
        null = np.setdiff1d(np.arange(sc.p), s1)
        seed = method_seed(sc, rep)
        res = ds_high_glm(data, MirrorConfig(seed=seed), HighDimRules(sc.lasso, sc.nodewise))
        t.append(np.concatenate([res.t1[null], res.t2[null]]))
        m.append(res.mirror[null])
        pv.append(debiased_lasso_pvalues(data, sc.lasso, sc.nodewise, seed).pvals[null])
        print(f"rep {rep:3d}: selected {res.n_selected}")
    t, m, pv = np.concatenate(t), np.concatenate(m), np.concatenate(pv)
    print(f"T: mean {t.mean():+.4f} sd {t.std():.4f} positive {np.mean(t > 0):.4f}")
    print(f"M: positive {np.mean(m[m != 0] > 0):.4f} KS(M, -M) {stats.ks_2samp(m, -m).statistic:.4f}")
    print(f"full-data debiased p-values: mean {pv.mean():.4f} KS vs U(0,1) {stats.kstest(pv, 'uniform').statistic:.4f}")
    if args.save:
        np.savez(args.save, t=t, m=m, pvals=pv)


if __name__ == "__main__":
    main()
