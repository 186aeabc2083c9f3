"""Calibration of classical Wald z-scores for null features in negative
binomial regression, with observed and expected information.

    python scripts/nb_wald_calibration.py [--n 600 --p 100 --p1 20 --reps 20]
"""

import argparse

import numpy as np

from mirrorfdr import baselines as bl
from mirrorfdr import estimators as est
from mirrorfdr.bench import Scenario, simulate_replication
from mirrorfdr.datagen import CovarianceSpec, SignalSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=600)
    ap.add_argument("--p", type=int, default=100)
    ap.add_argument("--p1", type=int, default=20)
    ap.add_argument("--magnitude", type=float, default=6.0)
    ap.add_argument("--r", type=float, default=0.2)
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--seed", type=int, default=2022)
    ap.add_argument("--q", type=float, default=0.1)
    args = ap.parse_args()
    sc = Scenario(
        args.n, args.p, args.p1, method="BHq_mle", family="negbin", dispersion=2.0, scale="inv_n",
        covariance=CovarianceSpec("toeplitz", args.r), signal=SignalSpec(args.p1, args.magnitude),
        reps=args.reps, seed=args.seed,
    )
    z_obs, z_exp, fdp_obs, fdp_exp = [], [], [], []
    for rep in range(sc.reps):
        data, _, s1 = simulate_replication(sc, rep)
        null = np.setdiff1d(np.arange(data.p), s1)
        fit = est.fit_mle(data)
        zo = bl.wald_pvalues_mle(data, fit).zscores
        mu = np.exp(data.X @ fit.beta_hat)
        r = data.family.dispersion
        info = (data.X * (r * mu / (r + mu))[:, None]).T @ data.X
        ze = fit.beta_hat / np.sqrt(np.diag(np.linalg.inv(info)))
        for z, zs, fdps in ((zo, z_obs, fdp_obs), (ze, z_exp, fdp_exp)):
            zs.append(z[null])
            sel = bl.benjamini_hochberg(bl.two_sided_pvalues(z), args.q)
            fdps.append(float(np.mean(~np.isin(sel, s1))) if sel.size else 0.0)
    for label, zs, fdps in (("observed", z_obs, fdp_obs), ("expected", z_exp, fdp_exp)):
        z = np.concatenate(zs)
        print(f"{label:>9} information: null z var {z.var():.3f}  BHq FDR {np.mean(fdps):.3f}")


if __name__ == "__main__":
    main()
