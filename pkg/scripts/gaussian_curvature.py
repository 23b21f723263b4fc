"""Curvature scans for identity-covariance Gaussians across dimensions.

Prints mean, min and the relative gap (mean - min)/mean for each d.
"""
import argparse

import numpy as np

from jacobihmc import GaussianTarget, HmcConfig, curvature_scan, run_chain


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dims", type=int, nargs="+", default=[14, 30, 50, 100])
    ap.add_argument("--T", type=int, default=10_000)
    ap.add_argument("--frames", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=4)
    args = ap.parse_args()
    print(f"{'d':>5} {'mean':>11} {'min':>11} {'d^2 mean':>9} {'gap':>8}")
    for d in args.dims:
        m = GaussianTarget.identity(d)
        chain = run_chain(m, np.zeros(d), HmcConfig.for_dim(d, n_steps=args.T, seed=args.seed))
        scan = curvature_scan(m, chain, args.frames, rng=args.seed, threads=args.threads)
        gap = (scan.mean - scan.min) / scan.mean
        print(f"{d:>5} {scan.mean:>11.3e} {scan.min:>11.3e} {scan.mean * d * d:>9.3f} {gap:>8.2f}")


if __name__ == "__main__":
    main()
