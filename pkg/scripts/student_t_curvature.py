"""Curvature spread of the multivariate t target for several degrees of freedom."""
import argparse

import numpy as np

from jacobihmc import HmcConfig, StudentTTarget, curvature_scan, run_chain


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dim", type=int, default=100)
    ap.add_argument("--nus", type=float, nargs="+", default=[1, 10, 100])
    ap.add_argument("--T", type=int, default=10_000)
    ap.add_argument("--frames", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for nu in args.nus:
        m = StudentTTarget.identity(args.dim, nu)
        chain = run_chain(m, np.zeros(args.dim), HmcConfig.for_dim(args.dim, n_steps=args.T, seed=args.seed))
        scan = curvature_scan(m, chain, args.frames, rng=args.seed, threads=4)
        print(f"nu={nu:g}: mean {scan.mean:.3e} sd {scan.sd:.3e} sd/mean {scan.sd / scan.mean:.3f} "
              f"min {scan.min:.3e} acceptance {chain.acceptance_rate:.3f}")


if __name__ == "__main__":
    main()
