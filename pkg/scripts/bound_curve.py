"""Concentration bound versus chain length for the correlated 100-d Gaussian.

Uses the analytic ingredients of Sigma_ij = exp(-|i-j|^2) and prints the T
needed for a target probability at several dimensions.
"""
import argparse

import numpy as np

from jacobihmc.concentration import EXCEPTIONAL_SET_TERM, bound_sweep, gaussian_ingredients, required_T
from jacobihmc.targets import exp_sq_decay_covariance


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--r", type=float, default=0.25)
    ap.add_argument("--target", type=float, default=1e-3)
    args = ap.parse_args()
    ing = gaussian_ingredients(np.linalg.inv(exp_sq_decay_covariance(100)))
    print(f"kappa {ing.kappa:.5f} sigma2 {ing.sigma2} n {ing.local_dim} sigma_inf {ing.granularity} "
          f"lip {ing.lipschitz}")
    for T, prob, regime in bound_sweep(ing.inputs(1, 0, args.r), np.logspace(3, 8, 11)):
        print(f"T={T:>10d}  bound {prob:.4e}  {regime}")
    print(f"(excludes the exceptional set term {EXCEPTIONAL_SET_TERM})")
    for d in (10, 100, 1000):
        T = required_T(gaussian_ingredients(np.eye(d)).inputs(1, 0, args.r), args.target)
        print(f"identity d={d}: required T for bound {args.target:g} at r={args.r}: {T:.3e}")


if __name__ == "__main__":
    main()
