"""Approximate-Nash gap of lattice roundings of rest points, against 2 R d / N, on random linear games."""

import argparse

import numpy as np

from pressure_games.core import PayoffModel, PrincipalModel
from pressure_games.equilibria import (all_fixed_points, check_epsilon_nash, lipschitz_estimate, nash_bound,
                                       rational_approximation)

INERT = PrincipalModel.constant([0.0])


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--instances", type=int, default=100)
    ap.add_argument("--N", type=int, nargs="+", default=[50, 100, 200])
    ap.add_argument("--seed", type=int, default=8)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    ratios = {N: [] for N in args.N}
    for k in range(args.instances):
        d = 2 + k % 3
        pay = PayoffModel.tabular(rng.normal(size=d), x_coef=2 * rng.normal(size=(d, d)))
        R_hat = lipschitz_estimate(pay)
        for rec in all_fixed_points(pay, INERT, n_starts=8, seed=k):
            if not rec.in_hat:
                continue
            for N in args.N:
                eps = check_epsilon_nash(rational_approximation(rec.x, N), pay, INERT, N)
                ratios[N].append(eps / nash_bound(R_hat, d, N))
    for N, r in ratios.items():
        r = np.asarray(r)
        print(f"N={N:4d}  points={r.size:4d}  eps/bound: max {r.max():.3f}  median {np.median(r):.3f}  "
              f"zero {np.mean(r == 0):.0%}")


if __name__ == "__main__":
    main()
