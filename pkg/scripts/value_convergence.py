"""Value of the n-step control problem: Monte-Carlo Shapley iterations on the N-chain against the limit."""

import argparse

import numpy as np

from pressure_games.core import PayoffModel, PrincipalModel
from pressure_games.harness import value_convergence_experiment
from pressure_games.markov import PairwiseModel
from pressure_games.principal import ValueTable

GRID = np.array([0.0, 0.5, 1.0])


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=3)
    ap.add_argument("--tau", type=float, default=0.3)
    ap.add_argument("--N", type=int, nargs="+", default=[100, 400, 1600])
    ap.add_argument("--runs", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--m", type=int, default=4)
    args = ap.parse_args()

    # the control raises the advantage of strategy 2 from 1 to 3; the principal likes strategy 2 but pays for b
    pay = PayoffModel.tabular([[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]], b_axes=[GRID])
    pr = PrincipalModel(lambda x, b: 2.0 * x[..., 1] - 3.0 * (b[..., 0] - 0.5) ** 2, [[0.0, 1.0]], "best_response")
    V0 = ValueTable.from_function(lambda X: X[:, 1], 2, args.m)
    rep = value_convergence_experiment(V0, args.n, args.tau, PairwiseModel(pay, 1.0), pr, args.N, args.runs,
                                       args.seed, [0.75, 0.25], b_grid=GRID)
    for N, e, s in zip(rep.N_values, rep.errors, rep.stderrs):
        print(f"N={N:5d}  |V_N - V| = {e:.2e}  stderr={s:.1e}  (n/N)^(1/3) = {(args.n / N) ** (1 / 3):.3f}")
    print(rep.summary())


if __name__ == "__main__":
    main()
