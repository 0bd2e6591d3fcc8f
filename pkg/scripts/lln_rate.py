"""Monte-Carlo error of the two-strategy logistic chain against its closed-form limit, across N."""

import argparse
from pathlib import Path

from pressure_games.core import PayoffModel, PrincipalModel
from pressure_games.harness import lln_experiment, logistic_value
from pressure_games.markov import PairwiseModel


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, nargs="+", default=[50, 200, 800, 3200])
    ap.add_argument("--runs", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--t", type=float, default=1.0)
    ap.add_argument("--gap", type=float, default=2.0, help="payoff advantage of strategy 2")
    ap.add_argument("--x2", type=float, default=0.1)
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()

    model = PairwiseModel(PayoffModel.tabular([0.0, args.gap]), 1.0)
    rep = lln_experiment(model, [1 - args.x2, args.x2], PrincipalModel.constant([0.0]), lambda x: x[1], args.t,
                         args.N, args.runs, args.seed, threads=args.threads,
                         ode_value=lambda x: logistic_value(x[1], args.gap, args.t))
    for N, e, s in zip(rep.N_values, rep.errors, rep.stderrs):
        print(f"N={N:6d}  error={e:.3e}  stderr={s:.1e}")
    print(rep.summary())
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "rate_report.json").write_text(rep.to_json() + "\n")
        (args.out / "rate_report.csv").write_text(rep.to_csv())


if __name__ == "__main__":
    main()
