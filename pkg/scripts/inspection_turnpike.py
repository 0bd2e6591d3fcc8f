"""Rest points of the inspection game for a sweep of fixed budgets, ranked by the principal's reward."""

import argparse

import numpy as np

from pressure_games import config as C
from pressure_games.equilibria import turnpike_scan


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/inspection.yaml")
    ap.add_argument("--points", type=int, default=11)
    args = ap.parse_args()

    cfg = C.load_config(args.config)
    payoff = C.build_model(cfg).payoff
    principal = C.build_principal(cfg)
    lo, hi = principal.control_box[0]
    entries = turnpike_scan(payoff, principal, np.linspace(lo, hi, args.points)[:, None], n_starts=8)
    for e in entries:
        pts = "  ".join(np.array2string(m.x, precision=3) for m in e.members)
        print(f"b={e.b[0]:.2f}  best B={e.best_value:+.4f}  at {np.array2string(e.best_x, precision=3)}  | {pts}")


if __name__ == "__main__":
    main()
