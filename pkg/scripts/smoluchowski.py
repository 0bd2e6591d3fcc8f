"""Constant-kernel coagulation: truncated ODE against m_0(t) = 1/(1 + t), then the chain across h."""

import argparse

import numpy as np

from pressure_games.core import KernelSpec, OccupationState, PrincipalModel
from pressure_games.harness import growth_lln_experiment
from pressure_games.kinetic import DriftSpec, integrate, smoluchowski_blocked
from pressure_games.markov import CoalitionModel

INERT = PrincipalModel.constant([0.0])


def coagulation(h, J):
    model = CoalitionModel(KernelSpec.constant(1.0), None, h, J)
    c = np.zeros(J, np.int64)
    c[0] = round(1 / h)
    return model, OccupationState(c, h, J)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--J", type=int, default=256)
    ap.add_argument("--t", type=float, default=1.0)
    ap.add_argument("--h", type=float, nargs="+", default=[1 / 50, 1 / 200, 1 / 800])
    ap.add_argument("--runs", type=int, default=200)
    ap.add_argument("--seed", type=int, default=3)
    args = ap.parse_args()

    model, x0 = coagulation(args.h[-1], args.J)
    tr = integrate(DriftSpec.for_model(model), x0.x / x0.x.sum(), INERT, args.t)
    rate, mass = smoluchowski_blocked(tr, model.kernel)
    exact = 1.0 / (1.0 + args.t)
    print(f"ODE m_0({args.t}) = {tr.x[-1].sum():.9f}  (closed form {exact:.9f}), blocked mass {mass:.1e}")

    rep = growth_lln_experiment(lambda h: coagulation(h, args.J), lambda x: float(np.sum(x)), args.t, args.h,
                                args.runs, args.seed, INERT, "smooth", ode_value=lambda x: exact)
    for N, e, s in zip(rep.N_values, rep.errors, rep.stderrs):
        print(f"1/h={N:5d}  |E m_0 - m_0| = {e:.2e}  stderr={s:.1e}")
    print(rep.summary())


if __name__ == "__main__":
    main()
