"""Command-line entry point: pressure-games <subcommand> --config FILE --out DIR."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .core import ConfigError, DomainError, NumericalError
from .equilibria import (all_fixed_points, check_epsilon_nash, control_samples, equilibrium_report,
                         lipschitz_estimate, nash_bound, rational_approximation)
from .harness import growth_lln_experiment, lln_experiment
from .kinetic import DriftSpec, StepConfig, integrate
from .markov import CompositeModel, KthOrderModel, MulticlassModel, PairwiseModel, run_ensemble, simulate
from .principal import ValueTable, discounted_value, value_iterate

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_FAIL = 0, 2, 3, 4


def _write(out: Path, name: str, text: str):
    (out / name).write_text(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def _step(cfg) -> StepConfig:
    n = cfg.numerics
    return StepConfig(n.method, n.rtol, n.atol, n.h_ode)


def cmd_simulate(cfg, out: Path, threads):
    model = C.build_model(cfg)
    principal = C.build_principal(cfg)
    x0 = C.build_initial(cfg, model)
    e = cfg.experiment
    tr = simulate(model, x0, principal, e.t_end, e.master_seed)
    tr.to_csv(out / "trajectory.csv")
    summary = {"events": tr.meta["events"], "blocked_rate_max": tr.meta["blocked_rate_max"],
               "suppressed": tr.meta["suppressed"], "seed": e.master_seed, "t_end": e.t_end,
               "final_state": tr.x[-1].tolist()}
    _write(out, "summary.json", _json(summary))
    if e.n_runs >= 2:
        res = run_ensemble(model, x0, principal, e.t_end, C.build_observable(e.g), e.n_runs, e.master_seed, threads)
        _write(out, "ensemble.json", res.to_json() + "\n")
    return EXIT_OK


def cmd_integrate(cfg, out: Path, threads):
    model = C.build_model(cfg)
    principal = C.build_principal(cfg)
    drift = DriftSpec.for_model(model)
    tr = integrate(drift, C.initial_x(cfg, model), principal, cfg.experiment.t_end, _step(cfg))
    tr.to_csv(out / "trajectory.csv")
    summary = {"steps": len(tr) - 1, "t_end": cfg.experiment.t_end, "final_state": tr.x[-1].tolist(),
               "renormalization": tr.meta.get("renormalization", [])}
    _write(out, "summary.json", _json(summary))
    return EXIT_OK


def _population_payoff(model):
    if isinstance(model, (PairwiseModel, KthOrderModel)):
        return model.payoff
    raise ConfigError("equilibria and plan need a single-class population model (pairwise or kth_order)")


def cmd_equilibria(cfg, out: Path, threads):
    model = C.build_model(cfg)
    payoff = _population_payoff(model)
    principal = C.build_principal(cfg)
    recs = all_fixed_points(payoff, principal, cfg.numerics.n_starts, cfg.experiment.master_seed)
    report = json.loads(equilibrium_report(recs))
    extra = {}
    if cfg.experiment.nash_N:
        R_hat = lipschitz_estimate(payoff, control_samples(principal))
        extra["R_hat"] = R_hat
        for rec, row in zip(recs, report):
            row["nash"] = []
            for N in cfg.experiment.nash_N:
                xN = rational_approximation(rec.x, N)
                eps = check_epsilon_nash(xN, payoff, principal, N)
                row["nash"].append({"N": N, "nash_eps": eps, "bound": nash_bound(R_hat, payoff.d, N),
                                    "counts": xN.counts.tolist()})
    _write(out, "equilibria.json", _json({"records": report, **extra}))
    return EXIT_OK


def cmd_plan(cfg, out: Path, threads):
    model = C.build_model(cfg)
    _population_payoff(model)
    principal = C.build_principal(cfg)
    e, n = cfg.experiment, cfg.numerics
    drift = DriftSpec.for_model(model)
    b_grid = None
    if principal.r == 1:
        lo, hi = principal.control_box[0]
        b_grid = np.linspace(lo, hi, n.b_points if hi > lo else 1)
    kw = dict(b_grid=b_grid, refine=n.refine)
    if e.beta is not None:
        res = discounted_value(drift, principal, e.beta, e.tau, tol=1e-8, m=n.m, **kw)
        V, pols, log = res.value, [res.policy], res.changes
    else:
        V0 = ValueTable.zeros(drift.dim, n.m)
        V, pols = value_iterate(V0, e.horizon, drift, principal, e.tau, **kw)
        log = V.meta.get("sup_change", [])
    _write(out, "value.json", _json(V.to_dict()))
    _write(out, "policy.json", _json([p.to_dict() for p in pols]))
    with open(out / "iterations.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "sup_change"])
        for i, c in enumerate(log, 1):
            w.writerow([i, repr(float(c))])
    return EXIT_OK


def cmd_lln(cfg, out: Path, threads):
    e = cfg.experiment
    principal = C.build_principal(cfg)
    g = C.build_observable(e.g)
    if cfg.model.family in ("pairwise", "kth_order", "multiclass"):
        model = C.build_model(cfg)
        x = C.initial_x(cfg, model)
        rep = lln_experiment(model, x, principal, g, e.t_end, e.N_values, e.n_runs, e.master_seed,
                             e.regularity if e.regularity in ("smooth", "lipschitz") else "lipschitz",
                             threads=threads, step=_step(cfg))
    else:
        hs = e.h_values or [1.0 / N for N in e.N_values]
        x = np.asarray(cfg.initial.x if cfg.initial.x is not None else
                       np.asarray(cfg.initial.counts, float) * C._h(cfg), float)

        def model_for_h(h):
            model = C.build_model(cfg, h)
            return model, C.OccupationState(np.round(x / h).astype(np.int64), h, model.dim)
        rep = growth_lln_experiment(model_for_h, g, e.t_end, hs, e.n_runs, e.master_seed, principal,
                                    e.regularity, threads=threads, step=_step(cfg))
    _write(out, "rate_report.json", rep.to_json() + "\n")
    _write(out, "rate_report.csv", rep.to_csv())
    print(rep.summary())
    return EXIT_OK if rep.passed else EXIT_FAIL


COMMANDS = {"simulate": cmd_simulate, "integrate": cmd_integrate, "equilibria": cmd_equilibria,
            "plan": cmd_plan, "lln": cmd_lln}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pressure-games", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in list(COMMANDS) + ["validate"]:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="scenario file (YAML or JSON)")
        if name != "validate":
            s.add_argument("--out", required=True, help="output directory")
            s.add_argument("--seed", type=int, default=None, help="override experiment.master_seed")
            s.add_argument("--threads", type=int, default=None, help="worker cap (default: all cores)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = C.load_config(args.config)
    except C.ConfigErrors as exc:
        for m in exc.messages:
            print(f"error: {m}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print(f"{args.config}: ok")
        return EXIT_OK
    if args.seed is not None:
        cfg = cfg.model_copy(update={"experiment": cfg.experiment.model_copy(update={"master_seed": args.seed})})
    threads = args.threads or os.cpu_count() or 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out, "config.resolved.yaml", C.dump_config(cfg))
    try:
        return COMMANDS[args.command](cfg, out, threads)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
