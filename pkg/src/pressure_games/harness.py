"""Law-of-large-numbers experiments: Monte-Carlo error against the kinetic limit across N."""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import OccupationState, PrincipalModel
from .equilibria import rational_approximation
from .kinetic import DriftSpec, StepConfig, integrate
from .markov import final_states
from .principal import ValueTable, value_iterate, value_iterate_markov
from .rng import derive_seed

# guaranteed decay orders, by regularity of the observable
POPULATION_ORDERS = {"smooth": 0.5, "lipschitz": 1.0 / 3.0}
GROWTH_ORDERS = {"smooth": 1.0 / 3.0, "lipschitz": 0.2, "smooth_f2": 1.0, "lipschitz_f2": 1.0 / 3.0}
VALUE_ORDER = 1.0 / 3.0
NOISE_SIGMAS = 3.0
ROUNDOFF = 1e-12  # errors this small are float noise even when the stderr is 0
MONOTONE_SIGMAS = 2.0
ORDER_SLACK = 0.1
BLOCKED_FRACTION = 1e-3


@dataclass
class RateReport:
    label: str
    N_values: list
    errors: list
    stderrs: list
    bound_order: float
    fitted_order: Optional[float] = None
    noise_dominated: list = field(default_factory=list)
    monotone: bool = True
    passed: bool = False
    reference_orders: dict = field(default_factory=dict)
    invalid: str = ""
    meta: dict = field(default_factory=dict)

    def verdict(self) -> str:
        if self.invalid:
            return "INVALID"
        return "PASS" if self.passed else "FAIL"

    def summary(self) -> str:
        order = "skipped" if self.fitted_order is None else f"{self.fitted_order:.3f}"
        return (f"{self.label}: {self.verdict()} fitted order {order} (bound {self.bound_order:.3f}),"
                f" monotone={self.monotone}")

    def to_dict(self) -> dict:
        return {"label": self.label, "N_values": list(map(int, self.N_values)),
                "errors": list(map(float, self.errors)), "stderrs": list(map(float, self.stderrs)),
                "fitted_order": self.fitted_order, "bound_order": self.bound_order,
                "noise_dominated": list(map(bool, self.noise_dominated)), "monotone": self.monotone,
                "verdict": self.verdict(), "reference_orders": self.reference_orders,
                "invalid": self.invalid, "meta": self.meta}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["N", "error", "stderr"])
        for n, e, s in zip(self.N_values, self.errors, self.stderrs):
            w.writerow([int(n), repr(float(e)), repr(float(s))])
        return buf.getvalue()


def fit_order(N_values, errors, stderrs):
    """Decay order from a weighted log-log least-squares line.

    A point whose error lies within 3 standard errors (plus 1e-12 of
    roundoff) of zero is treated as noise and left out. The log of an error with standard error s has
    standard error s / error, so each point is weighted by (error / s)^2.
    Returns (order or None, noise flags).
    """
    N = np.asarray(N_values, float)
    e = np.asarray(errors, float)
    s = np.asarray(stderrs, float)
    noise = e < NOISE_SIGMAS * s + ROUNDOFF
    use = ~noise
    if use.sum() < 2:
        return None, noise.tolist()
    w = np.where(s[use] > 0, (e[use] / np.where(s[use] > 0, s[use], 1.0)) ** 2, 1e12)
    X = np.log(N[use])
    Y = np.log(e[use])
    A = np.stack([np.ones_like(X), X], axis=1)
    sw = np.sqrt(w)
    coef = np.linalg.lstsq(A * sw[:, None], Y * sw, rcond=None)[0]
    return float(-coef[1]), noise.tolist()


def is_monotone(errors, stderrs) -> bool:
    e = np.asarray(errors, float)
    s = np.asarray(stderrs, float)
    slack = MONOTONE_SIGMAS * np.sqrt(s[1:] ** 2 + s[:-1] ** 2)
    return bool(np.all(e[1:] <= e[:-1] + slack + 1e-15))


def make_report(label, N_values, errors, stderrs, bound_order, reference_orders=None, meta=None) -> RateReport:
    if len(N_values) < 2 or np.any(np.diff(N_values) <= 0):
        raise ValueError("need at least two increasing N values")
    order, noise = fit_order(N_values, errors, stderrs)
    mono = is_monotone(errors, stderrs)
    ok = mono and (order is None or order >= bound_order - ORDER_SLACK)
    return RateReport(label, list(N_values), [float(v) for v in errors], [float(v) for v in stderrs],
                      bound_order, order, noise, mono, ok, reference_orders or {}, "", meta or {})


def _ensemble(model, x0, principal, t, g, n_runs, seed, threads):
    X, blk = final_states(model, x0, principal, t, n_runs, seed, threads)
    vals = np.array([float(g(x)) for x in X])
    # mean about the first value: exact for a constant observable
    mean = vals[0] + float(np.mean(vals - vals[0]))
    return mean, float(vals.std(ddof=1) / np.sqrt(n_runs)), float(blk.max(initial=0.0))


def lln_experiment(model, x, principal: PrincipalModel, g: Callable, t: float, N_values: Sequence[int],
                   n_runs: int, master_seed: int, regularity: str = "lipschitz",
                   ode_value: Optional[Callable] = None, threads: Optional[int] = None,
                   step: StepConfig = StepConfig()) -> RateReport:
    """|E g(X_N(t, x(N))) - g(X_t(x(N)))| for each N, with x(N) the lattice rounding of x.

    The ensemble for the k-th N uses master seed derive_seed(master_seed, k).
    `ode_value(x_N)` replaces the integrator when a closed form is known.
    """
    if regularity not in POPULATION_ORDERS:
        raise ValueError(f"regularity must be one of {sorted(POPULATION_ORDERS)}")
    drift = DriftSpec.for_model(model)
    errs, ses = [], []
    for k, N in enumerate(N_values):
        x0 = rational_approximation(x, int(N))
        mean, se, _ = _ensemble(model, x0, principal, t, g, n_runs, derive_seed(master_seed, k), threads)
        ref = ode_value(x0.x) if ode_value is not None else float(g(integrate(drift, x0.x, principal, t, step).x[-1]))
        errs.append(abs(mean - ref))
        ses.append(se)
    return make_report("lln", list(N_values), errs, ses, POPULATION_ORDERS[regularity],
                       dict(POPULATION_ORDERS), {"t": t, "n_runs": n_runs, "master_seed": master_seed,
                                               "regularity": regularity})


def growth_lln_experiment(model_for_h: Callable, g: Callable, t: float, h_values: Sequence[float],
                          n_runs: int, master_seed: int, principal: PrincipalModel,
                          regularity: str = "smooth", ode_value: Optional[Callable] = None,
                          threads: Optional[int] = None, step: StepConfig = StepConfig()) -> RateReport:
    """The countable-state analogue of `lln_experiment`, indexed by N = 1/h.

    `model_for_h(h)` returns (model, OccupationState start). A run whose
    largest blocked rate times t reaches 1e-3 of the initial agent mass is
    reported invalid.
    """
    if regularity not in GROWTH_ORDERS:
        raise ValueError(f"regularity must be one of {sorted(GROWTH_ORDERS)}")
    errs, ses, Ns = [], [], []
    invalid = ""
    blocked = []
    for k, h in enumerate(h_values):
        model, x0 = model_for_h(h)
        mean, se, blk = _ensemble(model, x0, principal, t, g, n_runs, derive_seed(master_seed, k), threads)
        blocked.append(blk)
        mass = max(x0.mass, 1)
        if blk * t >= BLOCKED_FRACTION * mass:
            invalid = f"blocked rate {blk:.3g} at h={h} exceeds {BLOCKED_FRACTION} of the initial mass {mass}"
            warnings.warn(invalid)
        if ode_value is not None:
            ref = ode_value(x0.x)
        else:
            ref = float(g(integrate(DriftSpec.for_model(model), x0.x, principal, t, step).x[-1]))
        errs.append(abs(mean - ref))
        ses.append(se)
        Ns.append(int(round(1.0 / h)))
    rep = make_report("growth_lln", Ns, errs, ses, GROWTH_ORDERS[regularity], dict(GROWTH_ORDERS),
                      {"t": t, "n_runs": n_runs, "master_seed": master_seed, "regularity": regularity,
                       "blocked_rate_max": blocked})
    if invalid:
        rep.invalid = invalid
        rep.passed = False
    return rep


def value_convergence_experiment(V0: ValueTable, n: int, tau: float, model, principal: PrincipalModel,
                                 N_values: Sequence[int], n_runs: int, master_seed: int, probe,
                                 b_grid=None) -> RateReport:
    """|V_n^N(x(N)) - V_n(x)| at the probe node, N-chain values by the Monte-Carlo Shapley operator.

    The reported standard error is that of the last Monte-Carlo step at the
    probe node; the bound order refers to (n / N)^(1/3).
    """
    probe = np.asarray(probe, float)
    V_lim, _ = value_iterate(V0, n, DriftSpec.for_model(model), principal, tau, b_grid=b_grid, refine=False)
    nodes = V0.x_nodes()
    node = int(np.argmin(np.abs(nodes - probe).sum(axis=1)))
    target = float(V_lim.values.ravel()[node])
    errs, ses = [], []
    for k, N in enumerate(N_values):
        if n == 0:
            errs.append(0.0)
            ses.append(0.0)
            continue
        VN = value_iterate_markov(V0, n, model, principal, tau, int(N), n_runs,
                                  derive_seed(master_seed, k), b_grid)
        errs.append(abs(float(VN.values.ravel()[node]) - target))
        ses.append(float(VN.meta["stderr"][node]))
    return make_report("value_convergence", list(N_values), errs, ses, VALUE_ORDER, {"value": VALUE_ORDER},
                       {"n": n, "tau": tau, "probe": nodes[node].tolist(), "n_runs": n_runs,
                        "master_seed": master_seed})


def logistic_value(x2: float, c: float, t: float) -> float:
    """Closed-form solution of x' = c x (1 - x) from x2 at time t."""
    e = np.exp(c * t)
    return float(x2 * e / (1.0 - x2 + x2 * e))
