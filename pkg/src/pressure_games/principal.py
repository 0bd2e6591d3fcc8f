"""Decision layer of the principal: best response, Shapley iterations and the b' = u control problem.

Value functions live on a regular grid over the free coordinates x_2..x_d
(x_1 = 1 - sum). Cube nodes outside the simplex carry the value of their
projection onto it, so every node is a genuine evaluation point and
multilinear interpolation reproduces node values exactly.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (ConfigError, NumericalError, PayoffModel, PrincipalModel, _multilinear, clamp_to_simplex)
from .equilibria import lattice_point
from .kinetic import DriftSpec, flow
from .markov import PairwiseModel, simulate_final
from .response import _golden_max, best_response, current_control  # noqa: F401  (re-exported)
from .rng import derive_seeds

MAX_D = 4


# --------------------------------------------------------------------------
# tables


def _x_axes(d, m):
    if d > MAX_D:
        raise ConfigError(f"value tables support d <= {MAX_D} (got d={d})")
    if m < 1:
        raise ConfigError("grid resolution m must be at least 1")
    return [np.linspace(0.0, 1.0, m + 1) for _ in range(d - 1)]


def _project(free):
    """Simplex state for free coordinates (..., d-1), projected when outside."""
    x = np.concatenate([1.0 - free.sum(axis=-1, keepdims=True), free], axis=-1)
    return clamp_to_simplex(x)


@dataclass
class ValueTable:
    """Values on the grid x_axes (free coordinates) x b_axes, multilinear in between."""

    d: int
    x_axes: list
    values: np.ndarray
    b_axes: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        shape = tuple(len(a) for a in self.x_axes) + tuple(len(a) for a in self.b_axes)
        if self.values.shape != shape:
            raise ConfigError(f"value array has shape {self.values.shape}, grid needs {shape}")
        if not np.all(np.isfinite(self.values)):
            raise NumericalError("value table holds non-finite entries")

    @property
    def m(self) -> int:
        return len(self.x_axes[0]) - 1 if self.x_axes else 0

    @property
    def shape(self):
        return self.values.shape

    @classmethod
    def zeros(cls, d, m, b_axes=()):
        xa = _x_axes(d, m)
        ba = [np.asarray(a, float) for a in b_axes]
        return cls(d, xa, np.zeros(tuple(len(a) for a in xa + ba)), ba)

    @classmethod
    def from_function(cls, fn: Callable, d, m, b_axes=()):
        """Table of fn(x) (or fn(x, b) when b axes are given) at the nodes."""
        t = cls.zeros(d, m, b_axes)
        X, B = t.node_states()
        vals = fn(X) if not t.b_axes else fn(X, B)
        t.values = np.asarray(vals, float).reshape(t.shape)
        return t

    def x_nodes(self) -> np.ndarray:
        """Simplex states of the x-nodes, row-major, shape (n_x, d)."""
        if not self.x_axes:
            return np.ones((1, 1))
        free = np.array(list(itertools.product(*self.x_axes)))
        return _project(free)

    def b_nodes(self) -> np.ndarray:
        if not self.b_axes:
            return np.zeros((1, 0))
        return np.array(list(itertools.product(*self.b_axes)))

    def node_states(self):
        """(X, B) for every table node in row-major order."""
        X, Bn = self.x_nodes(), self.b_nodes()
        return np.repeat(X, Bn.shape[0], axis=0), np.tile(Bn, (X.shape[0], 1))

    def __call__(self, x, b=None) -> np.ndarray:
        x = clamp_to_simplex(np.asarray(x, dtype=float))
        q = x[..., 1:]
        if self.b_axes:
            b = np.asarray(b, dtype=float)
            q = np.concatenate([np.broadcast_to(q, np.broadcast_shapes(q.shape[:-1], b.shape[:-1]) + q.shape[-1:]),
                                np.broadcast_to(b, np.broadcast_shapes(q.shape[:-1], b.shape[:-1]) + b.shape[-1:])],
                               axis=-1)
        axes = self.x_axes + self.b_axes
        if not axes:
            return np.broadcast_to(self.values, q.shape[:-1]).copy()
        return _multilinear(axes, self.values, q)

    def sup_distance(self, other: "ValueTable") -> float:
        return float(np.max(np.abs(self.values - other.values)))

    def to_dict(self) -> dict:
        return {"d": self.d, "m": self.m, "x_axes": [a.tolist() for a in self.x_axes],
                "b_axes": [a.tolist() for a in self.b_axes], "shape": list(self.shape),
                "values": self.values.ravel().tolist(), "meta": self.meta}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass
class PolicyTable:
    """Grid action at each node; ties resolved toward the lowest grid index."""

    d: int
    x_axes: list
    actions: np.ndarray
    box: np.ndarray
    b_axes: list = field(default_factory=list)

    def __post_init__(self):
        lo, hi = self.box[:, 0], self.box[:, 1]
        if np.any(self.actions < lo - 1e-12) or np.any(self.actions > hi + 1e-12):
            raise NumericalError("policy action outside its box")

    def action(self, x, b=None) -> np.ndarray:
        """Action at the nearest node (grid policies are piecewise constant)."""
        x = clamp_to_simplex(np.asarray(x, float))
        q = list(x[1:])
        if self.b_axes:
            q += list(np.atleast_1d(b))
        idx = tuple(int(np.argmin(np.abs(ax - v))) for ax, v in zip(self.x_axes + self.b_axes, q))
        return self.actions[idx]

    def grid_modulus(self) -> float:
        """Largest action jump between neighbouring nodes per unit of grid distance."""
        out = 0.0
        axes = self.x_axes + self.b_axes
        for a, ax in enumerate(axes):
            if len(ax) < 2:
                continue
            jump = np.abs(np.diff(self.actions, axis=a)).max()
            out = max(out, float(jump) / float(ax[1] - ax[0]))
        return out

    def to_dict(self) -> dict:
        return {"d": self.d, "x_axes": [a.tolist() for a in self.x_axes],
                "b_axes": [a.tolist() for a in self.b_axes], "shape": list(self.actions.shape),
                "actions": self.actions.ravel().tolist(), "grid_modulus": self.grid_modulus()}


def policy_sequence(tables: Sequence[PolicyTable]) -> Callable:
    """policy(k, x) playing tables[k] at decision step k (last table held afterwards)."""
    def policy(k, x):
        return tables[min(int(k), len(tables) - 1)].action(x)
    return policy


# --------------------------------------------------------------------------
# helpers


def as_drift(dynamics) -> DriftSpec:
    if isinstance(dynamics, DriftSpec):
        return dynamics
    if isinstance(dynamics, PayoffModel):
        return DriftSpec.for_model(PairwiseModel(dynamics, 1.0))
    return DriftSpec.for_model(dynamics)


def control_grid(principal: PrincipalModel, points: int = 11) -> np.ndarray:
    axes = [np.linspace(lo, hi, points if hi > lo else 1) for lo, hi in principal.control_box]
    return np.array(list(itertools.product(*axes)))


def _flow_nodes(drift, X, B, tau, rtol, atol):
    try:
        return flow(drift, X, B, tau, rtol, atol)
    except NumericalError:
        for i in range(X.shape[0]):
            try:
                flow(drift, X[i:i + 1], B[i:i + 1], tau, rtol, atol)
            except NumericalError as exc:
                raise NumericalError(f"integration failed at node x={X[i].tolist()}, b={B[i].tolist()}: {exc}") from exc
        raise


def _reward(principal, X, B):
    return np.broadcast_to(np.asarray(principal.reward(X, B), dtype=float), X.shape[:1])


# --------------------------------------------------------------------------
# Shapley operator on the kinetic limit


def shapley_apply(V: ValueTable, dynamics, principal: PrincipalModel, tau: float,
                  b_grid: Optional[np.ndarray] = None, refine: bool = True, discount: float = 1.0,
                  rtol: float = 1e-10, atol: float = 1e-12):
    """One Bellman step SV(x) = max_b [tau B(x, b) + discount * V(X(tau, x, b))] at every node.

    The max is over `b_grid` (lowest index wins ties); with `refine` and a
    one-dimensional control, a golden-section search on the two grid cells
    around the grid argmax improves it when it does better.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    drift = as_drift(dynamics)
    Bg = control_grid(principal) if b_grid is None else np.asarray(b_grid, float).reshape(-1, principal.r)
    X = V.x_nodes()
    n, nb = X.shape[0], Bg.shape[0]
    Xr = np.repeat(X, nb, axis=0)
    Br = np.tile(Bg, (n, 1))
    Xt = _flow_nodes(drift, Xr, Br, tau, rtol, atol)
    Q = (tau * _reward(principal, Xr, Br) + discount * V(Xt)).reshape(n, nb)
    k = np.argmax(Q, axis=1)
    best = Q[np.arange(n), k]
    act = Bg[k].copy()
    if refine and principal.r == 1 and nb > 1:
        lo = Bg[np.maximum(k - 1, 0), 0]
        hi = Bg[np.minimum(k + 1, nb - 1), 0]

        def obj(bv):
            Bq = bv[:, None]
            return tau * _reward(principal, X, Bq) + discount * V(_flow_nodes(drift, X, Bq, tau, rtol, atol))
        bref = _golden_max(obj, lo, hi, tol=1e-8)
        qref = obj(bref)
        better = qref > best
        best = np.where(better, qref, best)
        act[better, 0] = bref[better]
    shape = V.shape
    newV = ValueTable(V.d, V.x_axes, best.reshape(shape), meta={"tau": tau})
    pol = PolicyTable(V.d, V.x_axes, act.reshape(shape + (principal.r,)), principal.control_box)
    return newV, pol


def value_iterate(V0: ValueTable, n: int, dynamics, principal: PrincipalModel, tau: float, **kw):
    """V_n = S^n V_0 with the decision rules in time order (first step first)."""
    if n < 0:
        raise ValueError("n must be non-negative")
    V = V0
    policies, log = [], []
    for _ in range(n):
        V_new, pol = shapley_apply(V, dynamics, principal, tau, **kw)
        log.append(V_new.sup_distance(V))
        V = V_new
        policies.append(pol)
    V.meta["sup_change"] = log
    return V, policies[::-1]


@dataclass
class DiscountedResult:
    value: ValueTable
    policy: Optional[PolicyTable]
    changes: list
    ratios: list
    sweeps: int


def discounted_value(dynamics, principal: PrincipalModel, beta: float, tau: float, tol: float = 1e-8,
                     m: int = 10, V0: Optional[ValueTable] = None, max_sweeps: int = 10_000,
                     min_sweeps: int = 0, **kw) -> DiscountedResult:
    """Fixed point of V = max_b [tau B + beta V(X(tau, ., b))] by value iteration.

    Stops once the sup-norm change falls below tol * (1 - beta) (after at
    least `min_sweeps` sweeps); three consecutive change ratios above
    beta + 1e-6 raise NumericalError.
    """
    if not 0.0 < beta < 1.0:
        raise ConfigError("beta must lie in (0, 1)")
    drift = as_drift(dynamics)
    V = V0 if V0 is not None else ValueTable.zeros(drift.dim, m)
    changes, ratios = [], []
    bad = 0
    pol = None
    for sweep in range(1, max_sweeps + 1):
        V_new, pol = shapley_apply(V, drift, principal, tau, discount=beta, **kw)
        ch = V_new.sup_distance(V)
        if changes and changes[-1] > 1e-12 * max(1.0, float(np.abs(V_new.values).max())):
            r = ch / changes[-1]
            ratios.append(r)
            bad = bad + 1 if r > beta + 1e-6 else 0
            if bad >= 3:
                raise NumericalError(f"value iteration is not contracting: change ratio {r:.6f} > beta={beta}")
        changes.append(ch)
        V = V_new
        if ch < tol * (1.0 - beta) and sweep >= min_sweeps:
            break
    else:
        raise NumericalError(f"no convergence within {max_sweeps} sweeps")
    V.meta.update({"beta": beta, "sup_change": changes})
    return DiscountedResult(V, pol, changes, ratios, len(changes))


# --------------------------------------------------------------------------
# control problem b' = u


def control_value_iterate(S_T: Callable, n: int, t: float, T: float, dynamics, J: Callable,
                          principal: PrincipalModel, u_grid, m: int = 10, b_points: int = 11,
                          rtol: float = 1e-10, atol: float = 1e-12):
    """Backward recursion for the joint state (x, b) with b_{k+1} = clip(b_k + u_k tau).

    Maximizes tau J(x, b, u) + V(X(tau, x, b), b + u tau) over the u grid at
    every (x, b) node; V_0 = S_T(x, b). Returns the value table at time t and
    the control tables in time order.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    drift = as_drift(dynamics)
    tau = (T - t) / n
    box = principal.control_box
    b_axes = [np.linspace(lo, hi, b_points if hi > lo else 1) for lo, hi in box]
    U = np.asarray(u_grid, float).reshape(-1, box.shape[0])
    V = ValueTable.from_function(S_T, drift.dim, m, b_axes)
    X, Bn = V.node_states()
    Xt = _flow_nodes(drift, X, Bn, tau, rtol, atol)
    nn, nu = X.shape[0], U.shape[0]
    Xr, Br = np.repeat(X, nu, axis=0), np.repeat(Bn, nu, axis=0)
    Ur = np.tile(U, (nn, 1))
    Xtr = np.repeat(Xt, nu, axis=0)
    Bnext = np.clip(Br + Ur * tau, box[:, 0], box[:, 1])
    run = tau * np.broadcast_to(np.asarray(J(Xr, Br, Ur), float), (nn * nu,))
    policies = []
    for _ in range(n):
        Q = (run + V(Xtr, Bnext)).reshape(nn, nu)
        k = np.argmax(Q, axis=1)
        V = ValueTable(V.d, V.x_axes, Q[np.arange(nn), k].reshape(V.shape), V.b_axes, {"tau": tau})
        policies.append(PolicyTable(V.d, V.x_axes, U[k].reshape(V.shape + (U.shape[1],)),
                                    np.stack([U.min(axis=0), U.max(axis=0)], axis=-1), V.b_axes))
    return V, policies[::-1]


# --------------------------------------------------------------------------
# Monte-Carlo Shapley operator for the N-agent chain


def shapley_apply_markov(V: ValueTable, model, principal: PrincipalModel, tau: float, N: int,
                         n_runs: int, seed: int, b_grid: Optional[np.ndarray] = None):
    """S[N]V(x) = max_b [tau B(x_N, b) + E V(X_N(tau, x_N, b))] with x_N the lattice point of each node.

    Every (node, b) pair gets n_runs replicates; replicate r of pair p is
    seeded by derive_seed(seed, p * n_runs + r). All replicates advance in
    one lockstep call. The table's meta holds the standard errors.
    """
    if isinstance(model, PayoffModel):
        model = PairwiseModel(model, 1.0)
    Bg = control_grid(principal) if b_grid is None else np.asarray(b_grid, float).reshape(-1, principal.r)
    X = V.x_nodes()
    C = np.array([lattice_point(x, N).counts for x in X])
    XN = C / N
    n, nb = X.shape[0], Bg.shape[0]
    pairs_C = np.repeat(C, nb, axis=0)
    pairs_B = np.tile(Bg, (n, 1))
    reps_C = np.repeat(pairs_C, n_runs, axis=0)
    reps_B = np.repeat(pairs_B, n_runs, axis=0)
    seeds = derive_seeds(seed, reps_C.shape[0])
    fixed = PrincipalModel(principal.reward, principal.control_box, "fixed", Bg[0])
    CT, _, _ = simulate_final(model, reps_C, fixed, tau, seeds, B=reps_B)
    vals = V(CT / N).reshape(n * nb, n_runs)
    mean = vals.mean(axis=1)
    se = vals.std(axis=1, ddof=1) / np.sqrt(n_runs) if n_runs > 1 else np.zeros(n * nb)
    Q = (tau * _reward(principal, np.repeat(XN, nb, axis=0), pairs_B) + mean).reshape(n, nb)
    k = np.argmax(Q, axis=1)
    best = Q[np.arange(n), k]
    se_best = se.reshape(n, nb)[np.arange(n), k]
    newV = ValueTable(V.d, V.x_axes, best.reshape(V.shape),
                      meta={"tau": tau, "N": N, "n_runs": n_runs, "stderr": se_best.tolist()})
    pol = PolicyTable(V.d, V.x_axes, Bg[k].reshape(V.shape + (principal.r,)), principal.control_box)
    return newV, pol


def value_iterate_markov(V0: ValueTable, n: int, model, principal: PrincipalModel, tau: float, N: int,
                         n_runs: int, seed: int, b_grid=None):
    """n steps of S[N]; step k uses master seed seed + k."""
    V = V0
    for k in range(n):
        V, _ = shapley_apply_markov(V, model, principal, tau, N, n_runs, seed + k, b_grid)
    return V
