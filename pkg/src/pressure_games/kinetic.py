"""Deterministic limits of the Markov models and an ODE integrator for them.

All drifts are vectorized: a state batch X has shape (R, d) and the matching
controls B shape (R, r). The integrator is an embedded Dormand-Prince 5(4)
pair with step rejection on negative coordinates; a fixed-step RK4 is kept
for order-of-accuracy checks.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (TOL_POS, AttachSpec, ClassStructure, ConfigError, DomainError, KernelSpec,
                   NumericalError, PayoffModel, PrincipalModel, SizePayoff)
from .markov import (AttachmentModel, CoalitionModel, CompositeModel, GrowthModel, GrowthTerm,
                     KthOrderModel, MulticlassModel, PairwiseModel, Trajectory, class_rewards, default_pi)
from .response import best_response, current_control

RENORM_REPORT = 1e-12  # safeguard corrections larger than this are logged

FAMILIES = ("replicator", "kth_order", "multiclass_C1", "multiclass_C2", "growth", "smoluchowski",
            "attachment", "composite")


def _batch(x, b):
    X = np.atleast_2d(np.asarray(x, dtype=float))
    B = np.atleast_2d(np.asarray(b, dtype=float))
    if B.shape[0] != X.shape[0]:
        B = np.broadcast_to(B, (X.shape[0], B.shape[-1]))
    return X, B, np.asarray(x).ndim == 1


# --------------------------------------------------------------------------
# drifts


def replicator_velocity(X, R, kappa):
    """v_j = kappa x_j sum_i x_i (R_j - R_i), evaluated row-wise."""
    total = X.sum(axis=-1, keepdims=True)
    mean = np.sum(X * R, axis=-1, keepdims=True)
    return kappa * X * (R * total - mean)


def drift_replicator(x, payoff: PayoffModel, b, kappa: float = 1.0) -> np.ndarray:
    X, B, single = _batch(x, b)
    v = replicator_velocity(X, payoff.rewards(X, B), kappa)
    return v[0] if single else v


def drift_kth_order(x, payoff: PayoffModel, b, kappa: float = 1.0, K: int = 2,
                    Pi: Optional[Callable] = None) -> np.ndarray:
    """Group-imitation drift.

    A group G of k states carries weight Pi(R_G) prod_{l in G} x_l. The member
    m that beats every other member (higher payoff, or equal payoff and higher
    index) gains k times the weight; every member loses it once.
    """
    X, B, single = _batch(x, b)
    Pi = Pi or default_pi
    d = X.shape[1]
    R = payoff.rewards(X, B)
    v = np.zeros_like(X)
    for k in range(2, K + 1):
        below = np.tril(np.ones((k, k), dtype=bool), -1)   # [a, c]: c < a
        for G in itertools.combinations(range(d), k):
            G = list(G)
            RG = R[:, G]
            w = np.asarray(Pi(RG), float) * np.prod(X[:, G], axis=1)
            Ra, Rc = RG[:, :, None], RG[:, None, :]
            beats = (Rc < Ra) | ((Rc == Ra) & below) | np.eye(k, dtype=bool)
            wins = np.all(beats, axis=2)
            v[:, G] += w[:, None] * (k * wins - 1.0)
    v *= kappa
    return v[0] if single else v


def drift_multiclass(x, payoffs: Sequence[PayoffModel], b, classes: ClassStructure,
                     kappa: Optional[float] = None) -> np.ndarray:
    """Class-major state. C1: kappa_a omega_a times the class replicator; C2: cross-class imitation."""
    X, B, single = _batch(x, b)
    A = classes.num_classes
    d = X.shape[1] // A
    c2 = classes.comm_mode == "C2_full_communication"
    R = class_rewards(payoffs, c2, X, B)
    if c2:
        k = float(kappa if kappa is not None else classes.per_class_kappa[0])
        v = k * X * (R * X.sum(axis=1, keepdims=True) - np.sum(X * R, axis=1, keepdims=True))
    else:
        v = np.empty_like(X)
        for a in range(A):
            s = slice(a * d, (a + 1) * d)
            pref = classes.per_class_kappa[a] * classes.class_fractions[a]
            v[:, s] = replicator_velocity(X[:, s], R[:, s], pref)
    return v[0] if single else v


def drift_growth(x, terms: Sequence[GrowthTerm], b, J_max: Optional[int] = None) -> np.ndarray:
    """f_i assembled term by term: each coefficient adds to its produced states and
    subtracts from its consumed ones (a state listed twice counts twice).
    Terms that reach beyond J_max are dropped, as in the chain, and a term
    consuming an empty state is switched off, the limit of the chain's guard."""
    X, B, single = _batch(x, b)
    J = X.shape[1] if J_max is None else J_max
    f = np.zeros_like(X)
    Xp = np.maximum(X, 0.0)  # integrator stages may dip below zero
    for t in terms:
        if any(i > J for i in t.src + t.dst):
            continue
        c = np.broadcast_to(np.asarray(t.rate(Xp, B), float), (X.shape[0],))
        if np.any(c < 0):
            raise DomainError("growth coefficient is negative")
        if t.src:
            c = np.where(np.all(X[:, [i - 1 for i in t.src]] > 0, axis=1), c, 0.0)
        for j in t.dst:
            f[:, j - 1] += c
        for i in t.src:
            f[:, i - 1] -= c
    return f[0] if single else f


class _SmolIndex:
    """Index helpers for the truncated coagulation/fragmentation sums."""

    def __init__(self, J):
        p = np.arange(J)
        P, Q = np.meshgrid(p, p, indexing="ij")
        self.J = J
        self.valid = (P + Q + 1) < J           # merged size P+Q+2 <= J
        self.target = (P + Q + 1)[self.valid]
        self.P, self.Q = P, Q
        below = Q < P                          # piece size Q+1 < size P+1
        self.split_mask = below
        self.piece_a = Q[below]
        self.piece_b = (P - Q - 1)[below]
        self.split_src = P[below]
        self.sizes = p + 1.0


_SMOL = {}


def _smol_index(J):
    if J not in _SMOL:
        _SMOL[J] = _SmolIndex(J)
    return _SMOL[J]


def smoluchowski_parts(x, kernel: KernelSpec, payoff: Optional[SizePayoff], b):
    """(velocity, blocked event rate, blocked mass rate) for one state x of length J."""
    x = np.asarray(x, dtype=float)
    J = x.size
    ix = _smol_index(J)
    R = payoff.values(x, b, 2 * J) if payoff is not None else None
    C = kernel.merge_matrix(x, b, R, J)
    F = kernel.split_matrix(x, b, R, J)
    M = C * np.outer(x, x)
    v = np.zeros(J)
    Mv = np.where(ix.valid, M, 0.0)
    v += np.bincount(ix.target, weights=M[ix.valid], minlength=J)[:J]
    v -= Mv.sum(axis=1) + Mv.sum(axis=0)
    W = F * x[:, None]
    w = W[ix.split_mask]
    v += np.bincount(ix.piece_a, weights=w, minlength=J)[:J]
    v += np.bincount(ix.piece_b, weights=w, minlength=J)[:J]
    v -= np.bincount(ix.split_src, weights=w, minlength=J)[:J]
    blocked = np.where(ix.valid, 0.0, M)
    blocked_mass = float(np.sum(blocked * (ix.P + ix.Q + 2)))
    return v, float(blocked.sum()), blocked_mass


def drift_smoluchowski(x, kernel: KernelSpec, payoff: Optional[SizePayoff], b) -> np.ndarray:
    """Coagulation-fragmentation drift on sizes 1..J (J = len(x)).

    Gains from merging j and k-j, losses from every merge a size takes part
    in (C_kj + C_jk, i.e. 2 C_kj for symmetric kernels), gains from both
    pieces of every split and the loss of the splitting size. Merges whose
    product exceeds J are removed from the dynamics altogether, matching
    the truncated chain.
    """
    X, B, single = _batch(x, b)
    v = np.stack([smoluchowski_parts(X[i], kernel, payoff, B[i])[0] for i in range(X.shape[0])])
    return v[0] if single else v


def drift_attachment(x, attach: AttachSpec, b) -> np.ndarray:
    """Injection of size-1 coalitions and size-proportional growth k -> k+1."""
    X, B, single = _batch(x, b)
    lam = np.broadcast_to(attach.intensity(X, B), (X.shape[0],))
    a = attach.alpha
    k = np.arange(1, X.shape[1] + 1, dtype=float)
    flux = ((1.0 - a) * lam)[:, None] * k[None, :-1] * X[:, :-1]
    v = np.zeros_like(X)
    v[:, 0] += a * lam
    v[:, 1:] += flux
    v[:, :-1] -= flux
    return v[0] if single else v


# --------------------------------------------------------------------------
# drift specs


@dataclass
class DriftSpec:
    """A vectorized drift fn(X, B) -> V together with the simplex blocks it preserves."""

    family: str
    fn: Callable
    dim: int
    simplex_blocks: tuple = ()
    components: tuple = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown drift family {self.family!r}")

    def __call__(self, x, b) -> np.ndarray:
        X, B, single = _batch(x, b)
        v = self.fn(X, B)
        return v[0] if single else v

    @classmethod
    def for_model(cls, model) -> "DriftSpec":
        """The kinetic limit of a markov model object."""
        if isinstance(model, PairwiseModel):
            p, k = model.payoff, model.kappa
            return cls("replicator", lambda X, B: drift_replicator(X, p, B, k), p.d,
                       (slice(0, p.d),), (model,))
        if isinstance(model, KthOrderModel):
            return cls("kth_order",
                       lambda X, B: drift_kth_order(X, model.payoff, B, model.kappa, model.K, model.Pi),
                       model.payoff.d, (slice(0, model.payoff.d),), (model,))
        if isinstance(model, MulticlassModel):
            n = model.A * model.d
            blocks = (slice(0, n),) if model.c2 else tuple(slice(a * model.d, (a + 1) * model.d)
                                                           for a in range(model.A))
            fam = "multiclass_C2" if model.c2 else "multiclass_C1"
            return cls(fam, lambda X, B: drift_multiclass(X, model.payoffs, B, model.classes, model.kappa),
                       n, blocks, (model,))
        if isinstance(model, GrowthModel):
            return cls("growth", lambda X, B: drift_growth(X, model.terms, B, model.J), model.J, (), (model,))
        if isinstance(model, CoalitionModel):
            return cls("smoluchowski", lambda X, B: drift_smoluchowski(X, model.kernel, model.payoff, B),
                       model.J, (), (model,))
        if isinstance(model, AttachmentModel):
            return cls("attachment", lambda X, B: drift_attachment(X, model.attach, B), model.J, (), (model,))
        if isinstance(model, CompositeModel):
            parts = [cls.for_model(m) for m in model.models]
            blocks = parts[0].simplex_blocks if all(p.simplex_blocks == parts[0].simplex_blocks for p in parts) else ()
            return cls("composite", lambda X, B: sum(p.fn(X, B) for p in parts), parts[0].dim, blocks,
                       tuple(parts))
        raise ConfigError(f"no kinetic limit registered for {type(model).__name__}")


# --------------------------------------------------------------------------
# integration

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def _safeguard(y, blocks, tol=TOL_POS):
    y = np.array(y, dtype=float)
    y[(y < 0) & (y >= -tol)] = 0.0
    for s in blocks:
        tot = y[..., s].sum(axis=-1, keepdims=True)
        y[..., s] = y[..., s] / tot
    return y


class _Controller:
    """Control in force during a segment: fixed, or memoized best response."""

    def __init__(self, principal: PrincipalModel, b_fixed=None):
        self.principal = principal
        self.b_fixed = None if b_fixed is None else np.atleast_1d(np.asarray(b_fixed, float))
        self.cache = {}

    def __call__(self, X):
        if self.b_fixed is not None or self.principal.mode != "best_response":
            b = self.b_fixed if self.b_fixed is not None else self.principal.b
            return np.broadcast_to(b, (X.shape[0], b.size))
        out = np.empty((X.shape[0], self.principal.r))
        missing = []
        for i, row in enumerate(X):
            hit = self.cache.get(row.tobytes())
            if hit is None:
                missing.append(i)
            else:
                out[i] = hit
        if missing:
            br = np.atleast_2d(best_response(X[missing], self.principal))
            for i, v in zip(missing, br):
                out[i] = v
                if len(self.cache) < 200_000:
                    self.cache[X[i].tobytes()] = v.copy()
        return out


def _rhs(drift: DriftSpec, control: _Controller):
    def f(Y):
        V = drift.fn(Y, control(Y))
        if not np.all(np.isfinite(V)):
            raise NumericalError(f"non-finite drift at state {Y[np.any(~np.isfinite(V), axis=1)][0].tolist()}")
        return V
    return f


def _dp45(f, y0, t0, t1, rtol, atol, blocks, h0=None, max_steps=1_000_000, stops=()):
    """Adaptive Dormand-Prince on a batch y0 (R, d). Returns accepted (times, states)."""
    y = np.array(y0, dtype=float)
    t = float(t0)
    span = t1 - t0
    stops = sorted(s for s in stops if t0 < s < t1) + [t1]
    h_min = 1e-13 * max(1.0, abs(t1))
    k1 = f(y)
    if h0 is None:
        sc = atol + rtol * np.abs(y)
        d0 = np.sqrt(np.mean((y / sc) ** 2))
        d1 = np.sqrt(np.mean((k1 / sc) ** 2))
        h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h = min(h0, span)
    times, states, fixes = [t], [y.copy()], []
    si = 0
    for _ in range(max_steps):
        if t >= t1:
            break
        target = stops[si]
        h = min(h, target - t)
        last = abs(target - t - h) <= 1e-14 * max(1.0, abs(target))
        ks = [k1]
        for s in range(1, 7):
            ys = y + h * sum(a * k for a, k in zip(_A[s], ks))
            ks.append(f(ys))
        y_new = y + h * sum(bb * k for bb, k in zip(_B5, ks))
        err = h * sum(e * k for e, k in zip(_E, ks))
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        en = float(np.sqrt(np.mean((err / sc) ** 2)))
        if np.min(y_new) < -TOL_POS:
            if h <= h_min:
                raise NumericalError(f"coordinate {np.min(y_new):.3e} below -{TOL_POS} at minimum step, t={t}")
            h *= 0.5
            continue
        if en <= 1.0 or h <= h_min:
            t = target if last else t + h
            y = _safeguard(y_new, blocks)
            fix = float(np.max(np.abs(y - y_new)))
            if fix > RENORM_REPORT:
                fixes.append((t, fix))
            k1 = f(y) if blocks or fix > 0 else ks[6]
            times.append(t)
            states.append(y.copy())
            if last and si < len(stops) - 1:
                si += 1
            fac = 5.0 if en == 0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
            h *= fac
        else:
            h *= max(0.2, 0.9 * en ** -0.2)
    else:
        raise NumericalError(f"integration did not reach t={t1} within {max_steps} steps")
    return np.array(times), np.array(states), fixes


def _rk4_step(f, y, h, blocks, depth=0):
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    y_new = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if np.min(y_new) < -TOL_POS:
        if depth > 40:
            raise NumericalError(f"coordinate {np.min(y_new):.3e} below -{TOL_POS} at minimum step")
        y_half, f1 = _rk4_step(f, y, 0.5 * h, blocks, depth + 1)
        y_end, f2 = _rk4_step(f, y_half, 0.5 * h, blocks, depth + 1)
        return y_end, max(f1, f2)
    y_safe = _safeguard(y_new, blocks)
    return y_safe, float(np.max(np.abs(y_safe - y_new)))


def _rk4(f, y0, t0, t1, h, blocks):
    n = max(1, int(math.ceil((t1 - t0) / h - 1e-9)))
    hh = (t1 - t0) / n
    y = np.array(y0, dtype=float)
    times, states, fixes = [t0], [y.copy()], []
    for i in range(n):
        y, fix = _rk4_step(f, y, hh, blocks)
        times.append(t0 + (i + 1) * hh)
        states.append(y.copy())
        if fix > RENORM_REPORT:
            fixes.append((times[-1], fix))
    times[-1] = t1
    return np.array(times), np.array(states), fixes


@dataclass(frozen=True)
class StepConfig:
    """rk45 (adaptive, rtol/atol) or rk4 (fixed step h)."""

    method: str = "rk45"
    rtol: float = 1e-8
    atol: float = 1e-10
    h: Optional[float] = None

    def __post_init__(self):
        if self.method not in ("rk45", "rk4"):
            raise ConfigError(f"unknown integrator {self.method!r}")
        if self.method == "rk4" and (self.h is None or self.h <= 0):
            raise ConfigError("rk4 needs a positive step h")


def _segment(drift, y0, t0, t1, control, step: StepConfig, stops=()):
    f = _rhs(drift, control)
    Y0 = np.atleast_2d(y0)
    if step.method == "rk4":
        return _rk4(f, Y0, t0, t1, step.h, drift.simplex_blocks)
    return _dp45(f, Y0, t0, t1, step.rtol, step.atol, drift.simplex_blocks, stops=stops)


def _check_start(drift, x0):
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (drift.dim,):
        raise DomainError(f"initial state has shape {x0.shape}, drift expects ({drift.dim},)")
    if np.any(x0 < -TOL_POS):
        raise DomainError("initial state has negative coordinates")
    for s in drift.simplex_blocks:
        if abs(x0[s].sum() - 1.0) > 1e-9:
            raise DomainError(f"initial state block {s.start}:{s.stop} does not sum to 1")
    return np.maximum(x0, 0.0)


def integrate(drift: DriftSpec, x0, principal: PrincipalModel, t_end: float,
              step: StepConfig = StepConfig(), record_times: Sequence[float] = ()) -> Trajectory:
    """Solve x' = f(x, b(x)) on [0, t_end]; steps land exactly on `record_times`."""
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    y0 = _check_start(drift, x0)
    if principal.mode == "policy":
        tau = principal.tau
        n_seg = int(math.ceil(t_end / tau - 1e-12))
        times, states, controls, fixes = [0.0], [y0], [], []
        y = y0
        for k in range(n_seg):
            a, bnd = k * tau, min((k + 1) * tau, t_end)
            b = np.atleast_1d(current_control(principal, y, k))
            ts, ys, fx = _segment(drift, y, a, bnd, _Controller(principal, b), step, record_times)
            fixes.extend(fx)
            times.extend(ts[1:])
            states.extend(ys[1:, 0])
            controls.extend([b] * (len(ts) - 1))
            y = ys[-1, 0]
        controls = [controls[0]] + controls
        X = np.array(states)
        return Trajectory(np.array(times), X, np.array(controls), X, {"renormalization": fixes})
    control = _Controller(principal)
    ts, ys, fixes = _segment(drift, y0, 0.0, float(t_end), control, step, record_times)
    X = ys[:, 0]
    U = np.array(control(X))
    return Trajectory(ts, X, U, X, {"renormalization": fixes})


def flow(drift: DriftSpec, X0, B, tau: float, rtol: float = 1e-10, atol: float = 1e-12) -> np.ndarray:
    """X(tau) for many starts at once, row i driven by the constant control B[i]."""
    X0 = np.atleast_2d(np.asarray(X0, float))
    B = np.broadcast_to(np.atleast_2d(np.asarray(B, float)), (X0.shape[0], np.atleast_2d(B).shape[-1]))
    if tau == 0:
        return X0.copy()
    f = lambda Y: drift.fn(Y, B)
    _, ys, _ = _dp45(f, X0, 0.0, float(tau), rtol, atol, drift.simplex_blocks)
    return ys[-1]


def smoluchowski_blocked(traj: Trajectory, kernel: KernelSpec, payoff: Optional[SizePayoff] = None):
    """(max blocked event rate, trapezoid integral of the blocked mass rate) along a trajectory."""
    rates, masses = [], []
    for x, b in zip(traj.x, traj.controls):
        _, r, m = smoluchowski_parts(x, kernel, payoff, b)
        rates.append(r)
        masses.append(m)
    masses = np.array(masses)
    integral = float(np.sum(0.5 * (masses[1:] + masses[:-1]) * np.diff(traj.times)))
    return float(max(rates)), integral


# --------------------------------------------------------------------------
# Lyapunov checks


@dataclass(frozen=True)
class LyapunovWeight:
    """Weights L(j) > 0 with growth constants a, b of the bound (L, x(t)) <= e^{at}((L, x0) + bt)."""

    values: np.ndarray
    a: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or np.any(v <= 0):
            raise ConfigError("Lyapunov weights must be a positive vector")
        object.__setattr__(self, "values", v)

    def check_monotone(self):
        if np.any(np.diff(self.values) < 0):
            raise ConfigError("Lyapunov weights for growth models must be non-decreasing")

    def pair(self, x) -> np.ndarray:
        return np.asarray(x, float) @ self.values

    @classmethod
    def ones(cls, n, a=0.0, b=0.0):
        return cls(np.ones(n), a, b)

    @classmethod
    def sizes(cls, n, a=0.0, b=0.0):
        return cls(np.arange(1, n + 1, dtype=float), a, b)


@dataclass
class LyapunovReport:
    mode: str
    ok: bool
    times: np.ndarray
    values: np.ndarray
    bound: Optional[np.ndarray] = None
    first_violation_time: Optional[float] = None
    magnitude: float = 0.0

    def summary(self) -> str:
        if self.ok:
            return f"{self.mode}: ok over {self.times.size} points"
        return f"{self.mode}: violated at t={self.first_violation_time:.6g} by {self.magnitude:.3e}"


def exact_moment(L0: float, a: float, b: float, t) -> np.ndarray:
    """e^{at}[(L, x0) + (b/a)(1 - e^{-at})], with the a -> 0 limit L0 + bt."""
    t = np.asarray(t, dtype=float)
    if a == 0:
        return L0 + b * t
    return np.exp(a * t) * (L0 + (b / a) * (1.0 - np.exp(-a * t)))


def lyapunov_check(traj: Trajectory, L: LyapunovWeight, mode: str = "non_increase",
                   rtol: float = 1e-9) -> LyapunovReport:
    """Check (L, x(t)) along a trajectory: non_increase, subcritical or exact."""
    vals = traj.x @ L.values
    t = traj.times
    v0 = vals[0]
    if mode == "non_increase":
        excess = np.concatenate([[0.0], vals[1:] - vals[:-1] - rtol * np.abs(vals[:-1])])
        bound = None
    elif mode == "subcritical":
        bound = np.exp(L.a * t) * (v0 + L.b * t)
        excess = vals - bound - rtol * np.abs(bound)
    elif mode == "exact":
        bound = exact_moment(v0, L.a, L.b, t)
        excess = np.abs(vals - bound) - rtol * np.maximum(1.0, np.abs(bound))
    else:
        raise ConfigError(f"unknown Lyapunov mode {mode!r}")
    bad = np.flatnonzero(excess > 0)
    if bad.size:
        i = bad[0]
        return LyapunovReport(mode, False, t, vals, bound, float(t[i]), float(excess[i]))
    return LyapunovReport(mode, True, t, vals, bound)
