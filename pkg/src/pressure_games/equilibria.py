"""Rest points of the imitation dynamics and approximate Nash equilibria of the N-player game."""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (DomainError, OccupationState, PayoffModel, PrincipalModel, SimplexState, clamp_to_simplex,
                   simplex_lattice)
from .kinetic import drift_replicator
from .response import current_control

SUPPORT_TOL = 1e-8
RESIDUAL_TOL = 1e-9
DEDUP_TOL = 1e-6
N_STARTS = 32
MAX_HALVINGS = 40
MAX_NEWTON = 100


def _weights(x):
    return np.asarray(x.weights if isinstance(x, SimplexState) else x, dtype=float)


def _rewards_at(payoff, principal, x):
    b = np.atleast_1d(current_control(principal, x))
    return payoff.rewards(x, b), b


def residual(x, payoff: PayoffModel, principal: PrincipalModel) -> float:
    """Largest drift coordinate (kappa = 1) at x under b*(x)."""
    x = _weights(x)
    b = np.atleast_1d(current_control(principal, x))
    return float(np.max(np.abs(drift_replicator(x, payoff, b, 1.0))))


@dataclass
class EquilibriumRecord:
    x: np.ndarray
    support: tuple
    residual: float
    payoff_spread: float
    zero_set: tuple
    in_hat: bool
    b: np.ndarray
    nash_eps: Optional[float] = None

    def as_dict(self) -> dict:
        d = asdict(self)
        d["x"] = self.x.tolist()
        d["b"] = self.b.tolist()
        d["support"] = list(self.support)
        d["zero_set"] = list(self.zero_set)
        return d


def _record(x, payoff, principal, zero_set) -> EquilibriumRecord:
    R, b = _rewards_at(payoff, principal, x)
    support = tuple(int(i) for i in np.flatnonzero(x >= SUPPORT_TOL))
    on = R[list(support)]
    spread = float(on.max() - on.min()) if on.size else 0.0
    off = [k for k in range(x.size) if k not in support]
    in_hat = bool(not off or R[off].max() <= on.min() + 1e-9)
    return EquilibriumRecord(x, support, residual(x, payoff, principal), spread, tuple(zero_set), in_hat, b)


def _system(payoff, principal, support, d):
    """Square system in the support coordinates y: payoff equalities and sum(y) = 1."""
    def F(y):
        # payoffs are read at the simplex point of y; roots (sum(y) = 1, y >= 0) are unchanged
        x = np.zeros(d)
        x[support] = y
        R, _ = _rewards_at(payoff, principal, clamp_to_simplex(x))
        Rs = R[support]
        return np.concatenate([Rs[1:] - Rs[0], [y.sum() - 1.0]])
    return F


def _jacobian(F, y, f0, eps=1e-7):
    J = np.empty((f0.size, y.size))
    for k in range(y.size):
        e = np.zeros_like(y)
        e[k] = eps
        J[:, k] = (F(y + e) - F(y - e)) / (2 * eps)
    return J


def _newton(F, y0):
    y = y0.copy()
    f = F(y)
    nf = np.max(np.abs(f))
    for _ in range(MAX_NEWTON):
        if nf < 1e-13:
            break
        J = _jacobian(F, y, f)
        try:
            step = np.linalg.lstsq(J, -f, rcond=None)[0]
        except np.linalg.LinAlgError:
            return y, nf
        lam = 1.0
        for _ in range(MAX_HALVINGS):
            y_new = y + lam * step
            f_new = F(y_new)
            n_new = np.max(np.abs(f_new))
            if n_new < nf:
                break
            lam *= 0.5
        else:
            return y, nf
        y, f, nf = y_new, f_new, n_new
    return y, nf


@dataclass
class FixedPointSearch:
    records: list
    attempts: int
    converged: int
    diagnostic: str = ""


def find_fixed_points(payoff: PayoffModel, principal: PrincipalModel, zero_set: Sequence[int] = (),
                      n_starts: int = N_STARTS, seed: int = 0, with_report: bool = False):
    """Rest points whose coordinates vanish exactly on `zero_set` (0-based).

    Runs damped Newton on the payoff-equality system from Dirichlet starts in
    the face; keeps solutions in the simplex with residual < 1e-9, merged at
    distance 1e-6. Each record is flagged `in_hat` when no zero coordinate
    earns more than the support.
    """
    d = payoff.d
    I = sorted(set(int(i) for i in zero_set))
    if len(I) >= d or any(i < 0 or i >= d for i in I):
        raise DomainError(f"zero set {I} must be a proper subset of 0..{d - 1}")
    support = [i for i in range(d) if i not in I]
    rng = np.random.default_rng(seed)
    found: list = []
    converged = 0
    starts = [np.ones(1)] if len(support) == 1 else list(rng.dirichlet(np.ones(len(support)), size=n_starts))
    F = _system(payoff, principal, support, d)
    for y0 in starts:
        try:
            y, nf = _newton(F, y0)
        except DomainError:
            continue
        if np.any(y < -1e-12) or not np.all(np.isfinite(y)):
            continue
        x = np.zeros(d)
        x[support] = np.maximum(y, 0.0)
        x /= x.sum()
        rec = _record(x, payoff, principal, I)
        if rec.residual >= RESIDUAL_TOL:
            continue
        converged += 1
        if all(np.max(np.abs(r.x - x)) > DEDUP_TOL for r in found):
            found.append(rec)
    diag = "" if found else f"no solution with residual < {RESIDUAL_TOL} from {len(starts)} starts"
    found.sort(key=lambda r: tuple(-r.x))
    if with_report:
        return FixedPointSearch(found, len(starts), converged, diag)
    return found


def all_fixed_points(payoff: PayoffModel, principal: PrincipalModel, n_starts: int = N_STARTS,
                     seed: int = 0) -> list:
    """Sweep over every proper zero set; records merged in a fixed order."""
    d = payoff.d
    out: list = []
    for k in range(d):
        for I in itertools.combinations(range(d), k):
            for rec in find_fixed_points(payoff, principal, I, n_starts, seed):
                if all(np.max(np.abs(r.x - rec.x)) > DEDUP_TOL for r in out):
                    out.append(rec)
    return out


def equilibrium_report(records: Sequence[EquilibriumRecord]) -> str:
    return json.dumps([r.as_dict() for r in records], indent=2)


# --------------------------------------------------------------------------
# finite-N game


def rational_approximation(x, N: int) -> OccupationState:
    """Largest-remainder rounding of x to the lattice with denominator N.

    Extra units go to the largest fractional parts; equal fractions favour
    the lower index. Every coordinate moves by less than 1/N.
    """
    x = _weights(x)
    if N < x.size:
        raise DomainError(f"N={N} must be at least d={x.size}")
    return lattice_point(x, N)


def lattice_point(x, N: int) -> OccupationState:
    """Largest-remainder rounding without the N >= d requirement (N = 1 gives a vertex)."""
    x = _weights(x)
    d = x.size
    scaled = N * x
    base = np.floor(scaled + 1e-9)
    frac = np.maximum(scaled - base, 0.0)
    counts = base.astype(np.int64)
    extra = N - int(counts.sum())
    order = np.lexsort((np.arange(d), -frac))
    if extra > 0:
        counts[order[:extra]] += 1
    elif extra < 0:
        for i in order[::-1]:
            if extra == 0:
                break
            if counts[i] > 0:
                counts[i] -= 1
                extra += 1
    return OccupationState(counts, 1.0 / N)


def _lattice_counts(x_N, N):
    if isinstance(x_N, OccupationState):
        c = x_N.counts
        if c.sum() != N:
            raise DomainError(f"state holds {c.sum()} agents, expected N={N}")
        return c.astype(np.int64)
    x = _weights(x_N)
    c = N * x
    if np.any(np.abs(c - np.round(c)) > 1e-9):
        raise DomainError("state is not on the lattice with denominator N (non-integer occupation)")
    return np.round(c).astype(np.int64)


def check_epsilon_nash(x_N, payoff: PayoffModel, principal: PrincipalModel, N: int) -> float:
    """Smallest eps with R_j(x - e_i/N + e_j/N, b_N) <= R_i(x, b_N) + eps for all occupied i, j != i.

    The principal plays b_N = b*(x_N) at the lattice point itself.
    """
    counts = _lattice_counts(x_N, N)
    x = counts / N
    b = np.atleast_1d(current_control(principal, x))
    R0 = payoff.rewards(x, b)
    d = x.size
    pairs = [(i, j) for i in range(d) if counts[i] > 0 for j in range(d) if j != i]
    if not pairs:
        return 0.0
    dev = np.repeat(x[None], len(pairs), axis=0)
    for k, (i, j) in enumerate(pairs):
        dev[k, i] -= 1.0 / N
        dev[k, j] += 1.0 / N
    dev = np.maximum(dev, 0.0)
    Rd = payoff.rewards(dev, np.broadcast_to(b, (len(pairs), b.size)))
    gains = [Rd[k, j] - R0[i] for k, (i, j) in enumerate(pairs)]
    return float(max(0.0, max(gains)))


def lipschitz_estimate(payoff: PayoffModel, b_values=None, m: int = 100, inflate: float = 1.05) -> float:
    """sup over i, b of the l1-Lipschitz constant of R_i(., b) on the simplex.

    Finite differences along every edge direction e_j - e_i of the lattice
    with spacing 1/m, taken over the given controls, inflated by `inflate`.
    """
    d = payoff.d
    if d == 1:
        return 0.0
    P = simplex_lattice(d, m)
    b_values = np.atleast_2d(np.zeros(1) if b_values is None else np.asarray(b_values, float))
    best = 0.0
    for b in b_values:
        B = np.broadcast_to(b, (P.shape[0], b.size))
        R0 = payoff.rewards(P, B)
        for i in range(d):
            mask = P[:, i] >= 1.0 / m - 1e-12
            if not np.any(mask):
                continue
            for j in range(d):
                if j == i:
                    continue
                Q = P[mask].copy()
                Q[:, i] -= 1.0 / m
                Q[:, j] += 1.0 / m
                Q = np.maximum(Q, 0.0)
                dR = np.abs(payoff.rewards(Q, B[: Q.shape[0]]) - R0[mask])
                best = max(best, float(dR.max()) / (2.0 / m))
    return inflate * best


def control_samples(principal: PrincipalModel, per_axis: int = 5) -> np.ndarray:
    """Grid of controls over the box, used to take sup over b."""
    if principal.mode == "fixed":
        return principal.b[None]
    axes = [np.linspace(lo, hi, per_axis if hi > lo else 1) for lo, hi in principal.control_box]
    return np.array(list(itertools.product(*axes)))


def nash_bound(R_hat: float, d: int, N: int) -> float:
    return 2.0 * R_hat * d / N


# --------------------------------------------------------------------------
# turnpikes


@dataclass
class TurnpikeEntry:
    b: np.ndarray
    members: list
    values: list
    best_value: float
    best_x: Optional[np.ndarray] = field(default=None)


def turnpike_scan(payoff: PayoffModel, principal: PrincipalModel, b_grid, n_starts: int = N_STARTS,
                  seed: int = 0) -> list:
    """For each b on the grid, the rest points with b held fixed and the principal's reward there.

    Entries are sorted by their best reward, highest first.
    """
    out = []
    for b in np.atleast_2d(np.asarray(b_grid, float).reshape(len(b_grid), -1)):
        fixed = PrincipalModel(principal.reward, principal.control_box, "fixed", b)
        members = all_fixed_points(payoff, fixed, n_starts, seed)
        vals = [float(np.asarray(principal.reward(r.x, b))) for r in members]
        k = int(np.argmax(vals)) if vals else -1
        out.append(TurnpikeEntry(b, members, vals, vals[k] if vals else -np.inf,
                                 members[k].x if vals else None))
    out.sort(key=lambda e: -e.best_value)
    return out
