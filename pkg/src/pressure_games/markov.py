"""Finite-population Markov chains and their exact event-driven simulation.

Each model turns a count vector and a control into a TransitionList (one
row of the generator). Models with a fixed set of channels (pairwise,
k-th order, multiclass, growth, attachment) also expose `batch_rates`,
which evaluates all channels for many replicates at once; the ensemble
driver uses it to advance thousands of replicates in lockstep.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (AttachSpec, ClassStructure, ConfigError, DomainError, KernelSpec,
                   NumericalError, OccupationState, PayoffModel, PrincipalModel, SizePayoff)
from .response import best_response, current_control
from .rng import derive_seed, seed_key, uniforms


# --------------------------------------------------------------------------
# containers


@dataclass
class TransitionList:
    """Sparse deltas (idx[k], val[k]) with rates; one generator row."""

    idx: np.ndarray
    val: np.ndarray
    rates: np.ndarray
    blocked_rate: float = 0.0
    suppressed: int = 0
    cumulative: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=float)
        self.cumulative = np.cumsum(self.rates)

    @property
    def total_rate(self) -> float:
        return float(self.cumulative[-1]) if self.rates.size else 0.0

    def __len__(self):
        return self.rates.size

    def dense_deltas(self, dim: int) -> np.ndarray:
        out = np.zeros((self.rates.size, dim), dtype=np.int64)
        for k in range(self.rates.size):
            np.add.at(out[k], self.idx[k], self.val[k])
        return out

    def entries(self, dim: int):
        return list(zip(self.dense_deltas(dim), self.rates.tolist()))

    def apply(self, counts: np.ndarray, k: int) -> None:
        np.add.at(counts, self.idx[k], self.val[k])

    @classmethod
    def empty(cls, blocked_rate=0.0, suppressed=0):
        return cls(np.zeros((0, 1), dtype=np.int64), np.zeros((0, 1), dtype=np.int64), np.zeros(0),
                   blocked_rate, suppressed)


def _sparse_from_dense(deltas: np.ndarray):
    width = max(1, int((deltas != 0).sum(axis=1).max(initial=1)))
    idx = np.zeros((deltas.shape[0], width), dtype=np.int64)
    val = np.zeros((deltas.shape[0], width), dtype=np.int64)
    for k, row in enumerate(deltas):
        nz = np.flatnonzero(row)
        idx[k, :nz.size] = nz
        val[k, :nz.size] = row[nz]
    return idx, val


@dataclass
class Trajectory:
    """Event times with the state and control in force from each time on.

    `states` holds counts for stochastic runs and x for deterministic ones;
    `x` is always the macroscopic (scaled) state.
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    x: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.times.size

    def final(self) -> np.ndarray:
        return self.x[-1]

    def to_csv(self, path) -> None:
        r = self.controls.shape[1]
        d = self.x.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"b_{i + 1}" for i in range(r)] + [f"s_{j + 1}" for j in range(d)])
            for t, b, s in zip(self.times, self.controls, self.x):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in b] + [repr(float(v)) for v in s])


def read_trajectory_csv(path) -> Trajectory:
    with open(path) as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], np.array(rows[1:], dtype=float)
    r = sum(h.startswith("b_") for h in head)
    return Trajectory(body[:, 0], body[:, 1 + r:], body[:, 1:1 + r], body[:, 1 + r:])


# --------------------------------------------------------------------------
# models


class ChannelModel:
    """Model with a fixed channel list; subclasses set `deltas` and `_rates`."""

    deltas: np.ndarray
    guard_negative = False

    def _setup(self):
        self.deltas = np.asarray(self.deltas, dtype=np.int64)
        self._idx, self._val = _sparse_from_dense(self.deltas)

    @property
    def dim(self) -> int:
        return self.deltas.shape[1]

    def _rates(self, C, B):
        raise NotImplementedError

    def _blocked(self, C, B):
        return np.zeros(C.shape[0])

    def batch_rates(self, C: np.ndarray, B: np.ndarray):
        """Channel rates (R, m), blocked rates (R,) and suppressed counts (R,)."""
        C = np.asarray(C, dtype=np.int64)
        B = np.asarray(B, dtype=float)
        rates = np.asarray(self._rates(C, B), dtype=float)
        if np.any(rates < 0):
            raise DomainError(f"{type(self).__name__}: negative transition rate")
        suppressed = np.zeros(C.shape[0], dtype=np.int64)
        if self.guard_negative:
            ok = np.all(C[:, None, :] + self.deltas[None] >= 0, axis=-1)
            suppressed = np.sum((rates > 0) & ~ok, axis=1)
            rates = np.where(ok, rates, 0.0)
        return rates, self._blocked(C, B), suppressed

    def transitions(self, counts, b) -> TransitionList:
        counts = np.asarray(counts, dtype=np.int64)
        b = np.atleast_1d(np.asarray(b, dtype=float))
        rates, blocked, suppressed = self.batch_rates(counts[None], b[None])
        rates = rates[0]
        keep = rates > 0
        return TransitionList(self._idx[keep], self._val[keep], rates[keep], float(blocked[0]),
                              int(suppressed[0]))

    batchable = True


def _ordered_pairs(d):
    return [(i, j) for i in range(d) for j in range(d) if i != j]


class PairwiseModel(ChannelModel):
    """Myopic pairwise imitation: rate (kappa/N) n_i n_j (R_j - R_i)^+ for i -> j."""

    def __init__(self, payoff: PayoffModel, kappa: float = 1.0):
        if kappa <= 0:
            raise ConfigError("kappa must be positive")
        self.payoff, self.kappa = payoff, float(kappa)
        d = payoff.d
        self.pairs = _ordered_pairs(d)
        deltas = np.zeros((len(self.pairs), d), dtype=np.int64)
        for k, (i, j) in enumerate(self.pairs):
            deltas[k, i] -= 1
            deltas[k, j] += 1
        self.deltas = deltas
        self._setup()
        self._i = np.array([p[0] for p in self.pairs], dtype=int)
        self._j = np.array([p[1] for p in self.pairs], dtype=int)

    def to_x(self, C):
        C = np.asarray(C, dtype=float)
        return C / C.sum(axis=-1, keepdims=True)

    def _rates(self, C, B):
        N = C.sum(axis=1)
        if np.any(N == 0):
            raise DomainError("no agents")
        R = self.payoff.rewards(C / N[:, None], B)
        dR = np.maximum(R[:, self._j] - R[:, self._i], 0.0)
        return (self.kappa / N)[:, None] * C[:, self._i] * C[:, self._j] * dR


def default_pi(RI: np.ndarray) -> np.ndarray:
    """Group rate: spread of the members' payoffs."""
    return RI.max(axis=-1) - RI.min(axis=-1)


def group_winner(RI: np.ndarray) -> np.ndarray:
    """Position of the member with the highest payoff, ties to the highest index."""
    k = RI.shape[-1]
    return k - 1 - np.argmax(RI[..., ::-1], axis=-1)


class KthOrderModel(ChannelModel):
    """Group imitation in subsets of up to K distinct states."""

    def __init__(self, payoff: PayoffModel, kappa: float = 1.0, K: int = 2, Pi: Optional[Callable] = None):
        d = payoff.d
        if not 2 <= K <= d:
            raise ConfigError(f"K={K} must lie in [2, d={d}]")
        self.payoff, self.kappa, self.K = payoff, float(kappa), int(K)
        self.Pi = Pi or default_pi
        self.subsets = [I for k in range(2, K + 1) for I in itertools.combinations(range(d), k)]
        rows, self._chan = [], []
        for s, I in enumerate(self.subsets):
            for pos, j in enumerate(I):
                delta = np.zeros(d, dtype=np.int64)
                delta[list(I)] -= 1
                delta[j] += len(I)
                rows.append(delta)
                self._chan.append((s, pos))
        self.deltas = np.array(rows)
        self._setup()

    def to_x(self, C):
        C = np.asarray(C, dtype=float)
        return C / C.sum(axis=-1, keepdims=True)

    def _rates(self, C, B):
        N = C.sum(axis=1).astype(float)
        if np.any(N == 0):
            raise DomainError("no agents")
        x = C / N[:, None]
        R = self.payoff.rewards(x, B)
        out = np.zeros((C.shape[0], self.deltas.shape[0]))
        col = 0
        for I in self.subsets:
            I = list(I)
            RI = R[:, I]
            base = N * self.kappa * np.asarray(self.Pi(RI), float) * np.prod(x[:, I], axis=1)
            win = group_winner(RI)
            for pos in range(len(I)):
                out[:, col] = np.where(win == pos, base, 0.0)
                col += 1
        return out


def class_control(B, a, n_classes):
    """Control seen by class a: b[a] when b has one coordinate per class, else all of b."""
    B = np.asarray(B, dtype=float)
    return B[..., a:a + 1] if B.shape[-1] == n_classes and n_classes > 1 else B


def class_rewards(payoffs, c2: bool, x, B):
    """Rewards of every (class, state) slot, flattened class-major.

    Under C2 every class payoff reads the full state; under C1 class a reads
    its own block.
    """
    A = len(payoffs)
    d = payoffs[0].d if not c2 else x.shape[-1] // A
    out = []
    for a, p in enumerate(payoffs):
        xa = x if c2 else x[..., a * d:(a + 1) * d]
        out.append(p.rewards(xa, class_control(B, a, A)))
    return np.concatenate(out, axis=-1)


class MulticlassModel(ChannelModel):
    """Several classes of players; counts are laid out class-major (alpha*d + i).

    C1: imitation within each class, per-pair rate kappa_alpha / N.
    C2: imitation across classes with one scale 1/N.
    Class alpha sees b[alpha] when b has one coordinate per class, else all of b.
    """

    def __init__(self, payoffs: Sequence[PayoffModel], classes: ClassStructure, kappa: Optional[float] = None):
        if len(payoffs) != classes.num_classes:
            raise ConfigError(f"{len(payoffs)} class payoffs given for {classes.num_classes} classes")
        self.payoffs, self.classes = list(payoffs), classes
        self.A = classes.num_classes
        self.d = payoffs[0].d
        if any(p.d != self.d for p in payoffs):
            raise ConfigError("all classes must share the strategy count d")
        self.kappa = float(kappa if kappa is not None else classes.per_class_kappa[0])
        self.c2 = classes.comm_mode == "C2_full_communication"
        n = self.A * self.d
        if self.c2:
            self.moves = [(u, v) for u in range(n) for v in range(n) if u != v]
        else:
            self.moves = [(a * self.d + i, a * self.d + j) for a in range(self.A) for i, j in _ordered_pairs(self.d)]
        deltas = np.zeros((len(self.moves), n), dtype=np.int64)
        for k, (u, v) in enumerate(self.moves):
            deltas[k, u] -= 1
            deltas[k, v] += 1
        self.deltas = deltas
        self._setup()
        self._u = np.array([m[0] for m in self.moves], dtype=int)
        self._v = np.array([m[1] for m in self.moves], dtype=int)

    def to_x(self, C):
        C = np.asarray(C, dtype=float)
        if self.c2:
            return C / C.sum(axis=-1, keepdims=True)
        blocks = C.reshape(C.shape[:-1] + (self.A, self.d))
        return (blocks / blocks.sum(axis=-1, keepdims=True)).reshape(C.shape)

    def class_rewards(self, x, B):
        return class_rewards(self.payoffs, self.c2, x, B)

    def _rates(self, C, B):
        N = C.sum(axis=1).astype(float)
        if self.c2:
            R = self.class_rewards(C / N[:, None], B)
            kap = self.kappa
        else:
            blocks = C.reshape(C.shape[0], self.A, self.d).sum(axis=2)
            if np.any(blocks == 0):
                raise DomainError("every class needs at least one player")
            R = self.class_rewards(self.to_x(C), B)
            kap = np.repeat(np.asarray(self.classes.per_class_kappa, float), self.d * (self.d - 1))
        dR = np.maximum(R[:, self._v] - R[:, self._u], 0.0)
        # same operation order as the pairwise chain so one class reproduces it bit for bit
        return (kap / N[:, None]) * C[:, self._u] * C[:, self._v] * dR


@dataclass(frozen=True)
class GrowthTerm:
    """One bracket of the growth generator.

    kind: birth | death | mutation | split | merge | regroup. `src` lists the
    consumed states and `dst` the produced ones (1-based); `rate(x, b)` is the
    coefficient, and the transition fires at rate(x, b) / h.
    """

    kind: str
    src: tuple
    dst: tuple
    rate: Callable

    def __post_init__(self):
        arity = {"birth": (0, 1), "death": (1, 0), "mutation": (1, 1), "split": (1, 2),
                 "merge": (2, 1), "regroup": (2, 2)}
        if self.kind not in arity:
            raise ConfigError(f"unknown growth term kind {self.kind!r}")
        if (len(self.src), len(self.dst)) != arity[self.kind]:
            raise ConfigError(f"{self.kind} term needs {arity[self.kind]} source/target states")
        if any(i < 1 for i in self.src + self.dst):
            raise ConfigError("growth states are numbered from 1")


def constant_rate(c: float) -> Callable:
    c = float(c)
    return lambda x, b: np.full(np.asarray(x).shape[:-1], c)


def linear_rate(coefs: dict, const: float = 0.0) -> Callable:
    """const + sum_k coef_k x_k with 1-based k."""
    items = [(int(k) - 1, float(v)) for k, v in coefs.items()]

    def fn(x, b):
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape[:-1], float(const))
        for k, v in items:
            if k < x.shape[-1]:
                out = out + v * x[..., k]
        return out
    return fn


class GrowthModel(ChannelModel):
    """Birth, death, mutation and binary interaction on states 1..J_max."""

    guard_negative = True

    def __init__(self, terms: Sequence[GrowthTerm], h: float, J_max: int):
        if h <= 0:
            raise ConfigError("h must be positive")
        self.terms, self.h, self.J = list(terms), float(h), int(J_max)
        self.inside = [t for t in self.terms if all(i <= self.J for i in t.dst) and all(i <= self.J for i in t.src)]
        self.outside = [t for t in self.terms if t not in self.inside]
        deltas = np.zeros((len(self.inside), self.J), dtype=np.int64)
        for k, t in enumerate(self.inside):
            for i in t.src:
                deltas[k, i - 1] -= 1
            for j in t.dst:
                deltas[k, j - 1] += 1
        self.deltas = deltas.reshape(len(self.inside), self.J)
        self._setup()

    def to_x(self, C):
        return self.h * np.asarray(C, dtype=float)

    def _eval(self, terms, C, B):
        x = self.to_x(C)
        if not terms:
            return np.zeros((C.shape[0], 0))
        cols = [np.broadcast_to(np.asarray(t.rate(x, B), float), (C.shape[0],)) for t in terms]
        out = np.stack(cols, axis=1)
        if np.any(out < 0):
            raise DomainError("growth coefficient is negative")
        return out / self.h

    def _rates(self, C, B):
        return self._eval(self.inside, C, B)

    def _blocked(self, C, B):
        return self._eval(self.outside, C, B).sum(axis=1)


class AttachmentModel(ChannelModel):
    """Injection of new agents with preferential attachment to coalitions."""

    def __init__(self, attach: AttachSpec, h: float, J_max: int):
        self.attach, self.h, self.J = attach, float(h), int(J_max)
        deltas = np.zeros((self.J, self.J), dtype=np.int64)
        deltas[0, 0] = 1
        for k in range(1, self.J):
            deltas[k, k - 1] = -1
            deltas[k, k] = 1
        self.deltas = deltas
        self._setup()
        self._sizes = np.arange(1, self.J + 1, dtype=float)

    def to_x(self, C):
        return self.h * np.asarray(C, dtype=float)

    def _lam(self, C, B):
        return np.broadcast_to(self.attach.intensity(self.to_x(C), B), (C.shape[0],))

    def _rates(self, C, B):
        lam = self._lam(C, B)
        a = self.attach.alpha
        x = self.to_x(C)
        out = np.empty((C.shape[0], self.J))
        out[:, 0] = a * lam / self.h
        out[:, 1:] = ((1.0 - a) * lam / self.h)[:, None] * self._sizes[None, :-1] * x[:, :-1]
        return out

    def _blocked(self, C, B):
        lam = self._lam(C, B)
        return (1.0 - self.attach.alpha) * lam / self.h * self.J * self.to_x(C)[:, -1]


class CoalitionModel:
    """Markus-Lushnikov merge/split chain on coalition sizes 1..J_max."""

    batchable = False

    def __init__(self, kernel: KernelSpec, payoff: Optional[SizePayoff], h: float, J_max: int):
        self.kernel, self.payoff, self.h, self.J = kernel, payoff, float(h), int(J_max)
        self._const = None
        if kernel.merge is not None and not callable(kernel.merge) and kernel.split is not None \
                and not callable(kernel.split):
            self._const = (kernel.merge_matrix(None, None, None, self.J),
                           kernel.split_matrix(None, None, None, self.J))
        elif payoff is None:
            raise ConfigError("strategic kernels need a per-size payoff")

    @property
    def dim(self) -> int:
        return self.J

    def to_x(self, C):
        return self.h * np.asarray(C, dtype=float)

    def kernels(self, x, b):
        if self._const is not None:
            return self._const
        R = self.payoff.values(x, b, 2 * self.J) if self.payoff is not None else None
        return self.kernel.merge_matrix(x, b, R, self.J), self.kernel.split_matrix(x, b, R, self.J)

    def transitions(self, counts, b) -> TransitionList:
        counts = np.asarray(counts, dtype=np.int64)
        h = self.h
        x = h * counts
        C, F = self.kernels(x, b)
        occ = np.flatnonzero(counts)
        a, c = np.triu_indices(occ.size)
        p, q = occ[a], occ[c]
        diag = p == q
        rate = np.where(diag, C[p, p] * x[p] * (x[p] - h), (C[p, q] + C[q, p]) * x[p] * x[q]) / h
        target = p + q + 1
        live = rate > 0
        inside = live & (target < self.J)
        blocked = float(rate[live & ~inside].sum())
        idx = [np.stack([p[inside], q[inside], target[inside]], axis=1)]
        val = [np.broadcast_to(np.array([-1, -1, 1]), (int(inside.sum()), 3))]
        rates = [rate[inside]]
        big = occ[occ > 0]
        if big.size and np.any(F[big]):
            src = np.repeat(big, big)                  # size s = p + 1 has s - 1 split channels
            first = np.arange(src.size) - np.repeat(np.cumsum(big) - big, big)
            srate = F[src, first] * x[src] / h
            ok = srate > 0
            idx.append(np.stack([src[ok], first[ok], src[ok] - first[ok] - 1], axis=1))
            val.append(np.broadcast_to(np.array([-1, 1, 1]), (int(ok.sum()), 3)))
            rates.append(srate[ok])
        rates = np.concatenate(rates)
        if not rates.size:
            return TransitionList.empty(blocked)
        return TransitionList(np.concatenate(idx).astype(np.int64), np.concatenate(val).astype(np.int64),
                              rates, blocked)


class CompositeModel:
    """Sum of generators acting on the same state space."""

    def __init__(self, models: Sequence):
        self.models = list(models)
        dims = {m.dim for m in self.models}
        if len(dims) != 1:
            raise ConfigError("composite parts must share one state space")
        self.batchable = all(getattr(m, "batchable", False) for m in self.models)

    @property
    def dim(self) -> int:
        return self.models[0].dim

    def to_x(self, C):
        return self.models[0].to_x(C)

    def transitions(self, counts, b) -> TransitionList:
        parts = [m.transitions(counts, b) for m in self.models]
        width = max(p.idx.shape[1] for p in parts)

        def pad(a):
            return np.pad(a, ((0, 0), (0, width - a.shape[1])))
        return TransitionList(np.concatenate([pad(p.idx) for p in parts]),
                              np.concatenate([pad(p.val) for p in parts]),
                              np.concatenate([p.rates for p in parts]),
                              sum(p.blocked_rate for p in parts), sum(p.suppressed for p in parts))

    @property
    def deltas(self):
        return np.concatenate([m.deltas for m in self.models])

    def batch_rates(self, C, B):
        outs = [m.batch_rates(C, B) for m in self.models]
        return (np.concatenate([o[0] for o in outs], axis=1), sum(o[1] for o in outs),
                sum(o[2] for o in outs))


# --------------------------------------------------------------------------
# generator action


def generator_drift(model, counts, b) -> np.ndarray:
    """sum over transitions of rate * (x(after) - x(before)), the chain's mean velocity."""
    counts = np.asarray(counts, dtype=np.int64)
    tl = model.transitions(counts, b)
    x0 = model.to_x(counts)
    out = np.zeros_like(x0)
    for k in range(len(tl)):
        c = counts.copy()
        tl.apply(c, k)
        out += tl.rates[k] * (model.to_x(c) - x0)
    return out


# --------------------------------------------------------------------------
# simulation


def _control_dim(principal: PrincipalModel) -> int:
    return principal.r


def simulate(model, x0: OccupationState, principal: PrincipalModel, t_end: float, seed: int,
             max_events: Optional[int] = None) -> Trajectory:
    """Exact event-driven simulation on [0, t_end], reproducible from `seed`.

    One aggregated exponential clock; the firing transition is drawn in
    proportion to its rate. An absorbing state ends the event loop and the
    trajectory is padded with a row at t_end.
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    counts = np.array(x0.counts, dtype=np.int64)
    key = seed_key(seed)
    draws = 0
    t = 0.0
    grid_k = 0
    tau = principal.tau if principal.mode == "policy" else None
    next_grid = tau if tau else math.inf
    b = np.atleast_1d(current_control(principal, model.to_x(counts), 0)).astype(float)
    times, states, controls = [0.0], [counts.copy()], [b.copy()]
    blocked_max, suppressed, events = 0.0, 0, 0
    while True:
        if principal.mode == "best_response" and events > 0:
            b = best_response(model.to_x(counts), principal)
        tl = model.transitions(counts, b)
        total = tl.total_rate
        if not math.isfinite(total):
            raise NumericalError(f"non-finite total rate {total!r} at t={t} in state {counts.tolist()}, b={b.tolist()}")
        blocked_max = max(blocked_max, tl.blocked_rate)
        suppressed += tl.suppressed
        if total > 0:
            u1, u2 = uniforms(np.repeat(key, 2), [2 * draws, 2 * draws + 1])
            draws += 1
            t_next = t - math.log(u1) / total
        else:
            t_next = math.inf
        if next_grid < t_end and t_next >= next_grid:
            t = next_grid
            grid_k += 1
            next_grid = (grid_k + 1) * tau
            b = np.atleast_1d(current_control(principal, model.to_x(counts), grid_k)).astype(float)
            times.append(t)
            states.append(counts.copy())
            controls.append(b.copy())
            continue
        if t_next > t_end:
            break
        k = int(np.searchsorted(tl.cumulative, u2 * total, side="left"))
        k = min(k, len(tl) - 1)
        tl.apply(counts, k)
        t = t_next
        events += 1
        times.append(t)
        states.append(counts.copy())
        controls.append(b.copy())
        if max_events is not None and events >= max_events:
            break
    if times[-1] < t_end:
        times.append(float(t_end))
        states.append(counts.copy())
        controls.append(b.copy())
    S = np.array(states)
    return Trajectory(np.array(times), S, np.array(controls), model.to_x(S),
                      {"events": events, "blocked_rate_max": blocked_max, "suppressed": suppressed,
                       "seed": int(seed)})


def simulate_final(model, C0: np.ndarray, principal: PrincipalModel, t_end: float, seeds: np.ndarray,
                   B: Optional[np.ndarray] = None):
    """Lockstep simulation of many replicates of a channel model to time t_end.

    Replicate r starts from C0[r] and is driven by seeds[r]; each replicate
    draws exactly the same random numbers as `simulate` with that seed. With
    `B` given, replicate r holds the fixed control B[r]; otherwise the
    principal's fixed or best-response rule is used.

    Returns final counts (R, d), event counts (R,), max blocked rate (R,).
    """
    C = np.array(C0, dtype=np.int64)
    R = C.shape[0]
    keys = seed_key(np.asarray(seeds, dtype=np.uint64))
    if B is None:
        if principal.mode == "fixed":
            B = np.broadcast_to(principal.b, (R, principal.r)).copy()
        elif principal.mode == "best_response":
            B = np.atleast_2d(best_response(model.to_x(C), principal))
        else:
            raise ValueError("lockstep simulation does not support policy mode")
    B = np.array(B, dtype=float)
    deltas = model.deltas
    t = np.zeros(R)
    draws = np.zeros(R, dtype=np.uint64)
    events = np.zeros(R, dtype=np.int64)
    blocked = np.zeros(R)
    active = np.arange(R)
    first = True
    while active.size:
        Ca = C[active]
        if principal.mode == "best_response" and B is not None and not first:
            B[active] = np.atleast_2d(best_response(model.to_x(Ca), principal))
        first = False
        rates, blk, _ = model.batch_rates(Ca, B[active])
        blocked[active] = np.maximum(blocked[active], blk)
        cum = np.cumsum(rates, axis=1)
        total = cum[:, -1] if cum.shape[1] else np.zeros(active.size)
        if not np.all(np.isfinite(total)):
            bad = active[~np.isfinite(total)][0]
            raise NumericalError(f"non-finite total rate in replicate {bad}, state {C[bad].tolist()}")
        live = total > 0
        u1 = uniforms(keys[active], 2 * draws[active])
        u2 = uniforms(keys[active], 2 * draws[active] + np.uint64(1))
        draws[active] += live.astype(np.uint64)
        with np.errstate(divide="ignore"):
            t_next = np.where(live, t[active] - np.log(u1) / np.where(live, total, 1.0), np.inf)
        fire = t_next <= t_end
        if np.any(fire):
            ids = active[fire]
            target = (u2 * total)[fire]
            ch = np.sum(cum[fire] < target[:, None], axis=1)
            ch = np.minimum(ch, rates.shape[1] - 1)
            C[ids] += deltas[ch]
            t[ids] = t_next[fire]
            events[ids] += 1
        active = active[fire]
    return C, events, blocked


@dataclass
class EnsembleResult:
    mean: float
    stderr: float
    n_runs: int
    master_seed: int
    blocked_rate_max: float
    values: np.ndarray

    def __iter__(self):
        return iter((self.mean, self.stderr))

    def to_json(self) -> str:
        return json.dumps({"g_mean": self.mean, "g_stderr": self.stderr, "n_runs": self.n_runs,
                           "master_seed": self.master_seed, "blocked_rate_max": self.blocked_rate_max},
                          indent=2)


def _chunks(n, k):
    k = max(1, min(k, n))
    edges = np.linspace(0, n, k + 1).astype(int)
    return [(edges[i], edges[i + 1]) for i in range(k) if edges[i + 1] > edges[i]]


def final_states(model, x0: OccupationState, principal: PrincipalModel, t: float, n_runs: int,
                 master_seed: int, threads: Optional[int] = None, seed_offset: int = 0):
    """Final scaled states (n_runs, d) and per-replicate max blocked rates."""
    seeds = np.array([derive_seed(master_seed, seed_offset + r) for r in range(n_runs)], dtype=np.uint64)
    threads = threads or 1
    lockstep = getattr(model, "batchable", False) and principal.mode != "policy"

    def run(span):
        lo, hi = span
        if lockstep:
            C0 = np.broadcast_to(x0.counts, (hi - lo, x0.counts.size))
            try:
                C, _, blk = simulate_final(model, C0, principal, t, seeds[lo:hi])
            except NumericalError as exc:
                raise NumericalError(f"replicates {lo}..{hi - 1}: {exc}") from exc
            return model.to_x(C), blk
        xs, blks = [], []
        for r in range(lo, hi):
            try:
                tr = simulate(model, x0, principal, t, int(seeds[r]))
            except NumericalError as exc:
                raise NumericalError(f"replicate {r}: {exc}") from exc
            xs.append(tr.x[-1])
            blks.append(tr.meta["blocked_rate_max"])
        return np.array(xs), np.array(blks)

    spans = _chunks(n_runs, threads if threads > 1 else 1)
    if len(spans) == 1:
        parts = [run(spans[0])]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(run, spans))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def run_ensemble(model, x0: OccupationState, principal: PrincipalModel, t: float, g: Callable,
                 n_runs: int, master_seed: int, threads: Optional[int] = None) -> EnsembleResult:
    """Monte-Carlo estimate of E g(X(t)); replicate r is seeded by derive_seed(master_seed, r)."""
    if n_runs < 2:
        raise ValueError("n_runs must be at least 2")
    X, blk = final_states(model, x0, principal, t, n_runs, master_seed, threads)
    vals = np.array([float(g(x)) for x in X])
    mean = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / np.sqrt(n_runs))
    return EnsembleResult(mean, se, n_runs, int(master_seed), float(blk.max(initial=0.0)), vals)


def ensemble_mean(model, x0, principal, t, g, n_runs, master_seed, threads=None):
    """(mean, standard error) of g at time t over n_runs seeded replicates."""
    res = run_ensemble(model, x0, principal, t, g, n_runs, master_seed, threads)
    return res.mean, res.stderr
