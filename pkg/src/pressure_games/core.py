"""Domain types, the payoff catalog and coalition kernels.

Payoffs and detection curves are vectorized: a state argument `x` has shape
(..., n) and a control `b` has shape (..., r); the leading axes broadcast.
Strategy and size indices are 0-based in arrays (size k lives at position
k - 1) and 1-based in the coalition-rate helpers, which take sizes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

TOL_POS = 1e-12
TOL_SUM = 1e-9


class ConfigError(ValueError):
    """Invalid model configuration."""


class DomainError(ValueError):
    """A model function was evaluated outside its declared domain."""


class NumericalError(RuntimeError):
    """Non-finite rates, failed integration steps and similar breakdowns."""


# --------------------------------------------------------------------------
# states


@dataclass(frozen=True)
class SimplexState:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise DomainError("simplex state must be a non-empty vector")
        if np.any(w < -TOL_POS):
            raise DomainError(f"negative weight in simplex state: {w.min()}")
        if abs(w.sum() - 1.0) > TOL_SUM:
            raise DomainError(f"simplex weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", w)

    @property
    def d(self) -> int:
        return self.weights.size

    @classmethod
    def vertex(cls, d: int, j: int) -> "SimplexState":
        w = np.zeros(d)
        w[j] = 1.0
        return cls(w)


@dataclass(frozen=True)
class OccupationState:
    """Integer occupation counts with the scale h (h = 1/N for fixed populations)."""

    counts: np.ndarray
    scale: float
    max_index: Optional[int] = None

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 1:
            raise DomainError("counts must be a vector")
        if not np.issubdtype(c.dtype, np.integer):
            if np.any(c != np.round(c)):
                raise DomainError("counts must be integers")
        c = c.astype(np.int64)
        if np.any(c < 0):
            raise DomainError("counts must be non-negative")
        if self.scale <= 0:
            raise DomainError("scale must be positive")
        mi = c.size if self.max_index is None else int(self.max_index)
        if mi < c.size:
            if np.any(c[mi:] != 0):
                raise DomainError(f"counts beyond max_index={mi} must vanish")
            c = c[:mi]
        elif mi > c.size:
            c = np.concatenate([c, np.zeros(mi - c.size, dtype=np.int64)])
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "max_index", mi)

    @property
    def x(self) -> np.ndarray:
        return self.scale * self.counts

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def mass(self) -> int:
        return int((np.arange(1, self.counts.size + 1) * self.counts).sum())

    @classmethod
    def population(cls, counts) -> "OccupationState":
        counts = np.asarray(counts, dtype=np.int64)
        n = int(counts.sum())
        if n == 0:
            raise DomainError("no agents")
        return cls(counts, 1.0 / n)


# --------------------------------------------------------------------------
# detection curves


def _levels(levels, n):
    if levels is None:
        return np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)
    return np.asarray(levels, dtype=float)


def _per_strategy(b, d):
    """Control seen by each strategy: b_j when r == d, else the first coordinate."""
    b = np.asarray(b, dtype=float)
    if b.shape[-1] == d:
        return b
    return np.repeat(b[..., :1], d, axis=-1)


@dataclass(frozen=True)
class RatioDetection:
    """p_j = min(1, b_j / (1 + theta * mean resistance))."""

    d: int
    theta: float = 0.0
    levels: Optional[Sequence[float]] = None

    def __call__(self, x, b):
        x = np.asarray(x, dtype=float)
        xbar = x @ _levels(self.levels, x.shape[-1])
        bj = _per_strategy(b, self.d)
        return np.minimum(1.0, bj / (1.0 + self.theta * xbar)[..., None])

    def lipschitz_x(self, b_max: float) -> float:
        lv = _levels(self.levels, self.d)
        return abs(self.theta) * abs(b_max) * float(np.abs(lv).max())


@dataclass(frozen=True)
class LogisticDetection:
    """p_j = sigmoid(a b_j - c r_j - slope * mean resistance)."""

    d: int
    a: float
    c: float
    slope: float
    r_list: Sequence[float]
    levels: Optional[Sequence[float]] = None

    def __call__(self, x, b):
        x = np.asarray(x, dtype=float)
        xbar = x @ _levels(self.levels, x.shape[-1])
        z = self.a * _per_strategy(b, self.d) - self.c * np.asarray(self.r_list) - self.slope * xbar[..., None]
        return 1.0 / (1.0 + np.exp(-z))

    def lipschitz_x(self, b_max: float) -> float:
        return abs(self.slope) * float(np.abs(_levels(self.levels, self.d)).max()) / 4.0


@dataclass(frozen=True)
class ConstantDetection:
    p: Sequence[float]

    def __call__(self, x, b):
        x = np.asarray(x, dtype=float)
        p = np.asarray(self.p, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], np.shape(b)[:-1]) + p.shape
        return np.broadcast_to(p, shape)

    def lipschitz_x(self, b_max: float) -> float:
        return 0.0


@dataclass(frozen=True)
class FunctionDetection:
    """Wraps a user curve fn(x, b) -> (..., d)."""

    fn: Callable
    lipschitz: float = float("nan")

    def __call__(self, x, b):
        return np.asarray(self.fn(np.asarray(x, float), np.asarray(b, float)), dtype=float)

    def lipschitz_x(self, b_max: float) -> float:
        return self.lipschitz


def checked_detection(detection, x, b) -> np.ndarray:
    p = np.asarray(detection(x, b), dtype=float)
    bad = ~((p >= -TOL_POS) & (p <= 1.0 + TOL_POS))
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        j = int(idx[-1])
        b_arr = np.asarray(b, dtype=float)
        b_here = b_arr[tuple(idx[:-1][-b_arr.ndim + 1:])] if b_arr.ndim > 1 else b_arr
        raise DomainError(
            f"detection probability {p[tuple(idx)]!r} outside [0,1] for strategy j={j}, b={np.round(b_here, 12).tolist()}"
        )
    return np.clip(p, 0.0, 1.0)


# --------------------------------------------------------------------------
# payoff catalog


def _apply_fine(fine, r):
    if callable(fine):
        return np.asarray(fine(r), dtype=float)
    return np.full_like(r, float(fine))


@dataclass(frozen=True)
class InspectionParams:
    r: float
    r_list: Sequence[float]
    fine: Callable | float


@dataclass(frozen=True)
class CorruptionParams:
    w: float
    w0: float
    r_list: Sequence[float]
    fine: Callable | float


@dataclass(frozen=True)
class CyberParams:
    c: float
    r_list: Sequence[float]


@dataclass(frozen=True)
class TerrorParams:
    S_list: Sequence[float]
    r_fail: Callable | float = 0.0
    r_succ: Callable | float = 0.0


@dataclass(frozen=True)
class TabularParams:
    """R_j(x, b) = table_j(b) (multilinear in b) + (x_coef @ x)_j.

    `table` has shape (d,) when b is irrelevant, otherwise (d, n_1, ..., n_r)
    over the grid `b_axes`.
    """

    table: np.ndarray
    b_axes: Sequence[np.ndarray] = ()
    x_coef: Optional[np.ndarray] = None


def _b_term(fn, b, d):
    if callable(fn):
        out = np.asarray(fn(np.asarray(b, float)[..., 0]), dtype=float)
        return out if out.shape[-1:] == (d,) else np.repeat(out[..., None], d, axis=-1)
    return np.full(np.shape(b)[:-1] + (d,), float(fn))


def inspection_raw(p, params: InspectionParams):
    r_j = np.asarray(params.r_list, dtype=float)
    return params.r + (1.0 - p) * r_j - p * _apply_fine(params.fine, r_j)


def corruption_raw(p, params: CorruptionParams):
    r_j = np.asarray(params.r_list, dtype=float)
    return (1.0 - p) * (r_j + params.w) + p * (params.w0 - _apply_fine(params.fine, r_j))


def cyber_raw(p, params: CyberParams):
    return p * params.c + np.asarray(params.r_list, dtype=float)


def terror_raw(p, b, params: TerrorParams):
    d = p.shape[-1]
    S = np.asarray(params.S_list, dtype=float)
    return (1.0 - p) * _b_term(params.r_fail, b, d) + p * (S + _b_term(params.r_succ, b, d))


def _multilinear(grid_axes, table, q):
    """Multilinear interpolation of table[..., n_1, ..., n_r] at points q (..., r).

    Queries are clamped to the grid box. At a grid node the node value is
    returned exactly.
    """
    q = np.asarray(q, dtype=float)
    lead = q.shape[:-1]
    q = q.reshape(-1, q.shape[-1])
    nax = len(grid_axes)
    idx, frac = [], []
    for a in range(nax):
        g = np.asarray(grid_axes[a], dtype=float)
        qa = np.clip(q[:, a], g[0], g[-1])
        if g.size == 1:
            idx.append(np.zeros(qa.size, dtype=int))
            frac.append(np.zeros(qa.size))
            continue
        i = np.clip(np.searchsorted(g, qa, side="right") - 1, 0, g.size - 2)
        t = (qa - g[i]) / (g[i + 1] - g[i])
        idx.append(i)
        frac.append(t)
    head = table.shape[: table.ndim - nax]
    out = np.zeros((q.shape[0],) + head)
    for corner in itertools.product((0, 1), repeat=nax):
        w = np.ones(q.shape[0])
        ii = []
        for a, c in enumerate(corner):
            w = w * (frac[a] if c else (1.0 - frac[a]))
            ii.append(np.minimum(idx[a] + c, len(grid_axes[a]) - 1))
        vals = table[(Ellipsis,) + tuple(ii)]  # head + (npts,)
        vals = np.moveaxis(vals, -1, 0) if head else vals
        out += (w.reshape((-1,) + (1,) * len(head))) * vals
    return out.reshape(lead + head)


def tabular_raw(x, b, params: TabularParams):
    table = np.asarray(params.table, dtype=float)
    x = np.asarray(x, dtype=float)
    b = np.asarray(b, dtype=float)
    d = table.shape[0]
    lead = np.broadcast_shapes(x.shape[:-1], b.shape[:-1])
    if table.ndim == 1:
        base = np.broadcast_to(table, lead + (d,))
    else:
        base = _multilinear(params.b_axes, table, np.broadcast_to(b, lead + b.shape[-1:]))
    if params.x_coef is not None:
        base = base + x @ np.asarray(params.x_coef, dtype=float).T
    return np.broadcast_to(base, lead + (d,))


@dataclass(frozen=True)
class PayoffModel:
    """A catalog payoff R_j(x, b) with its detection curve and orientation."""

    kind: str
    params: object
    detection: Optional[Callable] = None
    orientation: str = "maximize"

    def __post_init__(self):
        if self.kind not in ("inspection", "corruption", "cyber", "terror", "tabular"):
            raise ConfigError(f"unknown payoff kind {self.kind!r}")
        if self.orientation not in ("maximize", "minimize"):
            raise ConfigError(f"unknown orientation {self.orientation!r}")
        if self.kind != "tabular" and self.detection is None:
            raise ConfigError(f"{self.kind} payoff needs a detection curve")

    @property
    def d(self) -> int:
        if self.kind == "tabular":
            return int(np.asarray(self.params.table).shape[0])
        if self.kind == "terror":
            return len(self.params.S_list)
        return len(self.params.r_list)

    def detection_probability(self, x, b):
        return checked_detection(self.detection, x, b)

    def raw(self, x, b) -> np.ndarray:
        """The payoff as written for the application (a cost for cyber)."""
        if self.kind == "tabular":
            return tabular_raw(x, b, self.params)
        p = self.detection_probability(x, b)
        if self.kind == "inspection":
            return inspection_raw(p, self.params)
        if self.kind == "corruption":
            return corruption_raw(p, self.params)
        if self.kind == "cyber":
            return cyber_raw(p, self.params)
        return terror_raw(p, b, self.params)

    def rewards(self, x, b) -> np.ndarray:
        """Engine-facing rewards, always to be maximized."""
        r = self.raw(x, b)
        return -r if self.orientation == "minimize" else r

    def lipschitz_x(self, b_max: float) -> float:
        """Analytic bound on the l1-Lipschitz constant of R_j(., b) in x."""
        if self.kind == "tabular":
            A = self.params.x_coef
            return 0.0 if A is None else float(np.abs(np.asarray(A)).max())
        lp = self.detection.lipschitz_x(b_max)
        if self.kind == "inspection":
            r_j = np.asarray(self.params.r_list, float)
            coef = np.abs(r_j + _apply_fine(self.params.fine, r_j))
        elif self.kind == "corruption":
            r_j = np.asarray(self.params.r_list, float)
            coef = np.abs(r_j + self.params.w - self.params.w0 + _apply_fine(self.params.fine, r_j))
        elif self.kind == "cyber":
            coef = np.array([abs(self.params.c)])
        else:
            b = np.array([b_max])
            S = np.asarray(self.params.S_list, float)
            coef = np.abs(S + _b_term(self.params.r_succ, b, S.size) - _b_term(self.params.r_fail, b, S.size))
        return float(coef.max()) * lp

    # constructors -------------------------------------------------------

    @classmethod
    def inspection(cls, params: InspectionParams, detection):
        return cls("inspection", params, detection)

    @classmethod
    def corruption(cls, params: CorruptionParams, detection):
        return cls("corruption", params, detection)

    @classmethod
    def cyber(cls, params: CyberParams, detection):
        return cls("cyber", params, detection, orientation="minimize")

    @classmethod
    def terror(cls, params: TerrorParams, detection):
        return cls("terror", params, detection)

    @classmethod
    def tabular(cls, table, b_axes=(), x_coef=None):
        return cls("tabular", TabularParams(np.asarray(table, float), tuple(np.asarray(a, float) for a in b_axes),
                                            None if x_coef is None else np.asarray(x_coef, float)))


def _xb(x, b):
    x = np.asarray(x.weights if isinstance(x, SimplexState) else x, dtype=float)
    return x, np.atleast_1d(np.asarray(b, dtype=float))


def inspection_payoff(j, x, b, params: InspectionParams, detection) -> float:
    x, b = _xb(x, b)
    return float(inspection_raw(checked_detection(detection, x, b), params)[j])


def corruption_payoff(j, x, b, params: CorruptionParams, detection) -> float:
    x, b = _xb(x, b)
    return float(corruption_raw(checked_detection(detection, x, b), params)[j])


def cyber_payoff(j, x, b, params: CyberParams, detection) -> float:
    """Raw cost of strategy j; engines consume its negation."""
    x, b = _xb(x, b)
    return float(cyber_raw(checked_detection(detection, x, b), params)[j])


def terror_payoff(j, x, b, params: TerrorParams, detection) -> float:
    x, b = _xb(x, b)
    return float(terror_raw(checked_detection(detection, x, b), b, params)[j])


def terror_principal_cost(x, b, params: TerrorParams, detection) -> np.ndarray:
    """B(x, b) = sum_j x_j [(1 - p_j) b + p_j (b + S_j)] for scalar b."""
    x = np.asarray(x, dtype=float)
    b = np.asarray(b, dtype=float)
    p = checked_detection(detection, x, b)
    S = np.asarray(params.S_list, dtype=float)
    bs = b[..., :1]
    return np.sum(x * ((1.0 - p) * bs + p * (bs + S)), axis=-1)


# --------------------------------------------------------------------------
# principal description (decision rules live in `response` and `principal`)


@dataclass(frozen=True)
class PrincipalModel:
    """Principal reward B(x, b), control box and operating mode.

    mode is one of "fixed" (b held at `b`), "best_response" (b = argmax B at
    the current state) or "policy" (b = policy(k, x) on the grid k*tau).
    """

    reward: Callable
    control_box: np.ndarray
    mode: str = "fixed"
    b: Optional[np.ndarray] = None
    policy: Optional[Callable] = None
    tau: Optional[float] = None

    def __post_init__(self):
        box = np.atleast_2d(np.asarray(self.control_box, dtype=float))
        if box.shape[-1] != 2 or np.any(box[:, 0] > box[:, 1]):
            raise ConfigError("control_box must be a list of [lo, hi] intervals")
        object.__setattr__(self, "control_box", box)
        if self.mode not in ("fixed", "best_response", "policy"):
            raise ConfigError(f"unknown principal mode {self.mode!r}")
        if self.mode == "fixed":
            if self.b is None:
                raise ConfigError("fixed mode needs b")
            b = np.atleast_1d(np.asarray(self.b, dtype=float))
            if b.shape != (box.shape[0],):
                raise ConfigError(f"b has {b.size} coordinates, control box has {box.shape[0]}")
            if np.any(b < box[:, 0] - 1e-12) or np.any(b > box[:, 1] + 1e-12):
                raise ConfigError(f"fixed b={b.tolist()} outside control box")
            object.__setattr__(self, "b", b)
        if self.mode == "policy" and (self.policy is None or not self.tau or self.tau <= 0):
            raise ConfigError("policy mode needs a policy and tau > 0")

    @property
    def r(self) -> int:
        return self.control_box.shape[0]

    def with_fixed(self, b) -> "PrincipalModel":
        return PrincipalModel(self.reward, self.control_box, "fixed", np.atleast_1d(np.asarray(b, float)))

    @classmethod
    def constant(cls, b, reward=None, box=None) -> "PrincipalModel":
        b = np.atleast_1d(np.asarray(b, float))
        if box is None:
            box = np.stack([b, b], axis=-1)
        if reward is None:
            reward = zero_reward
        return cls(reward, box, "fixed", b)


def zero_reward(x, b):
    x = np.asarray(x, float)
    b = np.asarray(b, float)
    return np.zeros(np.broadcast_shapes(x.shape[:-1], b.shape[:-1]))


# --------------------------------------------------------------------------
# coalition kernels


def _weight_matrix(w, n):
    """a[l, k] for l, k in 1..n as an (n+1, n+1) array (row/col 0 unused)."""
    if callable(w):
        out = np.zeros((n + 1, n + 1))
        for l in range(1, n + 1):
            for k in range(1, n + 1):
                out[l, k] = w(l, k)
    else:
        w = np.asarray(w, dtype=float)
        if w.ndim == 0:
            out = np.full((n + 1, n + 1), float(w))
        else:
            out = np.zeros((n + 1, n + 1))
            m = min(n + 1, w.shape[0])
            out[:m, :m] = w[:m, :m]
    if np.any(out < 0):
        raise ConfigError("kernel weight coefficients must be non-negative")
    return out


@dataclass(frozen=True)
class AttachSpec:
    alpha: float
    lam: Callable | float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"attachment alpha={self.alpha} outside [0,1]")
        if not callable(self.lam) and self.lam < 0:
            raise ConfigError("attachment intensity must be non-negative")

    def intensity(self, x, b):
        if callable(self.lam):
            val = np.asarray(self.lam(np.asarray(x, float), np.asarray(b, float)), dtype=float)
        else:
            val = np.asarray(float(self.lam))
        if np.any(val < 0):
            raise DomainError("attachment intensity lambda(x, b) is negative")
        return val


@dataclass(frozen=True)
class KernelSpec:
    """Coalition merge/split kernels.

    `merge` / `split` may be a constant or a function (k, j, x, b) -> rate;
    when left as None the strategic payoff-difference kernels are used with
    the weights `merge_weights` (a_{l,k}) and `split_weights` (a~_{k,j}).
    """

    merge: Callable | float | None = None
    split: Callable | float | None = None
    merge_weights: Callable | float | np.ndarray = 0.0
    split_weights: Callable | float | np.ndarray = 0.0
    attach: Optional[AttachSpec] = None
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        for name in ("merge", "split"):
            v = getattr(self, name)
            if v is not None and not callable(v) and float(v) < 0:
                raise ConfigError(f"{name} rate must be non-negative")
        for name in ("merge_weights", "split_weights"):
            v = getattr(self, name)
            if not callable(v) and np.any(np.asarray(v, float) < 0):
                raise ConfigError("kernel weight coefficients must be non-negative")

    def _weights(self, which, n):
        key = (which, n)
        if key not in self._cache:
            self._cache[key] = _weight_matrix(getattr(self, which), n)
        return self._cache[key]

    def merge_matrix(self, x, b, R, n) -> np.ndarray:
        """C[k-1, j-1] for sizes k, j in 1..n. R[s-1] = payoff of size s, len >= 2n."""
        if self.merge is None:
            R = np.asarray(R, dtype=float)
            a = self._weights("merge_weights", 2 * n)
            k = np.arange(1, n + 1)
            K, J = np.meshgrid(k, k, indexing="ij")
            S = K + J
            Rs, Rk, Rj = R[S - 1], R[K - 1], R[J - 1]
            return a[S, K] * np.maximum(Rs - Rk, 0.0) + a[S, J] * np.maximum(Rs - Rj, 0.0)
        if callable(self.merge):
            out = np.empty((n, n))
            for k in range(1, n + 1):
                for j in range(1, n + 1):
                    out[k - 1, j - 1] = self.merge(k, j, x, b)
            if np.any(out < 0):
                raise DomainError("merge kernel produced a negative rate")
            return out
        return np.full((n, n), float(self.merge))

    def split_matrix(self, x, b, R, n) -> np.ndarray:
        """F[k-1, j-1] for j < k <= n (zero elsewhere)."""
        k = np.arange(1, n + 1)
        K, J = np.meshgrid(k, k, indexing="ij")
        below = J < K
        if self.split is None:
            R = np.asarray(R, dtype=float)
            a = self._weights("split_weights", n)
            Rk, Rj = R[K - 1], R[J - 1]
            Rkj = R[np.maximum(K - J, 1) - 1]
            out = a[K, J] * np.maximum(Rj - Rk, 0.0) + a[K, np.maximum(K - J, 0)] * np.maximum(Rkj - Rk, 0.0)
            return np.where(below, out, 0.0)
        if callable(self.split):
            out = np.zeros((n, n))
            for kk in range(2, n + 1):
                for jj in range(1, kk):
                    out[kk - 1, jj - 1] = self.split(kk, jj, x, b)
            if np.any(out < 0):
                raise DomainError("split kernel produced a negative rate")
            return out
        return np.where(below, float(self.split), 0.0)

    def check_bounds(self, x, b, R, n) -> tuple[float, float]:
        """(sup C_kj, sup_j sum_{k<j} F_jk) on the truncated index range."""
        C = self.merge_matrix(x, b, R, n)
        F = self.split_matrix(x, b, R, n)
        return float(C.max(initial=0.0)), float(F.sum(axis=1).max(initial=0.0))

    @classmethod
    def constant(cls, C: float = 1.0, F: float = 0.0, attach=None):
        return cls(merge=float(C), split=float(F), attach=attach)


def coalition_rates(k: int, j: int, x, b, kernel: KernelSpec, R) -> tuple[float, float]:
    """(C_kj, F_kj) for sizes k, j >= 1; F is 0 unless j < k.

    R is a sequence of per-size payoffs with R[s - 1] the payoff of size s.
    """
    if k < 1 or j < 1:
        raise DomainError("coalition sizes start at 1")
    n = max(k, j)
    R = np.asarray(R, dtype=float)
    if R.size < 2 * n:
        R = np.concatenate([R, np.full(2 * n - R.size, R[-1])])
    C = kernel.merge_matrix(x, b, R, n)[k - 1, j - 1]
    F = kernel.split_matrix(x, b, R, n)[k - 1, j - 1] if j < k else 0.0
    return float(C), float(F)


class SizePayoff:
    """Per-size payoff R_s(x, b) for coalition models."""

    def __init__(self, fn: Optional[Callable] = None, table: Optional[Sequence[float]] = None):
        if (fn is None) == (table is None):
            raise ConfigError("give exactly one of fn or table")
        self.fn = fn
        self.table = None if table is None else np.asarray(table, dtype=float)

    def values(self, x, b, n: int) -> np.ndarray:
        """R_1..R_n as an array of length n."""
        if self.table is not None:
            t = self.table
            return t[:n] if t.size >= n else np.concatenate([t, np.full(n - t.size, t[-1])])
        return np.asarray(self.fn(np.arange(1, n + 1), x, b), dtype=float)

    @classmethod
    def linear(cls, intercept=0.0, slope=0.0, b_coef=0.0):
        return cls(fn=lambda s, x, b: intercept + slope * s - b_coef * float(np.asarray(b).ravel()[0]))


# --------------------------------------------------------------------------
# classes of players


@dataclass(frozen=True)
class ClassStructure:
    num_classes: int
    comm_mode: str
    class_fractions: Sequence[float]
    per_class_kappa: Sequence[float]

    def __post_init__(self):
        if self.comm_mode not in ("C1_no_communication", "C2_full_communication"):
            raise ConfigError(f"unknown communication mode {self.comm_mode!r}")
        om = np.asarray(self.class_fractions, float)
        ka = np.asarray(self.per_class_kappa, float)
        if om.size != self.num_classes or ka.size != self.num_classes:
            raise ConfigError("class_fractions and per_class_kappa need one entry per class")
        if np.any(om < 0) or abs(om.sum() - 1.0) > TOL_SUM:
            raise ConfigError(f"class fractions must be non-negative and sum to 1 (got {om.sum()!r})")
        if np.any(ka <= 0):
            raise ConfigError("per-class kappa must be positive")


# --------------------------------------------------------------------------
# numerics


def l1(v) -> float:
    return float(np.abs(np.asarray(v, float)).sum())


def project_simplex(x, tol: float = TOL_POS) -> np.ndarray:
    """Clamp tiny negatives to zero and renormalize along the last axis."""
    x = np.array(x, dtype=float)
    x[(x < 0) & (x >= -tol)] = 0.0
    return x / x.sum(axis=-1, keepdims=True)


def clamp_to_simplex(x) -> np.ndarray:
    """Nearest-in-spirit simplex point: negatives to zero, then renormalize."""
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    s = x.sum(axis=-1, keepdims=True)
    return np.where(s > 0, x / np.where(s > 0, s, 1.0), 1.0 / x.shape[-1])


def simplex_lattice(d: int, m: int) -> np.ndarray:
    """All points of the simplex with coordinates in {0, 1/m, ..., 1}."""
    pts = [c for c in itertools.product(range(m + 1), repeat=d - 1) if sum(c) <= m]
    arr = np.array([(m - sum(c),) + c for c in pts], dtype=float)
    return arr / m


def random_simplex(rng: np.random.Generator, d: int, n: int) -> np.ndarray:
    return rng.dirichlet(np.ones(d), size=n)
