"""Instantaneous decision rule of the principal: b*(x) = argmax_b B(x, b)."""

import itertools

import numpy as np

from .core import PrincipalModel

INVPHI = (np.sqrt(5.0) - 1.0) / 2.0
B_TOL = 1e-10
POLISH_STEP = 6e-6


def _golden_max(f, lo, hi, tol=B_TOL):
    """Vectorized golden-section maximization of f on [lo, hi] per point.

    The endpoints are compared with the interior result at the end so that a
    boundary maximizer is returned exactly; ties go to the endpoints.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    width = float(np.max(hi - lo, initial=0.0))
    if width <= tol:
        return lo.copy()
    n_iter = int(np.ceil(np.log(tol / width) / np.log(INVPHI))) + 1
    a, b = lo.copy(), hi.copy()
    c = b - INVPHI * (b - a)
    d = a + INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(n_iter):
        left = fc >= fd
        # maximum lies in [a, d] where left, else in [c, b]
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = b - INVPHI * (b - a)
        new_d = a + INVPHI * (b - a)
        c_next = np.where(left, new_c, d)
        d_next = np.where(left, c, new_d)
        f_new = f(np.where(left, new_c, new_d))
        fc_next = np.where(left, f_new, fd)
        fd_next = np.where(left, fc, f_new)
        c, d, fc, fd = c_next, d_next, fc_next, fd_next
    mid = _newton_polish(f, 0.5 * (a + b), lo, hi)
    # endpoints first so that a flat tie resolves to the boundary
    cands = np.stack([lo, hi, mid])
    vals = np.stack([f(lo), f(hi), f(mid)])
    best = np.argmax(vals, axis=0)
    return np.take_along_axis(cands, best[None], axis=0)[0]


def _newton_polish(f, t, lo, hi):
    """One Newton step from central differences; golden section alone stalls near sqrt(eps)."""
    delta = POLISH_STEP * np.maximum(1.0, np.abs(t))
    fm, f0, fp = f(t - delta), f(t), f(t + delta)
    curv = fp - 2.0 * f0 + fm
    with np.errstate(divide="ignore", invalid="ignore"):
        step = -0.5 * delta * (fp - fm) / curv
    cand = t + np.where((curv < 0) & np.isfinite(step), np.clip(step, -delta, delta), 0.0)
    cand = np.clip(cand, lo, hi)
    return np.where(f(cand) >= f0, cand, t)


def _concave_probe(B, x, lo, hi):
    mid = 0.5 * (lo + hi)
    ok = np.ones(x.shape[0], dtype=bool)
    for a in range(lo.size):
        if hi[a] <= lo[a]:
            continue
        pts = []
        for v in (lo[a], mid[a], hi[a]):
            b = np.broadcast_to(mid, x.shape[:1] + mid.shape).copy()
            b[:, a] = v
            pts.append(np.asarray(B(x, b), dtype=float))
        scale = 1e-12 * (1.0 + np.abs(pts[0]) + np.abs(pts[2]))
        ok &= pts[1] >= 0.5 * (pts[0] + pts[2]) - scale
    return ok


def _coordinate_sweeps(B, x, b0, lo_pt, hi_pt, max_sweeps=200):
    b = b0.copy()
    r = b.shape[-1]
    for _ in range(max_sweeps if r > 1 else 1):
        prev = b.copy()
        for a in range(r):
            def f(t, a=a):
                bb = b.copy()
                bb[:, a] = t
                return np.asarray(B(x, bb), dtype=float)
            b[:, a] = _golden_max(f, lo_pt[:, a], hi_pt[:, a])
        if np.max(np.abs(b - prev), initial=0.0) < B_TOL:
            break
    return b


def _grid_points(lo, hi):
    r = lo.size
    n = {1: 101, 2: 21}.get(r, 11)
    axes = [np.linspace(lo[a], hi[a], n if hi[a] > lo[a] else 1) for a in range(r)]
    return axes, np.array(list(itertools.product(*axes)))


def best_response(x, principal: PrincipalModel) -> np.ndarray:
    """argmax over the control box of B(x, b), for one state (d,) or a batch (R, d)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    B = principal.reward
    lo, hi = principal.control_box[:, 0], principal.control_box[:, 1]
    R = X.shape[0]
    lo_pt = np.broadcast_to(lo, (R, lo.size))
    hi_pt = np.broadcast_to(hi, (R, hi.size))
    if np.all(_concave_probe(B, X, lo, hi)):
        b = _coordinate_sweeps(B, X, 0.5 * (lo_pt + hi_pt), lo_pt, hi_pt)
    else:
        axes, grid = _grid_points(lo, hi)
        vals = np.stack([np.asarray(B(X, np.broadcast_to(g, (R, g.size))), float) for g in grid], axis=1)
        start = grid[np.argmax(vals, axis=1)]
        # bracket the grid maximizer by its neighbours on each axis
        step = np.array([(ax[1] - ax[0]) if ax.size > 1 else 0.0 for ax in axes])
        b = _coordinate_sweeps(B, X, start, np.maximum(start - step, lo), np.minimum(start + step, hi))
    b = np.clip(b, lo, hi)
    return b[0] if single else b


def current_control(principal: PrincipalModel, x, k: int = 0) -> np.ndarray:
    """Control in force at state x (policy mode: at grid step k)."""
    if principal.mode == "fixed":
        x = np.asarray(x)
        return principal.b if x.ndim == 1 else np.broadcast_to(principal.b, x.shape[:-1] + principal.b.shape)
    if principal.mode == "best_response":
        return best_response(x, principal)
    b = np.asarray(principal.policy(k, np.asarray(x, float)), dtype=float)
    return np.clip(b, principal.control_box[:, 0], principal.control_box[:, 1])
