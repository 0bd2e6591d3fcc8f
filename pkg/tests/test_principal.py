import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pressure_games.core import ConfigError, PayoffModel, PrincipalModel
from pressure_games.principal import (PolicyTable, ValueTable, best_response, control_value_iterate,
                                      discounted_value, shapley_apply, shapley_apply_markov, value_iterate)

TAU = 0.5
B_AXIS = np.array([0.0, 0.5, 1.0])
# R_2 - R_1 = 1 + 2b, linear in b so the tabular payoff is exact between nodes
STEERED = PayoffModel.tabular([[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]], b_axes=[B_AXIS])
FLAT = PayoffModel.tabular([1.0, 1.0])


def steer_reward(x, b):
    return 2.0 * np.asarray(x)[..., 1] - 3.0 * (np.asarray(b)[..., 0] - 0.5) ** 2


STEER = PrincipalModel(steer_reward, [[0.0, 1.0]], "best_response")


def logistic(x2, c, t):
    e = np.exp(c * t)
    return x2 * e / (1.0 - x2 + x2 * e)


def principal_of(fn, box=((0.0, 1.0),)):
    return PrincipalModel(lambda x, b: fn(np.asarray(x), np.asarray(b)), [list(r) for r in box], "best_response")


def test_best_response_examples():
    x = np.array([0.5, 0.5])
    assert best_response(x, principal_of(lambda x, b: -(b[..., 0] - 0.3) ** 2))[0] == pytest.approx(0.3, abs=1e-10)
    assert best_response(x, principal_of(lambda x, b: 2.0 * b[..., 0]))[0] == 1.0
    log = principal_of(lambda x, b: x[..., 0] * np.log(b[..., 0]) - b[..., 0], [(0.1, 10.0)])
    assert best_response(x, log)[0] == pytest.approx(0.5, abs=1e-10)


def test_best_response_nonconcave_falls_back_to_grid():
    # cos(6 pi b) + b has interior local maxima; the global one is the endpoint b = 1
    wavy = principal_of(lambda x, b: np.cos(6 * np.pi * b[..., 0]) + b[..., 0])
    assert best_response(np.array([0.5, 0.5]), wavy)[0] == pytest.approx(1.0, abs=1e-8)


def test_best_response_two_controls():
    pr = principal_of(lambda x, b: -(b[..., 0] - 0.2) ** 2 - (b[..., 1] - x[..., 0]) ** 2 - 0.5 * b[..., 0] * b[..., 1],
                      [(0.0, 1.0), (0.0, 1.0)])
    b = best_response(np.array([0.8, 0.2]), pr)
    # stationarity: 2(b0 - 0.2) + 0.5 b1 = 0, 2(b1 - 0.8) + 0.5 b0 = 0
    exact = np.linalg.solve([[2.0, 0.5], [0.5, 2.0]], [0.4, 1.6])
    assert b == pytest.approx(exact, abs=1e-8)


def test_value_table_node_interpolation_is_exact():
    V = ValueTable.from_function(lambda X: np.sin(5 * X[:, 1]) + X[:, 2] ** 3, 3, 6)
    X = V.x_nodes()
    free = np.array(list(itertools.product(*V.x_axes)))
    inside = free.sum(axis=1) <= 1 + 1e-12     # cube nodes outside the simplex hold projected values
    assert np.array_equal(V(X[inside]), V.values.ravel()[inside])


def test_value_table_refuses_large_d():
    with pytest.raises(ConfigError, match="d <= 4"):
        ValueTable.zeros(5, 4)
    with pytest.raises(ConfigError):
        ValueTable(2, [np.linspace(0, 1, 3)], np.zeros(4))


def test_policy_actions_in_box():
    with pytest.raises(Exception, match="outside"):
        PolicyTable(2, [np.linspace(0, 1, 3)], np.array([[0.2], [1.5], [0.0]]), np.array([[0.0, 1.0]]))


def test_shapley_zero_drift_b_free():
    V = ValueTable.from_function(lambda X: X[:, 1] ** 2, 2, 8)
    pr = principal_of(lambda x, b: 3.0 * x[..., 0] + 0 * b[..., 0])
    SV, pol = shapley_apply(V, FLAT, pr, TAU)
    X = V.x_nodes()
    assert SV.values.ravel() == pytest.approx(TAU * 3.0 * X[:, 0] + X[:, 1] ** 2, abs=1e-13)
    assert np.all(pol.actions == 0.0)      # flat objective: lowest grid index wins


def test_shapley_zero_everything():
    SV, _ = shapley_apply(ValueTable.zeros(3, 4), PayoffModel.tabular([0.0, 1.0, 2.0]),
                          principal_of(lambda x, b: 0 * b[..., 0]), TAU)
    assert np.all(SV.values == 0)


def test_value_iterate_n0_returns_v0():
    V0 = ValueTable.from_function(lambda X: X[:, 1], 2, 4)
    V, pols = value_iterate(V0, 0, STEERED, STEER, TAU)
    assert V is V0 and pols == []


def test_telescoping():
    V0 = ValueTable.from_function(lambda X: np.cos(X[:, 1]), 2, 6)
    pr = principal_of(lambda x, b: x[..., 1] - x[..., 0] + 0 * b[..., 0])
    V, pols = value_iterate(V0, 4, FLAT, pr, TAU)
    X = V0.x_nodes()
    assert V.values.ravel() == pytest.approx(4 * TAU * (X[:, 1] - X[:, 0]) + np.cos(X[:, 1]), abs=1e-12)
    assert len(pols) == 4 and len(V.meta["sup_change"]) == 4


def enumeration_oracle(x2):
    """max over the 9 control sequences of the composed reward along the logistic flow, V_0 = 0."""
    best = -np.inf
    for b0, b1 in itertools.product(B_AXIS, repeat=2):
        y2 = logistic(x2, 1 + 2 * b0, TAU)
        v = TAU * steer_reward([1 - x2, x2], [b0]) + TAU * steer_reward([1 - y2, y2], [b1])
        best = max(best, v)
    return best


def test_matches_enumeration_oracle():
    V0 = ValueTable.zeros(2, 10)
    V2, pols = value_iterate(V0, 2, STEERED, STEER, TAU, b_grid=B_AXIS, refine=False)
    for x2 in V0.x_axes[0]:
        assert V2(np.array([1 - x2, x2])) == pytest.approx(enumeration_oracle(x2), abs=1e-9)
    # the second decision is b = 0.5 everywhere; the first trades reward against steering
    assert np.all(pols[1].actions == 0.5)


def test_discounted_constant_reward():
    pr = principal_of(lambda x, b: 0 * x[..., 0] + 2.0 + 0 * b[..., 0])
    res = discounted_value(STEERED, pr, 0.8, TAU, tol=1e-10, m=4, b_grid=B_AXIS, refine=False)
    assert res.value.values == pytest.approx(np.full(5, TAU * 2.0 / 0.2), abs=1e-9)


def test_discounted_small_beta_single_sweep():
    beta = 0.01
    res = discounted_value(STEERED, STEER, beta, TAU, tol=1e-12, m=6, b_grid=B_AXIS, refine=False)
    X = res.value.x_nodes()
    greedy = np.max([TAU * steer_reward(X, np.full((len(X), 1), b)) for b in B_AXIS], axis=0)
    V = res.value.values.ravel()
    assert np.all(np.abs(V - greedy) <= beta * np.abs(V).max() + 1e-12)


def test_discounted_contraction_ratio():
    V0 = ValueTable.from_function(lambda X: 5 * X[:, 1], 2, 10)
    res = discounted_value(STEERED, STEER, 0.9, TAU, tol=1e-8, V0=V0, min_sweeps=20, b_grid=B_AXIS, refine=False)
    assert res.sweeps >= 20
    assert max(res.ratios[:20]) <= 0.9 + 0.01


@given(st.integers(0, 10_000))
@settings(max_examples=15)
def test_shapley_monotone_and_shift(seed):
    rng = np.random.default_rng(seed)
    V = ValueTable(2, [np.linspace(0, 1, 6)], rng.normal(size=6))
    W = ValueTable(2, V.x_axes, V.values + rng.uniform(0, 1, size=6))
    kw = dict(b_grid=B_AXIS, refine=False)
    SV, _ = shapley_apply(V, STEERED, STEER, TAU, **kw)
    SW, _ = shapley_apply(W, STEERED, STEER, TAU, **kw)
    assert np.all(SV.values <= SW.values + 1e-12)
    c = float(rng.normal())
    Vc = ValueTable(2, V.x_axes, V.values + c)
    SVc, _ = shapley_apply(Vc, STEERED, STEER, TAU, **kw)
    assert SVc.values == pytest.approx(SV.values + c, abs=1e-12)
    SVb, _ = shapley_apply(V, STEERED, STEER, TAU, discount=0.7, **kw)
    SVcb, _ = shapley_apply(Vc, STEERED, STEER, TAU, discount=0.7, **kw)
    assert SVcb.values == pytest.approx(SVb.values + 0.7 * c, abs=1e-12)


def test_grid_refinement_within_interpolation_model():
    pay = PayoffModel.tabular([0.0, 2.0])
    pr = principal_of(lambda x, b: x[..., 1] ** 2 - 0.5 * (b[..., 0] - 0.3) ** 2)
    probe = np.array([[0.7, 0.3], [0.5, 0.5], [0.9, 0.1]])
    n = 3
    tabs = {}
    for m in (10, 20, 40):
        V0 = ValueTable.from_function(lambda X: np.sin(3 * X[:, 1]), 2, m)
        tabs[m], _ = value_iterate(V0, n, pay, pr, 0.3, b_grid=np.linspace(0, 1, 5), refine=False)
    for m in (10, 20):
        # each of n steps interpolates with error <= dx^2 sup|V''| / 8, on both grids
        curv = np.abs(np.diff(tabs[2 * m].values, 2)).max() * (2 * m) ** 2
        model = 2 * n * curv / (8 * m * m)
        assert np.abs(tabs[m](probe) - tabs[2 * m](probe)).max() < model


def test_control_value_iterate_frozen():
    S_T = lambda X, B: X[:, 1] ** 2
    V, pols = control_value_iterate(S_T, 2, 0.0, 1.0, FLAT, lambda X, B, U: 0 * U[:, 0],
                                    principal_of(lambda x, b: 0 * b[..., 0]), [-1.0, 0.0, 1.0], m=5, b_points=3)
    X, _ = V.node_states()
    assert V.values.ravel() == pytest.approx(X[:, 1] ** 2, abs=1e-13)
    assert len(pols) == 2


def test_control_value_iterate_single_step():
    tau = 0.25
    S_T = lambda X, B: X[:, 1] + B[:, 0]
    J = lambda X, B, U: X[:, 0] + 0 * U[:, 0]
    V, _ = control_value_iterate(S_T, 1, 0.75, 1.0, FLAT, J, principal_of(lambda x, b: 0 * b[..., 0]),
                                 [-1.0, 0.0, 1.0], m=4, b_points=5)
    X, B = V.node_states()
    expect = tau * X[:, 0] + X[:, 1] + np.minimum(B[:, 0] + tau, 1.0)
    assert V.values.ravel() == pytest.approx(expect, abs=1e-12)


def control_oracle(x2, b, tau, U, J, S_T):
    best = -np.inf
    for u0, u1 in itertools.product(U, repeat=2):
        b1 = np.clip(b + u0 * tau, 0, 1)
        y2 = logistic(x2, 1 + 2 * b, tau)
        b2 = np.clip(b1 + u1 * tau, 0, 1)
        z2 = logistic(y2, 1 + 2 * b1, tau)
        v = tau * J(x2, b, u0) + tau * J(y2, b1, u1) + S_T(z2, b2)
        best = max(best, v)
    return best


def test_control_value_iterate_enumeration():
    tau, U = 0.1, [-1.0, 0.0, 1.0]
    j_x = lambda x2: 2 * x2
    j_bu = lambda b, u: -(b - 0.6) ** 2 - 0.1 * u * u
    s_b = lambda b: np.sin(2 * b)
    J = lambda X, B, U_: j_x(X[:, 1]) + j_bu(B[:, 0], U_[:, 0])
    # terminal reward b-only and running reward linear in x keep every stage linear in x,
    # so interpolation at the flowed points is exact
    S_T = lambda X, B: s_b(B[:, 0]) + 0 * X[:, 0]
    V, pols = control_value_iterate(S_T, 2, 0.0, 0.2, STEERED, J, principal_of(lambda x, b: 0 * b[..., 0]),
                                    U, m=8, b_points=11)
    X, Bn = V.node_states()
    oracle = [control_oracle(x[1], b[0], tau, U, lambda y, bb, u: j_x(y) + j_bu(bb, u), lambda z, bb: s_b(bb))
              for x, b in zip(X, Bn)]
    assert V.values.ravel() == pytest.approx(oracle, abs=1e-9)


def test_markov_shapley_zero_rate_matches_limit():
    V = ValueTable.from_function(lambda X: X[:, 1] ** 2, 2, 10)
    pr = principal_of(lambda x, b: x[..., 1] - (b[..., 0] - 0.4) ** 2)
    grid = np.linspace(0, 1, 6)
    SV, _ = shapley_apply(V, FLAT, pr, TAU, b_grid=grid, refine=False)
    SN, _ = shapley_apply_markov(V, FLAT, pr, TAU, 100, 5, seed=3, b_grid=grid)
    assert SN.values == pytest.approx(SV.values, abs=1e-13)
    assert np.max(SN.meta["stderr"]) < 1e-15


def test_markov_shapley_single_agent_is_frozen():
    V = ValueTable.from_function(lambda X: np.cos(X[:, 1]), 2, 4)
    pr = principal_of(lambda x, b: 0 * x[..., 0] - (b[..., 0] - 0.5) ** 2)
    SN, _ = shapley_apply_markov(V, STEERED, pr, TAU, 1, 8, seed=0, b_grid=B_AXIS)
    # one agent sits on a vertex; no pair can interact
    X = V.x_nodes()
    vertex = np.where(X[:, :1] >= 0.5, [1.0, 0.0], [0.0, 1.0])
    assert SN.values.ravel() == pytest.approx(np.cos(vertex[:, 1]), abs=1e-13)
