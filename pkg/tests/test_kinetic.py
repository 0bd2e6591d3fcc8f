import numpy as np
import pytest
from hypothesis import given, strategies as st

from pressure_games.core import (AttachSpec, ClassStructure, KernelSpec, PayoffModel, PrincipalModel,
                                 SizePayoff)
from pressure_games.kinetic import (DriftSpec, LyapunovWeight, StepConfig, drift_attachment, drift_growth,
                                    drift_kth_order, drift_multiclass, drift_replicator, drift_smoluchowski,
                                    exact_moment, flow, integrate, lyapunov_check, smoluchowski_blocked)
from pressure_games.markov import (AttachmentModel, CoalitionModel, GrowthModel, GrowthTerm, KthOrderModel,
                                   MulticlassModel, PairwiseModel, constant_rate, generator_drift, linear_rate)

from conftest import logistic_closed_form

B0 = np.zeros(1)
INERT = PrincipalModel.constant([0.0])


def tab(*R):
    return PayoffModel.tabular(list(R))


# --- replicator and group drifts

def test_replicator_examples():
    assert np.all(drift_replicator([0, 1, 0], tab(0, 1, 2), B0) == 0)
    assert np.all(drift_replicator([0.2, 0.3, 0.5], tab(1, 1, 1), B0) == 0)
    assert np.allclose(drift_replicator([0.5, 0.5], tab(0, 2), B0), [-0.5, 0.5])


def test_kth_order_examples():
    x = np.array([0.3, 0.7])
    assert np.all(drift_kth_order(x, tab(0, 1), B0, 1.0, 2, Pi=lambda RI: np.zeros(RI.shape[0])) == 0)
    # K = 2, Pi = |dR|: x_2' = kappa [2 |dR| x_1 - |dR| x_1] x_2 = kappa x_1 x_2 dR, the replicator drift
    v = drift_kth_order(x, tab(0, 1.5), B0, 2.0, 2)
    assert np.allclose(v, [-2.0 * 0.3 * 0.7 * 1.5, 2.0 * 0.3 * 0.7 * 1.5], rtol=0, atol=1e-15)
    assert np.allclose(v, drift_replicator(x, tab(0, 1.5), B0, 2.0), atol=1e-15)


def test_kth_order_conserves_and_matches_generator():
    rng = np.random.default_rng(1)
    payoff = PayoffModel.tabular(rng.normal(size=4), x_coef=rng.normal(size=(4, 4)))
    X = rng.dirichlet(np.ones(4), 1000)
    V = drift_kth_order(X, payoff, np.zeros((1000, 1)), 1.3, 3)
    assert np.max(np.abs(V.sum(axis=1))) < 1e-13
    model = KthOrderModel(payoff, 1.3, 3)
    for n in ([5, 7, 3, 9], [1, 1, 1, 1], [10, 0, 4, 6]):
        n = np.array(n)
        assert np.allclose(generator_drift(model, n, B0), drift_kth_order(n / n.sum(), payoff, B0, 1.3, 3),
                           atol=1e-12)


def test_kth_order_tie_rule():
    # R = (1, 1): the pair fires toward the higher index, so mass moves from 1 to 2
    v = drift_kth_order([0.5, 0.5], tab(1, 1), B0, 1.0, 2, Pi=lambda RI: np.ones(RI.shape[0]))
    assert np.allclose(v, [-0.25, 0.25])


def test_multiclass_examples():
    p = PayoffModel.tabular([0.0, 1.0, 0.5], x_coef=np.eye(3))
    one = ClassStructure(1, "C1_no_communication", [1.0], [0.7])
    x = np.array([0.2, 0.5, 0.3])
    assert np.allclose(drift_multiclass(x, [p], B0, one), drift_replicator(x, p, B0, 0.7), atol=1e-16)
    c2 = ClassStructure(2, "C2_full_communication", [0.5, 0.5], [1.0, 1.0])
    same = tab(1.0, 1.0)
    assert np.allclose(drift_multiclass([0.25, 0.25, 0.25, 0.25], [same, same], B0, c2), 0)
    v = drift_multiclass([0.4, 0.6], [tab(1.0), tab(0.0)], B0, c2, kappa=2.0)
    assert np.allclose(v, [0.24 * 2.0, -0.24 * 2.0])


def test_multiclass_c1_prefactor():
    cls = ClassStructure(2, "C1_no_communication", [0.25, 0.75], [2.0, 1.0])
    p = tab(0.0, 1.0)
    x = np.array([0.5, 0.5, 0.2, 0.8])
    v = drift_multiclass(x, [p, p], B0, cls)
    assert np.allclose(v[:2], 2.0 * 0.25 * drift_replicator(x[:2], p, B0))
    assert np.allclose(v[2:], 1.0 * 0.75 * drift_replicator(x[2:], p, B0))


def test_multiclass_c1_matches_generator():
    # per-pair rate kappa_a / N with N the total population gives kappa_a omega_a on class-local x
    cls = ClassStructure(2, "C1_no_communication", [0.4, 0.6], [2.0, 1.0])
    p = PayoffModel.tabular([0.0, 1.0, 0.3], x_coef=np.eye(3))
    model = MulticlassModel([p, p], cls)
    counts = np.array([10, 20, 10, 30, 15, 15])
    gen = generator_drift(model, counts, B0)
    assert np.allclose(gen, DriftSpec.for_model(model)(model.to_x(counts), B0), atol=1e-12)


# --- growth

def random_terms(rng, J):
    kinds = {"birth": (0, 1), "death": (1, 0), "mutation": (1, 1), "split": (1, 2), "merge": (2, 1),
             "regroup": (2, 2)}
    terms = []
    for _ in range(rng.integers(1, 8)):
        kind = list(kinds)[rng.integers(6)]
        a, b = kinds[kind]
        src = tuple(int(i) for i in rng.integers(1, J + 1, a))
        dst = tuple(int(i) for i in rng.integers(1, J + 1, b))
        coefs = {int(k): float(v) for k, v in zip(rng.integers(1, J + 1, 2), rng.uniform(0, 1, 2))}
        terms.append(GrowthTerm(kind, src, dst, linear_rate(coefs, float(rng.uniform(0, 1)))))
    return terms


def test_growth_examples():
    assert np.all(drift_growth([0.3, 0.2], [GrowthTerm("birth", (), (1,), constant_rate(0.0))], B0) == 0)
    v = drift_growth([0.3, 0.2, 0.0], [GrowthTerm("birth", (), (1,), constant_rate(1.5))], B0)
    assert v.tolist() == [1.5, 0.0, 0.0]


def test_growth_drift_pairs_with_generator():
    # the generator of the chain acting on a linear G is an independent route to sum_j f_j g_j
    rng = np.random.default_rng(2)
    J = 5
    for _ in range(1000):
        terms = random_terms(rng, J)
        counts = rng.integers(3, 30, J)
        h = 0.01
        model = GrowthModel(terms, h, J)
        g = rng.normal(size=J)
        lhs = drift_growth(model.to_x(counts), terms, B0) @ g
        rhs = generator_drift(model, counts, B0) @ g
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_growth_diagonal_regroup_counts_twice():
    # (1, 1) -> (2, 2) consumes two of state 1 and produces two of state 2
    v = drift_growth([0.5, 0.5], [GrowthTerm("regroup", (1, 1), (2, 2), constant_rate(1.0))], B0)
    assert v.tolist() == [-2.0, 2.0]


# --- coagulation and attachment

def test_smoluchowski_examples():
    x = np.zeros(6)
    x[0] = 1.0
    assert np.allclose(drift_smoluchowski(x, KernelSpec.constant(1.0), None, B0), [-2, 1, 0, 0, 0, 0])
    assert np.all(drift_smoluchowski(np.linspace(0.1, 0.6, 6), KernelSpec.constant(0.0, 0.0), None, B0) == 0)


@given(st.lists(st.floats(0, 1), min_size=6, max_size=6), st.floats(0, 2), st.floats(0, 2))
def test_smoluchowski_conserves_mass(head, C, F):
    x = np.zeros(20)
    x[:6] = head
    v = drift_smoluchowski(x, KernelSpec.constant(C, F), None, B0)
    assert abs(np.arange(1, 21) @ v) < 1e-12


def test_smoluchowski_strategic_conserves_mass():
    rng = np.random.default_rng(3)
    kern = KernelSpec(merge_weights=1.0, split_weights=0.5)
    sizes = SizePayoff(fn=lambda s, x, b: np.sin(s))
    for _ in range(50):
        x = np.zeros(24)
        x[:8] = rng.uniform(0, 1, 8)
        assert abs(np.arange(1, 25) @ drift_smoluchowski(x, kern, sizes, B0)) < 1e-12


def test_smoluchowski_matches_chain_in_the_limit():
    kern = KernelSpec.constant(1.0, 0.3)
    N = 10 ** 6
    counts = np.array([N // 2, N // 4, N // 8, N // 8, 0, 0, 0, 0])
    model = CoalitionModel(kern, None, 1.0 / N, 8)
    gen = generator_drift(model, counts, B0)
    assert np.allclose(gen, drift_smoluchowski(model.to_x(counts), kern, None, B0), atol=1e-5)


def test_attachment_examples():
    x = np.array([0.3, 0.2, 0.1, 0.0])
    assert np.all(drift_attachment(x, AttachSpec(0.4, 0.0), B0) == 0)
    assert drift_attachment(x, AttachSpec(1.0, 2.0), B0).tolist() == [2.0, 0, 0, 0]
    a, lam = 0.3, 1.7
    v = drift_attachment(x, AttachSpec(a, lam), B0)
    k = np.arange(1, 5)
    assert k @ v == pytest.approx(a * lam + (1 - a) * lam * (k @ x))


def test_drifts_conditionally_positive():
    rng = np.random.default_rng(4)
    p = PayoffModel.tabular(rng.normal(size=3), x_coef=rng.normal(size=(3, 3)))
    kern = KernelSpec(merge_weights=1.0, split_weights=1.0)
    sizes = SizePayoff(fn=lambda s, x, b: np.cos(s))
    models = [PairwiseModel(p), KthOrderModel(p, 1.0, 3),
              CoalitionModel(kern, sizes, 0.1, 10), AttachmentModel(AttachSpec(0.5, 1.0), 0.1, 10),
              GrowthModel(random_terms(rng, 10), 0.1, 10)]
    for model in models:
        f = DriftSpec.for_model(model)
        for _ in range(200):
            x = rng.dirichlet(np.ones(f.dim))
            x[rng.random(f.dim) < 0.4] = 0.0
            if x.sum() == 0:
                x[0] = 1
            if f.simplex_blocks:
                x /= x.sum()
            v = f(x, B0)
            assert np.all(np.isfinite(v))
            assert np.all(v[x == 0] >= -1e-15)


# --- integration

def test_zero_drift_is_constant(logistic_payoff):
    flat = DriftSpec.for_model(PairwiseModel(tab(1.0, 1.0, 1.0)))
    tr = integrate(flat, [0.2, 0.3, 0.5], INERT, 2.0)
    assert np.all(tr.x == [0.2, 0.3, 0.5])


def test_logistic_endpoint(logistic_payoff):
    tr = integrate(DriftSpec.for_model(PairwiseModel(logistic_payoff)), [0.9, 0.1], INERT, 1.0)
    exact = logistic_closed_form(0.1, 2.0, 1.0)
    assert tr.x[-1, 1] == pytest.approx(exact, rel=1e-6)
    assert tr.meta["renormalization"] == []


def test_coagulation_number_density():
    x0 = np.zeros(256)
    x0[0] = 1.0
    model = CoalitionModel(KernelSpec.constant(1.0), None, 0.01, 256)
    tr = integrate(DriftSpec.for_model(model), x0, INERT, 1.0)
    assert tr.x[-1].sum() == pytest.approx(0.5, abs=1e-6)
    assert np.arange(1, 257) @ tr.x[-1] == pytest.approx(1.0, abs=1e-6)


def test_rk4_fourth_order(logistic_payoff):
    f = DriftSpec.for_model(PairwiseModel(logistic_payoff))
    exact = logistic_closed_form(0.1, 2.0, 1.0)
    errs = [abs(integrate(f, [0.9, 0.1], INERT, 1.0, StepConfig("rk4", h=h)).x[-1, 1] - exact)
            for h in (0.1, 0.05, 0.025)]
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios >= 14) & (ratios <= 18))


def test_simplex_invariance_from_random_starts():
    rng = np.random.default_rng(5)
    p = PayoffModel.tabular(rng.normal(size=3), x_coef=3 * rng.normal(size=(3, 3)))
    cls = ClassStructure(2, "C1_no_communication", [0.5, 0.5], [1.0, 2.0])
    # group winners switch discontinuously on payoff ties; a state-free ordering keeps that drift smooth
    ordered = PayoffModel.tabular(rng.normal(size=3))
    drifts = [DriftSpec.for_model(PairwiseModel(p, 2.0)), DriftSpec.for_model(KthOrderModel(ordered, 1.0, 3)),
              DriftSpec.for_model(MulticlassModel([p, p], cls))]
    for f in drifts:
        X = np.concatenate([rng.dirichlet(np.ones(3), 100) for _ in f.simplex_blocks], axis=1)
        B = np.zeros((100, 1))
        for _ in range(10):
            X = flow(f, X, B, 1.0, rtol=1e-8, atol=1e-10)
            for s in f.simplex_blocks:
                assert np.max(np.abs(X[:, s].sum(axis=1) - 1)) < 1e-9
            assert X.min() >= -1e-12
    # a single run through the public integrator, checked at every accepted step
    tr = integrate(drifts[0], [0.2, 0.3, 0.5], INERT, 10.0)
    assert np.max(np.abs(tr.x.sum(axis=1) - 1)) < 1e-9 and tr.x.min() >= -1e-12


def test_vertices_absorb():
    rng = np.random.default_rng(6)
    for d in (2, 3, 4):
        p = PayoffModel.tabular(rng.normal(size=d), x_coef=rng.normal(size=(d, d)))
        for j in range(d):
            e = np.eye(d)[j]
            assert np.all(drift_replicator(e, p, B0) == 0)
            assert np.all(drift_kth_order(e, p, B0, 1.0, min(d, 3)) == 0)


def test_fast_decay_stays_nonnegative():
    terms = [GrowthTerm("death", (1,), (), linear_rate({1: 80.0}))]
    f = DriftSpec.for_model(GrowthModel(terms, 0.01, 2))
    tr = integrate(f, [1.0, 0.5], INERT, 2.0)
    assert tr.x.min() >= -1e-12
    assert tr.x[-1, 0] == pytest.approx(np.exp(-160.0), abs=1e-10)


def test_best_response_integration_matches_closed_loop():
    # b*(x) = x_1 on [0, 1]; R_2 - R_1 = 2 b so the closed loop is x_2' = 2 x_1^2 x_2
    payoff = PayoffModel.tabular([[0.0, 0.0], [0.0, 2.0]], b_axes=[[0.0, 1.0]])
    principal = PrincipalModel(lambda x, b: x[..., 0] * b[..., 0] - 0.5 * b[..., 0] ** 2, [[0.0, 1.0]],
                               "best_response")
    tr = integrate(DriftSpec.for_model(PairwiseModel(payoff)), [0.6, 0.4], principal, 0.5)
    closed = DriftSpec("replicator", lambda X, B: np.stack([-2 * X[:, 0] ** 2 * X[:, 1],
                                                             2 * X[:, 0] ** 2 * X[:, 1]], axis=1), 2)
    ref = integrate(closed, [0.6, 0.4], INERT, 0.5)
    assert tr.x[-1] == pytest.approx(ref.x[-1], abs=1e-6)
    assert np.allclose(tr.controls[:, 0], tr.x[:, 0], atol=1e-6)


def test_flow_rows_match_integrate(logistic_payoff):
    f = DriftSpec.for_model(PairwiseModel(PayoffModel.tabular([[0.0, 0.0], [1.0, -1.0]], b_axes=[[0.0, 1.0]])))
    X0 = np.array([[0.9, 0.1], [0.5, 0.5], [0.2, 0.8]])
    B = np.array([[0.0], [0.5], [1.0]])
    out = flow(f, X0, B, 0.7)
    for x0, b, x in zip(X0, B, out):
        one = integrate(f, x0, PrincipalModel.constant(b, box=[[0.0, 1.0]]), 0.7, StepConfig(rtol=1e-10, atol=1e-12))
        assert np.allclose(x, one.x[-1], atol=1e-9)


def test_record_times_are_hit(logistic_payoff):
    tr = integrate(DriftSpec.for_model(PairwiseModel(logistic_payoff)), [0.9, 0.1], INERT, 1.0,
                   record_times=[0.25, 0.5])
    assert 0.25 in tr.times.tolist() and 0.5 in tr.times.tolist()


# --- Lyapunov

def test_lyapunov_examples(logistic_payoff):
    tr = integrate(DriftSpec.for_model(PairwiseModel(logistic_payoff)), [0.9, 0.1], INERT, 3.0)
    assert lyapunov_check(tr, LyapunovWeight.ones(2), "non_increase", rtol=1e-12).ok
    assert np.max(np.abs(tr.x.sum(axis=1) - 1)) < 1e-12
    x0 = np.zeros(64)
    x0[:3] = [0.5, 0.2, 0.1]
    coal = CoalitionModel(KernelSpec.constant(1.0, 0.5), None, 0.01, 64)
    tr = integrate(DriftSpec.for_model(coal), x0, INERT, 1.0)
    L = LyapunovWeight.sizes(64)
    assert lyapunov_check(tr, L, "non_increase", rtol=1e-8).ok
    assert np.ptp(tr.x @ L.values) < 1e-8


def test_attachment_first_moment_closed_form():
    alpha, lam = 0.5, 1.0
    x0 = np.zeros(200)
    x0[0] = 1.0
    tr = integrate(DriftSpec.for_model(AttachmentModel(AttachSpec(alpha, lam), 0.01, 200)), x0, INERT, 1.0)
    L = LyapunovWeight.sizes(200, a=(1 - alpha) * lam, b=alpha * lam)
    assert lyapunov_check(tr, L, "exact", rtol=1e-6).ok
    assert tr.x[-1] @ L.values == pytest.approx(2 * np.exp(0.5) - 1, rel=1e-6)
    assert exact_moment(1.0, 0.5, 0.5, 1.0) == pytest.approx(2 * np.exp(0.5) - 1)


def test_lyapunov_reports_violation():
    terms = [GrowthTerm("birth", (), (1,), constant_rate(1.0))]
    tr = integrate(DriftSpec.for_model(GrowthModel(terms, 0.1, 3)), [1.0, 0, 0], INERT, 1.0)
    rep = lyapunov_check(tr, LyapunovWeight.ones(3), "non_increase")
    assert not rep.ok and rep.first_violation_time > 0 and rep.magnitude > 0
    assert lyapunov_check(tr, LyapunovWeight.ones(3, a=0.0, b=1.0), "subcritical", rtol=1e-8).ok


def test_smoluchowski_blocked_diagnostics():
    x0 = np.zeros(8)
    x0[:4] = 0.25
    model = CoalitionModel(KernelSpec.constant(1.0), None, 0.01, 8)
    tr = integrate(DriftSpec.for_model(model), x0, INERT, 1.0)
    rate, mass = smoluchowski_blocked(tr, model.kernel)
    assert rate > 0 and mass > 0
    # whole out-of-range merges are dropped, so the kept mass is exactly the initial mass minus none
    assert np.arange(1, 9) @ tr.x[-1] == pytest.approx(np.arange(1, 9) @ x0, abs=1e-8)
