import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import fsolve

from _configs import FOV, random_team
from fovtopo import adaptive_controller as ad
from fovtopo import qlearning as ql
from fovtopo.digraph import Topology
from fovtopo.fov_potentials import pair_gradient, rotation


def pair_states(q, pose=(0.2, 0.1, 0.3)):
    s = np.zeros((2, 3))
    s[0] = pose
    s[1, :2] = s[0, :2] + rotation(s[0, 2]) @ q
    return s


def stationary_offset():
    return fsolve(lambda q: pair_gradient([0, 0, 0], q, FOV).d_pj, FOV.quality_mean, xtol=1e-14)


PAIR = ad.Team(Topology(2, [(0, 1)]), FOV)


def test_discretize_zero_control():
    s = pair_states(stationary_offset())
    np.testing.assert_allclose(ql.discretize_step(PAIR, s, [1.0], 0.01), s, atol=1e-10)


def test_discretize_wraps_heading():
    s = pair_states([1.2, 0.1], pose=(0, 0, math.pi - 1e-4))
    turn = np.array([[0, 0, 1.0], [0, 0, 0]])
    s1 = ql.discretize_step(PAIR, s, [1.0], 1e-3, turn)
    assert -math.pi < s1[0, 2] < 0


def test_discretize_first_order():
    s0 = pair_states([1.2, 0.25])
    k = np.array([1.0])

    def f(s):
        return ad.evaluate(PAIR, s, k, full=False).u_bar

    def rk4(dt, T=0.2):
        s = s0.copy()
        for _ in range(int(round(T / dt))):
            a = f(s)
            b = f(s + 0.5 * dt * a)
            c = f(s + 0.5 * dt * b)
            d = f(s + dt * c)
            s = s + dt / 6 * (a + 2 * b + 2 * c + d)
        return s

    def euler(dt, T=0.2):
        s = s0.copy()
        for _ in range(int(round(T / dt))):
            s = ql.discretize_step(PAIR, s, k, dt)
        return s

    ref = rk4(1e-4)
    e1 = np.linalg.norm(euler(1e-3) - ref)
    e2 = np.linalg.norm(euler(5e-4) - ref)
    assert e1 < 1e-2
    assert 1.5 < e1 / e2 < 2.5


def test_regressor_discount_zero():
    rng = np.random.default_rng(3)
    team, s, _ = random_team(rng, 3, 5)
    s1 = s + 1e-3 * rng.normal(size=s.shape)
    for e, (i, _) in enumerate(team.topology.edges):
        phi, c = ql.build_regressor(team, e, s, s1, 0.0, 5)
        cols = team.topology.out_edges(i)
        A = ad.los_projector(team, e, s)
        Bi = ad.gradient_matrix(team, i, s)[:, cols]
        np.testing.assert_allclose(phi, (A @ Bi).T, atol=1e-15)
        np.testing.assert_allclose(c, ad.desired_model(team, e, s))


def test_regressor_stationary_cancels():
    rng = np.random.default_rng(4)
    team, s, _ = random_team(rng, 3, 5)
    for e in range(team.m):
        phi, _ = ql.build_regressor(team, e, s, s, 1.0, 7)
        np.testing.assert_array_equal(phi, 0)


def test_regressor_large_l_limit():
    rng = np.random.default_rng(5)
    team, s, _ = random_team(rng, 3, 5)
    s1 = s + 1e-2 * rng.normal(size=s.shape)
    base, _ = ql.build_regressor(team, 0, s, s1, 0.0, 1)
    gaps = [np.abs(ql.build_regressor(team, 0, s, s1, 0.9, l)[0] - base).max() for l in (1, 10, 100, 400)]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-12


def test_rls_matches_batch_least_squares():
    rng = np.random.default_rng(6)
    theta = rng.normal(size=3)
    est = ql.RlsEstimator.create(3, theta0=0.0, p0=100.0, forgetting=1.0)
    X, y = [], []
    for _ in range(50):
        phi = rng.normal(size=(3, 2))
        c = phi.T @ theta
        est = ql.rls_update(est, phi, c)
        X.append(phi.T)
        y.append(c)
    X, y = np.vstack(X), np.concatenate(y)
    batch = np.linalg.solve(np.eye(3) / 100.0 + X.T @ X, X.T @ y)
    np.testing.assert_allclose(est.theta_hat, batch, atol=1e-8)
    assert np.all(np.linalg.eigvalsh(est.P_cov) > 0)


def test_rls_recovers_exact_parameters():
    rng = np.random.default_rng(7)
    theta = rng.normal(size=3)
    # a vague prior, so the regularisation bias is negligible
    est = ql.RlsEstimator.create(3, theta0=0.0, p0=1e8, forgetting=1.0, trace_cap=1e9)
    for _ in range(50):
        phi = rng.normal(size=(3, 2))
        est = ql.rls_update(est, phi, phi.T @ theta)
    assert np.linalg.norm(est.theta_hat - theta) < 1e-6


def test_rls_zero_regressor():
    est = ql.RlsEstimator.create(2, theta0=[0.3, -0.2])
    nxt = ql.rls_update(est, np.zeros((2, 2)), [1.0, 2.0])
    np.testing.assert_array_equal(nxt.theta_hat, est.theta_hat)


def test_rls_rank_deficient():
    est = ql.RlsEstimator.create(2, theta0=0.0, forgetting=1.0)
    x = np.array([1.0, 1.0]) / math.sqrt(2)
    for _ in range(200):
        est = ql.rls_update(est, x, 2.0)
    # the excited direction converges, the orthogonal one is never touched
    assert x @ est.theta_hat == pytest.approx(2.0, abs=1e-3)
    assert np.array([1.0, -1.0]) @ est.theta_hat == pytest.approx(0.0, abs=1e-12)


def test_rls_shape_check():
    with pytest.raises(ValueError):
        ql.rls_update(ql.RlsEstimator.create(2), np.zeros((3, 1)), [0.0])


def test_pe_examples():
    w = ql.PeWindow(t_in=3)
    for _ in range(3):
        w.push(np.zeros((2, 2)))
    ok, lo, _ = ql.pe_check(w)
    assert not ok and lo == 0.0
    w = ql.PeWindow(t_in=2, eps0=0.1, eps1=1.0)
    w.push(np.array([1.0, 0.0]))
    w.push(np.array([0.0, 1.0]))
    ok, lo, hi = ql.pe_check(w)
    assert ok and lo == pytest.approx(0.5) and hi == pytest.approx(0.5)
    d = ql.PeWindow()
    assert (d.eps0, d.eps1, d.t_in) == (0.7, 11.0, 50)


def test_pe_needs_full_window():
    w = ql.PeWindow(t_in=4, eps0=0.01)
    for _ in range(3):
        w.push(np.eye(2))
    assert not ql.pe_check(w)[0]
    w.push(np.eye(2))
    assert ql.pe_check(w)[0]


@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=1, max_size=10),
       st.tuples(st.floats(-3, 3), st.floats(-3, 3)))
@settings(max_examples=100, deadline=None)
def test_pe_monotone_in_excitation(regs, extra):
    a = ql.PeWindow(t_in=len(regs))
    b = ql.PeWindow(t_in=len(regs))
    for r in regs:
        a.push(np.array(r))
        b.push(np.array(r))
    b.window[-1].append(np.array(extra))
    assert ql.pe_check(b)[1] >= ql.pe_check(a)[1] - 1e-12


def star_team(n_out):
    top = Topology(n_out + 1, [(0, j + 1) for j in range(n_out)])
    return ad.Team(top, FOV)


@pytest.mark.parametrize("n_out", [1, 3])
def test_policy_iteration_reaches_uniform_gains(n_out):
    team = star_team(n_out)
    x = np.array([1.2, 0.4])
    est = ql.RlsEstimator.create(n_out)
    for phi, c in ql.common_direction_samples(n_out, x, np.linspace(-1, 1, 60)):
        est = ql.rls_update(est, phi, c)
    sched = ql.PolicySchedule(l=50, t_in=50)
    k, events = ql.policy_iterate(team, sched, {0: est}, np.ones(n_out))
    np.testing.assert_allclose(k, 1 / n_out, atol=1e-3)
    assert events[0].updated and sched.q == 1 and sched.l == 0
    assert ql.common_direction_objective(k, x, 0.7) < 1e-9


def test_policy_freezes_without_excitation():
    team = star_team(2)
    est = ql.RlsEstimator.create(2, theta0=[0.2, 0.3])
    window = ql.PeWindow(t_in=2)
    window.push(np.zeros((2, 2)))
    window.push(np.zeros((2, 2)))
    sched = ql.PolicySchedule(l=50, t_in=50)
    k, events = ql.policy_iterate(team, sched, {0: est}, [1.0, 1.0], {0: window})
    np.testing.assert_array_equal(k, [1.0, 1.0])
    assert not events[0].updated


def test_policy_change_too_early():
    with pytest.raises(ValueError):
        ql.policy_iterate(star_team(1), ql.PolicySchedule(l=10, t_in=50), {}, [1.0])
    with pytest.raises(ValueError):
        ql.PolicySchedule(gamma_discount=1.5)


def test_objective_zero_on_symmetry_axis():
    s = pair_states([1.1, 0.0], pose=(0, 0, 0))
    assert ql.objective(PAIR, 0, s, [1.0]) == pytest.approx(0.0, abs=1e-20)
    assert ql.objective(PAIR, 0, s, [0.5]) > 0


def test_learner_schedule():
    s = pair_states([1.1, 0.1])
    learner = ql.GainLearner(PAIR, [1.0], t_in=5)
    push = np.array([[0.05, 0.0, 0.0], [0.0, 0.0, 0.0]])
    updates = 0
    for n in range(20):
        s1 = ql.discretize_step(PAIR, s, learner.gains, 0.01, push if n % 2 else -push)
        rec = learner.observe(s, s1)
        updates += len(rec.events)
        s = s1
    assert updates == 4
    assert learner.schedule.q == 4
    assert np.isnan(rec.residual[1]) and np.isfinite(rec.residual[0])
