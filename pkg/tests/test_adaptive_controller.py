import math

import numpy as np
import pytest
from scipy.optimize import fsolve

from _configs import FOV, random_team
from fovtopo import adaptive_controller as ad
from fovtopo.digraph import Topology
from fovtopo.fov_potentials import TopologyViolation, pair_gradient, rotation


def pair_team():
    return ad.Team(Topology(2, [(0, 1)]), FOV)


def stationary_offset():
    """Body-frame point where Phi + Psi is stationary for the default triangle."""
    return fsolve(lambda q: pair_gradient([0, 0, 0], q, FOV).d_pj, FOV.quality_mean, xtol=1e-14)


def states_for(q_body, pose=(0.3, -0.2, 0.4)):
    s = np.zeros((2, 3))
    s[0] = pose
    s[1, :2] = s[0, :2] + rotation(s[0, 2]) @ q_body
    return s


def test_no_out_neighbors_gives_zero():
    team = pair_team()
    s = states_for(FOV.quality_mean)
    np.testing.assert_array_equal(ad.nominal_control(team, 1, s), 0)


def test_zero_at_stationary_point():
    team = pair_team()
    s = states_for(stationary_offset())
    np.testing.assert_allclose(ad.nominal_control(team, 0, s), 0, atol=1e-8)
    np.testing.assert_allclose(ad.desired_model(team, (0, 1), s), 0, atol=1e-8)


def test_two_neighbors_sum():
    s = np.zeros((3, 3))
    s[1, :2] = rotation(0.0) @ [1.2, 0.2]
    s[2, :2] = rotation(0.0) @ [1.4, -0.3]
    both = ad.Team(Topology(3, [(0, 1), (0, 2)]), FOV)
    one = ad.Team(Topology(3, [(0, 1)]), FOV)
    two = ad.Team(Topology(3, [(0, 2)]), FOV)
    np.testing.assert_allclose(
        ad.nominal_control(both, 0, s), ad.nominal_control(one, 0, s) + ad.nominal_control(two, 0, s)
    )


def test_projection_examples():
    team = pair_team()
    s = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    np.testing.assert_allclose(ad.project_onto_los(team, 0, [3, 4], s), [3, 0])
    np.testing.assert_allclose(ad.project_onto_los(team, 0, [2, 0], s), [2, 0])
    np.testing.assert_allclose(ad.project_onto_los(team, 0, [0, 5], s), [0, 0])
    A = ad.los_projector(team, 0, np.array([[0.0, 0, 0], [1.0, 2.0, 0]]))
    np.testing.assert_allclose(A @ A, A)
    np.testing.assert_allclose(np.linalg.eigvalsh(A), [0, 1], atol=1e-15)


def test_coincident_robots():
    team = pair_team()
    s = np.zeros((2, 3))
    with pytest.raises(ad.SingularityError):
        ad.project_onto_los(team, 0, [1, 0], s)


def test_deviation_cost_examples():
    team = pair_team()
    # on the symmetry axis the desired model is parallel to the line of sight
    s = states_for([1.0, 0.0])
    assert ad.deviation_cost(team, 0, s, [1.0]) == pytest.approx(0.0, abs=1e-20)
    np.testing.assert_allclose(ad.grad_k_F(team, s, [1.0]), 0, atol=1e-12)
    s = states_for([1.1, 0.3])
    m = ad.desired_model(team, 0, s)
    assert ad.deviation_cost(team, 0, s, [0.0]) == pytest.approx(0.5 * m @ m, rel=1e-12)


def test_cost_forms_agree():
    rng = np.random.default_rng(11)
    for _ in range(50):
        team, s, k = random_team(rng, 2, 5)
        for e in range(team.m):
            assert ad.deviation_cost(team, e, s, k) == pytest.approx(ad.deviation_cost_matrix(team, e, s, k), rel=1e-9)
        assert ad.total_cost(team, s, k) == pytest.approx(
            sum(ad.deviation_cost(team, e, s, k) for e in range(team.m)), rel=1e-9
        )


def test_gradient_columns():
    rng = np.random.default_rng(12)
    team, s, k = random_team(rng, 4, 5)
    for i in range(team.n):
        Bi = ad.gradient_matrix(team, i, s)
        for e, (a, j) in enumerate(team.topology.edges):
            expect = ad.desired_model(team, e, s) if a == i else np.zeros(2)
            np.testing.assert_array_equal(Bi[:, e], expect)


def test_gain_gradient_decoupling():
    rng = np.random.default_rng(13)
    for _ in range(50):
        team, s, k = random_team(rng, 3, 5)
        g0 = ad.grad_k_F(team, s, k)
        for e in range(team.m):
            k2 = k.copy()
            k2[e] += 0.3
            g1 = ad.grad_k_F(team, s, k2)
            other = [f for f in range(team.m) if team.src[f] != team.src[e]]
            np.testing.assert_array_equal(g1[other], g0[other])


def test_gain_gradient_finite_differences():
    rng = np.random.default_rng(14)
    h = 1e-6
    for _ in range(100):
        team, s, k = random_team(rng, 2, 5)
        g = ad.grad_k_F(team, s, k)
        fd = np.array([
            (ad.total_cost(team, s, k + h * np.eye(team.m)[e]) - ad.total_cost(team, s, k - h * np.eye(team.m)[e])) / (2 * h)
            for e in range(team.m)
        ])
        assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-6)


def test_hessian_rank_and_trace():
    rng = np.random.default_rng(15)
    for _ in range(100):
        team, s, _ = random_team(rng, 2, 5)
        for e, (i, _) in enumerate(team.topology.edges):
            H = ad.hessian_k_F(team, e, s)
            sv = np.linalg.svd(H, compute_uv=False)
            assert np.sum(sv > 1e-9 * max(1.0, sv[0])) <= 1
            A = ad.los_projector(team, e, s)
            Bi = ad.gradient_matrix(team, i, s)
            assert np.trace(H) == pytest.approx(np.sum((A @ Bi) ** 2), rel=1e-10)


def test_w_vanishes_at_stationary_point():
    team = pair_team()
    s = states_for(stationary_offset())
    assert abs(ad.lyapunov_term_w(team, (0, 1), s, [1.0])) < 1e-8
    np.testing.assert_array_equal(team.degree, [1, 1])


def test_step_equilibrium():
    team = pair_team()
    s = states_for(stationary_offset())
    k = np.array([1.0])
    s1, k1 = ad.step(team, s, k, dt=0.01)
    np.testing.assert_allclose(s1, s, atol=1e-12)
    np.testing.assert_allclose(k1, k, atol=1e-12)


def test_energy_non_increasing():
    # the gain flow is stiff away from the formation (k_dot reaches 1e4 at
    # t = 0), so "dt small enough" means no gain moves by more than 0.01 a step
    rng = np.random.default_rng(16)
    team = pair_team()
    q = stationary_offset()
    for _ in range(4):
        s = states_for(q + rng.normal(scale=0.1, size=2), pose=(rng.normal(), rng.normal(), rng.uniform(-3, 3)))
        k = rng.uniform(0.8, 1.2, 1)
        V = [ad.composite_energy(team, s, k)]
        for _ in range(1000):
            ev = ad.evaluate(team, s, k)
            assert ev.alpha.min() > 0
            dt = min(1e-3, 1e-2 / max(np.abs(ev.k_dot).max(), 1e-9))
            s, k = ad.step(team, s, k, dt=dt)
            V.append(ad.composite_energy(team, s, k))
        assert np.max(np.diff(V)) <= 1e-9 * V[0]
        assert V[-1] < V[0]


def test_euler_converges_first_order():
    team = pair_team()
    s0 = states_for([1.2, 0.2])
    k0 = np.array([1.0])

    def integrate(dt, method):
        s, k = s0.copy(), k0.copy()
        for _ in range(int(round(0.2 / dt))):
            s, k = ad.step(team, s, k, dt, method)
        return s

    ref = integrate(1e-4, "rk4")
    e1 = np.linalg.norm(integrate(1e-3, "euler") - ref)
    e2 = np.linalg.norm(integrate(1e-4, "euler") - ref)
    assert 5 < e1 / e2 < 15
    assert np.linalg.norm(integrate(1e-3, "rk4") - ref) < e2


def test_step_aborts_on_violation():
    team = pair_team()
    s = states_for([1.0, 0.0])
    s[1, :2] = [-5.0, 0.0]
    with pytest.raises(TopologyViolation) as info:
        ad.step(team, s, np.ones(1), dt=0.01)
    assert info.value.edge == (0, 1)


def test_step_wraps_heading():
    team = pair_team()
    s = states_for([1.2, 0.1], pose=(0.0, 0.0, math.pi - 1e-4))
    turn = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
    s1, _ = ad.step(team, s, np.ones(1), dt=1e-3, integrator="euler", exogenous=turn)
    assert -math.pi < s1[0, 2] < 0
