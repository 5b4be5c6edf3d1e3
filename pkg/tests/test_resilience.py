import math

import numpy as np
import pytest
from scipy.optimize import fsolve

from fovtopo import resilience as rs


def bundled_faults(n=6):
    sensor = [rs.ZERO] * n
    sensor[2] = rs.Signal("ramp", (0.2,))
    return rs.FaultProfile(tuple(sensor), (rs.Signal("sine", (1.5, 1.0)),) * n)


def test_inject_zero_profile():
    s = np.random.default_rng(0).normal(size=(4, 3))
    u = np.random.default_rng(1).normal(size=(4, 3))
    p_bar, u_hat = rs.inject(s, rs.FaultProfile.none(4), 3.0, u)
    np.testing.assert_array_equal(p_bar, s[:, :2])
    np.testing.assert_array_equal(u_hat, u[:, :2])


def test_inject_examples():
    prof = bundled_faults()
    s = np.zeros((6, 3))
    t = 7.5
    p_bar, _ = rs.inject(s, prof, t, np.zeros((6, 3)))
    np.testing.assert_allclose(p_bar[2], [0.2 * t, 0.2 * t])
    np.testing.assert_array_equal(np.delete(p_bar, 2, axis=0), 0)
    _, u_hat = rs.inject(s, prof, 0.25, np.zeros((6, 3)))
    np.testing.assert_allclose(u_hat, 1.5)


def test_signal_bounds():
    prof = bundled_faults()
    assert prof.actuator_bound == pytest.approx(1.5 * math.sqrt(2))
    assert prof.sensor_rate_bound == pytest.approx(0.2 * math.sqrt(2))
    assert math.isinf(rs.Signal("ramp", (0.2,)).sup_norm())
    assert prof.check_bounds(350.0)
    with pytest.raises(ValueError):
        rs.Signal("sine", (1.0,))
    with pytest.raises(ValueError):
        rs.Signal("square", (1.0,))


def test_observer_zero_error():
    F = np.eye(2)
    p = np.array([[1.0, 2.0], [0.0, -1.0]])
    obs = rs.ObserverState.start(p, -F, F)
    u = np.array([[0.3, -0.1, 0.0], [0.0, 0.5, 0.0]])
    dt = 0.01
    nxt = rs.observer_step(obs, p + dt * u[:, :2], u, dt)
    np.testing.assert_allclose(nxt.p_hat, p + dt * u[:, :2])
    np.testing.assert_array_equal(nxt.delta_hat, 0)
    np.testing.assert_allclose(nxt.e, 0, atol=1e-15)


def simulate_error(F2, sensor, actuator, e0, horizon, dt=1e-3):
    """Euler run of a robot moving at u = (0.1, 0) with observer gains F1 = -F2."""
    u = np.array([[0.1, 0.0, 0.0]])
    p = np.zeros((1, 2))
    obs = rs.ObserverState.start(p + sensor(0.0), -F2, F2, p_hat=p + sensor(0.0) - e0)
    es, ts = [obs.e[0].copy()], [0.0]
    for n in range(int(round(horizon / dt))):
        t = n * dt
        p = p + dt * (u[:, :2] + actuator(t))
        obs = rs.observer_step(obs, p + sensor(t + dt), u, dt)
        # the error is recomputed from its definition, never integrated
        np.testing.assert_allclose(obs.e, p + sensor(t + dt) - obs.p_hat - obs.delta_hat, atol=1e-14)
        es.append(obs.e[0].copy())
        ts.append(t + dt)
    return np.array(ts), np.array(es)


def test_error_decays_like_exponential():
    _, e = simulate_error(np.eye(2), rs.ZERO, rs.ZERO, np.array([1.0, 0.0]), 1.0)
    assert e[-1, 0] == pytest.approx(math.exp(-1), abs=1e-3)
    assert abs(e[-1, 1]) < 1e-12


def test_constant_sensor_fault_is_absorbed():
    bias = rs.Signal("constant", ((0.4, -0.3),))
    t, e = simulate_error(2 * np.eye(2), bias, rs.ZERO, np.zeros(2), 5.0)
    # the bias appears as an initial error that decays at rate 2
    assert np.linalg.norm(e[-1]) < 1e-3
    assert np.linalg.norm(e[np.searchsorted(t, 1.0)]) < np.linalg.norm(bias(0)) * math.exp(-2 * 1.0) * 1.05 + 1e-3


def test_error_dynamics_match_linear_model():
    F2 = rs.synthesize_sof().F2
    act = rs.Signal("sine", (1.5, 1.0))
    ramp = rs.Signal("ramp", (0.2,))
    dt = 1e-3
    for sensor, extra in ((rs.ZERO, np.zeros(2)), (ramp, np.array([0.2, 0.2]))):
        t, e = simulate_error(F2, sensor, act, np.array([0.5, -0.2]), 3.0, dt)
        de = np.diff(e, axis=0) / dt
        model = -e[:-1] @ F2.T + np.array([act(tk) for tk in t[:-1]]) + extra
        rel = np.linalg.norm(de - model) / np.linalg.norm(model)
        assert rel < 1e-3


def test_error_bound():
    F2 = np.diag([2.0, 4.0])
    assert rs.error_bound(0.5, 3.0, F2) == pytest.approx(0.5 + 1.5)
    assert rs.error_bound(0.5, 3.0, F2, 1.0) == pytest.approx(0.5 + 2.0)
    assert math.isinf(rs.error_bound(0.5, 3.0, -F2))


def test_sof_certificate():
    syn = rs.synthesize_sof()
    r1, r2 = rs.sof_residuals(syn)
    assert max(r1, r2) < 1e-8
    assert rs.verify_sof(syn)
    assert np.all(np.linalg.eigvals(-syn.F2).real < 0)
    np.testing.assert_allclose(syn.F1, -syn.F2)
    np.testing.assert_allclose(syn.K_bar, np.vstack([syn.F2 + np.eye(2), -syn.F1]))


def test_scalar_desk_case_independent_solve():
    """n = 1 channel: re-solve the 2x2 symmetric Riccati equation for the returned gain."""
    Q = np.diag([1.0, 0.0])
    syn = rs.synthesize_sof(Q_bar=Q, n=1)
    A, B, C, D = rs.observer_system(1)
    K, R, g = syn.K_bar, syn.R_bar, syn.gamma

    def eqs(x):
        P = np.array([[x[0], x[1]], [x[1], x[2]]])
        res = rs.riccati_residual_for(P, K, A, B, C, D, Q, R, g)
        return [res[0, 0], res[0, 1], res[1, 1]]

    P = syn.P_bar
    sol = fsolve(eqs, [P[0, 0] * 1.1, 0.0, 0.0], xtol=1e-14)
    np.testing.assert_allclose([[sol[0], sol[1]], [sol[1], sol[2]]], P, atol=1e-8)
    assert max(rs.sof_residuals(syn)) < 1e-8


def test_identity_weight_is_infeasible():
    with pytest.raises(rs.SofInfeasible) as info:
        rs.synthesize_sof(Q_bar=np.eye(4))
    assert info.value.best_residual > 0.1
    # the closed loop has a zero mode the identity weight penalises
    _, val = rs.infeasibility_witness(rs.synthesize_sof())
    assert val == pytest.approx(0.0, abs=1e-12)
    _, val_i = rs.infeasibility_witness(rs.synthesize_sof().K_bar, *rs.observer_system()[:3], np.eye(4))
    assert val_i == pytest.approx(1.0)


def test_l2_gain():
    syn = rs.synthesize_sof()
    sweep = [rs.sine_disturbance(w) for w in (0.1, 1.0, 10.0)]
    gain = rs.l2_gain_estimate(syn, sweep, horizon=100.0, dt=1e-3)
    assert gain <= syn.gamma
    one = rs.l2_gain_estimate(syn, [rs.sine_disturbance(1.0)], horizon=50.0)
    two = rs.l2_gain_estimate(syn, [rs.sine_disturbance(1.0, amplitude=2.0)], horizon=50.0)
    assert two == pytest.approx(one, rel=1e-10)
    assert math.isnan(rs.l2_gain_estimate(syn, [lambda t: np.zeros(4)], horizon=1.0))
