"""Run a scenario in one of the four modes and collect a step-by-step log."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .. import __version__
from ..adaptive_controller import SingularityError, Team, edge_terms, evaluate, step
from ..fov_potentials import TopologyViolation, wrap_angle
from ..qlearning import GainLearner, discretize_step
from ..resilience import FaultProfile, ObserverState, SofInfeasible, error_bound, synthesize_sof
from .scenario import MODES, Scenario

log = logging.getLogger(__name__)


@dataclass
class RunLog:
    mode: str
    n: int
    edges: tuple  # 0-based
    dt: float
    t: np.ndarray
    states: np.ndarray  # (T, n, 3)
    gains: np.ndarray  # (T, E)
    F_robot: np.ndarray  # (T, n)
    F: np.ndarray
    V: np.ndarray
    distances: np.ndarray  # (T, n(n-1)/2)
    e: np.ndarray | None = None  # (T, n, 2)
    p_hat: np.ndarray | None = None
    delta_hat: np.ndarray | None = None
    pe_min: np.ndarray | None = None  # (T, n)
    pe_max: np.ndarray | None = None
    rls_residual: np.ndarray | None = None
    events: list = field(default_factory=list)
    error: dict | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return self.error is None

    @property
    def Vdot(self) -> np.ndarray:
        """Forward-difference estimate of dV/dt; the last entry is nan."""
        out = np.full_like(self.V, np.nan)
        if self.V.size > 1:
            out[:-1] = np.diff(self.V) / self.dt
        return out

    @property
    def pairs(self) -> list:
        return list(combinations(range(self.n), 2))


def pairwise_distances(states) -> np.ndarray:
    p = np.asarray(states)[:, :2]
    i, j = np.triu_indices(len(p), 1)
    return np.linalg.norm(p[j] - p[i], axis=1)


class _Recorder:
    def __init__(self, extra=()):
        self.cols = {k: [] for k in ("t", "states", "gains", "F_robot", "F", "V", "distances", *extra)}

    def add(self, **kw):
        for k, v in kw.items():
            self.cols[k].append(np.array(v, dtype=float, copy=True))

    def arrays(self):
        return {k: np.array(v) if v else None for k, v in self.cols.items()}


def _record_common(rec: _Recorder, team: Team, t, states, gains):
    ev = evaluate(team, states, gains, full=False)
    rec.add(
        t=t,
        states=states,
        gains=gains,
        F_robot=ev.F_robot(team),
        F=ev.F,
        V=ev.V,
        distances=pairwise_distances(states),
    )


def _error_record(exc, t) -> dict:
    rec = {"kind": type(exc).__name__, "message": str(exc), "t_last_ok": float(t)}
    edge = getattr(exc, "edge", None)
    if edge is not None:
        i, j = int(edge[0]) + 1, int(edge[1]) + 1
        rec["edge"] = [i, j]
        if isinstance(exc, TopologyViolation):
            rec["message"] = f"robot {j} left the field of view of robot {i}"
        else:
            rec["message"] = f"robots {i} and {j} coincide"
    return rec


def _nominal_step(team, s, k, dt, ex, t):
    def f(x, tt):
        return evaluate(team, x, k, full=False).u_bar + ex(tt)

    k1 = f(s, t)
    k2 = f(s + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = f(s + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = f(s + dt * k3, t + dt)
    s1 = s + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    s1[:, 2] = wrap_angle(s1[:, 2])
    return s1


def run(scenario: Scenario, mode: str | None = None, horizon: float | None = None) -> RunLog:
    """Simulate ``scenario``; a mid-run violation ends the run with ``log.error`` set.

    The returned log always holds every step completed before the abort.
    """
    mode = mode or scenario.mode
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    horizon = scenario.horizon if horizon is None else horizon
    team = scenario.team()
    dt = scenario.dt
    N = int(round(horizon / dt))
    s = scenario.initial_states.copy()
    k = scenario.gains0()
    ex = scenario.exogenous
    extra = {
        "resilient": ("e", "p_hat", "delta_hat"),
        "qlearning": ("pe_min", "pe_max", "rls_residual"),
    }.get(mode, ())
    rec = _Recorder(extra)
    events = []
    meta = {
        "scenario": scenario.name,
        "scenario_hash": scenario.content_hash,
        "mode": mode,
        "robots": scenario.n,
        "leader": scenario.leader + 1,
        "edges": [[i + 1, j + 1] for i, j in scenario.topology.edges],
        "dt": dt,
        "horizon": horizon,
        "integrator": "euler" if mode == "qlearning" else scenario.integrator,
        "seed": scenario.seed,
        "version": __version__,
    }
    error = None
    t = 0.0

    try:
        if mode == "resilient":
            faults = scenario.faults or FaultProfile.none(scenario.n)
            syn = synthesize_sof(gamma=scenario.gamma)
            meta["observer"] = {
                "gamma": scenario.gamma,
                "F1": syn.F1.tolist(),
                "F2": syn.F2.tolist(),
                "actuator_bound": faults.actuator_bound,
                "sensor_rate_bound": faults.sensor_rate_bound,
            }
            _run_resilient(scenario, team, s, k, faults, syn, N, rec, meta)
        else:
            learner = None
            if mode == "qlearning":
                L = scenario.learning
                learner = GainLearner(
                    team, k, discount=L.discount, t_in=L.t_in, forgetting=L.forgetting, eps0=L.eps0,
                    eps1=L.eps1, p0=L.p0, dt=dt, normalize=L.normalize, floor=L.floor,
                )
                nan = np.full(scenario.n, np.nan)
                rec.add(pe_min=nan, pe_max=nan, rls_residual=nan)
            _record_common(rec, team, 0.0, s, k)
            for n in range(N):
                t = n * dt
                if mode == "nominal":
                    s = _nominal_step(team, s, k, dt, ex, t)
                elif mode == "adaptive":
                    k_prev = k
                    s, k = step(team, s, k, dt, scenario.integrator, exogenous=ex, t=t)
                    flips = np.nonzero(np.sign(k) != np.sign(k_prev))[0]
                    for e in flips:
                        i, j = scenario.topology.edges[e]
                        events.append({"t": (n + 1) * dt, "kind": "gain_sign_flip", "edge": [i + 1, j + 1]})
                else:
                    s1 = discretize_step(team, s, learner.gains, dt, ex(t))
                    r = learner.observe(s, s1)
                    s = s1
                    for ev in r.events:
                        events.append(
                            {"t": (n + 1) * dt, "kind": "policy_update" if ev.updated else "policy_frozen",
                             "q": ev.q, "robot": ev.robot + 1, "lambda_min": ev.lambda_min}
                        )
                    k = learner.gains
                    rec.add(pe_min=r.pe_min, pe_max=r.pe_max, rls_residual=r.residual)
                t = (n + 1) * dt
                _record_common(rec, team, t, s, k)
    except (TopologyViolation, SingularityError, SofInfeasible, FloatingPointError) as exc:
        # time of the last step that completed cleanly
        t_ok = float(rec.cols["t"][-1]) if rec.cols["t"] else 0.0
        error = _error_record(exc, t_ok)
        log.error("run aborted after t=%.3f: %s", t_ok, exc)

    cols = rec.arrays()
    # a qlearning abort may leave one more learning row than state rows
    T = len(cols["t"]) if cols["t"] is not None else 0
    for key in extra:
        if cols[key] is not None:
            cols[key] = cols[key][:T]
    return RunLog(
        mode=mode,
        n=scenario.n,
        edges=scenario.topology.edges,
        dt=dt,
        events=events,
        error=error,
        metadata=meta,
        **cols,
    )


def _run_resilient(scenario, team, s, k, faults, syn, N, rec, meta):
    """True robots, faulty sensing and actuation, observer-fed control with fixed gains."""
    dt = scenario.dt
    ex = scenario.exogenous
    p_bar0 = s[:, :2] + faults.delta_p(0.0)
    obs = ObserverState.start(p_bar0, syn.F1, syn.F2)
    FF = syn.F1 + syn.F2

    def rhs(x, tt):
        st, ph, dh = x
        est = np.column_stack([ph, st[:, 2]])
        u = evaluate(team, est, k, full=False).u_bar + ex(tt)
        e = st[:, :2] + faults.delta_p(tt) - ph - dh
        ds = u.copy()
        ds[:, :2] += faults.delta_u(tt)
        return ds, u[:, :2] + e @ FF.T, -(e @ syn.F1.T)

    def record(tt, st, ph, dh):
        # the true configuration must keep every neighbor in view
        edge_terms(team, st, hessian=False)
        _record_common(rec, team, tt, st, k)
        rec.add(e=st[:, :2] + faults.delta_p(tt) - ph - dh, p_hat=ph, delta_hat=dh)

    x = (s, obs.p_hat, obs.delta_hat)
    record(0.0, *x)
    e0 = float(np.max(np.linalg.norm(rec.cols["e"][0], axis=1)))
    meta["observer"]["error_bound"] = error_bound(e0, faults.actuator_bound, syn.F2, faults.sensor_rate_bound)
    meta["observer"]["error_bound_actuator_only"] = error_bound(e0, faults.actuator_bound, syn.F2)
    for n in range(N):
        t = n * dt
        a = rhs(x, t)
        b = rhs(tuple(xi + 0.5 * dt * di for xi, di in zip(x, a)), t + 0.5 * dt)
        c = rhs(tuple(xi + 0.5 * dt * di for xi, di in zip(x, b)), t + 0.5 * dt)
        d = rhs(tuple(xi + dt * di for xi, di in zip(x, c)), t + dt)
        x = tuple(xi + dt / 6.0 * (ai + 2 * bi + 2 * ci + di) for xi, ai, bi, ci, di in zip(x, a, b, c, d))
        x[0][:, 2] = wrap_angle(x[0][:, 2])
        record((n + 1) * dt, *x)
