"""Policy-iteration Q-learning of the pairwise gains.

Each robot regresses the desired model of every out-edge on the
line-of-sight projections of its own out-edge models,

    phi_t = (A_ij M_i)(t) - gamma^l (A_ij M_i)(t+1),    c_t = m_ij(t),

where the columns of ``M_i`` are the models ``m_ih`` of robot i's out-edges.
The estimate is refreshed by recursive least squares and copied into the
policy every ``t_in`` steps, provided the window was persistently exciting.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .adaptive_controller import Team, edge_terms, evaluate
from .fov_potentials import wrap_angle

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# discrete dynamics and regressors
# ---------------------------------------------------------------------------


def discretize_step(team: Team, states, gains, dt: float, exogenous=None) -> np.ndarray:
    """Forward Euler ``s(t+1) = s(t) + dt * u_bar(t)`` (plus any exogenous velocity)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    s = np.asarray(states, dtype=float)
    ev = evaluate(team, s, gains, full=False)
    v = ev.u_bar if exogenous is None else ev.u_bar + exogenous
    s1 = s + dt * v
    s1[:, 2] = wrap_angle(s1[:, 2])
    return s1


def _projected_models(team: Team, terms, edge: int) -> np.ndarray:
    """``(A_ij M_i)^T``: one row per out-edge of the starting robot, shape (g, 2)."""
    cols = team.topology.out_edges(int(team.src[edge]))
    return terms.m[cols] @ terms.A[edge]


def build_regressor(team: Team, edge, states_t, states_t1, gamma_discount: float, l: int):
    """Regressor (g x 2, one column per output row) and target for one edge.

    ``g`` is the number of out-edges of the edge's starting robot, in sorted
    edge order.
    """
    e = team.edge_id(edge)
    t0 = edge_terms(team, states_t, hessian=False)
    phi = _projected_models(team, t0, e)
    w = float(gamma_discount) ** int(l)
    if w != 0.0:
        t1 = edge_terms(team, states_t1, hessian=False)
        phi = phi - w * _projected_models(team, t1, e)
    return phi, t0.m[e].copy()


def _all_regressors(team: Team, t0, t1, weight: float):
    out = []
    for e in range(team.m):
        phi = _projected_models(team, t0, e)
        if weight != 0.0:
            phi = phi - weight * _projected_models(team, t1, e)
        out.append((phi, t0.m[e]))
    return out


# ---------------------------------------------------------------------------
# recursive least squares
# ---------------------------------------------------------------------------


@dataclass
class RlsEstimator:
    theta_hat: np.ndarray
    P_cov: np.ndarray
    forgetting: float = 0.99
    p0: float = 100.0
    # covariance trace ceiling; forgetting with no excitation would blow P up
    trace_cap: float = 1e6
    residual: float = 0.0
    resets: int = 0

    @classmethod
    def create(cls, dim: int, theta0=1.0, p0: float = 100.0, forgetting: float = 0.99, trace_cap: float = 1e6):
        if not 0 < forgetting <= 1:
            raise ValueError("forgetting must lie in (0, 1]")
        theta = np.broadcast_to(np.asarray(theta0, dtype=float), (dim,)).copy()
        return cls(theta, p0 * np.eye(dim), forgetting, p0, trace_cap)


def rls_update(est: RlsEstimator, phi, c) -> RlsEstimator:
    """Feed each column of ``phi`` (with the matching entry of ``c``) as a scalar sample.

    ``residual`` records the a-priori error norm of this update.
    """
    phi = np.asarray(phi, dtype=float)
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if phi.ndim == 1:
        phi = phi[:, None]
    if phi.shape != (est.theta_hat.size, c.size):
        raise ValueError(f"regressor shape {phi.shape} does not match ({est.theta_hat.size}, {c.size})")
    theta, P = est.theta_hat.copy(), est.P_cov.copy()
    lam = est.forgetting
    resets = est.resets
    err0 = c - phi.T @ theta
    for r in range(c.size):
        x = phi[:, r]
        Px = P @ x
        denom = lam + x @ Px
        if x @ x == 0.0:
            continue
        gain = Px / denom
        theta = theta + gain * (c[r] - x @ theta)
        P = (P - np.outer(gain, Px)) / lam
        P = 0.5 * (P + P.T)
    tr = np.trace(P)
    if tr > est.trace_cap:
        P *= est.trace_cap / tr
    if not np.all(np.isfinite(P)) or np.linalg.eigvalsh(P)[0] <= 0:
        log.warning("RLS covariance lost definiteness; reset to %g I", est.p0)
        P = est.p0 * np.eye(theta.size)
        resets += 1
    return replace(est, theta_hat=theta, P_cov=P, residual=float(np.linalg.norm(err0)), resets=resets)


# ---------------------------------------------------------------------------
# persistence of excitation
# ---------------------------------------------------------------------------


@dataclass
class PeWindow:
    t_in: int = 50
    eps0: float = 0.7
    eps1: float = 11.0
    # each entry is the list of regressors (g x 2) gathered in one step
    window: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.t_in < 1:
            raise ValueError("t_in must be positive")
        self.window = deque(self.window, maxlen=self.t_in)

    def push(self, regressors):
        if isinstance(regressors, np.ndarray):
            regressors = [regressors]
        self.window.append([np.asarray(p, dtype=float) for p in regressors])

    @property
    def full(self) -> bool:
        return len(self.window) == self.t_in

    def matrix(self) -> np.ndarray:
        """``(1/T_in) sum phi phi^T`` over the buffered steps."""
        dim = None
        S = None
        for regs in self.window:
            for p in regs:
                p = p[:, None] if p.ndim == 1 else p
                if S is None:
                    dim = p.shape[0]
                    S = np.zeros((dim, dim))
                S += p @ p.T
        if S is None:
            return np.zeros((0, 0))
        return S / self.t_in


def pe_check(window: PeWindow):
    """(satisfied, lambda_min, lambda_max) of the averaged outer-product sum."""
    S = window.matrix()
    if S.size == 0:
        return False, 0.0, 0.0
    eig = np.linalg.eigvalsh(0.5 * (S + S.T))
    lo, hi = float(eig[0]), float(eig[-1])
    ok = window.full and window.eps0 <= lo and hi <= window.eps1
    return bool(ok), lo, hi


# ---------------------------------------------------------------------------
# policy iteration
# ---------------------------------------------------------------------------


@dataclass
class PolicySchedule:
    q: int = 0
    l: int = 0
    gamma_discount: float = 0.9
    dt: float = 0.01
    t_in: int = 50

    def __post_init__(self):
        if not 0.0 <= self.gamma_discount <= 1.0:
            raise ValueError("gamma_discount must lie in [0, 1]")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass
class PolicyEvent:
    q: int
    robot: int
    updated: bool
    lambda_min: float
    lambda_max: float


def policy_iterate(team: Team, schedule: PolicySchedule, estimators, gains, windows=None):
    """Copy each robot's estimate into its out-edge gains.

    Robots whose PE window fails keep their gains.  Returns
    ``(gains, events)``; the schedule counter advances in place.
    """
    if schedule.l < schedule.t_in:
        raise ValueError(f"policy change requested after {schedule.l} < {schedule.t_in} steps")
    k = np.asarray(gains, dtype=float).copy()
    events = []
    for i, est in estimators.items():
        cols = team.topology.out_edges(i)
        if windows is None:
            ok, lo, hi = True, float("nan"), float("nan")
        else:
            ok, lo, hi = pe_check(windows[i])
        if ok:
            k[cols] = est.theta_hat
        else:
            log.info("policy %d: robot %d not excited (lambda_min %.3g); gains frozen", schedule.q, i, lo)
        events.append(PolicyEvent(schedule.q, i, ok, lo, hi))
    schedule.q += 1
    schedule.l = 0
    return k, events


def objective(team: Team, robot: int, states, gains) -> float:
    """``O_i(k) = sum_j ||P_ij(u_bar_i) - m_ij||^2`` over the out-edges of ``robot``."""
    ev = evaluate(team, states, gains, full=False)
    cols = team.topology.out_edges(robot)
    return float(np.sum(ev.rho[cols] ** 2))


# ---------------------------------------------------------------------------
# common-direction model
# ---------------------------------------------------------------------------


def common_direction_samples(n_out: int, x, xis):
    """Regression samples for a robot whose ``n_out`` neighbors share the
    relative position ``x`` and the model ``v = xi * x``.

    Every out-edge then sees the same regressor rows ``(A v)^T`` and target ``v``.
    """
    x = np.asarray(x, dtype=float)
    A = np.outer(x, x) / (x @ x)
    for xi in xis:
        v = xi * x
        phi = np.tile(A @ v, (n_out, 1))
        for _ in range(n_out):
            yield phi, v


def common_direction_objective(gains, x, xi: float) -> float:
    """``O_i`` in the common-direction model: ``n (1 - sum k)^2 xi^2 ||x||^2``."""
    k = np.asarray(gains, dtype=float)
    x = np.asarray(x, dtype=float)
    v = xi * x
    A = np.outer(x, x) / (x @ x)
    u = k.sum() * v
    r = A @ u - v
    return float(k.size * (r @ r))


# ---------------------------------------------------------------------------
# online learner
# ---------------------------------------------------------------------------


@dataclass
class StepRecord:
    residual: np.ndarray  # a-priori RLS error per robot (nan without out-edges)
    pe_min: np.ndarray
    pe_max: np.ndarray
    events: list


class GainLearner:
    """Per-robot RLS estimators, PE windows and the policy schedule.

    With ``normalize`` each regression sample is divided by the size of its
    target ``max(||m_ij||, floor)``; the least-squares problem is unchanged
    up to sample weighting, and the PE statistic becomes dimensionless.
    """

    def __init__(
        self,
        team: Team,
        gains,
        discount: float = 0.9,
        t_in: int = 50,
        forgetting: float = 0.99,
        eps0: float = 0.7,
        eps1: float = 11.0,
        p0: float = 100.0,
        dt: float = 0.01,
        normalize: bool = True,
        floor: float = 1e-2,
    ):
        self.team = team
        self.gains = np.asarray(gains, dtype=float).copy()
        self.schedule = PolicySchedule(gamma_discount=discount, dt=dt, t_in=t_in)
        self.normalize = normalize
        self.floor = floor
        self.robots = [i for i in range(team.n) if team.topology.out_edges(i)]
        self.estimators = {
            i: RlsEstimator.create(len(team.topology.out_edges(i)), self.gains[team.topology.out_edges(i)], p0, forgetting)
            for i in self.robots
        }
        self.windows = {i: PeWindow(t_in, eps0, eps1) for i in self.robots}
        self.events: list[PolicyEvent] = []

    def observe(self, states_t, states_t1) -> StepRecord:
        team = self.team
        t0 = edge_terms(team, states_t, hessian=False)
        t1 = edge_terms(team, states_t1, hessian=False)
        weight = self.schedule.gamma_discount ** (self.schedule.l + 1)
        regs = _all_regressors(team, t0, t1, weight)
        res = np.full(team.n, np.nan)
        for i in self.robots:
            est = self.estimators[i]
            step_regs = []
            err2 = 0.0
            for e in team.topology.out_edges(i):
                phi, c = regs[e]
                if self.normalize:
                    s = max(float(np.linalg.norm(c)), self.floor)
                    phi, c = phi / s, c / s
                est = rls_update(est, phi, c)
                err2 += est.residual**2
                step_regs.append(phi)
            self.estimators[i] = est
            self.windows[i].push(step_regs)
            res[i] = np.sqrt(err2)
        self.schedule.l += 1
        events = []
        if self.schedule.l >= self.schedule.t_in:
            self.gains, events = policy_iterate(team, self.schedule, self.estimators, self.gains, self.windows)
            self.events.extend(events)
        lo = np.full(team.n, np.nan)
        hi = np.full(team.n, np.nan)
        for i in self.robots:
            _, lo[i], hi[i] = pe_check(self.windows[i])
        return StepRecord(res, lo, hi, events)
