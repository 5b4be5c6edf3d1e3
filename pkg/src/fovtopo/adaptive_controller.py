"""Gain-weighted potential control and the adaptive gain dynamics.

The team evolves as

    s_dot = u_bar(s, k)                  (starting-vertex gradients only)
    k_dot = -grad_k F(p, k) + w(s, k)

where ``u_bar_i = -sum_j k_ij grad_{s_i} Vbar_ij`` and ``F`` is the
line-of-sight deviation cost.  ``w`` is chosen edge by edge so that the
composite energy ``V = sum k_ij Vbar_ij + F`` satisfies

    V_dot = -xi_k^T L_bar^+ xi_k - ||grad_k F||^2.

All per-edge work is vectorised over the sorted edge list.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .digraph import Topology, build_big_laplacian, build_incidence
from .fov_potentials import (
    FovTriangle,
    TopologyViolation,
    body_coords,
    phi_body,
    psi_body,
    rotation,
    wrap_angle,
)

log = logging.getLogger(__name__)

EPS_LOS = 1e-6
EPS_ALPHA = 1e-9
_J = np.array([[0.0, -1.0], [1.0, 0.0]])


class SingularityError(ValueError):
    """Two robots of an edge (nearly) coincide; the line of sight is undefined."""

    def __init__(self, message, edge=None):
        super().__init__(message)
        self.edge = edge


class Team:
    """Topology plus per-robot fields of view, with per-edge lookup tables."""

    def __init__(self, topology: Topology, fovs: FovTriangle | Sequence[FovTriangle]):
        if isinstance(fovs, FovTriangle):
            fovs = [fovs] * topology.n
        if len(fovs) != topology.n:
            raise ValueError("need one field of view per robot")
        self.topology = topology
        self.fovs = tuple(fovs)
        self.n = topology.n
        self.m = topology.num_edges
        self.src = topology.sources
        self.dst = topology.targets
        pair = build_incidence(topology)
        self.B = pair.B.astype(float)
        self.B_plus = pair.B_plus.astype(float)
        self.L_sym = build_big_laplacian(pair).L_bar_sym
        self.degree = topology.degrees()
        fe = [self.fovs[i] for i in self.src]
        self.normals = np.array([f.normals for f in fe]).reshape(self.m, 3, 2)
        self.offsets = np.array([f.offsets for f in fe]).reshape(self.m, 3)
        self.mean = np.array([f.quality_mean for f in fe]).reshape(self.m, 2)
        self.sigma = np.array([f.quality_sigma for f in fe]).reshape(self.m, 2)
        self.amp = np.array([f.amplitude for f in fe]).reshape(self.m)

    def edge_id(self, edge) -> int:
        if isinstance(edge, (int, np.integer)):
            return int(edge)
        return self.topology.edge_index[tuple(edge)]


@dataclass
class EdgeTerms:
    """Per-edge geometry and potential derivatives at one team state."""

    q: np.ndarray  # body-frame neighbor position (E, 2)
    R: np.ndarray  # rotation of the starting robot (E, 2, 2)
    vbar: np.ndarray  # Phi + Psi (E,)
    phi: np.ndarray
    psi: np.ndarray
    g: np.ndarray  # q-gradient of Vbar (E, 2)
    H: np.ndarray | None  # q-Hessian of Vbar (E, 2, 2)
    grad_pi: np.ndarray  # d Vbar / d p_i (E, 2)
    grad_theta: np.ndarray  # d Vbar / d theta_i (E,)
    m: np.ndarray  # desired pairwise model -grad_pi (E, 2)
    los: np.ndarray  # p_j - p_i (E, 2)
    los2: np.ndarray  # ||p_j - p_i||^2 (E,)
    A: np.ndarray  # line-of-sight projector (E, 2, 2)


def edge_terms(team: Team, states: np.ndarray, hessian: bool = True) -> EdgeTerms:
    states = np.asarray(states, dtype=float)
    si = states[team.src]
    pj = states[team.dst, :2]
    q = body_coords(si, pj)
    dist = np.einsum("elk,ek->el", team.normals, q) - team.offsets
    bad = np.nonzero(np.any(dist <= 0, axis=1))[0]
    if bad.size:
        e = team.topology.edges[bad[0]]
        raise TopologyViolation(f"edge {e}: neighbor {e[1]} left the field of view of robot {e[0]}", edge=e)
    if hessian:
        ph, gph, hph = phi_body(q, team.normals, team.offsets, hessian=True)
        ps, gps, hps = psi_body(q, team.mean, team.sigma, team.amp, hessian=True)
        H = hph + hps
    else:
        ph, gph = phi_body(q, team.normals, team.offsets)
        ps, gps = psi_body(q, team.mean, team.sigma, team.amp)
        H = None
    g = gph + gps
    R = rotation(si[:, 2])
    m = np.einsum("eab,eb->ea", R, g)
    los = pj - si[:, :2]
    los2 = np.sum(los**2, axis=1)
    close = np.nonzero(los2 < EPS_LOS**2)[0]
    if close.size:
        e = team.topology.edges[close[0]]
        raise SingularityError(f"edge {e}: robots coincide", edge=e)
    A = los[:, :, None] * los[:, None, :] / los2[:, None, None]
    return EdgeTerms(
        q=q,
        R=R,
        vbar=ph + ps,
        phi=ph,
        psi=ps,
        g=g,
        H=H,
        grad_pi=-m,
        grad_theta=g[:, 0] * q[:, 1] - g[:, 1] * q[:, 0],
        m=m,
        los=los,
        los2=los2,
        A=A,
    )


@dataclass
class FieldEval:
    """Everything the adaptive flow needs at one (s, k)."""

    terms: EdgeTerms
    gains: np.ndarray
    u_bar: np.ndarray  # (n, 3)
    rho: np.ndarray  # residual A_ij u_i - m_ij (E, 2)
    F_edge: np.ndarray  # (E,)
    grad_k_F: np.ndarray  # (E,)
    grad_s_F: np.ndarray | None  # (n, 3)
    grad_s_Vhat: np.ndarray | None  # (n, 3), both edge endpoints
    xi: np.ndarray  # [xi_xy (2E), xi_theta (E)], gain weighted
    beta: np.ndarray | None  # (n,)
    alpha: np.ndarray | None
    gamma: np.ndarray | None
    w: np.ndarray | None
    k_dot: np.ndarray | None

    @property
    def F(self) -> float:
        return float(self.F_edge.sum())

    @property
    def Vhat(self) -> float:
        return float(self.gains @ self.terms.vbar)

    @property
    def V(self) -> float:
        return self.Vhat + self.F

    def F_robot(self, team: Team) -> np.ndarray:
        """Per-robot cost ``F_i = sum_{j in N_i^+} F_ij``."""
        return team.B_plus @ self.F_edge


def evaluate(team: Team, states, gains, full: bool = True) -> FieldEval:
    """Evaluate controls, costs and (if ``full``) the gain dynamics."""
    k = np.asarray(gains, dtype=float)
    T = edge_terms(team, states, hessian=full)
    km = k[:, None] * T.m
    u = np.zeros((team.n, 3))
    u[:, :2] = team.B_plus @ km
    u[:, 2] = -(team.B_plus @ (k * T.grad_theta))
    ui = u[team.src, :2]
    rho = np.einsum("eab,eb->ea", T.A, ui) - T.m
    F_edge = 0.5 * np.sum(rho**2, axis=1)
    z = team.B_plus @ np.einsum("eab,eb->ea", T.A, rho)  # sum_e A_e rho_e per start robot
    zi = z[team.src]
    gkF = np.sum(T.m * zi, axis=1)
    xi = np.concatenate([(k[:, None] * T.grad_pi).ravel(), k * T.grad_theta])
    if not full:
        return FieldEval(T, k, u, rho, F_edge, gkF, None, None, xi, None, None, None, None, None)

    # d m_e / d p_j (symmetric) and d m_e / d theta_i
    dm_dpj = np.einsum("eab,ebc,edc->ead", T.R, T.H, T.R)
    Jq = T.q @ _J.T
    dm_dth = np.einsum("eab,eb->ea", T.R, T.g @ _J.T - np.einsum("eab,eb->ea", T.H, Jq))
    # derivative of A_e u_i with respect to the line of sight, contracted with rho
    lu = np.sum(T.los * ui, axis=1)
    lr = np.sum(T.los * rho, axis=1)
    n2 = T.los2
    ja_rho = (lu[:, None] * rho + ui * lr[:, None]) / n2[:, None] - (
        2.0 * (lu * lr) / n2**2
    )[:, None] * T.los
    c = (
        k[:, None] * np.einsum("eab,eb->ea", dm_dpj, zi)
        - np.einsum("eab,eb->ea", dm_dpj, rho)
        + ja_rho
    )
    gsF = np.zeros((team.n, 3))
    gsF[:, :2] = -(team.B @ c)
    gsF[:, 2] = team.B_plus @ (k * np.sum(dm_dth * zi, axis=1) - np.sum(dm_dth * rho, axis=1))

    gsV = np.zeros((team.n, 3))
    gsV[:, :2] = team.B @ (k[:, None] * T.grad_pi)
    gsV[:, 2] = team.B_plus @ (k * T.grad_theta)

    # beta_i = grad_{s_i} F . grad_{s+_i} Vhat, with grad_{s+} Vhat = -u_bar
    beta = -np.sum(gsF * u, axis=1)
    alpha = T.vbar + gkF
    gamma = T.vbar * gkF
    deg = team.degree
    share = np.divide(beta, deg, out=np.zeros_like(beta), where=deg > 0)
    num = gamma + share[team.src] + share[team.dst]
    w = np.zeros(team.m)
    ok = np.abs(alpha) > EPS_ALPHA
    w[ok] = num[ok] / alpha[ok]
    if not np.all(ok):
        log.warning("alpha below guard on edges %s; w set to 0", np.nonzero(~ok)[0].tolist())
    k_dot = -gkF + w
    return FieldEval(T, k, u, rho, F_edge, gkF, gsF, gsV, xi, beta, alpha, gamma, w, k_dot)


def vdot_identity(team: Team, ev: FieldEval) -> float:
    """``-xi_k^T L_bar^+ xi_k - ||grad_k F||^2``."""
    return float(-ev.xi @ team.L_sym @ ev.xi - ev.grad_k_F @ ev.grad_k_F)


def vdot_chain_rule(ev: FieldEval, s_dot=None, k_dot=None) -> float:
    """Chain-rule derivative of ``V = Vhat + F`` along (s_dot, k_dot)."""
    s_dot = ev.u_bar if s_dot is None else s_dot
    k_dot = ev.k_dot if k_dot is None else k_dot
    return float(
        np.sum(ev.grad_s_Vhat * s_dot)
        + ev.terms.vbar @ k_dot
        + np.sum(ev.grad_s_F * s_dot)
        + ev.grad_k_F @ k_dot
    )


# ---------------------------------------------------------------------------
# single-edge / single-robot operations
# ---------------------------------------------------------------------------


def nominal_control(team: Team, robot: int, states, gains=None) -> np.ndarray:
    """``u_i = -sum_j k_ij grad_{s_i}(Phi_ij + Psi_ij)``; unit gains if none given."""
    k = np.ones(team.m) if gains is None else np.asarray(gains, dtype=float)
    out = team.topology.out_edges(robot)
    if not out:
        return np.zeros(3)
    T = edge_terms(team, states, hessian=False)
    u = np.zeros(3)
    for e in out:
        u[:2] -= k[e] * T.grad_pi[e]
        u[2] -= k[e] * T.grad_theta[e]
    return u


def desired_model(team: Team, edge, states) -> np.ndarray:
    """``m_ij = -grad_{p_i} Vbar_ij``."""
    e = team.edge_id(edge)
    return edge_terms(team, states, hessian=False).m[e].copy()


def los_projector(team: Team, edge, states) -> np.ndarray:
    e = team.edge_id(edge)
    i, j = team.topology.edges[e]
    d = np.asarray(states, dtype=float)[j, :2] - np.asarray(states, dtype=float)[i, :2]
    n2 = d @ d
    if n2 < EPS_LOS**2:
        raise SingularityError(f"edge {(i, j)}: robots coincide", edge=(i, j))
    return np.outer(d, d) / n2


def project_onto_los(team: Team, edge, u_p, states) -> np.ndarray:
    """``(p_ij^T u / ||p_ij||^2) p_ij``."""
    e = team.edge_id(edge)
    i, j = team.topology.edges[e]
    d = np.asarray(states, dtype=float)[j, :2] - np.asarray(states, dtype=float)[i, :2]
    n2 = d @ d
    if n2 < EPS_LOS**2:
        raise SingularityError(f"edge {(i, j)}: robots coincide", edge=(i, j))
    return (d @ np.asarray(u_p, dtype=float)) / n2 * d


def gradient_matrix(team: Team, robot: int, states) -> np.ndarray:
    """``B_i``: 2 x |E| with ``-grad_{p_i} Vbar_ij`` in the columns of i's out-edges."""
    T = edge_terms(team, states, hessian=False)
    Bi = np.zeros((2, team.m))
    for e in team.topology.out_edges(robot):
        Bi[:, e] = T.m[e]
    return Bi


def deviation_cost(team: Team, edge, states, gains) -> float:
    """``F_ij = 1/2 ||P_ij(u_bar_i) - m_ij||^2``."""
    e = team.edge_id(edge)
    i = team.topology.edges[e][0]
    u = nominal_control(team, i, states, gains)[:2]
    r = project_onto_los(team, e, u, states) - desired_model(team, e, states)
    return 0.5 * float(r @ r)


def deviation_cost_matrix(team: Team, edge, states, gains) -> float:
    """Same cost in the form ``1/2 ||A_ij B_i k - m_ij||^2``."""
    e = team.edge_id(edge)
    i = team.topology.edges[e][0]
    A = los_projector(team, e, states)
    Bi = gradient_matrix(team, i, states)
    r = A @ Bi @ np.asarray(gains, dtype=float) - Bi[:, e]
    return 0.5 * float(r @ r)


def total_cost(team: Team, states, gains) -> float:
    return evaluate(team, states, gains, full=False).F


def grad_k_F(team: Team, states, gains) -> np.ndarray:
    return evaluate(team, states, gains, full=False).grad_k_F


def hessian_k_F(team: Team, edge, states) -> np.ndarray:
    """Per-edge Hessian ``(A_ij B_i)^T (A_ij B_i)``; independent of k."""
    e = team.edge_id(edge)
    i = team.topology.edges[e][0]
    AB = los_projector(team, e, states) @ gradient_matrix(team, i, states)
    return AB.T @ AB


def hessian_k_F_total(team: Team, states) -> np.ndarray:
    T = edge_terms(team, states, hessian=False)
    H = np.zeros((team.m, team.m))
    for e in range(team.m):
        i = team.src[e]
        cols = team.topology.out_edges(i)
        AB = T.A[e] @ T.m[cols].T
        H[np.ix_(cols, cols)] += AB.T @ AB
    return H


def lyapunov_terms_w(team: Team, states, gains) -> np.ndarray:
    return evaluate(team, states, gains).w


def lyapunov_term_w(team: Team, edge, states, gains) -> float:
    return float(lyapunov_terms_w(team, states, gains)[team.edge_id(edge)])


def composite_energy(team: Team, states, gains) -> float:
    """``V(s, k) = sum k_ij Vbar_ij + F``."""
    return evaluate(team, states, gains, full=False).V


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------


def flow(team: Team, states, gains, exogenous=None):
    """Right-hand side of the coupled (s, k) system."""
    ev = evaluate(team, states, gains)
    s_dot = ev.u_bar.copy()
    if exogenous is not None:
        s_dot += exogenous
    return s_dot, ev.k_dot, ev


def step(
    team: Team,
    states,
    gains,
    dt: float = 1e-3,
    integrator: str = "rk4",
    exogenous: np.ndarray | Callable | None = None,
    t: float = 0.0,
):
    """Advance (s, k) by one step; theta is wrapped afterwards.

    ``exogenous`` is an additive (n, 3) velocity or a callable of time.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    s = np.asarray(states, dtype=float)
    k = np.asarray(gains, dtype=float)
    ex = exogenous if callable(exogenous) else (lambda _t: exogenous)
    if integrator == "euler":
        ds, dk, _ = flow(team, s, k, ex(t))
        s1, k1 = s + dt * ds, k + dt * dk
    elif integrator == "rk4":
        ds1, dk1, _ = flow(team, s, k, ex(t))
        ds2, dk2, _ = flow(team, s + 0.5 * dt * ds1, k + 0.5 * dt * dk1, ex(t + 0.5 * dt))
        ds3, dk3, _ = flow(team, s + 0.5 * dt * ds2, k + 0.5 * dt * dk2, ex(t + 0.5 * dt))
        ds4, dk4, _ = flow(team, s + dt * ds3, k + dt * dk3, ex(t + dt))
        s1 = s + dt / 6.0 * (ds1 + 2 * ds2 + 2 * ds3 + ds4)
        k1 = k + dt / 6.0 * (dk1 + 2 * dk2 + 2 * dk3 + dk4)
    else:
        raise ValueError(f"unknown integrator {integrator!r}")
    s1[:, 2] = wrap_angle(s1[:, 2])
    return s1, k1
