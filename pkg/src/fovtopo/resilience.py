"""Sensor/actuator fault injection, the fault-estimating observer and the
static-output-feedback certificate for its gains.

Per robot and per planar channel the observer runs

    p_hat_dot     = u_p + (F1 + F2) e
    delta_hat_dot = -F1 e
    e             = p_bar - p_hat - delta_hat

with ``p_bar = p + delta_p`` the faulty measurement.  The gains are obtained
from the output-feedback system

    x_dot = A x + B u + D d,  y = C x,  u = -K y,
    A = [I 0; 0 0], B = D = I, C = [I 0], K = [F2 + I; -F1],

certified by matrices (P, M) with

    K C = R^-1 (B^T P + M)
    P A + A^T P + Q + g^-2 P D D^T P + M^T R^-1 M - P B R^-1 B^T P = 0.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.linalg import solve_continuous_lyapunov
from scipy.integrate import trapezoid
from scipy.optimize import minimize_scalar
from scipy.signal import lsim

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# fault profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Signal:
    """Per-axis time function: ``zero``, ``constant(v)``, ``ramp(rate)`` or ``sine(amp, freq)``.

    ``freq`` is in Hz, so ``sine(1.5, 1)`` is ``1.5 sin(2 pi t)``.
    """

    kind: str = "zero"
    params: tuple = ()

    def __post_init__(self):
        arity = {"zero": 0, "constant": 1, "ramp": 1, "sine": 2}
        if self.kind not in arity:
            raise ValueError(f"unknown fault signal {self.kind!r}")
        if len(self.params) != arity[self.kind]:
            raise ValueError(f"{self.kind} takes {arity[self.kind]} parameter(s), got {len(self.params)}")
        object.__setattr__(
            self, "params", tuple(np.broadcast_to(np.asarray(p, dtype=float), (2,)).copy() for p in self.params)
        )

    def __call__(self, t: float) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(2)
        if self.kind == "constant":
            return self.params[0].copy()
        if self.kind == "ramp":
            return self.params[0] * t
        amp, freq = self.params
        return amp * np.sin(2 * math.pi * freq * t)

    def rate(self, t: float) -> np.ndarray:
        if self.kind in ("zero", "constant"):
            return np.zeros(2)
        if self.kind == "ramp":
            return self.params[0].copy()
        amp, freq = self.params
        return amp * 2 * math.pi * freq * np.cos(2 * math.pi * freq * t)

    def sup_norm(self) -> float:
        """``sup_t ||signal(t)||`` (infinite for a nonzero ramp)."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "constant":
            return float(np.linalg.norm(self.params[0]))
        if self.kind == "ramp":
            return math.inf if np.any(self.params[0]) else 0.0
        amp, freq = self.params
        if freq[0] == freq[1]:
            return float(np.linalg.norm(amp))
        return float(np.linalg.norm(np.abs(amp)))

    def sup_rate(self) -> float:
        if self.kind in ("zero", "constant"):
            return 0.0
        if self.kind == "ramp":
            return float(np.linalg.norm(self.params[0]))
        amp, freq = self.params
        return float(np.linalg.norm(np.abs(amp * 2 * math.pi * freq)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": [p.tolist() for p in self.params]}


ZERO = Signal()


@dataclass(frozen=True)
class FaultProfile:
    """Sensor faults ``delta_p`` (m) and actuator faults ``delta_u`` (m/s) per robot."""

    sensor: tuple
    actuator: tuple

    @classmethod
    def none(cls, n: int) -> "FaultProfile":
        return cls((ZERO,) * n, (ZERO,) * n)

    @property
    def n(self) -> int:
        return len(self.sensor)

    def __post_init__(self):
        if len(self.sensor) != len(self.actuator):
            raise ValueError("sensor and actuator profiles must cover the same robots")

    def delta_p(self, t: float) -> np.ndarray:
        return np.array([f(t) for f in self.sensor]).reshape(self.n, 2)

    def delta_p_rate(self, t: float) -> np.ndarray:
        return np.array([f.rate(t) for f in self.sensor]).reshape(self.n, 2)

    def delta_u(self, t: float) -> np.ndarray:
        return np.array([f(t) for f in self.actuator]).reshape(self.n, 2)

    @property
    def sensor_rate_bound(self) -> float:
        return max((f.sup_rate() for f in self.sensor), default=0.0)

    @property
    def actuator_bound(self) -> float:
        return max((f.sup_norm() for f in self.actuator), default=0.0)

    def check_bounds(self, horizon: float, samples: int = 2001) -> bool:
        """Sample the profile and confirm the declared bounds."""
        ts = np.linspace(0.0, horizon, samples)
        du = max(float(np.max(np.linalg.norm(self.delta_u(t), axis=1), initial=0.0)) for t in ts)
        dr = max(float(np.max(np.linalg.norm(self.delta_p_rate(t), axis=1), initial=0.0)) for t in ts)
        tol = 1e-9
        return du <= self.actuator_bound + tol and dr <= self.sensor_rate_bound + tol


def inject(states, profile: FaultProfile, t: float, u_p):
    """Faulty measurements ``p + delta_p`` and applied planar controls ``u + delta_u``."""
    s = np.asarray(states, dtype=float)
    p_bar = s[:, :2] + profile.delta_p(t)
    u_hat = np.asarray(u_p, dtype=float)[:, :2] + profile.delta_u(t)
    return p_bar, u_hat


# ---------------------------------------------------------------------------
# observer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObserverState:
    p_hat: np.ndarray  # (n, 2)
    delta_hat: np.ndarray  # (n, 2)
    e: np.ndarray  # (n, 2)
    F1: np.ndarray
    F2: np.ndarray

    @classmethod
    def start(cls, p_bar, F1, F2, p_hat=None) -> "ObserverState":
        p_bar = np.atleast_2d(np.asarray(p_bar, dtype=float))
        p_hat = p_bar.copy() if p_hat is None else np.atleast_2d(np.asarray(p_hat, dtype=float)).copy()
        delta_hat = np.zeros_like(p_bar)
        return cls(p_hat, delta_hat, p_bar - p_hat - delta_hat, np.asarray(F1, float), np.asarray(F2, float))


def observer_rates(obs: ObserverState, e, u_p):
    """``(p_hat_dot, delta_hat_dot)`` for the given error and desired control."""
    e = np.atleast_2d(e)
    w = e @ (obs.F1 + obs.F2).T
    return np.atleast_2d(u_p)[:, :2] + w, -(e @ obs.F1.T)


def observer_step(obs: ObserverState, p_bar, u_p_desired, dt: float) -> ObserverState:
    """Forward-Euler observer update; ``e`` is recomputed from its definition."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    dp, dd = observer_rates(obs, obs.e, u_p_desired)
    p_hat = obs.p_hat + dt * dp
    delta_hat = obs.delta_hat + dt * dd
    e = np.atleast_2d(np.asarray(p_bar, dtype=float)) - p_hat - delta_hat
    return replace(obs, p_hat=p_hat, delta_hat=delta_hat, e=e)


def error_bound(e0_norm: float, actuator_bound: float, F2, sensor_rate_bound: float = 0.0) -> float:
    """Linear bound ``||e(0)|| + (||du||_inf + ||d delta_p/dt||_inf) / lambda_min(F2)``."""
    lam = float(np.linalg.eigvalsh(0.5 * (F2 + F2.T))[0])
    if lam <= 0:
        return math.inf
    return e0_norm + (actuator_bound + sensor_rate_bound) / lam


# ---------------------------------------------------------------------------
# static output feedback certificate
# ---------------------------------------------------------------------------


class SofInfeasible(RuntimeError):
    def __init__(self, message, best_residual=math.inf):
        super().__init__(message)
        self.best_residual = best_residual


def observer_system(n: int = 2):
    """``(A, B, C, D)`` of the observer error system for an n-dimensional channel."""
    I, Z = np.eye(n), np.zeros((n, n))
    A = np.block([[I, Z], [Z, Z]])
    B = np.eye(2 * n)
    C = np.hstack([I, Z])
    return A, B, C, B.copy()


@dataclass
class SofSynthesis:
    A_bar: np.ndarray
    B_bar: np.ndarray
    C_bar: np.ndarray
    D_bar: np.ndarray
    Q_bar: np.ndarray
    R_bar: np.ndarray
    gamma: float
    K_bar: np.ndarray
    P_bar: np.ndarray
    M: np.ndarray
    status: str = "certified"

    @property
    def n(self) -> int:
        return self.C_bar.shape[0]

    @property
    def F2(self) -> np.ndarray:
        return self.K_bar[: self.n] - np.eye(self.n)

    @property
    def F1(self) -> np.ndarray:
        return -self.K_bar[self.n :]

    @property
    def closed_loop(self) -> np.ndarray:
        return self.A_bar - self.B_bar @ self.K_bar @ self.C_bar


def sof_residuals(syn: SofSynthesis):
    """Frobenius norms of the coupling and Riccati residuals."""
    Ri = np.linalg.inv(syn.R_bar)
    P, A, B, D, M = syn.P_bar, syn.A_bar, syn.B_bar, syn.D_bar, syn.M
    r1 = syn.K_bar @ syn.C_bar - Ri @ (B.T @ P + M)
    r2 = (
        P @ A
        + A.T @ P
        + syn.Q_bar
        + syn.gamma**-2 * P @ D @ D.T @ P
        + M.T @ Ri @ M
        - P @ B @ Ri @ B.T @ P
    )
    return float(np.linalg.norm(r1)), float(np.linalg.norm(r2))


def verify_sof(syn: SofSynthesis, tol: float = 1e-8) -> bool:
    r1, r2 = sof_residuals(syn)
    hurwitz = bool(np.all(np.linalg.eigvals(-syn.F2).real < 0))
    return r1 < tol and r2 < tol and hurwitz


def _bounded_real_P(Acl, Qc, gamma, iters=500, tol=1e-14):
    """Minimal solution of ``Acl^T P + P Acl + Qc + g^-2 P^2 = 0`` by Lyapunov iteration.

    Returns ``(P, residual)``; ``P`` is None when the iteration diverges.
    """
    P = np.zeros_like(Qc)
    g2 = gamma**-2
    for _ in range(iters):
        P_new = solve_continuous_lyapunov(Acl.T, -(Qc + g2 * P @ P))
        P_new = 0.5 * (P_new + P_new.T)
        if not np.all(np.isfinite(P_new)) or np.linalg.norm(P_new) > 1e12:
            return None, math.inf
        done = np.linalg.norm(P_new - P) <= tol * max(1.0, np.linalg.norm(P_new))
        P = P_new
        if done:
            break
    res = float(np.linalg.norm(Acl.T @ P + P @ Acl + Qc + g2 * P @ P))
    return P, res


def _gains(f: float, kappa: float, n: int):
    F2 = f * np.eye(n)
    F1 = -kappa * F2
    return np.vstack([F2 + np.eye(n), -F1])


def synthesize_sof(Q_bar=None, R_bar=None, gamma: float = 10.0, n: int = 2, kappa: float = 1.0, tol: float = 1e-10):
    """Observer gains with an L2-gain certificate.

    The gains are searched in the family ``F2 = f I, F1 = -kappa f I``;
    ``kappa = 1`` keeps the position estimate free of any sensor-fault
    drift.  For each f the certificate is ``P = diag(P1, 0)`` with P1 the
    minimal solution of the closed-loop bounded-real equation, and
    ``M = R K C - B^T P``.  ``f`` is chosen to minimise ``trace(P1)``.

    Raises ``SofInfeasible`` when no member of the family is certified,
    which is always the case if ``Q_bar`` weights the fault-estimate block
    (that block carries an uncontrollable zero mode).
    """
    A, B, C, D = observer_system(n)
    Q = np.diag(np.r_[np.ones(n), np.zeros(n)]) if Q_bar is None else np.asarray(Q_bar, dtype=float)
    R = np.eye(2 * n) if R_bar is None else np.asarray(R_bar, dtype=float)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if np.linalg.eigvalsh(0.5 * (Q + Q.T))[0] < -1e-12:
        raise ValueError("Q_bar must be positive semidefinite")
    if np.linalg.eigvalsh(0.5 * (R + R.T))[0] <= 0:
        raise ValueError("R_bar must be positive definite")

    def certificate(f):
        K = _gains(f, kappa, n)
        Acl = A - B @ K @ C
        # full closed-loop bounded-real equation; the zero block must stay zero
        Qc = Q + C.T @ K.T @ R @ K @ C
        lower = Qc[n:, n:]
        if np.linalg.norm(lower) > 0:
            return None, K, math.inf
        P1, res = _bounded_real_P(Acl[:n, :n], Qc[:n, :n], gamma)
        if P1 is None:
            return None, K, math.inf
        P = np.zeros((2 * n, 2 * n))
        P[:n, :n] = P1
        return P, K, res

    def score(f):
        P, _, res = certificate(f)
        if P is None or res > 1e-6:
            return 1e12 + f
        return float(np.trace(P))

    best = math.inf
    Ppos = None
    for f in np.geomspace(1e-3, 1e3, 61):
        P, K, res = certificate(f)
        best = min(best, res)
        if P is not None and res < 1e-6:
            Ppos = f
            break
    if Ppos is None:
        raise SofInfeasible(f"no certified gain for gamma={gamma}", best_residual=best)
    # feasible set is an interval [f_min, inf); minimise trace(P1) on it
    lo = Ppos / 10
    out = minimize_scalar(score, bounds=(lo, max(1e3, 10 * Ppos)), method="bounded", options={"xatol": 1e-10})
    f = out.x if out.fun < 1e11 else Ppos
    P, K, res = certificate(f)
    if P is None or res > 1e-6:
        f = Ppos
        P, K, res = certificate(f)
    M = R @ K @ C - B.T @ P
    syn = SofSynthesis(A, B, C, D, Q, R, float(gamma), K, P, M)
    r1, r2 = sof_residuals(syn)
    if max(r1, r2) > tol:
        syn.status = "inaccurate"
        raise SofInfeasible(f"certificate residuals {r1:.2e}, {r2:.2e} above {tol:.0e}", max(r1, r2))
    return syn


def riccati_residual_for(P, K, A, B, C, D, Q, R, gamma) -> np.ndarray:
    """Riccati residual with ``M`` eliminated through the coupling condition."""
    M = R @ K @ C - B.T @ P
    Ri = np.linalg.inv(R)
    return P @ A + A.T @ P + Q + gamma**-2 * P @ D @ D.T @ P + M.T @ Ri @ M - P @ B @ Ri @ B.T @ P


def infeasibility_witness(syn_or_K, A=None, B=None, C=None, Q=None):
    """Null vector ``v`` of the closed loop and the value ``v^T Q v``.

    With M eliminated, the Riccati residual reads
    ``Acl^T P + P Acl + Q + C^T K^T R K C + g^-2 P D D^T P``.  On a null
    vector of ``Acl`` that also satisfies ``K C v = 0`` its quadratic form is
    ``v^T Q v + g^-2 ||D^T P v||^2``, so a positive ``v^T Q v`` rules out every
    certificate for this gain.
    """
    if isinstance(syn_or_K, SofSynthesis):
        A, B, C, Q, K = syn_or_K.A_bar, syn_or_K.B_bar, syn_or_K.C_bar, syn_or_K.Q_bar, syn_or_K.K_bar
    else:
        K = syn_or_K
    Acl = A - B @ K @ C
    _, _, vt = np.linalg.svd(Acl)
    v = vt[-1]
    return v, float(v @ Q @ v)


# ---------------------------------------------------------------------------
# empirical L2 gain
# ---------------------------------------------------------------------------


def sine_disturbance(omega: float, amplitude=1.0, dim: int = 4, phase: float = 0.0) -> Callable:
    amp = np.broadcast_to(np.asarray(amplitude, dtype=float), (dim,))
    return lambda t: amp * np.sin(omega * t + phase)


def l2_gain_estimate(syn: SofSynthesis, disturbances, horizon: float = 200.0, dt: float = 1e-3):
    """``max sqrt(int ||w||^2 / int ||d||^2)`` over the test signals, zero initial state.

    ``||w||^2 = x^T Q x + u^T R u`` with ``u = -K C x``.  Signals with zero
    energy are skipped.
    """
    Acl = syn.closed_loop
    KC = syn.K_bar @ syn.C_bar
    W = syn.Q_bar + KC.T @ syn.R_bar @ KC
    nx = Acl.shape[0]
    t = np.arange(int(round(horizon / dt)) + 1) * dt
    system = (Acl, syn.D_bar, np.eye(nx), np.zeros((nx, syn.D_bar.shape[1])))
    ratios = []
    for d in disturbances:
        U = np.array([np.asarray(d(tk), dtype=float) for tk in t])
        den = trapezoid(np.sum(U * U, axis=1), t)
        if den == 0.0:
            log.info("zero-energy disturbance skipped")
            continue
        _, _, x = lsim(system, U, t)
        num = trapezoid(np.einsum("ta,ab,tb->t", x, W, x), t)
        ratios.append(math.sqrt(num / den))
    if not ratios:
        return float("nan")
    return max(ratios)
