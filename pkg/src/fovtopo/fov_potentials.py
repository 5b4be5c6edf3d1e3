"""Triangular field of view, the boundary barrier and the Gaussian
interaction-quality potential.

All potentials of an edge ``(i, j)`` are functions of the neighbor position
expressed in robot ``i``'s body frame, ``q = R(theta_i)^T (p_j - p_i)``.
Gradients with respect to the world-frame states follow by the chain rule,
which makes ``d/dp_i = -d/dp_j`` hold exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# rotates a vector by +90 degrees
_J = np.array([[0.0, -1.0], [1.0, 0.0]])


class TopologyViolation(ValueError):
    """A neighbor left (or sits on the boundary of) the field of view."""

    def __init__(self, message, edge=None):
        super().__init__(message)
        self.edge = edge


def wrap_angle(theta):
    """Wrap into (-pi, pi]."""
    return math.pi - np.mod(math.pi - np.asarray(theta, dtype=float), 2 * math.pi)


@dataclass(frozen=True)
class RobotState:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", float(wrap_angle(self.theta)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_array(cls, s) -> "RobotState":
        return cls(float(s[0]), float(s[1]), float(s[2]))


def rotation(theta):
    """Stack of 2x2 rotation matrices, shape ``theta.shape + (2, 2)``."""
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


@dataclass(frozen=True)
class FovTriangle:
    """Robot-fixed sensing triangle and its Gaussian quality map.

    The apex sits ``apex_offset`` ahead of the robot center; the two slanted
    sides have length ``depth`` and open by ``half_angle`` on each side of
    the heading.  ``quality_mean`` defaults to the triangle centroid and
    ``quality_sigma`` to ``depth / 4`` per axis.
    """

    half_angle: float = math.pi / 6
    depth: float = 2.0
    apex_offset: float = 0.0
    quality_mean: tuple | None = None
    quality_sigma: tuple | None = None
    amplitude: float = 1.0
    # body-frame side lines: signed distance d_l = normals[l] . q - offsets[l]
    normals: np.ndarray = field(init=False, repr=False, compare=False)
    offsets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 < self.half_angle < math.pi / 2:
            raise ValueError("half_angle must lie in (0, pi/2)")
        if self.depth <= 0:
            raise ValueError("depth must be positive")
        if self.amplitude <= 0:
            raise ValueError("amplitude must be positive")
        verts = self.body_vertices()
        if self.quality_mean is None:
            object.__setattr__(self, "quality_mean", tuple(verts.mean(axis=0)))
        if self.quality_sigma is None:
            object.__setattr__(self, "quality_sigma", (self.depth / 4, self.depth / 4))
        mean = tuple(float(v) for v in self.quality_mean)
        sigma = tuple(float(v) for v in self.quality_sigma)
        object.__setattr__(self, "quality_mean", mean)
        object.__setattr__(self, "quality_sigma", sigma)
        if min(sigma) <= 0:
            raise ValueError("quality_sigma entries must be positive")

        centroid = verts.mean(axis=0)
        normals, offsets = [], []
        for a, b in ((0, 1), (1, 2), (2, 0)):
            t = verts[b] - verts[a]
            nrm = np.array([-t[1], t[0]]) / np.hypot(*t)
            if nrm @ (centroid - verts[a]) < 0:
                nrm = -nrm
            normals.append(nrm)
            offsets.append(nrm @ verts[a])
        object.__setattr__(self, "normals", np.array(normals))
        object.__setattr__(self, "offsets", np.array(offsets))
        if np.any(self.side_distances(np.array(mean)) <= 0):
            raise ValueError("quality_mean must lie strictly inside the triangle")

    def body_vertices(self) -> np.ndarray:
        a, d, h = self.apex_offset, self.depth, self.half_angle
        return np.array(
            [
                [a, 0.0],
                [a + d * math.cos(h), d * math.sin(h)],
                [a + d * math.cos(h), -d * math.sin(h)],
            ]
        )

    def side_distances(self, q) -> np.ndarray:
        """Signed distances of body-frame points to the three side lines."""
        return np.asarray(q) @ self.normals.T - self.offsets

    def inradius(self) -> float:
        verts = self.body_vertices()
        sides = [np.hypot(*(verts[b] - verts[a])) for a, b in ((0, 1), (1, 2), (2, 0))]
        s = sum(sides) / 2
        area = math.sqrt(s * (s - sides[0]) * (s - sides[1]) * (s - sides[2]))
        return area / s

    def to_dict(self) -> dict:
        return {
            "half_angle": self.half_angle,
            "depth": self.depth,
            "apex_offset": self.apex_offset,
            "quality_mean": list(self.quality_mean),
            "quality_sigma": list(self.quality_sigma),
            "amplitude": self.amplitude,
        }


@dataclass(frozen=True)
class PairGradient:
    d_pi: np.ndarray
    d_pj: np.ndarray
    d_thetai: float | np.ndarray

    def __add__(self, other: "PairGradient") -> "PairGradient":
        return PairGradient(
            self.d_pi + other.d_pi, self.d_pj + other.d_pj, self.d_thetai + other.d_thetai
        )


# ---------------------------------------------------------------------------
# body-frame kernels; q has shape (..., 2)
# ---------------------------------------------------------------------------


def body_coords(state_i, p_j):
    """``q = R(theta_i)^T (p_j - p_i)`` for batched inputs."""
    state_i = np.asarray(state_i, dtype=float)
    r = np.asarray(p_j, dtype=float) - state_i[..., :2]
    c, s = np.cos(state_i[..., 2]), np.sin(state_i[..., 2])
    return np.stack([c * r[..., 0] + s * r[..., 1], -s * r[..., 0] + c * r[..., 1]], -1)


def phi_body(q, normals, offsets, hessian=False):
    """Barrier ``sum 1/(2 d^2)``, its q-gradient and optionally q-Hessian.

    ``normals`` is (..., 3, 2) or (3, 2); no domain check here.
    """
    d = np.einsum("...lk,...k->...l", normals, q) - offsets
    inv = 1.0 / d
    val = 0.5 * np.sum(inv**2, axis=-1)
    grad = -np.einsum("...l,...lk->...k", inv**3, normals)
    if not hessian:
        return val, grad
    hess = 3.0 * np.einsum("...l,...lk,...lm->...km", inv**4, normals, normals)
    return val, grad, hess


def psi_body(q, mean, sigma, amplitude, hessian=False):
    """Inverted Gaussian ``A (1 - exp(-sum (q-mu)^2 / 2 sigma^2))``."""
    z = (q - mean) / sigma**2
    expo = np.exp(-0.5 * np.sum((q - mean) ** 2 / sigma**2, axis=-1))
    val = amplitude * (1.0 - expo)
    grad = (amplitude * expo)[..., None] * z
    if not hessian:
        return val, grad
    inv_s2 = np.broadcast_to(1.0 / sigma**2, q.shape)
    curv = inv_s2[..., :, None] * np.eye(2) - z[..., :, None] * z[..., None, :]
    hess = (amplitude * expo)[..., None, None] * curv
    return val, grad, hess


def _lift(q, grad_q, state_i):
    """Map a body-frame gradient to world-frame partials of robot i and j."""
    R = rotation(np.asarray(state_i, dtype=float)[..., 2])
    d_pj = np.einsum("...ab,...b->...a", R, grad_q)
    d_theta = grad_q[..., 0] * q[..., 1] - grad_q[..., 1] * q[..., 0]
    return PairGradient(d_pi=-d_pj, d_pj=d_pj, d_thetai=d_theta)


# ---------------------------------------------------------------------------
# public single-edge operations
# ---------------------------------------------------------------------------


def _as_state(state):
    if isinstance(state, RobotState):
        return state.as_array()
    return np.asarray(state, dtype=float)


def _as_point(p):
    if isinstance(p, RobotState):
        return p.position
    return np.asarray(p, dtype=float)[..., :2]


def triangle_vertices(state, fov: FovTriangle) -> np.ndarray:
    """World-frame vertices (apex first), shape (3, 2)."""
    s = _as_state(state)
    R = rotation(s[2])
    return s[:2] + fov.body_vertices() @ R.T


def contains(state, fov: FovTriangle, point) -> bool:
    """Strict interior test; boundary points are outside."""
    q = body_coords(_as_state(state), _as_point(point))
    return bool(np.all(fov.side_distances(q) > 0))


def _checked_q(state_i, fov, p_j):
    s = _as_state(state_i)
    q = body_coords(s, _as_point(p_j))
    if np.any(fov.side_distances(q) <= 0):
        raise TopologyViolation(f"neighbor at body coordinates {q} is outside the field of view")
    return s, q


def phi(state_i, fov: FovTriangle, p_j) -> float:
    _, q = _checked_q(state_i, fov, p_j)
    return float(phi_body(q, fov.normals, fov.offsets)[0])


def psi(state_i, fov: FovTriangle, p_j) -> float:
    q = body_coords(_as_state(state_i), _as_point(p_j))
    mean, sigma = np.array(fov.quality_mean), np.array(fov.quality_sigma)
    return float(psi_body(q, mean, sigma, fov.amplitude)[0])


def phi_gradient(state_i, state_j, fov: FovTriangle) -> PairGradient:
    s, q = _checked_q(state_i, fov, state_j)
    _, g = phi_body(q, fov.normals, fov.offsets)
    return _lift(q, g, s)


def psi_gradient(state_i, state_j, fov: FovTriangle) -> PairGradient:
    s = _as_state(state_i)
    q = body_coords(s, _as_point(state_j))
    _, g = psi_body(q, np.array(fov.quality_mean), np.array(fov.quality_sigma), fov.amplitude)
    return _lift(q, g, s)


def pair_gradient(state_i, state_j, fov: FovTriangle) -> PairGradient:
    """Analytic gradient of ``Phi_ij + Psi_ij`` w.r.t. p_i, p_j and theta_i."""
    return phi_gradient(state_i, state_j, fov) + psi_gradient(state_i, state_j, fov)


def pair_potential(state_i, state_j, fov: FovTriangle) -> float:
    return phi(state_i, fov, state_j) + psi(state_i, fov, state_j)
