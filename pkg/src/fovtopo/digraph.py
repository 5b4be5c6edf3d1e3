"""Directed interaction graphs and the edge-space matrices used by the
stability certificate.

Edge ``(i, j)`` means robot ``i`` senses robot ``j`` (``j`` sits inside the
field of view of ``i``).  Node indices are 0-based throughout the library.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np


class CertificationError(RuntimeError):
    """The eigen-solver failed while certifying the edge Laplacian."""


@dataclass(frozen=True)
class Topology:
    """Directed graph with edges sorted by (start, end).

    The sort puts every edge leaving robot 0 first, then robot 1, and so on,
    which fixes the edge index ``g(i, j)`` used by all stacked vectors.
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    edge_index: dict = field(init=False, repr=False, compare=False)

    def __init__(self, n, edges):
        n = int(n)
        if n < 0:
            raise ValueError("node count must be non-negative")
        clean = []
        for e in edges:
            i, j = (int(v) for v in e)
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge {(i, j)} references a node outside 0..{n - 1}")
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            clean.append((i, j))
        if len(set(clean)) != len(clean):
            raise ValueError("duplicate directed edge")
        clean.sort()
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "edges", tuple(clean))
        object.__setattr__(self, "edge_index", {e: k for k, e in enumerate(clean)})

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def sources(self) -> np.ndarray:
        return np.array([e[0] for e in self.edges], dtype=int)

    @property
    def targets(self) -> np.ndarray:
        return np.array([e[1] for e in self.edges], dtype=int)

    def out_neighbors(self, i: int) -> list[int]:
        return [j for (a, j) in self.edges if a == i]

    def in_neighbors(self, i: int) -> list[int]:
        return [a for (a, j) in self.edges if j == i]

    def out_edges(self, i: int) -> list[int]:
        """Edge indices with starting vertex ``i``, in sorted order."""
        return [k for k, (a, _) in enumerate(self.edges) if a == i]

    def degrees(self) -> np.ndarray:
        """``|N_i^+| + |N_i^-|`` per node."""
        deg = np.zeros(self.n, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg


@dataclass(frozen=True)
class IncidencePair:
    B: np.ndarray
    B_plus: np.ndarray


@dataclass(frozen=True)
class BigLaplacian:
    L_bar: np.ndarray
    L_bar_sym: np.ndarray
    num_edges: int

    @property
    def xy_block(self) -> np.ndarray:
        m = 2 * self.num_edges
        return self.L_bar[:m, :m]

    @property
    def theta_block(self) -> np.ndarray:
        m = 2 * self.num_edges
        return self.L_bar[m:, m:]


def build_incidence(topology: Topology) -> IncidencePair:
    m = topology.num_edges
    B = np.zeros((topology.n, m), dtype=int)
    if m:
        cols = np.arange(m)
        B[topology.sources, cols] = 1
        B[topology.targets, cols] = -1
    B_plus = np.where(B > 0, B, 0)
    return IncidencePair(B=B, B_plus=B_plus)


def edge_laplacian(pair: IncidencePair) -> np.ndarray:
    """Directed edge Laplacian ``B^T B_+``."""
    return pair.B.T @ pair.B_plus


def build_big_laplacian(pair: IncidencePair) -> BigLaplacian:
    """Block-diagonal ``[(B^T B_+) kron I_2, 0; 0, B_+^T B_+]``."""
    m = pair.B.shape[1]
    xy = np.kron(edge_laplacian(pair), np.eye(2, dtype=int))
    theta = pair.B_plus.T @ pair.B_plus
    L = np.zeros((3 * m, 3 * m), dtype=int)
    L[: 2 * m, : 2 * m] = xy
    L[2 * m :, 2 * m :] = theta
    return BigLaplacian(L_bar=L, L_bar_sym=0.5 * (L + L.T), num_edges=m)


def certificate_spectrum(L: BigLaplacian) -> np.ndarray:
    if L.L_bar_sym.size == 0:
        return np.zeros(0)
    try:
        return np.linalg.eigvalsh(L.L_bar_sym)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise CertificationError(f"eigenvalue solver failed: {exc}") from exc


def is_stability_certified(L: BigLaplacian, tol: float = 1e-9) -> bool:
    """True when the symmetric part of ``L_bar`` is positive semidefinite."""
    eig = certificate_spectrum(L)
    if eig.size == 0:
        return True
    if not np.all(np.isfinite(eig)):
        raise CertificationError("non-finite eigenvalues in certificate")
    return bool(eig[0] >= -tol)


def has_spanning_tree(topology: Topology, root: int) -> bool:
    """Every robot can follow observation edges ``i -> j`` up to ``root``.

    Equivalently ``root`` reaches every node in the reversed graph.
    """
    if not 0 <= root < topology.n:
        raise ValueError(f"root {root} outside 0..{topology.n - 1}")
    observers = {v: [] for v in range(topology.n)}
    for i, j in topology.edges:
        observers[j].append(i)
    seen = {root}
    queue = deque([root])
    while queue:
        v = queue.popleft()
        for u in observers[v]:
            if u not in seen:
                seen.add(u)
                queue.append(u)
    return len(seen) == topology.n
