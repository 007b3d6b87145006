"""Communication digraph among N inverters and two leaders.

Convention: ``adjacency[i, j]`` is the weight of the edge *from* j *to* i,
i.e. inverter i receives information from inverter j.  ``pinning[k, i]`` is
the gain from leader k (k = 0 for the upper/first leader, 1 for the second)
to inverter i.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

# reciprocal condition number below which the containment matrix is singular
RCOND_SINGULAR = 1e-12
PD_TOL = 1e-9


class SingularPhiSum(ValueError):
    """The summed containment matrix is singular (some follower is unreachable)."""


@dataclass(frozen=True)
class CommGraph:
    adjacency: np.ndarray
    pinning: np.ndarray

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=float)
        g = np.array(self.pinning, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValueError(f"adjacency must be a non-empty square matrix, got shape {a.shape}")
        n = a.shape[0]
        if g.shape != (2, n):
            raise ValueError(f"pinning must have shape (2, {n}), got {g.shape}")
        if np.any(np.diag(a) != 0):
            raise ValueError("adjacency must have a zero diagonal (no self-loops)")
        if np.any(a < 0) or np.any(g < 0):
            raise ValueError("edge and pinning weights must be nonnegative")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(g))):
            raise ValueError("graph weights must be finite")
        a.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "adjacency", a)
        object.__setattr__(self, "pinning", g)

    @property
    def n_followers(self) -> int:
        return self.adjacency.shape[0]

    def without_link(self, i: int, j: int, directed: bool = False) -> "CommGraph":
        a = self.adjacency.copy()
        if a[i, j] == 0 and (directed or a[j, i] == 0):
            raise ValueError(f"no communication link between inverters {i + 1} and {j + 1}")
        a[i, j] = 0.0
        if not directed:
            a[j, i] = 0.0
        return CommGraph(a, self.pinning)

    def with_link(self, i: int, j: int, weight: float = 1.0, directed: bool = False) -> "CommGraph":
        if i == j:
            raise ValueError("self-loops are not allowed")
        a = self.adjacency.copy()
        a[i, j] = weight
        if not directed:
            a[j, i] = weight
        return CommGraph(a, self.pinning)


@dataclass(frozen=True)
class GraphMatrices:
    laplacian: np.ndarray
    phi: tuple[np.ndarray, np.ndarray]
    phi_sum: np.ndarray
    phi_sum_inverse: np.ndarray


def laplacian(adjacency: np.ndarray) -> np.ndarray:
    a = np.asarray(adjacency, dtype=float)
    return np.diag(a.sum(axis=1)) - a


def build_matrices(g: CommGraph) -> GraphMatrices:
    """Laplacian, the two containment matrices ``L/2 + G_k``, their sum and its inverse.

    Raises SingularPhiSum when the sum is numerically singular.
    """
    lap = laplacian(g.adjacency)
    phi = tuple(0.5 * lap + np.diag(g.pinning[k]) for k in range(2))
    phi_sum = phi[0] + phi[1]
    sv = np.linalg.svd(phi_sum, compute_uv=False)
    if sv[-1] <= RCOND_SINGULAR * sv[0]:
        unreachable = [int(i) + 1 for i in np.flatnonzero(~follower_reachability(g))]
        raise SingularPhiSum(f"sum of containment matrices is singular; unreachable followers: {unreachable}")
    inv = np.linalg.inv(phi_sum)
    for m in (lap, *phi, phi_sum, inv):
        m.setflags(write=False)
    return GraphMatrices(lap, phi, phi_sum, inv)


def leader_reachability(g: CommGraph) -> np.ndarray:
    """Boolean array (2, N): entry [k, i] is True if a directed path runs from leader k to inverter i.

    Information flows j -> i along ``adjacency[i, j] > 0`` and leader k -> i
    along ``pinning[k, i] > 0``.
    """
    n = g.n_followers
    out_nbrs = [np.flatnonzero(g.adjacency[:, j] > 0) for j in range(n)]
    reach = np.zeros((2, n), dtype=bool)
    for k in range(2):
        queue = deque(np.flatnonzero(g.pinning[k] > 0))
        reach[k, list(queue)] = True
        while queue:
            j = queue.popleft()
            for i in out_nbrs[j]:
                if not reach[k, i]:
                    reach[k, i] = True
                    queue.append(i)
    return reach


def follower_reachability(g: CommGraph) -> np.ndarray:
    """Per-follower flag: reachable from at least one leader."""
    return leader_reachability(g).any(axis=0)


def assumption1_holds(g: CommGraph, strict: bool = False) -> bool:
    """Every follower is reachable from a leader.

    With ``strict=True`` every follower must be reachable from *each* leader.
    """
    reach = leader_reachability(g)
    return bool(reach.all() if strict else reach.any(axis=0).all())


def positive_definiteness_check(m: GraphMatrices | np.ndarray, tol: float = PD_TOL) -> bool:
    """True iff the symmetric part of the summed containment matrix has all eigenvalues > tol."""
    s = m.phi_sum if isinstance(m, GraphMatrices) else np.asarray(m, dtype=float)
    sym = 0.5 * (s + s.T)
    return bool(np.linalg.eigvalsh(sym).min() > tol)


def ring_graph() -> CommGraph:
    """Four-inverter ring 1-2-3-4-1 with leader 1 pinning inverter 1 and leader 2 pinning inverter 3."""
    a = np.array(
        [[0, 1, 0, 1],
         [1, 0, 1, 0],
         [0, 1, 0, 1],
         [1, 0, 1, 0]],
        dtype=float,
    )
    pins = np.zeros((2, 4))
    pins[0, 0] = 1.0
    pins[1, 2] = 1.0
    return CommGraph(a, pins)
