"""Neighbor graphs, flow matrices, Perron vectors and generalized Laplacians.

Vertices are 0-based. An arc ``(j, i)`` means agent ``j`` is a neighbor of
agent ``i`` (information flows from j to i). Every vertex must carry a
self-loop.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import MissingSelfLoop, NotDoublyStochastic, NotIrreducible, NotSymmetricGraph

log = logging.getLogger(__name__)

PERRON_TOL = 1e-12
PERRON_MAX_ITER = 100_000
DOUBLY_STOCHASTIC_TOL = 1e-10


@dataclass(frozen=True)
class NeighborGraph:
    m: int
    arcs: frozenset

    def __post_init__(self):
        arcs = frozenset((int(j), int(i)) for j, i in self.arcs)
        for j, i in arcs:
            if not (0 <= j < self.m and 0 <= i < self.m):
                raise ValueError(f"arc {(j, i)} has an endpoint outside 0..{self.m - 1}")
        object.__setattr__(self, "arcs", arcs)

    @classmethod
    def from_arcs(cls, m: int, arcs: Iterable) -> "NeighborGraph":
        """Build a graph and add every self-loop."""
        return cls(m, frozenset(arcs) | {(i, i) for i in range(m)})

    @classmethod
    def complete(cls, m: int) -> "NeighborGraph":
        return cls(m, frozenset((j, i) for j in range(m) for i in range(m)))

    @classmethod
    def ring(cls, m: int) -> "NeighborGraph":
        return cls.from_arcs(m, ((i, (i + 1) % m) for i in range(m)))

    def has_self_loops(self) -> bool:
        return all((i, i) in self.arcs for i in range(self.m))

    def neighbors(self, i: int) -> list:
        """Sorted labels of agent i's neighbors (including i)."""
        return sorted(j for j, k in self.arcs if k == i)

    def adjacency(self) -> np.ndarray:
        """Adjacency with a[j, i] = 1 for arc j -> i."""
        a = np.zeros((self.m, self.m))
        for j, i in self.arcs:
            a[j, i] = 1.0
        return a

    def is_symmetric(self) -> bool:
        return all((i, j) in self.arcs for j, i in self.arcs)

    def without_arc(self, j: int, i: int) -> "NeighborGraph":
        if j == i:
            raise ValueError("self-loops cannot be removed")
        return NeighborGraph(self.m, self.arcs - {(j, i)})

    def restricted(self, keep: Iterable[int]) -> "NeighborGraph":
        """Induced subgraph on ``keep``, relabelled 0..len(keep)-1 in order."""
        keep = list(keep)
        pos = {v: k for k, v in enumerate(keep)}
        return NeighborGraph(
            len(keep),
            frozenset((pos[j], pos[i]) for j, i in self.arcs if j in pos and i in pos),
        )


def _reachable(succ, start, m):
    seen = [False] * m
    seen[start] = True
    todo = deque([start])
    while todo:
        v = todo.popleft()
        for w in succ[v]:
            if not seen[w]:
                seen[w] = True
                todo.append(w)
    return all(seen)


def strongly_connected(g: NeighborGraph) -> bool:
    """True iff every vertex reaches every other (forward and backward BFS from 0)."""
    if g.m <= 1:
        return True
    fwd = [[] for _ in range(g.m)]
    bwd = [[] for _ in range(g.m)]
    for j, i in g.arcs:
        fwd[j].append(i)
        bwd[i].append(j)
    return _reachable(fwd, 0, g.m) and _reachable(bwd, 0, g.m)


def _pattern_strongly_connected(M, tol=0.0) -> bool:
    m = M.shape[0]
    arcs = {(j, i) for j in range(m) for i in range(m) if abs(M[j, i]) > tol}
    return strongly_connected(NeighborGraph(m, frozenset(arcs)))


def flow_matrix(g: NeighborGraph) -> np.ndarray:
    """S = D^-1 adj'; row i averages uniformly over agent i's neighbors."""
    if not g.has_self_loops():
        missing = [i for i in range(g.m) if (i, i) not in g.arcs]
        raise MissingSelfLoop(f"vertices {missing} have no self-loop")
    At = g.adjacency().T
    return At / At.sum(axis=1, keepdims=True)


def metropolis_weights(g: NeighborGraph) -> np.ndarray:
    """Symmetric doubly stochastic weights w_ij = 1 / (1 + max(d_i, d_j))."""
    if not g.is_symmetric():
        raise NotSymmetricGraph("Metropolis weights need an undirected arc set")
    if not g.has_self_loops():
        raise MissingSelfLoop("Metropolis weights need self-loops")
    deg = [len(g.neighbors(i)) - 1 for i in range(g.m)]
    W = np.zeros((g.m, g.m))
    for j, i in g.arcs:
        if i != j:
            W[i, j] = 1.0 / (1 + max(deg[i], deg[j]))
    W[np.diag_indices(g.m)] = 1.0 - W.sum(axis=1)
    return W


def is_doubly_stochastic(S, tol=DOUBLY_STOCHASTIC_TOL) -> bool:
    S = np.asarray(S, dtype=float)
    return (
        bool(np.all(S >= -tol))
        and np.max(np.abs(S.sum(axis=1) - 1)) <= tol
        and np.max(np.abs(S.sum(axis=0) - 1)) <= tol
    )


def perron_vector(S) -> np.ndarray:
    """Positive probability vector pi with S' pi = pi.

    Lazy power iteration pi <- (pi + S' pi) / 2, which converges for any
    irreducible stochastic S; falls back to a dense eigen-solve if the
    iteration stalls.
    """
    S = np.asarray(S, dtype=float)
    m = S.shape[0]
    if m == 1:
        return np.ones(1)
    if not _pattern_strongly_connected(S):
        raise NotIrreducible("graph of S' is not strongly connected")
    St = S.T
    pi = np.full(m, 1.0 / m)
    for _ in range(PERRON_MAX_ITER):
        pi = 0.5 * (pi + St @ pi)
        pi /= pi.sum()
        if np.linalg.norm(St @ pi - pi) <= 0.1 * PERRON_TOL:
            break
    if np.linalg.norm(St @ pi - pi) > PERRON_TOL:
        log.debug("power iteration stalled; using dense eigen-solve")
        w, vecs = np.linalg.eig(St)
        k = int(np.argmin(np.abs(w - 1.0)))
        pi = np.real(vecs[:, k])
        pi = pi / pi.sum()
    if np.any(pi <= 0):
        raise NotIrreducible("Perron vector is not strictly positive")
    return pi


def generalized_laplacian_of(S, pi=None) -> np.ndarray:
    """L = 2 Pi - Pi S - S' Pi."""
    S = np.asarray(S, dtype=float)
    if pi is None:
        pi = perron_vector(S)
    Pi = np.diag(pi)
    L = 2 * Pi - Pi @ S - S.T @ Pi
    return 0.5 * (L + L.T)


def discrete_laplacian(M) -> tuple:
    """(Pi_M, L_M) with L_M = Pi_M - M' Pi_M M."""
    M = np.asarray(M, dtype=float)
    pi = perron_vector(M)
    Pi = np.diag(pi)
    L = Pi - M.T @ Pi @ M
    return Pi, 0.5 * (L + L.T)


@dataclass(frozen=True)
class NetworkSnapshot:
    graph: NeighborGraph
    S: np.ndarray
    pi: np.ndarray
    Pi: np.ndarray
    L: np.ndarray
    weights: str = "uniform"

    @classmethod
    def from_graph(cls, g: NeighborGraph, weights: str = "uniform") -> "NetworkSnapshot":
        if weights == "uniform":
            S = flow_matrix(g)
        elif weights == "metropolis":
            S = metropolis_weights(g)
        else:
            raise ValueError(f"unknown weights {weights!r}")
        pi = perron_vector(S)
        return cls(g, S, pi, np.diag(pi), generalized_laplacian_of(S, pi), weights)

    @classmethod
    def from_matrix(cls, S) -> "NetworkSnapshot":
        """Snapshot of an arbitrary row-stochastic averaging matrix; the graph is its pattern."""
        S = np.asarray(S, dtype=float)
        if np.any(S < 0) or np.max(np.abs(S.sum(axis=1) - 1)) > DOUBLY_STOCHASTIC_TOL:
            raise ValueError("averaging matrix must be nonnegative with unit row sums")
        m = S.shape[0]
        g = NeighborGraph(m, frozenset((j, i) for i in range(m) for j in range(m) if S[i, j] > 0))
        pi = perron_vector(S)
        return cls(g, S, pi, np.diag(pi), generalized_laplacian_of(S, pi), "custom")

    @property
    def m(self) -> int:
        return self.graph.m

    @property
    def doubly_stochastic(self) -> bool:
        return is_doubly_stochastic(self.S)


def generalized_laplacian(snapshot: NetworkSnapshot) -> np.ndarray:
    return snapshot.L


def require_doubly_stochastic(snapshots) -> None:
    for k, snap in enumerate(snapshots):
        if not is_doubly_stochastic(snap.S):
            raise NotDoublyStochastic(f"family member {k} is not doubly stochastic")
