"""Per-agent observability decomposition.

Each agent splits R^n into its unobservable subspace (basis ``V``) and a
quotient (map ``Q`` with kernel span(V)). The quotient pair is observable
and is stabilized by output injection; the unobservable part is left for
the network to fix.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import matrixkit as mk
from .errors import DimensionMismatch, IntertwiningViolated

INTERTWINING_TOL = 1e-8


@dataclass(frozen=True)
class Plant:
    """x' = A x (or x(t+1) = A x(t)), y_i = C_i x, one output map per agent."""

    A: np.ndarray
    C: tuple
    time_kind: str = "continuous"
    sample_period: float = 1.0

    def __post_init__(self):
        A = mk.as_matrix(self.A, "A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        Cs = []
        for i, Ci in enumerate(self.C):
            Ci = mk.as_matrix(Ci, f"C[{i}]")
            if Ci.shape[1] != n:
                raise DimensionMismatch(f"C[{i}] has {Ci.shape[1]} columns, expected {n}")
            if not np.any(Ci):
                raise ValueError(f"C[{i}] is zero")
            Cs.append(Ci)
        if not Cs:
            raise ValueError("plant needs at least one output map")
        if self.time_kind not in ("continuous", "discrete"):
            raise ValueError(f"time_kind must be continuous or discrete, got {self.time_kind!r}")
        if not self.sample_period > 0:
            raise ValueError("sample_period must be positive")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "C", tuple(Cs))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return len(self.C)

    @property
    def output_dims(self) -> tuple:
        return tuple(Ci.shape[0] for Ci in self.C)

    def subplant(self, agents: Sequence[int]) -> "Plant":
        return replace(self, C=tuple(self.C[i] for i in agents))


@dataclass(frozen=True)
class AgentDecomposition:
    index: int
    A: np.ndarray
    C: np.ndarray
    V: np.ndarray
    Q: np.ndarray
    Q_right_inv: np.ndarray
    C_bar: np.ndarray
    A_bar: np.ndarray
    P: np.ndarray
    K_bar: np.ndarray | None = None
    K: np.ndarray | None = None
    A_restricted: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_unobs(self) -> int:
        return self.V.shape[1]

    @property
    def has_gain(self) -> bool:
        return self.K is not None

    @property
    def closed_loop(self) -> np.ndarray:
        """A + K C_i."""
        return self.A + self.K @ self.C

    @property
    def quotient_closed_loop(self) -> np.ndarray:
        """A_bar + K_bar C_bar."""
        return self.A_bar + self.K_bar @ self.C_bar

    def residuals(self) -> dict:
        """Max-abs residual of every structural identity."""
        out = {
            "QV": _maxabs(self.Q @ self.V),
            "Q_Qinv": _maxabs(self.Q @ self.Q_right_inv - np.eye(self.Q.shape[0])),
            "Vt_Qinv": _maxabs(self.V.T @ self.Q_right_inv),
            "VtV": _maxabs(self.V.T @ self.V - np.eye(self.n_unobs)),
            "P_VVt": _maxabs(self.P - self.V @ self.V.T),
            "P_idempotent": _maxabs(self.P @ self.P - self.P),
            "P_symmetric": _maxabs(self.P - self.P.T),
            "Cbar_Q": _maxabs(self.C_bar @ self.Q - self.C),
            "QA": _maxabs(self.Q @ self.A - self.A_bar @ self.Q),
        }
        if self.has_gain:
            Acl = self.closed_loop
            out["restriction"] = _maxabs(Acl @ self.V - self.V @ self.A_restricted)
            out["quotient"] = _maxabs(self.Q @ Acl - self.quotient_closed_loop @ self.Q)
            out["K_lift"] = _maxabs(self.K - self.Q_right_inv @ self.K_bar)
        return out


def _maxabs(M) -> float:
    M = np.asarray(M)
    return float(np.max(np.abs(M))) if M.size else 0.0


def unobservable_basis(A, C, tol=None) -> np.ndarray:
    return mk.kernel_basis(mk.observability_matrix(A, C), tol)


def decompose_agent(plant: Plant, i: int, Q=None) -> AgentDecomposition:
    """Split agent ``i`` (0-based) into unobservable and quotient parts.

    By default ``Q`` is the transpose of an orthonormal basis of the
    orthogonal complement of the unobservable space, so its right inverse
    is ``Q.T``. A caller-supplied ``Q`` (any full-row-rank matrix whose
    kernel is the unobservable space) is honoured, with right inverse
    ``Q' (Q Q')^-1``.
    """
    if not 0 <= i < plant.m:
        raise IndexError(f"agent index {i} out of range for m={plant.m}")
    A = plant.A
    Ci = plant.C[i]
    n = plant.n
    V = unobservable_basis(A, Ci)
    if Q is None:
        Q = mk.orthonormal_complement(V, n).T
        Q_inv = Q.T.copy()
    else:
        Q = mk.as_matrix(Q, "Q")
        if Q.shape != (n - V.shape[1], n):
            raise DimensionMismatch(
                f"Q for agent {i} must be {(n - V.shape[1], n)}, got {Q.shape}"
            )
        Q_inv = Q.T @ np.linalg.inv(Q @ Q.T)
        if _maxabs(Q @ V) > 1e-9 * max(1.0, np.linalg.norm(Q)):
            raise IntertwiningViolated(f"supplied Q for agent {i} does not annihilate V")
    C_bar = Ci @ Q_inv
    A_bar = Q @ A @ Q_inv
    dec = AgentDecomposition(
        index=i, A=A, C=Ci, V=V, Q=Q, Q_right_inv=Q_inv,
        C_bar=C_bar, A_bar=A_bar, P=V @ V.T,
    )
    return dec


def decompose(plant: Plant, Qs=None) -> list:
    Qs = Qs if Qs is not None else [None] * plant.m
    return [decompose_agent(plant, i, Qs[i]) for i in range(plant.m)]


def set_injection_gain(dec: AgentDecomposition, K_bar) -> AgentDecomposition:
    """Attach quotient gain ``K_bar``, lift it to ``K = Q^-1 K_bar`` and
    recompute the restriction of ``A + K C_i`` to the unobservable space."""
    K_bar = np.asarray(K_bar, dtype=float).reshape(dec.A_bar.shape[0], dec.C.shape[0])
    K = dec.Q_right_inv @ K_bar
    Acl = dec.A + K @ dec.C
    A_res = dec.V.T @ Acl @ dec.V
    out = replace(dec, K_bar=K_bar, K=K, A_restricted=A_res)
    scale = max(1.0, np.linalg.norm(dec.A, 2) + np.linalg.norm(K, 2) * np.linalg.norm(dec.C, 2))
    res = out.residuals()
    worst = max(res["restriction"], res["quotient"])
    if worst > INTERTWINING_TOL * scale:
        raise IntertwiningViolated(
            f"agent {dec.index}: intertwining residual {worst:.3e} "
            f"(restriction {res['restriction']:.3e}, quotient {res['quotient']:.3e})"
        )
    return out


def set_full_gain(dec: AgentDecomposition, K) -> AgentDecomposition:
    """Attach a gain given in original state coordinates.

    The quotient gain is ``Q K``; a ``K`` with components inside the
    unobservable space breaks the intertwining and is rejected.
    """
    K = np.asarray(K, dtype=float).reshape(dec.n, dec.C.shape[0])
    out = set_injection_gain(dec, dec.Q @ K)
    if _maxabs(out.K - K) > INTERTWINING_TOL * max(1.0, np.linalg.norm(K)):
        raise IntertwiningViolated(
            f"agent {dec.index}: gain has a component in the unobservable space"
        )
    return out


@dataclass(frozen=True)
class StackedDecomposition:
    n: int
    sizes: tuple
    V: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    T_mat: np.ndarray
    T_inv: np.ndarray
    A_bar_big: np.ndarray
    A_bar_V: np.ndarray
    A_tilde: np.ndarray

    @property
    def m(self) -> int:
        return len(self.sizes)

    @property
    def n_bar(self) -> int:
        return self.V.shape[1]

    def residuals(self) -> dict:
        return {
            "P_VVt": _maxabs(self.P - self.V @ self.V.T),
            "QA": _maxabs(self.Q @ self.A_bar_big - self.A_bar_V @ self.Q),
            "AV": _maxabs(self.A_bar_big @ self.V - self.V @ self.A_tilde),
            "T": _maxabs(self.T_mat @ self.T_inv - np.eye(self.T_mat.shape[0])),
        }

    def consensus_generator(self, S) -> np.ndarray:
        """-V'(I - S (x) I_n)V, the network part of the unobservable dynamics."""
        Sbar = np.kron(np.asarray(S, dtype=float), np.eye(self.n))
        return -self.V.T @ (np.eye(Sbar.shape[0]) - Sbar) @ self.V

    def mixing_block(self, S) -> np.ndarray:
        """B = V'(S (x) I_n)V."""
        Sbar = np.kron(np.asarray(S, dtype=float), np.eye(self.n))
        return self.V.T @ Sbar @ self.V

    def continuous_error_map(self, S, g) -> np.ndarray:
        Sbar = np.kron(np.asarray(S, dtype=float), np.eye(self.n))
        return self.A_bar_big - g * self.P @ (np.eye(Sbar.shape[0]) - Sbar)

    def discrete_error_map(self, S, q) -> np.ndarray:
        Sbar = np.kron(np.asarray(S, dtype=float), np.eye(self.n))
        mix = np.eye(Sbar.shape[0]) - self.P @ (np.eye(Sbar.shape[0]) - Sbar)
        return self.A_bar_big @ np.linalg.matrix_power(mix, q)

    def split_blocks(self, M) -> tuple:
        """T^-1 M T partitioned as ((11, 12), (21, 22)), quotient part first."""
        X = self.T_inv @ M @ self.T_mat
        k = self.Q.shape[0]
        return (X[:k, :k], X[:k, k:]), (X[k:, :k], X[k:, k:])


def stack(decs: Sequence[AgentDecomposition]) -> StackedDecomposition:
    if not decs:
        raise ValueError("stack needs at least one agent")
    n = decs[0].n
    if any(d.n != n for d in decs):
        raise DimensionMismatch("agents disagree on state dimension")
    if not all(d.has_gain for d in decs):
        raise ValueError("every agent needs an injection gain before stacking")
    # scipy's block_diag mishandles zero-width blocks
    V = _block_diag_shaped([d.V for d in decs])
    Q = _block_diag_shaped([d.Q for d in decs])
    Q_inv = _block_diag_shaped([d.Q_right_inv for d in decs])
    P = V @ V.T
    return StackedDecomposition(
        n=n,
        sizes=tuple(d.n_unobs for d in decs),
        V=V,
        Q=Q,
        P=P,
        T_mat=np.hstack([Q_inv, V]),
        T_inv=np.vstack([Q, V.T]),
        A_bar_big=_block_diag_shaped([d.closed_loop for d in decs]),
        A_bar_V=_block_diag_shaped([d.quotient_closed_loop for d in decs]),
        A_tilde=_block_diag_shaped([d.A_restricted for d in decs]),
    )


def _block_diag_shaped(blocks) -> np.ndarray:
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


@dataclass(frozen=True)
class ObservabilityReport:
    jointly_observable: bool
    stacked_rank: int
    n: int
    agent_ranks: tuple
    intersection_dim: int

    def __bool__(self):
        return self.jointly_observable


def joint_observability(plant: Plant) -> ObservabilityReport:
    """Rank test on the stacked pair, cross-checked against the dimension
    of the intersection of the agents' unobservable spaces."""
    C = np.vstack(plant.C)
    rank = mk.numerical_rank(mk.observability_matrix(plant.A, C))
    agent_ranks = tuple(
        mk.numerical_rank(mk.observability_matrix(plant.A, Ci)) for Ci in plant.C
    )
    # x is in every V_i iff it is orthogonal to every row space V_i-perp
    perps = [mk.orthonormal_complement(unobservable_basis(plant.A, Ci), plant.n).T
             for Ci in plant.C]
    inter = mk.kernel_basis(np.vstack(perps)) if any(p.size for p in perps) else np.eye(plant.n)
    inter_dim = inter.shape[1]
    if (rank == plant.n) != (inter_dim == 0):
        raise ArithmeticError(
            f"joint observability tests disagree: rank {rank}/{plant.n}, "
            f"intersection dim {inter_dim}"
        )
    return ObservabilityReport(rank == plant.n, rank, plant.n, agent_ranks, inter_dim)
