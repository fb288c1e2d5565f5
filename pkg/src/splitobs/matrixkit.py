"""Dense real linear algebra used throughout the package.

Thin, checked wrappers over LAPACK (through numpy/scipy): kernels,
spectra, norms, matrix exponentials and the observer-form Riccati
equations used for output-injection design.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import EigenNonConvergence, NotObservable, SolverDiverged

RICCATI_TOL = 1e-8
REFINE_STEPS = 4


def as_matrix(M, name="matrix") -> np.ndarray:
    arr = np.array(M, dtype=float, copy=True)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def induced_two_norm(M) -> float:
    """Largest singular value; 0 for empty matrices."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    return float(sla.svdvals(M)[0])


def numerical_rank(M, tol=None) -> int:
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0
    s = sla.svdvals(M)
    if tol is None:
        tol = 1e-9 * max(M.shape)
    return int(np.sum(s > tol * s[0])) if s[0] > 0 else 0


def kernel_basis(M, tol=None) -> np.ndarray:
    """Orthonormal basis of the numerical kernel of ``M``.

    ``tol`` is relative: singular values at or below ``tol * ||M||_2`` are
    treated as zero. The default is ``1e-9 * max(rows, cols)``. Returns a
    ``cols x k`` matrix, possibly with ``k == 0``.
    """
    M = np.asarray(M, dtype=float)
    rows, cols = M.shape
    if cols == 0:
        return np.zeros((0, 0))
    if rows == 0:
        return np.eye(cols)
    if tol is None:
        tol = 1e-9 * max(rows, cols)
    _, s, vt = sla.svd(M, full_matrices=True)
    if s[0] == 0.0:
        return np.eye(cols)
    rank = int(np.sum(s > tol * s[0]))
    return vt[rank:].T.copy()


def orthonormal_complement(V, n) -> np.ndarray:
    """Orthonormal basis (as columns) of the orthogonal complement of span(V)."""
    V = np.asarray(V, dtype=float).reshape(n, -1)
    if V.shape[1] == 0:
        return np.eye(n)
    return kernel_basis(V.T)


def observability_matrix(A, C) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    n = A.shape[0]
    blocks = [C]
    for _ in range(1, n):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def is_observable(A, C, tol=None) -> bool:
    n = np.asarray(A).shape[0]
    return numerical_rank(observability_matrix(A, C), tol) == n


def matrix_exponential(M) -> np.ndarray:
    """exp(M) by Pade scaling-and-squaring (scipy's expm)."""
    M = np.asarray(M, dtype=float)
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"matrix_exponential needs a square matrix, got {M.shape}")
    if M.size == 0:
        return np.zeros((0, 0))
    return sla.expm(M)


def kron(A, B) -> np.ndarray:
    return np.kron(np.asarray(A, dtype=float), np.asarray(B, dtype=float))


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    abscissa: float
    radius: float

    def __len__(self):
        return len(self.eigenvalues)


def eigenvalues(M) -> Spectrum:
    """All eigenvalues of a real square matrix, with abscissa and radius.

    An empty matrix has abscissa -inf and radius 0.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"eigenvalues needs a square matrix, got {M.shape}")
    if M.size == 0:
        return Spectrum(np.zeros(0, dtype=complex), -np.inf, 0.0)
    try:
        ev = sla.eigvals(M)
    except sla.LinAlgError as exc:
        raise EigenNonConvergence(f"QR iteration failed: {exc}") from exc
    if not np.all(np.isfinite(ev)):
        raise EigenNonConvergence("QR iteration produced non-finite eigenvalues")
    return Spectrum(ev, float(np.max(ev.real)), float(np.max(np.abs(ev))))


def spectral_abscissa(M) -> float:
    return eigenvalues(M).abscissa


def spectral_radius(M) -> float:
    return eigenvalues(M).radius


def sym_eig_extremes(M) -> tuple[float, float]:
    """(min, max) eigenvalue of the symmetric part of M."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0, 0.0
    w = np.linalg.eigvalsh(0.5 * (M + M.T))
    return float(w[0]), float(w[-1])


def riccati_residual(A, C, P, kind) -> float:
    """Relative Frobenius residual of the observer-form Riccati equation."""
    A, C, P = (np.asarray(x, dtype=float) for x in (A, C, P))
    n = A.shape[0]
    if kind == "continuous":
        terms = (A @ P, P @ A.T, P @ C.T @ C @ P, np.eye(n))
        res = terms[0] + terms[1] - terms[2] + terms[3]
    else:
        G = np.eye(C.shape[0]) + C @ P @ C.T
        terms = (A @ P @ A.T, A @ P @ C.T @ np.linalg.solve(G, C @ P @ A.T), np.eye(n), P)
        res = terms[0] - terms[1] + terms[2] - terms[3]
    scale = max(1.0, max(np.linalg.norm(t) for t in terms))
    return float(np.linalg.norm(res) / scale)


def _check_kind(kind):
    if kind not in ("continuous", "discrete"):
        raise ValueError(f"kind must be 'continuous' or 'discrete', not {kind!r}")


def solve_riccati(A, C, kind) -> np.ndarray:
    """Stabilizing solution of the observer (filter) Riccati equation.

    continuous: A P + P A' - P C' C P + I = 0
    discrete:   P = A P A' - A P C' (I + C P C')^-1 C P A' + I

    Weights are identity. Solved by scipy's Schur method on the
    Hamiltonian / symplectic pencil, then polished by a few Newton steps
    when the residual is not already small.
    """
    _check_kind(kind)
    A = as_matrix(A, "A")
    C = as_matrix(C, "C")
    n = A.shape[0]
    if A.shape != (n, n) or C.shape[1] != n:
        raise ValueError(f"incompatible shapes A{A.shape}, C{C.shape}")
    if not is_observable(A, C):
        raise NotObservable("output map does not observe the state")
    q = np.eye(n)
    r = np.eye(C.shape[0])
    try:
        if kind == "continuous":
            P = sla.solve_continuous_are(A.T, C.T, q, r)
        else:
            P = sla.solve_discrete_are(A.T, C.T, q, r)
    except (sla.LinAlgError, ValueError) as exc:
        raise SolverDiverged(str(exc)) from exc
    P = 0.5 * (P + P.T)
    res = riccati_residual(A, C, P, kind)
    for _ in range(REFINE_STEPS):
        if not np.isfinite(res) or res <= 0.1 * RICCATI_TOL:
            break
        P_new = _newton_step(A, C, P, kind)
        res_new = riccati_residual(A, C, P_new, kind)
        if not res_new < res:
            break
        P, res = P_new, res_new
    if not np.isfinite(res) or res > RICCATI_TOL:
        raise SolverDiverged(f"Riccati residual {res:.3e} exceeds {RICCATI_TOL:g}")
    if np.linalg.eigvalsh(P)[0] <= 0:
        raise SolverDiverged("Riccati solution is not positive definite")
    return P


def _newton_step(A, C, P, kind):
    """One Kleinman (continuous) or Hewer (discrete) refinement step."""
    n = A.shape[0]
    if kind == "continuous":
        Acl = A - P @ C.T @ C
        X = sla.solve_continuous_lyapunov(Acl, -(np.eye(n) + P @ C.T @ C @ P))
    else:
        K = -A @ P @ C.T @ np.linalg.inv(np.eye(C.shape[0]) + C @ P @ C.T)
        Acl = A + K @ C
        X = sla.solve_discrete_lyapunov(Acl, np.eye(n) + K @ K.T)
    return 0.5 * (X + X.T)


def injection_gain(A, C, kind) -> np.ndarray:
    """Output-injection gain K from the Riccati solution; A + K C is stable."""
    P = solve_riccati(A, C, kind)
    A = as_matrix(A)
    C = as_matrix(C)
    if kind == "continuous":
        K = -P @ C.T
        stable = spectral_abscissa(A + K @ C) < 0
    else:
        G = np.eye(C.shape[0]) + C @ P @ C.T
        K = -A @ P @ C.T @ np.linalg.inv(G)
        stable = spectral_radius(A + K @ C) < 1
    if not stable:
        raise SolverDiverged("Riccati gain does not stabilize the closed loop")
    return K
