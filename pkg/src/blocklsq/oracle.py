"""Dense kernels and the centralized least-squares reference.

The distributed iteration factorizes one small SPD matrix per agent; the
reference solves ``min 1/2 ||H z - h||^2`` on the assembled system with a
complete orthogonal decomposition so that rank-deficient systems get their
minimum-norm minimizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .problem import BlockProblem, assemble_dense


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Cholesky met a pivot that is not safely positive."""


def spd_factor(A: np.ndarray, pivot_tol: float = 1e-12) -> np.ndarray:
    """Lower Cholesky factor of a symmetric matrix.

    A pivot ``L[j, j]**2`` at or below ``pivot_tol * max(1, max diag A)`` is
    treated as a failure even when LAPACK would accept it, so nearly singular
    matrices are reported instead of silently factored.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if A.shape[0] == 0:
        return np.zeros((0, 0))
    scale = max(1.0, float(np.max(np.abs(np.diag(A)))))
    try:
        L = sla.cholesky(A, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc
    pivots = np.diag(L) ** 2
    j = int(np.argmin(pivots))
    if pivots[j] <= pivot_tol * scale:
        raise NotPositiveDefiniteError(f"pivot {j} is {pivots[j]:.3e}, not above {pivot_tol * scale:.3e}")
    return L


def spd_solve_factored(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    return sla.cho_solve((L, True), b, check_finite=False)


def spd_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    return spd_solve_factored(spd_factor(A), np.asarray(b, dtype=float))


@dataclass(frozen=True)
class LsqSolution:
    z_star: np.ndarray
    psi_opt: float
    rank: int
    unique: bool
    null_basis: np.ndarray  # n x (n - rank), orthonormal columns


def min_norm_lstsq(H, h, rtol: float = 1e-10) -> LsqSolution:
    """Minimum-norm minimizer of ``1/2 ||H z - h||^2``.

    Column-pivoted QR decides the rank with threshold
    ``rtol * ||H||_2 * max(m, n)``; a second QR of the leading rows turns
    it into a complete orthogonal decomposition ``H P = Q [T' 0] Z'``.
    """
    H = np.asarray(H, dtype=float)
    h = np.asarray(h, dtype=float)
    m, n = H.shape
    if m == 0 or n == 0:
        z = np.zeros(n)
        return LsqSolution(z, 0.5 * float(h @ h), 0, n == 0, np.eye(n))
    Q, R, perm = sla.qr(H, mode="economic", pivoting=True)
    tol = rtol * np.linalg.norm(H, 2) * max(m, n)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol))
    if rank == 0:
        z = np.zeros(n)
        basis = np.eye(n)
    else:
        R1 = R[:rank, :]  # rank x n in permuted column order
        Zf, T = sla.qr(R1.T, mode="full")  # R1.T = Zf[:, :rank] @ T[:rank]
        Z = Zf[:, :rank]
        c = Q[:, :rank].T @ h
        y = Z @ sla.solve_triangular(T[:rank, :rank].T, c, lower=True)
        z = np.empty(n)
        z[perm] = y
        basis = np.empty((n, n - rank))
        basis[perm, :] = Zf[:, rank:]
    r = H @ z - h
    return LsqSolution(z, 0.5 * float(r @ r), rank, rank == n, basis)


def psi_opt_of(p: BlockProblem) -> float:
    H, h = assemble_dense(p)
    return min_norm_lstsq(H, h).psi_opt


def solve_problem(p: BlockProblem) -> LsqSolution:
    H, h = assemble_dense(p)
    return min_norm_lstsq(H, h)
