"""Sparse SPD solves with Dirichlet elimination.

Dirichlet rows and columns are removed and the right-hand side is corrected
with the known values, so the reduced matrix stays symmetric positive definite.
The reduced matrix is factorized once with SuperLU and the factorization is
reused for every right-hand side (forward, adjoint and incremental solves
share one operator).
"""
import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from src.config import SOLVE_REFINEMENT_STEPS, SOLVE_REL_RESIDUAL
from src.errors import SparseSolveError

logger = logging.getLogger(__name__)


def _split_dirichlet(dirichlet):
    if dirichlet is None:
        return np.array([], dtype=np.int64), np.array([], dtype=float)
    items = dirichlet.items() if isinstance(dirichlet, dict) else dirichlet
    pairs = sorted((int(node), float(value)) for node, value in items)
    nodes = np.array([p[0] for p in pairs], dtype=np.int64)
    values = np.array([p[1] for p in pairs], dtype=float)
    if len(np.unique(nodes)) != len(nodes):
        raise SparseSolveError("a Dirichlet node is listed twice")
    return nodes, values


class FactorizedOperator:
    """LU factorization of A restricted to the non-Dirichlet unknowns"""

    def __init__(self, matrix, dirichlet_nodes=(), rel_tol=SOLVE_REL_RESIDUAL,
                 refinement_steps=SOLVE_REFINEMENT_STEPS):
        A = sp.csr_matrix(matrix)
        n = A.shape[0]
        if A.shape != (n, n):
            raise SparseSolveError(f"matrix must be square, got {A.shape}")
        self.size = n
        self.fixed = np.array(sorted(int(i) for i in dirichlet_nodes), dtype=np.int64)
        free = np.ones(n, dtype=bool)
        free[self.fixed] = False
        self.free = np.flatnonzero(free)
        self.rel_tol = rel_tol
        self.refinement_steps = refinement_steps
        A_free = A[self.free]
        self._A_ff = A_free[:, self.free].tocsc()
        self._A_fd = A_free[:, self.fixed].tocsr()
        try:
            self._lu = spla.splu(self._A_ff)
        except RuntimeError as exc:
            raise SparseSolveError(f"factorization failed: {exc}") from exc

    def solve(self, rhs, dirichlet_values=None):
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != (self.size,):
            raise SparseSolveError(f"rhs has shape {rhs.shape}, expected ({self.size},)")
        x = np.zeros(self.size)
        b = rhs[self.free].copy()
        if len(self.fixed):
            values = np.zeros(len(self.fixed)) if dirichlet_values is None else np.asarray(dirichlet_values, float)
            x[self.fixed] = values
            b -= self._A_fd @ values
        b_norm = np.linalg.norm(b)
        if b_norm == 0.0:
            return x

        y = self._lu.solve(b)
        residual = np.linalg.norm(b - self._A_ff @ y) / b_norm
        for _ in range(self.refinement_steps):
            if residual <= self.rel_tol:
                break
            y += self._lu.solve(b - self._A_ff @ y)
            residual = np.linalg.norm(b - self._A_ff @ y) / b_norm
        if not np.isfinite(residual) or residual > self.rel_tol:
            raise SparseSolveError(f"relative residual {residual:.3e} above {self.rel_tol:.1e}", residual)
        x[self.free] = y
        return x


def solve_sparse(matrix, rhs, dirichlet=None):
    """Solve A x = rhs with ``dirichlet`` given as {node: value} or (node, value) pairs"""
    nodes, values = _split_dirichlet(dirichlet)
    return FactorizedOperator(matrix, nodes).solve(rhs, values)
