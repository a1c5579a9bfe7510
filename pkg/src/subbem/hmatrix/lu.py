"""Block-recursive LU factorisation in H-format with truncated updates.

Pivoting happens only inside dense diagonal leaves; such leaves belong to
leaf clusters, so every block sharing their rows is unsplit along the rows
and the local row swaps stay consistent.
"""
from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg

from .hmat import DENSE, RK, SPLIT, HMatrix, HNode
from .lowrank import RkMatrix, add_rk, recompress, sum_factors, truncate_dense

LU = "lu"


class FactorizationError(ArithmeticError):
    pass


def _rel(node: HNode, child: HNode):
    return slice(child.r0 - node.r0, child.r1 - node.r0), slice(child.c0 - node.c0, child.c1 - node.c0)


# ---------------------------------------------------------------------------
# triangular solves against dense right-hand sides


def lower_solve(F: HNode, X: np.ndarray) -> np.ndarray:
    """``L^{-1} P^T X``."""
    if F.kind == LU:
        lu, perm = F.data
        return scipy.linalg.solve_triangular(lu, X[perm], lower=True, unit_diagonal=True)
    grid = F.data
    out = np.empty_like(X, dtype=float)
    for i, row in enumerate(grid):
        d = row[i]
        ri = slice(d.r0 - F.r0, d.r1 - F.r0)
        rhs = X[ri].astype(float, copy=True)
        for j in range(i):
            b = row[j]
            rhs -= b.matmat(out[b.c0 - F.c0:b.c1 - F.c0])
        out[ri] = lower_solve(d, rhs)
    return out


def upper_solve(F: HNode, Y: np.ndarray) -> np.ndarray:
    """``U^{-1} Y``."""
    if F.kind == LU:
        return scipy.linalg.solve_triangular(F.data[0], Y, lower=False)
    grid = F.data
    k = len(grid)
    out = np.empty_like(Y, dtype=float)
    for i in reversed(range(k)):
        d = grid[i][i]
        ri = slice(d.r0 - F.r0, d.r1 - F.r0)
        rhs = Y[ri].astype(float, copy=True)
        for j in range(i + 1, k):
            b = grid[i][j]
            rhs -= b.matmat(out[b.c0 - F.c0:b.c1 - F.c0])
        out[ri] = upper_solve(d, rhs)
    return out


def right_upper_solve(F: HNode, X: np.ndarray) -> np.ndarray:
    """``X U^{-1}`` for ``X`` with ``F``'s columns."""
    if F.kind == LU:
        return scipy.linalg.solve_triangular(F.data[0], X.T, lower=False, trans="T").T
    grid = F.data
    out = np.empty_like(X, dtype=float)
    for j in range(len(grid)):
        d = grid[j][j]
        cj = slice(d.c0 - F.c0, d.c1 - F.c0)
        rhs = X[:, cj].astype(float, copy=True)
        for i in range(j):
            b = grid[i][j]
            rhs -= b.rmatmat(out[:, b.r0 - F.r0:b.r1 - F.r0])
        out[:, cj] = right_upper_solve(d, rhs)
    return out


# ---------------------------------------------------------------------------
# truncated block arithmetic


def add_lowrank(C: HNode, U: np.ndarray, V: np.ndarray, eps: float):
    """``C += U V^T`` with truncation."""
    if U.shape[1] == 0:
        return
    if C.kind == DENSE:
        C.data += U @ V.T
    elif C.kind == RK:
        C.data = sum_factors(np.hstack([C.data.A, U]), np.hstack([C.data.B, V]), eps)
    else:
        for row in C.data:
            for c in row:
                r, s = _rel(C, c)
                add_lowrank(c, U[r], V[s], eps)


def add_dense(C: HNode, D: np.ndarray, eps: float):
    if C.kind == DENSE:
        C.data += D
    elif C.kind == RK:
        C.data = add_rk(C.data, truncate_dense(D, eps), eps)
    else:
        for row in C.data:
            for c in row:
                r, s = _rel(C, c)
                add_dense(c, D[r, s], eps)


def mul_sub(C: HNode, A: HNode, B: HNode, eps: float):
    """``C -= A B``."""
    if A.kind == RK:
        if A.data.rank:
            add_lowrank(C, -A.data.A, B.rmatmat(A.data.B.T).T, eps)
    elif B.kind == RK:
        if B.data.rank:
            add_lowrank(C, -A.matmat(B.data.A), B.data.B, eps)
    elif A.kind == DENSE:
        add_dense(C, -B.rmatmat(A.data), eps)
    elif B.kind == DENSE:
        add_dense(C, -A.matmat(B.data), eps)
    elif C.kind == SPLIT and len(A.data[0]) == len(B.data):
        for i, row in enumerate(C.data):
            for j, c in enumerate(row):
                for l in range(len(B.data)):
                    mul_sub(c, A.data[i][l], B.data[l][j], eps)
    else:
        add_dense(C, -A.matmat(B.to_dense()), eps)


def solve_lower_block(F: HNode, X: HNode, eps: float):
    """``X <- L^{-1} P^T X`` in place."""
    if X.kind == DENSE:
        X.data = lower_solve(F, X.data)
    elif X.kind == RK:
        X.data = RkMatrix(lower_solve(F, X.data.A), X.data.B)
    elif F.kind == LU:
        for row in X.data:
            for c in row:
                solve_lower_block(F, c, eps)
    else:
        k = len(F.data)
        if len(X.data) != k:
            raise FactorizationError("row partitions do not match")
        for i in range(k):
            for c in range(len(X.data[i])):
                for j in range(i):
                    mul_sub(X.data[i][c], F.data[i][j], X.data[j][c], eps)
                solve_lower_block(F.data[i][i], X.data[i][c], eps)


def solve_upper_right_block(X: HNode, F: HNode, eps: float):
    """``X <- X U^{-1}`` in place."""
    if X.kind == DENSE:
        X.data = right_upper_solve(F, X.data)
    elif X.kind == RK:
        X.data = RkMatrix(X.data.A, right_upper_solve(F, X.data.B.T).T)
    elif F.kind == LU:
        for row in X.data:
            for c in row:
                solve_upper_right_block(c, F, eps)
    else:
        k = len(F.data)
        if len(X.data[0]) != k:
            raise FactorizationError("column partitions do not match")
        for j in range(k):
            for r in range(len(X.data)):
                for i in range(j):
                    mul_sub(X.data[r][j], X.data[r][i], F.data[i][j], eps)
                solve_upper_right_block(X.data[r][j], F.data[j][j], eps)


def _dense_lu(node: HNode, M: np.ndarray):
    with warnings.catch_warnings():
        # singular blocks are reported below with their index range
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(M, check_finite=True)
    d = np.abs(np.diag(lu))
    if d.min() <= 1e-14 * max(d.max(), 1e-300):
        raise FactorizationError(f"zero pivot in diagonal block [{node.r0}, {node.r1})")
    perm = np.arange(len(piv))
    for i, p in enumerate(piv):
        perm[[i, p]] = perm[[p, i]]
    node.kind = LU
    node.data = (lu, perm)


def factor_node(F: HNode, eps: float):
    if F.r1 - F.r0 != F.c1 - F.c0 or F.r0 != F.c0:
        raise FactorizationError("diagonal block is not square")
    if F.kind in (DENSE, RK):
        _dense_lu(F, F.to_dense())
        return
    grid = F.data
    k = len(grid)
    if any(len(row) != k for row in grid):
        raise FactorizationError("diagonal block with non-square partition")
    for i in range(k):
        factor_node(grid[i][i], eps)
        for j in range(i + 1, k):
            solve_lower_block(grid[i][i], grid[i][j], eps)
            solve_upper_right_block(grid[j][i], grid[i][i], eps)
        for j in range(i + 1, k):
            for l in range(i + 1, k):
                mul_sub(grid[j][l], grid[j][i], grid[i][l], eps)


class HLU:
    """LU factors of a square H-matrix; ``solve`` applies both substitutions."""

    def __init__(self, root: HNode, perm: np.ndarray, eps: float):
        self.root = root
        self.perm = perm
        self.eps = eps

    @property
    def nbytes(self) -> int:
        total = 0
        for leaf in self.root.leaves():
            total += 8 * leaf.data[0].size if leaf.kind == LU else leaf.nbytes
        return total

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        z = upper_solve(self.root, lower_solve(self.root, b[self.perm]))
        x = np.empty_like(z)
        x[self.perm] = z
        return x

    __call__ = solve


def h_lu(H: HMatrix, eps: float) -> HLU:
    """Factor a copy of ``H`` with low-rank truncation at ``eps``."""
    if not np.array_equal(H.row_perm, H.col_perm):
        raise FactorizationError("H-LU needs identical row and column partitions")
    root = H.root.copy()
    for leaf in root.leaves():
        if leaf.kind == RK:
            leaf.data = recompress(leaf.data, eps)
    factor_node(root, eps)
    return HLU(root, H.row_perm, eps)
