"""H-matrices: block-tree-shaped containers of dense and low-rank leaves."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ..nurbs import DomainError
from .blocktree import Block, BlockClusterTree
from .lowrank import RkMatrix, aca, recompress, truncate_dense

log = logging.getLogger(__name__)

DENSE, RK, SPLIT = "dense", "rk", "split"


class Generator:
    """Entry source in original (unpermuted) indices."""

    def block(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def row(self, i: int, cols: np.ndarray) -> np.ndarray:
        return self.block(np.array([i]), cols)[0]

    def col(self, rows: np.ndarray, j: int) -> np.ndarray:
        return self.block(rows, np.array([j]))[:, 0]


class DenseGenerator(Generator):
    def __init__(self, M):
        self.M = np.asarray(M, dtype=float)
        self.calls = 0

    def block(self, rows, cols):
        self.calls += 1
        return self.M[np.ix_(rows, cols)]


@dataclass
class HNode:
    """Block ``[r0, r1) x [c0, c1)`` of the permuted matrix."""
    r0: int
    r1: int
    c0: int
    c1: int
    kind: str
    data: object = None  # ndarray, RkMatrix or grid of HNode
    admissible: bool = False

    @property
    def shape(self):
        return self.r1 - self.r0, self.c1 - self.c0

    @property
    def children(self) -> List[List["HNode"]]:
        return self.data if self.kind == SPLIT else []

    def leaves(self):
        if self.kind == SPLIT:
            for row in self.data:
                for c in row:
                    yield from c.leaves()
        else:
            yield self

    @property
    def nbytes(self) -> int:
        if self.kind == DENSE:
            return 8 * self.data.size
        if self.kind == RK:
            return self.data.nbytes
        return sum(c.nbytes for row in self.data for c in row)

    # -- products on the permuted index range -----------------------------

    def matmat(self, X: np.ndarray) -> np.ndarray:
        """``self @ X`` for ``X`` with ``shape[1]`` rows."""
        if self.kind == DENSE:
            return self.data @ X
        if self.kind == RK:
            return self.data.A @ (self.data.B.T @ X)
        out = np.zeros((self.shape[0],) + X.shape[1:])
        for row in self.data:
            for c in row:
                out[c.r0 - self.r0:c.r1 - self.r0] += c.matmat(X[c.c0 - self.c0:c.c1 - self.c0])
        return out

    def rmatmat(self, X: np.ndarray) -> np.ndarray:
        """``X @ self`` for ``X`` with ``shape[0]`` columns."""
        if self.kind == DENSE:
            return X @ self.data
        if self.kind == RK:
            return (X @ self.data.A) @ self.data.B.T
        out = np.zeros(X.shape[:-1] + (self.shape[1],))
        for row in self.data:
            for c in row:
                out[..., c.c0 - self.c0:c.c1 - self.c0] += c.rmatmat(X[..., c.r0 - self.r0:c.r1 - self.r0])
        return out

    def to_dense(self) -> np.ndarray:
        if self.kind == DENSE:
            return self.data.copy()
        if self.kind == RK:
            return self.data.to_dense()
        out = np.zeros(self.shape)
        for row in self.data:
            for c in row:
                out[c.r0 - self.r0:c.r1 - self.r0, c.c0 - self.c0:c.c1 - self.c0] = c.to_dense()
        return out

    def copy(self) -> "HNode":
        if self.kind == DENSE:
            data = self.data.copy()
        elif self.kind == RK:
            data = RkMatrix(self.data.A.copy(), self.data.B.copy(), self.data.full_rank)
        else:
            data = [[c.copy() for c in row] for row in self.data]
        return HNode(self.r0, self.r1, self.c0, self.c1, self.kind, data, self.admissible)


@dataclass
class HMatrix:
    root: HNode
    row_perm: np.ndarray
    col_perm: np.ndarray
    stats: dict = field(default_factory=dict)

    @property
    def shape(self):
        return len(self.row_perm), len(self.col_perm)

    @property
    def nbytes(self) -> int:
        return self.root.nbytes

    @property
    def dense_bytes(self) -> int:
        m, n = self.shape
        return 8 * m * n

    @property
    def compression(self) -> float:
        """``c_H = S(M) / S(M_H)``."""
        return self.dense_bytes / self.nbytes

    def leaves(self):
        return list(self.root.leaves())

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.shape[1]:
            raise DomainError(f"vector length {x.shape[0]} does not match {self.shape[1]} columns")
        yp = self.root.matmat(x[self.col_perm])
        y = np.empty_like(yp)
        y[self.row_perm] = yp
        return y

    __matmul__ = matvec

    def to_dense(self) -> np.ndarray:
        out = np.empty(self.shape)
        out[np.ix_(self.row_perm, self.col_perm)] = self.root.to_dense()
        return out

    def copy(self) -> "HMatrix":
        return HMatrix(self.root.copy(), self.row_perm, self.col_perm, dict(self.stats))


def build_hmatrix(bct: BlockClusterTree, gen: Generator, eps: float,
                  recompress_leaves: bool = True) -> HMatrix:
    """ACA on admissible leaves, dense generation of the near field."""
    rp, cp = bct.rows.perm, bct.cols.perm
    stats = {"aca_blocks": 0, "dense_blocks": 0, "fallbacks": 0, "max_rank": 0}

    def make(b: Block) -> HNode:
        t, s = b.rows, b.cols
        if b.children:
            grid = [[make(x) for x in row] for row in b.children]
            return HNode(t.start, t.stop, s.start, s.stop, SPLIT, grid)
        rows, cols = rp[t.start:t.stop], cp[s.start:s.stop]
        if b.admissible:
            rk = aca(lambda i: gen.row(rows[i], cols), lambda j: gen.col(rows, cols[j]),
                     len(rows), len(cols), eps)
            if not rk.full_rank:
                if recompress_leaves:
                    rk = recompress(rk, eps)
                if rk.nbytes < 8 * len(rows) * len(cols):
                    stats["aca_blocks"] += 1
                    stats["max_rank"] = max(stats["max_rank"], rk.rank)
                    return HNode(t.start, t.stop, s.start, s.stop, RK, rk, True)
            stats["fallbacks"] += 1
        stats["dense_blocks"] += 1
        return HNode(t.start, t.stop, s.start, s.stop, DENSE, np.array(gen.block(rows, cols), dtype=float),
                     b.admissible)

    return HMatrix(make(bct.root), rp, cp, stats)


def _as_rk(node: HNode, eps: float) -> RkMatrix:
    if node.kind == RK:
        return node.data
    if node.kind == DENSE:
        return truncate_dense(node.data, eps)
    raise ValueError("split node has no low-rank form")


def coarsen(H: HMatrix, eps: float, keep_diagonal: bool = True) -> HMatrix:
    """Merge sibling leaves into one recompressed low-rank block whenever
    that does not increase storage.  The directional root is never merged,
    nor (by default) blocks on the diagonal."""

    def visit(node: HNode, top: bool) -> HNode:
        if node.kind != SPLIT:
            return node
        node.data = [[visit(c, False) for c in row] for row in node.data]
        if top or (keep_diagonal and node.r0 == node.c0 and node.r1 == node.c1):
            return node
        kids = [c for row in node.data for c in row]
        if any(c.kind == SPLIT for c in kids):
            return node
        m, n = node.shape
        As, Bs = [], []
        for c in kids:
            rk = _as_rk(c, eps)
            A = np.zeros((m, rk.rank))
            B = np.zeros((n, rk.rank))
            A[c.r0 - node.r0:c.r1 - node.r0] = rk.A
            B[c.c0 - node.c0:c.c1 - node.c0] = rk.B
            As.append(A)
            Bs.append(B)
        k = sum(a.shape[1] for a in As)
        if k > min(m, n):
            merged = truncate_dense(node.to_dense(), eps)
        else:
            merged = recompress(RkMatrix(np.hstack(As), np.hstack(Bs)), eps)
        if merged.nbytes <= sum(c.nbytes for c in kids):
            return HNode(node.r0, node.r1, node.c0, node.c1, RK, merged, True)
        return node

    out = H.copy()
    out.root = visit(out.root, True)
    return out
