"""Low-rank blocks: adaptive cross approximation and SVD recompression."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

_TINY = 1e-300
_ROUNDOFF = 64 * np.finfo(float).eps  # residual rows below this are represented


@dataclass
class RkMatrix:
    """``A @ B.T`` with ``A (m, k)`` and ``B (n, k)``."""
    A: np.ndarray
    B: np.ndarray
    full_rank: bool = False  # set when ACA hit min(m, n) without converging

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float).reshape(self.A.shape[0], -1)
        self.B = np.asarray(self.B, dtype=float).reshape(self.B.shape[0], -1)
        if self.A.shape[1] != self.B.shape[1]:
            raise ValueError("factor ranks differ")
        if self.rank > min(self.shape):
            raise ValueError("rank exceeds block dimensions")

    @property
    def shape(self):
        return self.A.shape[0], self.B.shape[0]

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    @property
    def nbytes(self) -> int:
        return 8 * self.rank * (self.A.shape[0] + self.B.shape[0])

    def to_dense(self) -> np.ndarray:
        return self.A @ self.B.T

    def matvec(self, x):
        return self.A @ (self.B.T @ x)

    def rmatvec(self, x):
        return self.B @ (self.A.T @ x)

    @classmethod
    def zeros(cls, m, n):
        return cls(np.zeros((m, 0)), np.zeros((n, 0)))


def _keep(s: np.ndarray, eps: float) -> int:
    """Smallest rank whose discarded singular values have Frobenius norm
    ``<= eps * ||s||``; ``eps = 0`` keeps the numerical rank."""
    if len(s) == 0 or s[0] <= _TINY:
        return 0
    if eps <= 0.0:
        return int(np.sum(s > s[0] * max(len(s), 1) * np.finfo(float).eps))
    tail = np.sqrt(np.cumsum((s ** 2)[::-1]))[::-1]  # tail[r] = ||s[r:]||
    bound = eps * tail[0]
    ok = np.nonzero(tail <= bound)[0]
    return int(ok[0]) if len(ok) else len(s)


def truncate_dense(M: np.ndarray, eps: float) -> RkMatrix:
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    r = _keep(s, eps)
    return RkMatrix(U[:, :r] * s[:r], Vt[:r].T)


def recompress(rk: RkMatrix, eps: float) -> RkMatrix:
    """QR of both factors, SVD of the small core, Frobenius tail truncation:
    ``||input - output||_F <= eps * ||input||_F``."""
    if rk.rank == 0:
        return rk
    Qa, Ra = np.linalg.qr(rk.A)
    Qb, Rb = np.linalg.qr(rk.B)
    U, s, Vt = np.linalg.svd(Ra @ Rb.T)
    r = _keep(s, eps)
    return RkMatrix(Qa @ (U[:, :r] * s[:r]), Qb @ Vt[:r].T)


def sum_factors(A: np.ndarray, B: np.ndarray, eps: float) -> RkMatrix:
    """Truncated ``A @ B.T`` for factors whose rank may exceed the block
    dimensions (sums of low-rank terms)."""
    m, n = A.shape[0], B.shape[0]
    if A.shape[1] > min(m, n):
        return truncate_dense(A @ B.T, eps)
    return recompress(RkMatrix(A, B), eps)


def add_rk(x: RkMatrix, y: RkMatrix, eps: float, sign: float = 1.0) -> RkMatrix:
    return sum_factors(np.hstack([x.A, sign * y.A]), np.hstack([x.B, y.B]), eps)


def aca(row: Callable[[int], np.ndarray], col: Callable[[int], np.ndarray], m: int, n: int,
        eps: float, max_rank: int = None) -> RkMatrix:
    """Partially pivoted ACA.

    ``row(i)`` / ``col(j)`` return one row / column of the block.  Stops once
    ``||a_k|| ||b_k|| <= eps ||R_k||_F`` with the Frobenius norm of the
    approximant updated incrementally.  Reaching the maximal rank without
    convergence returns the full-rank flag.
    """
    kmax = min(m, n) if max_rank is None else min(max_rank, m, n)
    As, Bs = [], []
    norm2 = 0.0
    used = np.zeros(m, dtype=bool)
    i = 0
    while len(As) < kmax:
        used[i] = True
        r = np.array(row(i), dtype=float)
        scale = np.abs(r).max()
        for a, b in zip(As, Bs):
            r -= a[i] * b
        j = int(np.argmax(np.abs(r)))
        if abs(r[j]) <= max(_TINY, _ROUNDOFF * scale):
            # row already represented; try the next unused one
            free = np.nonzero(~used)[0]
            if len(free) == 0:
                break
            i = int(free[0])
            continue
        b = r / r[j]
        a = np.array(col(j), dtype=float)
        for a_, b_ in zip(As, Bs):
            a -= b_[j] * a_
        cross = sum(float(a @ a_) * float(b @ b_) for a_, b_ in zip(As, Bs))
        step2 = float(a @ a) * float(b @ b)
        norm2 += 2.0 * cross + step2
        As.append(a)
        Bs.append(b)
        if np.sqrt(step2) <= eps * np.sqrt(max(norm2, 0.0)):
            return RkMatrix(np.column_stack(As), np.column_stack(Bs))
        cand = np.abs(a)
        cand[used] = -1.0
        i = int(np.argmax(cand))
        if cand[i] < 0:
            break
    k = len(As)
    if k == 0:
        return RkMatrix.zeros(m, n)
    out = RkMatrix(np.column_stack(As), np.column_stack(Bs))
    out.full_rank = k >= min(m, n)
    return out
