"""Left-preconditioned GMRES without restarts."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class ConvergenceError(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


@dataclass
class GmresResult:
    x: np.ndarray
    iterations: int
    history: list = field(default_factory=list)  # relative preconditioned residuals


def gmres_solve(matvec: Callable, b: np.ndarray, eps: float = 1e-6,
                precond: Optional[Callable] = None, max_iter: int = 500,
                x0: Optional[np.ndarray] = None) -> GmresResult:
    """Solve ``A x = b`` until ``||M^{-1}(b - A x)|| <= eps ||M^{-1} b||``.

    The Krylov basis grows up to ``max_iter`` vectors.  Exhaustion raises
    ``ConvergenceError`` carrying the residual history.
    """
    b = np.asarray(b, dtype=float)
    M = precond or (lambda v: v)
    n = len(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    pb = M(b)
    ref = np.linalg.norm(pb)
    if ref == 0.0:
        return GmresResult(np.zeros(n), 0, [0.0])
    r = M(b - matvec(x)) if x0 is not None else pb
    beta = np.linalg.norm(r)
    history = [beta / ref]
    if history[-1] <= eps:
        return GmresResult(x, 0, history)
    m = min(max_iter, n)
    Q = np.zeros((m + 1, n))
    H = np.zeros((m + 1, m))
    cs = np.zeros(m)
    sn = np.zeros(m)
    g = np.zeros(m + 1)
    g[0] = beta
    Q[0] = r / beta
    k = 0
    for k in range(m):
        w = np.array(M(matvec(Q[k])), dtype=float)  # operators may return their input
        for i in range(k + 1):  # modified Gram-Schmidt
            H[i, k] = Q[i] @ w
            w -= H[i, k] * Q[i]
        H[k + 1, k] = np.linalg.norm(w)
        if H[k + 1, k] > 0.0:
            Q[k + 1] = w / H[k + 1, k]
        for i in range(k):
            a, c = H[i, k], H[i + 1, k]
            H[i, k] = cs[i] * a + sn[i] * c
            H[i + 1, k] = -sn[i] * a + cs[i] * c
        rho = np.hypot(H[k, k], H[k + 1, k])
        cs[k], sn[k] = (1.0, 0.0) if rho == 0.0 else (H[k, k] / rho, H[k + 1, k] / rho)
        H[k, k] = rho
        H[k + 1, k] = 0.0
        g[k + 1] = -sn[k] * g[k]
        g[k] = cs[k] * g[k]
        history.append(abs(g[k + 1]) / ref)
        if history[-1] <= eps:
            break
    j = k + 1
    y = np.linalg.solve(np.triu(H[:j, :j]), g[:j]) if j else np.zeros(0)
    x = x + Q[:j].T @ y
    if history[-1] > eps:
        raise ConvergenceError(f"GMRES did not converge in {j} iterations "
                               f"(residual {history[-1]:.3e})", history)
    return GmresResult(x, j, history)
