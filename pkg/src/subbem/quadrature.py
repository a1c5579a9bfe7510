"""Adaptive Gauss-Legendre quadrature on parametric intervals of boundary curves.

Integrands are callables ``f(u) -> array (m, ...)`` returning values at the
parametric nodes ``u`` (already including the Jacobian where needed).  An
integral is split into *pieces*; each piece carries its own pair of Gauss
orders and is escalated independently until the pair agrees.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .kernels import Material, kelvin_U


class QuadratureError(RuntimeError):
    """Order escalation hit the cap; ``estimate`` holds the best value."""

    def __init__(self, msg, estimate=None):
        super().__init__(msg)
        self.estimate = estimate


@dataclass(frozen=True)
class QuadratureConfig:
    eps_q: float = 1e-9
    g0: int = 4
    g_step: int = 2
    g_max: int = 64
    near_factor: float = 1.0
    grading: float = 0.25

    def __post_init__(self):
        if not 0.0 < self.eps_q < 1.0:
            raise ValueError("eps_q must lie in (0, 1)")
        if not 1 <= self.g0 < self.g_max:
            raise ValueError("need 1 <= g0 < g_max")
        if self.g_step < 1:
            raise ValueError("g_step must be positive")
        if not self.near_factor > 0:
            raise ValueError("near_factor must be positive")
        if not 0.0 < self.grading < 1.0:
            raise ValueError("grading ratio must lie in (0, 1)")

    @property
    def grading_levels(self) -> int:
        # the omitted core [0, sigma^K] of the squared variable carries < eps/100
        tau = math.sqrt(self.eps_q / 100.0)
        return max(2, math.ceil(math.log(tau) / math.log(self.grading)))


@lru_cache(maxsize=None)
def _gauss(G: int):
    x, w = np.polynomial.legendre.leggauss(G)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_rule(G: int):
    """Gauss-Legendre nodes and weights on (-1, 1)."""
    if G < 1:
        raise ValueError("G must be >= 1")
    return _gauss(int(G))


@dataclass(frozen=True)
class IntegrationRegion:
    patch: int
    a: float
    b: float
    kind: str  # regular | nearly_singular | singular


# ---------------------------------------------------------------------------
# pieces: (a, b, u0, s).  u0 None -> plain interval [a, b] in u.
# Otherwise [a, b] is an interval in t with u = u0 + s t^2.


def piece_nodes(piece, G):
    a, b, u0, s = piece
    x, w = gauss_rule(G)
    half = 0.5 * (b - a)
    t = 0.5 * (a + b) + half * x
    if u0 is None:
        return t, w * half
    return u0 + s * t * t, w * (half * 2.0 * abs(s)) * t


def pieces_nodes(pieces: np.ndarray, G):
    """Nodes and weights of all ``pieces`` (rows ``a, b, u0, s``; ``u0`` NaN
    for plain intervals) at order ``G``, concatenated piece by piece."""
    x, w = gauss_rule(G)
    a, b, u0, s = pieces.T
    half = 0.5 * (b - a)
    t = (0.5 * (a + b))[:, None] + half[:, None] * x[None, :]
    W = half[:, None] * w[None, :]
    graded = ~np.isnan(u0)
    if graded.any():
        tg = t[graded]
        t[graded] = u0[graded, None] + s[graded, None] * tg * tg
        W[graded] *= 2.0 * np.abs(s[graded, None]) * tg
    return t.ravel(), W.ravel()


def as_piece_array(pieces) -> np.ndarray:
    return np.array([(a, b, np.nan if u0 is None else u0, s) for a, b, u0, s in pieces], dtype=float).reshape(-1, 4)


def _norm(v):
    return float(np.sqrt(np.sum(np.abs(v) ** 2)))


def integrate_pieces(f: Callable, pieces: Sequence, config: QuadratureConfig,
                     atol: float = 0.0):
    """Sum of integrals over ``pieces``; returns ``(value, nodes used)``.

    A piece is accepted once ``|Q0 - Q1| <= max(eps*|Q1|, eps*|total|/P, atol)``
    with ``P`` the number of pieces.  All pieces of one escalation round are
    evaluated in a single call of ``f``.
    """
    eps = config.eps_q
    P = len(pieces)
    if P == 0:
        raise ValueError("no pieces to integrate")
    step = config.g_step
    G = config.g0
    arr = pieces if isinstance(pieces, np.ndarray) else as_piece_array(pieces)
    active = np.arange(P)
    prev = None
    accepted = None
    nodes_used = 0
    while True:
        orders = (G, G + step) if prev is None else (G + step,)
        us, ws, lens = [], [], []
        for G_ in orders:
            u, w = pieces_nodes(arr[active], G_)
            us.append(u)
            ws.append(w)
            lens += [G_] * len(active)
        u = np.concatenate(us)
        w = np.concatenate(ws)
        vals = f(u)
        nodes_used += len(u)
        weighted = vals * w.reshape((-1,) + (1,) * (vals.ndim - 1))
        sums = np.add.reduceat(weighted, np.concatenate([[0], np.cumsum(lens)[:-1]]), axis=0)
        if prev is None:
            q0, q1 = sums[: len(active)], sums[len(active):]
        else:
            q0, q1 = prev, sums
        total = q1.sum(axis=0) + (accepted if accepted is not None else 0.0)
        axes = tuple(range(1, q1.ndim))
        err = np.sqrt(np.sum(np.abs(q1 - q0) ** 2, axis=axes))
        mag = np.sqrt(np.sum(np.abs(q1) ** 2, axis=axes))
        tol = np.maximum(np.maximum(eps * mag, eps * _norm(total) / P), atol)
        ok = err <= tol
        done = q1[ok].sum(axis=0)
        accepted = done if accepted is None else accepted + done
        if ok.all():
            return accepted, nodes_used
        G += step
        if G + step > config.g_max:
            raise QuadratureError(
                f"no convergence up to G={config.g_max} (error {err[~ok].max():.3e})",
                accepted + q1[~ok].sum(axis=0))
        active = active[~ok]
        prev = q1[~ok]


def integrate_adaptive(f: Callable, a: float, b: float, config: QuadratureConfig,
                       atol: float = 0.0):
    """Integral of ``f`` over ``[a, b]`` by escalating Gauss pairs."""
    return integrate_pieces(f, [(a, b, None, 0.0)], config, atol)[0]


# ---------------------------------------------------------------------------
# region classification


def chord_diameter(curve, a, b) -> float:
    p = curve.points([a, 0.5 * (a + b), b])
    return max(np.linalg.norm(p[0] - p[1]), np.linalg.norm(p[1] - p[2]), np.linalg.norm(p[0] - p[2]))


def sample_distance(curve, a, b, x) -> float:
    p = curve.points(np.linspace(a, b, 5))
    return float(np.min(np.hypot(p[:, 0] - x[0], p[:, 1] - x[1])))


def near_subdivision(curve, a, b, x, factor, max_depth=60):
    """Bisect ``[a, b]`` until every interval has diam <= factor * dist to x."""
    out = []
    stack = [(a, b, 0)]
    while stack:
        lo, hi, depth = stack.pop()
        if depth >= max_depth or chord_diameter(curve, lo, hi) <= factor * sample_distance(curve, lo, hi, x):
            out.append((lo, hi))
        else:
            mid = 0.5 * (lo + hi)
            stack.append((mid, hi, depth + 1))
            stack.append((lo, mid, depth + 1))
    return out


def singular_pieces(a, b, u0, config: QuadratureConfig):
    """Graded pieces covering ``[a, b]`` split at the singular parameter ``u0``."""
    if not a <= u0 <= b:
        raise ValueError("singular parameter outside the interval")
    K = config.grading_levels
    sig = config.grading
    out = []
    for s in (a - u0, b - u0):
        if s == 0.0:
            continue
        # nodes inside the core would round onto u0 itself; keep the core
        # well above the spacing of floats near u0
        floor = math.sqrt(1e3 * np.spacing(max(abs(u0), abs(s))) / abs(s))
        cuts = [c for c in (sig ** k for k in range(K, 0, -1)) if c > floor]
        cuts = [max(floor, sig ** K)] + cuts + [1.0]
        out += [(cuts[m], cuts[m + 1], u0, s) for m in range(len(cuts) - 1)]
    return out


def classify_and_subdivide(curve, a, b, x, config: QuadratureConfig, u0=None, patch=0):
    """Integration regions of the element ``[a, b]`` for the point ``x``.

    ``u0`` is the pre-image of ``x`` when it lies on this patch.
    """
    if u0 is not None and a <= u0 <= b:
        out = []
        if u0 > a:
            out.append(IntegrationRegion(patch, a, u0, "singular"))
        if u0 < b:
            out.append(IntegrationRegion(patch, u0, b, "singular"))
        return out
    x = np.asarray(x, dtype=float)
    if chord_diameter(curve, a, b) <= config.near_factor * sample_distance(curve, a, b, x):
        return [IntegrationRegion(patch, a, b, "regular")]
    return [IntegrationRegion(patch, lo, hi, "nearly_singular")
            for lo, hi in sorted(near_subdivision(curve, a, b, x, config.near_factor))]


def region_pieces(regions, config: QuadratureConfig, u0=None):
    pieces = []
    for r in regions:
        if r.kind == "singular":
            pieces += singular_pieces(r.a, r.b, u0, config)
        else:
            pieces.append((r.a, r.b, None, 0.0))
    return pieces


def integrate_element(f, curve, a, b, x, config: QuadratureConfig, u0=None, atol=0.0):
    """Adaptive integral over an element with automatic classification."""
    regions = classify_and_subdivide(curve, a, b, x, config, u0)
    return integrate_pieces(f, region_pieces(regions, config, u0), config, atol)[0]


def integrate_singular_V(curve, a, b, u0, basis, j, material: Material, config: QuadratureConfig):
    """Weakly singular integral of ``U(x, y) * R_j(y)`` over ``[a, b]`` where
    ``x = curve(u0)``; returns the 2x2 block."""
    x = curve.points([u0])[0]

    def f(u):
        y, _, J = curve.evaluate(u)
        spans, R, _ = basis.evaluate(u)
        p = basis.order
        col = j - (spans - p)
        vals = np.where((col >= 0) & (col <= p), R[np.arange(len(u)), np.clip(col, 0, p)], 0.0)
        return kelvin_U(material, x, y) * (vals * J)[:, None, None]

    return integrate_pieces(f, singular_pieces(a, b, u0, config), config)[0]
