"""B-spline / NURBS bases and curves in one parametric direction.

Evaluation follows the Cox-de Boor triangle.  The vectorised routines
(``basis_funs``) are the hot path used by quadrature; the ``counted_*``
routines walk the same triangle one operation at a time and tally
multiplications and divisions in an :class:`OpCounter`.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np


class DomainError(ValueError):
    """Argument outside the valid domain of an operation."""


# ---------------------------------------------------------------------------
# knot vectors


@dataclass(frozen=True)
class KnotVector:
    knots: tuple
    order: int

    def __post_init__(self):
        knots = tuple(self.knots)
        object.__setattr__(self, "knots", knots)
        p = self.order
        if p < 1:
            raise DomainError(f"order must be >= 1, got {p}")
        if len(knots) < 2 * (p + 1):
            raise DomainError("knot vector too short for its order")
        if any(knots[i] > knots[i + 1] for i in range(len(knots) - 1)):
            raise DomainError("knots must be non-decreasing")
        if knots[0] == knots[-1]:
            raise DomainError("knot vector has no non-zero span")
        if knots[: p + 1].count(knots[0]) != p + 1 or knots[p + 1] == knots[0]:
            raise DomainError("first knot must be repeated exactly p+1 times")
        if knots[-p - 1:].count(knots[-1]) != p + 1 or knots[-p - 2] == knots[-1]:
            raise DomainError("last knot must be repeated exactly p+1 times")

    @property
    def count(self) -> int:
        return len(self.knots) - self.order - 1

    @property
    def lower(self):
        return self.knots[0]

    @property
    def upper(self):
        return self.knots[-1]

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.knots, dtype=float)

    def unique(self) -> list:
        out = []
        for k in self.knots:
            if not out or k != out[-1]:
                out.append(k)
        return out

    def multiplicity(self, value) -> int:
        return self.knots.count(value)

    def spans(self) -> list[tuple[int, float, float]]:
        """Non-zero knot spans as ``(span index, start, end)``."""
        k = self.knots
        p = self.order
        return [(i, k[i], k[i + 1]) for i in range(p, len(k) - p - 1) if k[i] < k[i + 1]]

    def find_span(self, u) -> int:
        """Index ``i`` with ``knots[i] <= u < knots[i+1]``; the upper end maps
        to the last non-zero span."""
        k = self.knots
        if u < k[0] or u > k[-1]:
            raise DomainError(f"parameter {u} outside [{k[0]}, {k[-1]}]")
        p = self.order
        n = self.count
        if u == k[-1]:
            return bisect.bisect_left(k, u, p, n + 1) - 1
        return bisect.bisect_right(k, u, p, n) - 1

    def support(self, i: int) -> tuple:
        return self.knots[i], self.knots[i + self.order + 1]

    def with_knots(self, extra: Sequence) -> "KnotVector":
        return KnotVector(tuple(sorted(self.knots + tuple(extra))), self.order)


def open_knot_vector(interior: Sequence = (), order: int = 2, lower=0.0, upper=1.0) -> KnotVector:
    return KnotVector((lower,) * (order + 1) + tuple(interior) + (upper,) * (order + 1), order)


# ---------------------------------------------------------------------------
# operation counting


@dataclass
class OpCounter:
    """Tally of multiplications and divisions.  One instance per worker."""

    multiplications_and_divisions: int = 0

    def add(self, n: int = 1) -> None:
        if n < 0:
            raise ValueError("operation tally can only increase")
        self.multiplications_and_divisions += n

    def reset(self) -> None:
        self.multiplications_and_divisions = 0


_OP_COUNT_FORMS = {
    "bspline_point": (3, 5, 2),
    "bspline_tangent": (3, 3, 6),
    "nurbs_point": (3, 9, 6),
    "nurbs_tangent": (3, 15, 14),
}

OP_KINDS = tuple(_OP_COUNT_FORMS)


def predicted_op_count(kind: str, p: int) -> int:
    """Closed-form number of multiplications/divisions for evaluating a
    point or tangent of a curve of order ``p``."""
    if kind not in _OP_COUNT_FORMS:
        raise DomainError(f"unknown kind {kind!r}; expected one of {OP_KINDS}")
    if p < 1:
        raise DomainError("order must be >= 1")
    a, b, c = _OP_COUNT_FORMS[kind]
    return (a * p * p + b * p + c) // 2


def _counted_triangle(knots, p, span, u, counter, upto):
    """Non-zero basis values of orders ``0..upto`` at ``u``.

    Returns the list of rows; row ``j`` holds the ``j+1`` values of order j.
    Each triangle connection costs three operations (one division, two
    multiplications).
    """
    left = [0.0] * (p + 1)
    right = [0.0] * (p + 1)
    rows = [[1.0]]
    N = [1.0]
    for j in range(1, upto + 1):
        left[j] = u - knots[span + 1 - j]
        right[j] = knots[span + j] - u
        saved = 0.0
        new = [0.0] * (j + 1)
        for r in range(j):
            temp = N[r] / (right[r + 1] + left[j - r])
            new[r] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
            counter.add(3)
        new[j] = saved
        N = new
        rows.append(N)
    return rows


def counted_basis(kv: KnotVector, u, counter: OpCounter, derivative: bool = False,
                  values: bool = True):
    """Instrumented evaluation of the ``p+1`` non-zero B-spline functions.

    ``values`` and ``derivative`` select what is produced: values only,
    derivatives only, or both at once (where the last triangle row is
    shared).
    """
    p = kv.order
    k = kv.knots
    span = kv.find_span(u)
    if values and not derivative:
        return span, _counted_triangle(k, p, span, u, counter, p)[-1], None
    rows = _counted_triangle(k, p, span, u, counter, p - 1)
    low = rows[-1]
    if values:
        # last row of the triangle; quotients are reused for the derivatives
        left = [u - k[span + 1 - j] if j else 0.0 for j in range(p + 1)]
        N = [0.0] * (p + 1)
        quot = [0.0] * p
        saved = 0.0
        for r in range(p):
            rgt = k[span + r + 1] - u
            temp = low[r] / (rgt + left[p - r])
            quot[r] = temp
            N[r] = saved + rgt * temp
            saved = left[p - r] * temp
            counter.add(3)
        N[p] = saved
        dN = [0.0] * (p + 1)
        prev = 0.0
        for r in range(p + 1):
            cur = quot[r] if r < p else 0.0
            dN[r] = p * (prev - cur)
            counter.add(1)
            prev = cur
        return span, N, dN
    # derivatives only: one quotient and one scaling per function
    padded = list(low) + [0.0]
    dN = [0.0] * (p + 1)
    prev = 0.0
    for r in range(p + 1):
        den = k[span + r + 1] - k[span + r + 1 - p]
        # the padded slot can meet a repeated end knot: 0/0 counts as 0
        cur = padded[r] / den if den else 0.0
        counter.add(1)
        dN[r] = p * (prev - cur)
        counter.add(1)
        prev = cur
    return span, None, dN


def counted_evaluate(kind: str, curve: "NurbsCurve", u, counter: OpCounter):
    """Point or tangent of ``curve`` at ``u`` with operation tally.

    ``kind`` is one of :data:`OP_KINDS`; the ``bspline_*`` kinds ignore
    the weights.
    """
    if kind not in _OP_COUNT_FORMS:
        raise DomainError(f"unknown kind {kind!r}")
    kv = curve.basis.knot_vector
    p = kv.order
    ctrl = curve.control_points
    w = curve.basis.weights
    if kind == "bspline_point":
        span, coef, _ = counted_basis(kv, u, counter)
    elif kind == "bspline_tangent":
        span, _, coef = counted_basis(kv, u, counter, derivative=True, values=False)
    elif kind == "nurbs_point":
        span, N, _ = counted_basis(kv, u, counter)
        Nw = []
        for r in range(p + 1):
            Nw.append(N[r] * w[span - p + r])
            counter.add(1)
        W = sum(Nw)
        coef = []
        for r in range(p + 1):
            coef.append(Nw[r] / W)
            counter.add(1)
    else:
        span, N, dN = counted_basis(kv, u, counter, derivative=True)
        Nw, dNw = [], []
        for r in range(p + 1):
            Nw.append(N[r] * w[span - p + r])
            dNw.append(dN[r] * w[span - p + r])
            counter.add(2)
        W = sum(Nw)
        beta = sum(dNw) / W
        counter.add(1)
        coef = []
        for r in range(p + 1):
            coef.append((dNw[r] - Nw[r] * beta) / W)
            counter.add(2)
    x = [0.0, 0.0]
    for r in range(p + 1):
        c = ctrl[span - p + r]
        # scalar-times-point counts once, like the mapping count (p+1)^d
        x[0] += coef[r] * c[0]
        x[1] += coef[r] * c[1]
        counter.add(1)
    return np.array(x)


# ---------------------------------------------------------------------------
# hot-path evaluation


def basis_funs(kv: KnotVector, u, span=None):
    """Vectorised non-zero B-spline values and first derivatives.

    Parameters
    ----------
    kv : KnotVector
    u : array_like, shape (m,)
    span : int, optional
        Evaluate every ``u`` with this span's polynomial pieces (element-local
        evaluation; ``u`` must then lie in the closure of that span).

    Returns
    -------
    spans : (m,) int array
    N, dN : (m, p+1) arrays; column r belongs to function ``span - p + r``.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    k = kv.array
    p = kv.order
    if np.any(u < k[0]) or np.any(u > k[-1]):
        raise DomainError(f"parameter outside [{k[0]}, {k[-1]}]")
    n = kv.count
    if span is not None:
        spans = np.full(u.shape, int(span))
    else:
        spans = np.searchsorted(k[: n + 1], u, side="right") - 1
        spans = np.clip(spans, p, n - 1)
        # the upper end and repeated knots: step back onto a non-zero span
        at_end = u == k[-1]
        if np.any(at_end):
            spans[at_end] = kv.find_span(k[-1])
    m = u.size
    N = np.zeros((m, p + 1))
    N[:, 0] = 1.0
    left = np.zeros((m, p + 1))
    right = np.zeros((m, p + 1))
    quot = None
    for j in range(1, p + 1):
        left[:, j] = u - k[spans + 1 - j]
        right[:, j] = k[spans + j] - u
        saved = np.zeros(m)
        if j == p:
            quot = np.zeros((m, p + 1))
        for r in range(j):
            temp = N[:, r] / (right[:, r + 1] + left[:, j - r])
            if j == p:
                quot[:, r] = temp
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved
    dN = np.empty((m, p + 1))
    dN[:, 0] = -p * quot[:, 0]
    for r in range(1, p + 1):
        dN[:, r] = p * (quot[:, r - 1] - quot[:, r])
    return spans, N, dN


# ---------------------------------------------------------------------------
# NURBS basis


@dataclass(frozen=True)
class NurbsBasis:
    knot_vector: KnotVector
    weights: tuple = None

    def __post_init__(self):
        if self.weights is None:
            object.__setattr__(self, "weights", (1.0,) * self.knot_vector.count)
        w = tuple(float(x) for x in self.weights)
        object.__setattr__(self, "weights", w)
        if len(w) != self.knot_vector.count:
            raise DomainError(
                f"{len(w)} weights for {self.knot_vector.count} basis functions")
        if any(not x > 0 for x in w):
            raise DomainError("weights must be positive")

    @property
    def count(self) -> int:
        return self.knot_vector.count

    @property
    def order(self) -> int:
        return self.knot_vector.order

    @property
    def is_rational(self) -> bool:
        return len(set(self.weights)) > 1

    def evaluate(self, u, span=None):
        """Vectorised rational values and derivatives; see :func:`eval_nurbs`."""
        spans, N, dN = basis_funs(self.knot_vector, u, span)
        p = self.order
        w = np.asarray(self.weights)
        idx = spans[:, None] - p + np.arange(p + 1)
        ww = w[idx]
        Nw = N * ww
        dNw = dN * ww
        W = Nw.sum(axis=1, keepdims=True)
        beta = dNw.sum(axis=1, keepdims=True) / W
        R = Nw / W
        dR = (dNw - Nw * beta) / W
        return spans, R, dR


def eval_bspline(basis, u):
    """``(span, values, derivatives)`` of the ``p+1`` non-zero B-splines at ``u``."""
    kv = basis.knot_vector if isinstance(basis, NurbsBasis) else basis
    spans, N, dN = basis_funs(kv, [u])
    return int(spans[0]), N[0], dN[0]


def eval_nurbs(basis: NurbsBasis, u):
    """``(span, values, derivatives)`` of the non-zero rational functions."""
    spans, R, dR = basis.evaluate([u])
    return int(spans[0]), R[0], dR[0]


def basis_matrix(basis: NurbsBasis, u) -> np.ndarray:
    """Dense ``(len(u), count)`` matrix of rational basis values."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    spans, R, _ = basis.evaluate(u)
    p = basis.order
    out = np.zeros((u.size, basis.count))
    rows = np.repeat(np.arange(u.size), p + 1)
    cols = (spans[:, None] - p + np.arange(p + 1)).ravel()
    out[rows, cols] = R.ravel()
    return out


# ---------------------------------------------------------------------------
# curves


@dataclass(frozen=True)
class NurbsCurve:
    basis: NurbsBasis
    control_points: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.array(self.control_points, dtype=float)
        if c.ndim != 2 or c.shape[1] != 2:
            raise DomainError("control points must be an (n, 2) array")
        if len(c) != self.basis.count:
            raise DomainError(f"{len(c)} control points for {self.basis.count} functions")
        c.setflags(write=False)
        object.__setattr__(self, "control_points", c)

    @classmethod
    def from_homogeneous(cls, kv: KnotVector, Pw: np.ndarray) -> "NurbsCurve":
        w = Pw[:, 2]
        return cls(NurbsBasis(kv, tuple(w)), Pw[:, :2] / w[:, None])

    @property
    def knot_vector(self) -> KnotVector:
        return self.basis.knot_vector

    @property
    def order(self) -> int:
        return self.basis.order

    @property
    def homogeneous(self) -> np.ndarray:
        w = np.asarray(self.basis.weights)
        return np.column_stack([self.control_points * w[:, None], w])

    def evaluate(self, u, span=None):
        """Points, tangents and Gram determinants ``sqrt(g) = |tangent|``."""
        spans, R, dR = self.basis.evaluate(u, span)
        p = self.order
        idx = spans[:, None] - p + np.arange(p + 1)
        c = self.control_points[idx]
        x = np.einsum("mr,mrd->md", R, c)
        t = np.einsum("mr,mrd->md", dR, c)
        return x, t, np.hypot(t[:, 0], t[:, 1])

    def points(self, u) -> np.ndarray:
        return self.evaluate(u)[0]


def eval_curve(curve: NurbsCurve, u):
    """``(point, tangent, sqrt(g))`` at a single parameter."""
    x, t, g = curve.evaluate([u])
    return x[0], t[0], float(g[0])


# ---------------------------------------------------------------------------
# refinement


def _insert_homogeneous(kv: KnotVector, Pw: np.ndarray, u):
    """Boehm insertion on homogeneous coefficients (any trailing shape)."""
    k = kv.knots
    p = kv.order
    if not k[0] < u < k[-1]:
        raise DomainError(f"cannot insert {u}: not strictly inside the knot range")
    if kv.multiplicity(u) >= p + 1:
        raise DomainError(f"knot {u} already has multiplicity p+1")
    near = min(abs(float(u) - float(x)) for x in k)
    if 0 < near < 1e-12:
        raise DomainError(f"knot {u} within 1e-12 of an existing knot")
    s = bisect.bisect_right(k, u) - 1
    n = kv.count
    Q = np.empty((n + 1,) + Pw.shape[1:])
    Q[: s - p + 1] = Pw[: s - p + 1]
    Q[s + 1:] = Pw[s:]
    for i in range(s - p + 1, s + 1):
        a = (u - k[i]) / (k[i + p] - k[i])
        Q[i] = a * Pw[i] + (1.0 - a) * Pw[i - 1]
    return kv.with_knots([u]), Q


def insert_knot(curve: NurbsCurve, u_new) -> NurbsCurve:
    """Insert one knot without changing the curve."""
    kv, Q = _insert_homogeneous(curve.knot_vector, curve.homogeneous, u_new)
    return NurbsCurve.from_homogeneous(kv, Q)


def refine_basis(basis: NurbsBasis, knots: Sequence) -> NurbsBasis:
    """Insert knots into a basis; the weights follow the rational rule so
    the refined rational functions span a superset of the original space."""
    kv = basis.knot_vector
    w = np.asarray(basis.weights)[:, None]
    for u in sorted(knots):
        kv, w = _insert_homogeneous(kv, w, u)
    return NurbsBasis(kv, tuple(w[:, 0]))


def greville(kv: KnotVector) -> list:
    p = kv.order
    k = kv.knots
    return [sum(k[i + 1: i + p + 1]) / p for i in range(kv.count)]


def _elevated_knot_vector(kv: KnotVector, times: int) -> KnotVector:
    p = kv.order
    out = []
    for v in kv.unique():
        out += [v] * (kv.multiplicity(v) + times)
    return KnotVector(tuple(out), p + times)


def _reinterpolate(src_kv: KnotVector, coef: np.ndarray, dst_kv: KnotVector) -> np.ndarray:
    """Coefficients in ``dst_kv`` of the spline ``coef`` over ``src_kv``.

    Exact when the destination space contains the source space; solved by
    interpolation at the destination Greville points.
    """
    g = np.array(greville(dst_kv), dtype=float)
    B = basis_matrix(NurbsBasis(dst_kv), g)
    S = basis_matrix(NurbsBasis(src_kv), g)
    return np.linalg.solve(B, S @ coef)


def elevate_order(curve: NurbsCurve, times: int = 1) -> NurbsCurve:
    """Raise the order by ``times``; every knot multiplicity grows by ``times``."""
    kv = curve.knot_vector
    dst = _elevated_knot_vector(kv, times)
    Q = _reinterpolate(kv, curve.homogeneous, dst)
    return NurbsCurve.from_homogeneous(dst, Q)


def elevate_basis(basis: NurbsBasis, times: int = 1) -> NurbsBasis:
    kv = basis.knot_vector
    dst = _elevated_knot_vector(kv, times)
    w = _reinterpolate(kv, np.asarray(basis.weights)[:, None], dst)
    return NurbsBasis(dst, tuple(w[:, 0]))


# ---------------------------------------------------------------------------
# Bezier segments and bounding boxes


def merged_bezier_knots(knot_vectors: Sequence[KnotVector], order: int) -> KnotVector:
    """Union of the distinct knot values, each interior value with
    multiplicity ``order``."""
    lo = {kv.lower for kv in knot_vectors}
    hi = {kv.upper for kv in knot_vectors}
    if len(lo) != 1 or len(hi) != 1:
        raise DomainError("knot vectors do not share the same parametric range")
    values = sorted({v for kv in knot_vectors for v in kv.unique()})
    inner = [v for v in values[1:-1] for _ in range(order)]
    return KnotVector((values[0],) * (order + 1) + tuple(inner) + (values[-1],) * (order + 1), order)


def bezier_segments(knot_vectors: Sequence[KnotVector], geometry: NurbsCurve):
    """Split ``geometry`` into Bezier segments on the merged knot vector.

    Returns ``(merged knot vector, segments)`` where each segment is
    ``(start, end, control points (p+1, 2))``.
    """
    merged = merged_bezier_knots(list(knot_vectors) + [geometry.knot_vector], geometry.order)
    kv = geometry.knot_vector
    Pw = geometry.homogeneous
    missing = []
    for v in merged.unique():
        missing += [v] * (merged.multiplicity(v) - kv.multiplicity(v))
    for u in missing:
        kv, Pw = _insert_homogeneous(kv, Pw, u)
    p = geometry.order
    pts = Pw[:, :2] / Pw[:, 2:3]
    segs = []
    for n, (_, a, b) in enumerate(kv.spans()):
        segs.append((a, b, pts[n * p: n * p + p + 1]))
    return merged, segs


def support_bounding_box(field_kv: KnotVector, j: int, geometry: NurbsCurve,
                         segments=None) -> np.ndarray:
    """Axis-aligned box ``[[xmin, ymin], [xmax, ymax]]`` containing the image
    of the support of field function ``j``."""
    if segments is None:
        _, segments = bezier_segments([field_kv], geometry)
    a, b = field_kv.support(j)
    pts = np.vstack([c for (s, e, c) in segments if s >= a and e <= b])
    return np.array([pts.min(axis=0), pts.max(axis=0)])


# ---------------------------------------------------------------------------
# anchors


@dataclass(frozen=True)
class AnchorSet:
    greville: tuple
    offsets: tuple
    discontinuous: tuple

    @property
    def anchors(self) -> tuple:
        return tuple(g + a for g, a in zip(self.greville, self.offsets))

    def __len__(self):
        return len(self.greville)


def discontinuity_sides(kv: KnotVector, ends: bool = False) -> list:
    """Per function: -1 if it jumps at its right support end (its non-zero
    span lies to the left), +1 if it jumps at its left end, 0 otherwise.

    A jump sits at a knot of multiplicity p+1.  The patch ends count only
    when ``ends`` is set.
    """
    k = kv.knots
    p = kv.order
    out = []
    for i in range(kv.count):
        local = k[i: i + p + 2]
        right = local[1:].count(local[-1]) == p + 1
        left = local[:-1].count(local[0]) == p + 1
        if right and (ends or local[-1] != k[-1]):
            out.append(-1)
        elif left and (ends or local[0] != k[0]):
            out.append(1)
        else:
            out.append(0)
    return out


def greville_anchors(kv: KnotVector, ends: bool = False) -> AnchorSet:
    """Greville abscissae plus offsets for discontinuous functions.

    The offset averages the ``2L+1``-point neighbourhood of the abscissa in
    the sorted union of knots and abscissae, ``L = 1`` for ``p - 1 < 2``
    else 2.  The window is clamped at the ends of that sequence.  Exact
    when the knots are :class:`fractions.Fraction`.
    """
    p = kv.order
    g = greville(kv)
    sides = discontinuity_sides(kv, ends)
    L = 1 if p - 1 < 2 else 2
    # (value, tie-break key): knots sit between left- and right-jumping abscissae
    entries = [(x, 1, -1) for x in kv.knots]
    for i, (x, s) in enumerate(zip(g, sides)):
        entries.append((x, 1 + s, i))
    entries.sort(key=lambda e: (e[0], e[1]))
    seq = [e[0] for e in entries]
    pos = {e[2]: n for n, e in enumerate(entries) if e[2] >= 0}
    offsets = []
    for i, s in enumerate(sides):
        if s == 0:
            offsets.append(0 * g[i])
            continue
        I = pos[i]
        lo = max(0, I - L)
        hi = min(len(seq) - 1, I + L)
        total = sum(seq[m] - seq[I] for m in range(lo, I)) + sum(seq[m] - seq[I] for m in range(I + 1, hi + 1))
        offsets.append(total / (2 * L + 1))
    anchors = [a + b for a, b in zip(g, offsets)]
    if any(anchors[i] >= anchors[i + 1] for i in range(len(anchors) - 1)):
        raise DomainError("anchors are not strictly increasing after offsets")
    for i, a in enumerate(anchors):
        lo, hi = kv.support(i)
        if not lo <= a <= hi:
            raise DomainError(f"anchor {i} outside its support")
    return AnchorSet(tuple(g), tuple(offsets), tuple(s != 0 for s in sides))
