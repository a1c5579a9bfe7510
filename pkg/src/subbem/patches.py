"""Subparametric patches: a fixed geometry plus independent displacement and
traction bases, the global DOF layout on a closed boundary, and the mixed
collocation scheme."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .nurbs import (
    DomainError, NurbsBasis, NurbsCurve, basis_matrix, elevate_basis,
    greville_anchors, refine_basis,
)

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
STRATEGIES = ("uniform_midpoint_insertion", "order_elevation", "bezier_multiplicity")

# g(points (m, 2), unit normals (m, 2)) -> values (m, 2)
KnownData = Callable[[np.ndarray, np.ndarray], np.ndarray]


class ConstructionError(ValueError):
    pass


def corner_knots(curve: NurbsCurve, angle_tol: float = 1e-8) -> list:
    """Interior knots at which the curve has a tangent jump."""
    kv = curve.knot_vector
    p = kv.order
    P = curve.control_points
    out = []
    for v in kv.unique()[1:-1]:
        m = kv.multiplicity(v)
        if m < p:
            continue
        # the curve interpolates control point k at a knot of multiplicity >= p
        k = kv.knots.index(v) - 1
        left = P[k] - P[k - 1]
        right = P[k + m - p + 1] - P[k + m - p]
        cross = left[0] * right[1] - left[1] * right[0]
        if abs(cross) > angle_tol * np.linalg.norm(left) * np.linalg.norm(right) or left @ right < 0:
            out.append(v)
    return out


@dataclass(frozen=True)
class SubparametricPatch:
    geometry: NurbsCurve
    bc_type: str
    displacement: NurbsBasis
    traction: NurbsBasis
    known_data: Optional[KnownData] = field(default=None, compare=False)
    homogeneous: bool = False
    complex_data: bool = False

    @property
    def unknown_field(self) -> str:
        return "displacement" if self.bc_type == NEUMANN else "traction"

    @property
    def known_field(self) -> str:
        return "traction" if self.bc_type == NEUMANN else "displacement"

    def basis(self, name: str) -> NurbsBasis:
        return getattr(self, name)

    def breakpoints(self) -> list:
        vals = set()
        for b in (self.geometry.basis, self.displacement, self.traction):
            vals.update(float(v) for v in b.knot_vector.unique())
        return sorted(vals)


def build_patch(geometry: NurbsCurve, bc_type: str, known_data: Optional[KnownData] = None,
                homogeneous: bool = False, complex_data: bool = False) -> SubparametricPatch:
    """Displacement basis = geometry basis; the traction basis additionally
    breaks to C^-1 at every interior corner."""
    if not isinstance(geometry, NurbsCurve):
        raise ConstructionError("geometry must be a NurbsCurve")
    if bc_type not in (DIRICHLET, NEUMANN):
        raise ConstructionError(f"bc_type must be {DIRICHLET!r} or {NEUMANN!r}")
    if known_data is None and not homogeneous:
        raise ConstructionError("known data missing; pass homogeneous=True for zero data")
    basis = geometry.basis
    p = basis.order
    extra = []
    for v in corner_knots(geometry):
        extra += [v] * (p + 1 - basis.knot_vector.multiplicity(v))
    trac = refine_basis(basis, extra) if extra else basis
    return SubparametricPatch(geometry, bc_type, basis, trac, known_data, homogeneous, complex_data)


def _refine(basis: NurbsBasis, strategy: str) -> NurbsBasis:
    if strategy == "order_elevation":
        return elevate_basis(basis, 1)
    mids = [0.5 * (a + b) for _, a, b in basis.knot_vector.spans()]
    if strategy == "uniform_midpoint_insertion":
        return refine_basis(basis, mids)
    if strategy == "bezier_multiplicity":
        return refine_basis(basis, [m for m in mids for _ in range(basis.order)])
    raise DomainError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


def refine_unknown_field(patch: SubparametricPatch, strategy: str = "uniform_midpoint_insertion",
                         lockstep: bool = False) -> SubparametricPatch:
    """Refine the unknown field; the known field follows only for complex data
    or when ``lockstep`` is set (isoparametric-style layout)."""
    if strategy not in STRATEGIES:
        raise DomainError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    names = [patch.unknown_field]
    if patch.complex_data or lockstep:
        names.append(patch.known_field)
    return replace(patch, **{n: _refine(patch.basis(n), strategy) for n in names})


def field_anchors(patch: SubparametricPatch, name: str):
    """Parametric anchors of a field basis.  Traction functions at the patch
    ends are offset inwards as well, so that corners never carry two
    coincident traction anchors."""
    kv = patch.basis(name).knot_vector
    return [float(a) for a in greville_anchors(kv, ends=(name == "traction")).anchors]


def curve_frame(curve: NurbsCurve, u):
    """Points and unit normals (tangent turned clockwise)."""
    x, t, g = curve.evaluate(u)
    return x, np.column_stack([t[:, 1], -t[:, 0]]) / g[:, None]


def project_known_data(patch: SubparametricPatch, g: Optional[KnownData] = None,
                       name: Optional[str] = None) -> np.ndarray:
    """Interpolate ``g`` at the anchors of a field; returns ``(count, 2)``."""
    name = name or patch.known_field
    g = g or patch.known_data
    basis = patch.basis(name)
    if g is None:
        return np.zeros((basis.count, 2))
    u = np.array(field_anchors(patch, name))
    A = basis_matrix(basis, u)
    x, n = curve_frame(patch.geometry, u)
    rhs = np.asarray(g(x, n), dtype=float)
    if np.linalg.cond(A) > 1e12:
        raise ConstructionError("interpolation matrix is singular")
    return np.linalg.solve(A, rhs)


# ---------------------------------------------------------------------------
# boundary layout


@dataclass(frozen=True)
class CollocationPoint:
    x: np.ndarray
    preimages: tuple  # ((patch, u), ...)
    field: str
    dof: int


@dataclass
class CollocationSet:
    points: list

    @property
    def X(self) -> np.ndarray:
        return np.array([p.x for p in self.points]).reshape(-1, 2)

    def __len__(self):
        return len(self.points)

    def count(self, name: str) -> int:
        return sum(p.field == name for p in self.points)


class Discretisation:
    """Global numbering of the fields on a closed chain of patches.

    Displacement functions are shared across patch joins (C^0): the last
    function of patch l is the first of patch l+1.  Traction functions are
    numbered per patch.
    """

    def __init__(self, patches: Sequence[SubparametricPatch], tol: float = 1e-10):
        self.patches = list(patches)
        if not self.patches:
            raise ConstructionError("no patches")
        L = len(self.patches)
        scale = max(np.ptp(p.geometry.control_points, axis=0).max() for p in self.patches)
        for l, p in enumerate(self.patches):
            q = self.patches[(l + 1) % L]
            end = p.geometry.points([p.geometry.knot_vector.upper])[0]
            start = q.geometry.points([q.geometry.knot_vector.lower])[0]
            if np.linalg.norm(end - start) > tol * scale:
                raise ConstructionError(f"boundary not closed between patch {l} and {(l + 1) % L}")
        counts = [p.displacement.count for p in self.patches]
        starts = np.concatenate([[0], np.cumsum([c - 1 for c in counts])])
        self.n_disp = int(starts[-1])
        self.disp_map = []
        for l, c in enumerate(counts):
            m = starts[l] + np.arange(c)
            m[-1] = starts[(l + 1) % L] if l + 1 < L else 0
            self.disp_map.append(m)
        tc = [p.traction.count for p in self.patches]
        ts = np.concatenate([[0], np.cumsum(tc)])
        self.n_trac = int(ts[-1])
        self.trac_map = [ts[l] + np.arange(c) for l, c in enumerate(tc)]
        self._layout()

    # -- layout -----------------------------------------------------------

    def _layout(self):
        disp_owner = [[] for _ in range(self.n_disp)]
        for l, p in enumerate(self.patches):
            for k, j in enumerate(self.disp_map[l]):
                disp_owner[j].append((l, k))
        self.disp_owner = disp_owner
        unknown_disp = [j for j in range(self.n_disp)
                        if all(self.patches[l].bc_type == NEUMANN for l, _ in disp_owner[j])]
        unknown_trac = [int(j) for l, p in enumerate(self.patches) if p.bc_type == DIRICHLET
                        for j in self.trac_map[l]]
        self.unknown_disp = np.array(unknown_disp, dtype=int)
        self.unknown_trac = np.array(unknown_trac, dtype=int)
        self.known_disp = np.setdiff1d(np.arange(self.n_disp), self.unknown_disp)
        self.known_trac = np.setdiff1d(np.arange(self.n_trac), self.unknown_trac)
        hom_d = {j for j in self.known_disp
                 if all(self.patches[l].homogeneous for l, _ in disp_owner[j]
                        if self.patches[l].bc_type == DIRICHLET)}
        hom_t = {int(j) for l, p in enumerate(self.patches) if p.bc_type == NEUMANN and p.homogeneous
                 for j in self.trac_map[l]}
        self.active_known_disp = np.array([j for j in self.known_disp if j not in hom_d], dtype=int)
        self.active_known_trac = np.array([j for j in self.known_trac if j not in hom_t], dtype=int)

    @property
    def n_unknowns(self) -> int:
        """Unknown basis functions (one collocation point each)."""
        return len(self.unknown_trac) + len(self.unknown_disp)

    @property
    def n_known_active(self) -> int:
        return len(self.active_known_disp) + len(self.active_known_trac)

    # -- collocation ------------------------------------------------------

    def collocation_points(self) -> CollocationSet:
        """One point per unknown, in unknown order (tractions first).

        Displacement anchors at patch joins carry both pre-images.
        """
        anchors = {(l, name): field_anchors(p, name)
                   for l, p in enumerate(self.patches) for name in ("displacement", "traction")}
        out = []
        for j in self.unknown_trac:
            l = self.trac_patch(j)
            u = anchors[(l, "traction")][int(j - self.trac_map[l][0])]
            out.append(self._point(((l, u),), "traction", j))
        for j in self.unknown_disp:
            pre = tuple((l, anchors[(l, "displacement")][k]) for l, k in self.disp_owner[j])
            out.append(self._point(pre, "displacement", j))
        X = np.array([p.x for p in out]).reshape(-1, 2)
        if len(X) > 1:
            d = np.hypot(X[:, None, 0] - X[None, :, 0], X[:, None, 1] - X[None, :, 1])
            np.fill_diagonal(d, np.inf)
            if d.min() <= 1e-12 * np.ptp(X, axis=0).max():
                i, k = np.unravel_index(np.argmin(d), d.shape)
                raise ConstructionError(f"collocation points {i} and {k} coincide")
        return CollocationSet(out)

    def _point(self, pre, name, j):
        l, u = pre[0]
        x = self.patches[l].geometry.points([u])[0]
        return CollocationPoint(x, pre, name, int(j))

    def trac_patch(self, j) -> int:
        return int(np.searchsorted([m[0] for m in self.trac_map], j, side="right") - 1)

    # -- coefficient bookkeeping ------------------------------------------

    def known_coefficients(self):
        """Global known displacement and traction coefficients ``(n, 2)``."""
        ud = np.zeros((self.n_disp, 2))
        td = np.zeros((self.n_trac, 2))
        for l, p in enumerate(self.patches):
            if p.bc_type == DIRICHLET:
                if not p.homogeneous:
                    c = project_known_data(p, name="displacement")
                    for k, j in enumerate(self.disp_map[l]):
                        ud[j] = c[k]
            elif not p.homogeneous:
                td[self.trac_map[l]] = project_known_data(p, name="traction")
        return ud, td

    def patch_coefficients(self, name: str, coef: np.ndarray, l: int) -> np.ndarray:
        m = self.disp_map[l] if name == "displacement" else self.trac_map[l]
        return coef[m]

    def field_values(self, name: str, coef: np.ndarray, l: int, u) -> np.ndarray:
        """Field with global coefficients ``coef`` evaluated on patch ``l``."""
        B = basis_matrix(self.patches[l].basis(name), u)
        return B @ self.patch_coefficients(name, coef, l)

    def elements(self):
        """Integration elements ``(patch, a, b)``: spans of the merged breakpoints."""
        out = []
        for l, p in enumerate(self.patches):
            bp = p.breakpoints()
            out += [(l, a, b) for a, b in zip(bp[:-1], bp[1:])]
        return out

    def total_length(self) -> float:
        from .quadrature import QuadratureConfig, integrate_adaptive
        cfg = QuadratureConfig(eps_q=1e-12)
        return sum(integrate_adaptive(lambda u, c=p.geometry: c.evaluate(u)[2], a, b, cfg)
                   for p in self.patches for a, b in zip(p.breakpoints()[:-1], p.breakpoints()[1:]))

    def signed_area(self) -> float:
        """Shoelace area of the closed boundary (positive when counter-clockwise)."""
        from .quadrature import gauss_rule
        xg, wg = gauss_rule(16)
        area = 0.0
        for l, a, b in self.elements():
            u = 0.5 * (a + b) + 0.5 * (b - a) * xg
            x, t, _ = self.patches[l].geometry.evaluate(u)
            area += 0.5 * (b - a) * np.sum(wg * 0.5 * (x[:, 0] * t[:, 1] - x[:, 1] * t[:, 0]))
        return float(area)


def collocation_points(patches: Sequence[SubparametricPatch]) -> CollocationSet:
    return Discretisation(patches).collocation_points()
