"""Collocation assembly of the single and double layer blocks.

The strongly singular part of the double layer is never integrated
directly.  For a collocation point ``x_i`` and displacement function
``phi_j``::

    K[i, j] = sum_{e not containing x_i} int_e T phi_j
            + sum_{e containing x_i}     int_e T (phi_j - phi_j(x_i))
            + phi_j(x_i) (c_rb - S_i)

with ``S_i`` the integral of ``T`` over all elements not containing
``x_i``.  Because the displacement basis is a partition of unity, every
row of ``K`` then sums to ``c_rb``: zero for a bounded domain, the identity
for the exterior of a hole (clockwise boundary).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .kernels import Material
from .nurbs import basis_funs, basis_matrix
from .patches import CollocationSet, Discretisation
from .quadrature import (
    QuadratureConfig, QuadratureError, gauss_rule, integrate_pieces, singular_pieces,
)

log = logging.getLogger(__name__)


class AssemblyError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# kernels on difference vectors (no argument checks; hot path)


def _U(mat: Material, dx, dy):
    r2 = dx * dx + dy * dy
    c = 1.0 / (8.0 * np.pi * mat.mu * (1.0 - mat.nu))
    diag = -0.5 * (3.0 - 4.0 * mat.nu) * np.log(r2)
    off = c * dx * dy / r2
    out = np.empty(dx.shape + (2, 2))
    out[..., 0, 0] = c * (diag + dx * dx / r2)
    out[..., 1, 1] = c * (diag + dy * dy / r2)
    out[..., 0, 1] = off
    out[..., 1, 0] = off
    return out


def _T(mat: Material, dx, dy, nx, ny):
    r = np.sqrt(dx * dx + dy * dy)
    rx, ry = dx / r, dy / r
    a = 1.0 - 2.0 * mat.nu
    f = -1.0 / (4.0 * np.pi * (1.0 - mat.nu) * r)
    drdn = rx * nx + ry * ny
    skew = a * (rx * ny - ry * nx)
    sym = 2.0 * drdn * rx * ry
    out = np.empty(dx.shape + (2, 2))
    out[..., 0, 0] = f * drdn * (a + 2.0 * rx * rx)
    out[..., 1, 1] = f * drdn * (a + 2.0 * ry * ry)
    out[..., 0, 1] = f * (sym - skew)
    out[..., 1, 0] = f * (sym + skew)
    return out


# ---------------------------------------------------------------------------
# integration engine


@dataclass
class Element:
    patch: int
    a: float
    b: float
    dofs: dict  # field name -> global indices of the local functions
    geo: np.ndarray  # (deg+1, 3) monomial coefficients of (w x, w y, w) in t
    poly: dict  # field name -> ((deg+1, nloc) coefficients of N, local weights)
    deg: int = 0
    diam: float = 0.0
    samples: np.ndarray = None


def local_polynomials(basis, span, a, b):
    """Monomial coefficients in ``t`` in [-1, 1] of the ``p+1`` B-splines that
    are non-zero on ``[a, b]`` (exact: they are polynomials there)."""
    p = basis.order
    t = np.cos(np.pi * (np.arange(p + 1) + 0.5) / (p + 1))
    u = 0.5 * (a + b) + 0.5 * (b - a) * t
    N = basis_funs(basis.knot_vector, u, span)[1]
    return np.linalg.solve(np.vander(t, p + 1, increasing=True), N)


def _powers(t, deg):
    P = np.empty((len(t), deg + 1))
    dP = np.zeros((len(t), deg + 1))
    P[:, 0] = 1.0
    for k in range(1, deg + 1):
        P[:, k] = P[:, k - 1] * t
        dP[:, k] = k * P[:, k - 1]
    return P, dP


@dataclass
class Nodes:
    u: np.ndarray
    y: np.ndarray
    n: np.ndarray
    jw: np.ndarray
    vals: dict  # field name -> (G, nloc)


FIELD_OF = {"V": "traction", "K": "displacement", "T1": None}


class Engine:
    """Integrals of kernel times basis function over elements, for a fixed
    set of evaluation points.

    ``preimages[i]`` lists ``(patch, u)`` for points on the boundary and is
    empty for points off the boundary.
    """

    def __init__(self, disc: Discretisation, material: Material, config: QuadratureConfig,
                 points: np.ndarray, preimages: Sequence[Sequence] = None):
        self.disc = disc
        self.material = material
        self.config = config
        self.X = np.asarray(points, dtype=float).reshape(-1, 2)
        self.pre = [tuple(p) for p in preimages] if preimages is not None else [()] * len(self.X)
        self.c_rb = np.eye(2) if disc.signed_area() < 0 else np.zeros((2, 2))
        self._nodes = {}
        self.elements = [self._element(l, a, b) for l, a, b in disc.elements()]
        self._index_elements()
        self._singular_map()
        self._samples = np.array([el.samples for el in self.elements])
        self._diam = np.array([el.diam for el in self.elements])
        self._stack_cache = {}
        self.S = None

    @classmethod
    def for_collocation(cls, disc, material, config, colloc: Optional[CollocationSet] = None):
        colloc = colloc or disc.collocation_points()
        return cls(disc, material, config, colloc.X, [p.preimages for p in colloc.points])

    # -- setup ------------------------------------------------------------

    def _element(self, l, a, b):
        p = self.disc.patches[l]
        mid = 0.5 * (a + b)
        dofs, poly = {}, {}
        for name, gmap in (("displacement", self.disc.disp_map[l]), ("traction", self.disc.trac_map[l])):
            basis = p.basis(name)
            s = basis.knot_vector.find_span(mid)
            loc = slice(s - basis.order, s + 1)
            dofs[name] = np.asarray(gmap[loc])
            poly[name] = (local_polynomials(basis, s, a, b), np.asarray(basis.weights)[loc])
        g = p.geometry
        s = g.knot_vector.find_span(mid)
        loc = slice(s - g.order, s + 1)
        Pw = g.homogeneous[loc]
        el = Element(l, a, b, dofs, local_polynomials(g.basis, s, a, b) @ Pw, poly)
        el.deg = max([len(el.geo)] + [len(c) for c, _ in poly.values()]) - 1
        pts = self._eval(el, np.array([a, mid, b]))[0]
        el.diam = max(np.linalg.norm(pts[0] - pts[1]), np.linalg.norm(pts[1] - pts[2]),
                      np.linalg.norm(pts[0] - pts[2]))
        el.samples = self._eval(el, np.linspace(a, b, 5))[0]
        return el

    def _index_elements(self):
        self.support = {"displacement": [[] for _ in range(self.disc.n_disp)],
                        "traction": [[] for _ in range(self.disc.n_trac)]}
        for e, el in enumerate(self.elements):
            for name in self.support:
                for j in el.dofs[name]:
                    self.support[name][j].append(e)
        self.patch_elements = {}
        for e, el in enumerate(self.elements):
            self.patch_elements.setdefault(el.patch, []).append(e)

    def _singular_map(self):
        """Per element: ``{point: u0}`` for points whose pre-image lies in it,
        and per point the non-zero displacement functions at the point."""
        self.sing = [dict() for _ in self.elements]
        self.phi_at = []
        for i, pre in enumerate(self.pre):
            for l, u in pre:
                for e in self.patch_elements[l]:
                    el = self.elements[e]
                    if el.a <= u <= el.b:
                        if i in self.sing[e]:
                            raise AssemblyError(f"point {i} has two pre-images in element {e}")
                        self.sing[e][i] = u
            vals = {}
            if pre:
                l, u = pre[0]
                row = basis_matrix(self.disc.patches[l].displacement, [u])[0]
                for k in np.nonzero(row)[0]:
                    vals[int(self.disc.disp_map[l][k])] = row[k]
            self.phi_at.append(vals)

    # -- nodes ------------------------------------------------------------

    def _eval(self, el, u, fields=("displacement", "traction")):
        """Points, unit normals, Jacobians and local rational basis values."""
        if not isinstance(el, Element):
            el = self.elements[el]
        h = 2.0 / (el.b - el.a)
        t = (np.asarray(u, dtype=float) - 0.5 * (el.a + el.b)) * h
        P, dP = _powers(t, el.deg)
        ng = len(el.geo)
        H = P[:, :ng] @ el.geo
        dH = (dP[:, :ng] @ el.geo) * h
        w = H[:, 2:3]
        y = H[:, :2] / w
        tan = (dH[:, :2] - y * dH[:, 2:3]) / w
        J = np.hypot(tan[:, 0], tan[:, 1])
        n = np.column_stack([tan[:, 1], -tan[:, 0]]) / J[:, None]
        vals = {}
        for name in fields:
            C, wl = el.poly[name]
            Nw = (P[:, : len(C)] @ C) * wl
            vals[name] = Nw / Nw.sum(axis=1, keepdims=True)
        return y, n, J, vals

    def nodes(self, e, G) -> Nodes:
        key = (e, G)
        if key not in self._nodes:
            el = self.elements[e]
            x, w = gauss_rule(G)
            half = 0.5 * (el.b - el.a)
            u = 0.5 * (el.a + el.b) + half * x
            y, n, J, vals = self._eval(e, u)
            self._nodes[key] = Nodes(u, y, n, w * half * J, vals)
        return self._nodes[key]

    def _kernel(self, kind, x, y, n):
        dx = y[..., 0] - x[..., 0]
        dy = y[..., 1] - x[..., 1]
        if kind == "V":
            return _U(self.material, dx, dy)
        return _T(self.material, dx, dy, n[..., 0], n[..., 1])

    # -- element integrals ------------------------------------------------

    def element_integrals(self, e: int, rows: np.ndarray, kind: str) -> np.ndarray:
        """``(len(rows), 2, 2, nloc)`` integrals over element ``e``.

        ``kind``: ``V`` (U times traction functions), ``K`` (T times
        displacement functions, singular rows regularised) or ``T1`` (T
        alone; zero on rows whose point lies in the element).
        """
        rows = np.asarray(rows, dtype=int)
        el = self.elements[e]
        name = FIELD_OF[kind]
        nloc = 1 if name is None else len(el.dofs[name])
        out = np.zeros((len(rows), 2, 2, nloc))
        if len(rows) == 0:
            return out
        sing = self.sing[e]
        is_sing = np.array([i in sing for i in rows], dtype=bool)
        d = np.min(np.hypot(self.X[rows, None, 0] - el.samples[None, :, 0],
                            self.X[rows, None, 1] - el.samples[None, :, 1]), axis=1)
        is_near = ~is_sing & (el.diam > self.config.near_factor * d)
        regular = np.nonzero(~is_sing & ~is_near)[0]
        if len(regular):
            out[regular] = self._regular(e, rows[regular], kind, name)
        for k in np.nonzero(is_near)[0]:
            out[k] = self._near(e, rows[k], kind, name)
        if kind != "T1":
            for k in np.nonzero(is_sing)[0]:
                out[k] = self._singular(e, rows[k], sing[rows[k]], kind, name)
        return out

    def _regular(self, e, rows, kind, name):
        cfg = self.config
        X = self.X[rows]
        result = np.zeros((len(rows), 2, 2, 1 if name is None else len(self.elements[e].dofs[name])))
        active = np.arange(len(rows))
        G = cfg.g0
        prev = self._fixed(e, X, G, kind, name)
        while len(active):
            if G + cfg.g_step > cfg.g_max:
                raise QuadratureError(f"element {e}: no convergence up to G={cfg.g_max}")
            cur = self._fixed(e, X[active], G + cfg.g_step, kind, name)
            err = np.sqrt(np.sum((cur - prev) ** 2, axis=(1, 2, 3)))
            ok = err <= cfg.eps_q * np.sqrt(np.sum(cur ** 2, axis=(1, 2, 3)))
            result[active[ok]] = cur[ok]
            active = active[~ok]
            prev = cur[~ok]
            G += cfg.g_step
        return result

    # -- one point against many elements -----------------------------------

    def _stacked(self, elems, G):
        key = (elems, G)
        hit = self._stack_cache.get(key)
        if hit is None:
            nds = [self.nodes(e, G) for e in elems]
            hit = (np.concatenate([nd.y for nd in nds]), np.concatenate([nd.n for nd in nds]),
                   {name: np.concatenate([nd.vals[name] * nd.jw[:, None] for nd in nds])
                    for name in ("displacement", "traction")},
                   np.concatenate([nd.jw for nd in nds])[:, None])
            if len(self._stack_cache) > 4096:
                self._stack_cache.clear()
            self._stack_cache[key] = hit
        return hit

    def _fixed_many(self, elems, x, G, kind, name):
        y, n, vals, jw = self._stacked(elems, G)
        ker = self._kernel(kind, x[None], y, n)  # (E*G, 2, 2)
        v = jw if name is None else vals[name]
        prod = ker[:, :, :, None] * v[:, None, None, :]
        return prod.reshape(len(elems), G, 2, 2, -1).sum(axis=1)

    def point_integrals(self, i: int, elems, kind: str) -> dict:
        """``{e: (2, 2, nloc)}`` integrals over ``elems`` for point ``i``;
        regular elements are integrated together."""
        name = FIELD_OF[kind]
        x = self.X[i]
        elems = np.asarray(elems, dtype=int)
        out = {}
        d = np.min(np.hypot(self._samples[elems, :, 0] - x[0], self._samples[elems, :, 1] - x[1]), axis=1)
        special = np.array([i in self.sing[e] for e in elems], dtype=bool) | \
            (self._diam[elems] > self.config.near_factor * d)
        for e in elems[special]:
            out[int(e)] = self.element_integrals(int(e), np.array([i]), kind)[0]
        regular = elems[~special]
        if len(regular) == 0:
            return out
        nloc = np.array([1 if name is None else len(self.elements[e].dofs[name]) for e in regular])
        cfg = self.config
        for k in np.unique(nloc):
            group = regular[nloc == k]
            active = np.arange(len(group))
            G = cfg.g0
            prev = self._fixed_many(tuple(group), x, G, kind, name)
            while len(active):
                if G + cfg.g_step > cfg.g_max:
                    raise QuadratureError(f"point {i}: no convergence up to G={cfg.g_max}")
                cur = self._fixed_many(tuple(group[active]), x, G + cfg.g_step, kind, name)
                err = np.sqrt(np.sum((cur - prev) ** 2, axis=(1, 2, 3)))
                ok = err <= cfg.eps_q * np.sqrt(np.sum(cur ** 2, axis=(1, 2, 3)))
                for a, c in zip(active[ok], cur[ok]):
                    out[int(group[a])] = c
                active = active[~ok]
                prev = cur[~ok]
                G += cfg.g_step
        return out

    def _fixed(self, e, X, G, kind, name):
        nd = self.nodes(e, G)
        ker = self._kernel(kind, X[:, None, :], nd.y[None], nd.n[None])  # (R, G, 2, 2)
        if name is None:
            vals = nd.jw[:, None]
        else:
            vals = nd.vals[name] * nd.jw[:, None]
        R = len(X)
        return (ker.transpose(0, 2, 3, 1).reshape(R * 4, G) @ vals).reshape(R, 2, 2, -1)

    def _integrand(self, e, x, kind, name, phi0=None):
        fields = () if name is None else (name,)

        def f(u):
            y, n, J, vals = self._eval(e, u, fields)
            ker = self._kernel(kind, x[None], y, n)
            if name is None:
                v = J[:, None]
            else:
                v = vals[name]
                if phi0 is not None:
                    v = v - phi0
                v = v * J[:, None]
            return ker[:, :, :, None] * v[:, None, None, :]
        return f

    def _near(self, e, i, kind, name):
        x = self.X[i]
        pieces = [(a, b, None, 0.0) for a, b in self.near_parts(e, x)]
        return integrate_pieces(self._integrand(e, x, kind, name), pieces, self.config)[0]

    def near_parts(self, e, x, max_depth=60):
        """Bisection of element ``e`` until every part has chord diameter
        <= near_factor * distance to ``x`` (distance over 5 samples)."""
        el = self.elements[e]
        factor = self.config.near_factor
        out = []
        stack = [(el.a, el.b, 0)]
        s5 = np.linspace(0.0, 1.0, 5)
        while stack:
            lo, hi, depth = stack.pop()
            pts = self._eval(el, lo + (hi - lo) * s5, ())[0]
            diam = max(np.linalg.norm(pts[0] - pts[2]), np.linalg.norm(pts[2] - pts[4]),
                       np.linalg.norm(pts[0] - pts[4]))
            dist = np.min(np.hypot(pts[:, 0] - x[0], pts[:, 1] - x[1]))
            if depth >= max_depth or diam <= factor * dist:
                out.append((lo, hi))
            else:
                mid = 0.5 * (lo + hi)
                stack.append((mid, hi, depth + 1))
                stack.append((lo, mid, depth + 1))
        return sorted(out)

    def _singular(self, e, i, u0, kind, name):
        el = self.elements[e]
        x = self.X[i]
        phi0 = None
        if kind == "K":
            phi0 = self._eval(el, [u0], (name,))[3][name][0]
        pieces = singular_pieces(el.a, el.b, u0, self.config)
        return integrate_pieces(self._integrand(e, x, kind, name, phi0), pieces, self.config)[0]

    # -- blocks -----------------------------------------------------------

    def rigid_body_sums(self, rows=None) -> np.ndarray:
        """``S_i``: integral of T over all elements not containing point i."""
        rows = np.arange(len(self.X)) if rows is None else np.asarray(rows)
        S = np.zeros((len(rows), 2, 2))
        for e in range(len(self.elements)):
            S += self.element_integrals(e, rows, "T1")[..., 0]
        return S

    def ensure_sums(self):
        if self.S is None:
            self.S = self.rigid_body_sums()
        return self.S

    def columns(self, rows, name: str, dofs, closure: bool = True) -> np.ndarray:
        """``(len(rows), len(dofs), 2, 2)`` operator entries for a column set.

        ``name`` selects V (traction functions) or K (displacement functions,
        with the rigid-body closure applied when ``closure`` is set).
        """
        rows = np.asarray(rows, dtype=int)
        dofs = np.asarray(dofs, dtype=int)
        kind = "V" if name == "traction" else "K"
        n_all = self.disc.n_disp if name == "displacement" else self.disc.n_trac
        col_of = np.full(n_all, -1)
        col_of[dofs] = np.arange(len(dofs))
        pos = {int(j): c for c, j in enumerate(dofs)}
        out = np.zeros((len(rows), len(dofs), 2, 2))
        elems = sorted({e for j in dofs for e in self.support[name][j]})
        single = self.point_integrals(int(rows[0]), elems, kind) if len(rows) == 1 else None
        for e in elems:
            cols = col_of[self.elements[e].dofs[name]]
            keep = cols >= 0
            q = single[e][None] if single is not None else self.element_integrals(e, rows, kind)
            out[:, cols[keep]] += q[..., keep].transpose(0, 3, 1, 2)
        if kind == "K" and closure:
            S = self.ensure_sums()
            for r, i in enumerate(rows):
                for j, v in self.phi_at[i].items():
                    if j in pos:
                        out[r, pos[j]] += v * (self.c_rb - S[i])
        return out

    def dense(self, with_V=True, with_K=True):
        """Full V ``(N, n_trac, 2, 2)`` and closed K ``(N, n_disp, 2, 2)``.

        ``S`` is accumulated from the same element integrals as K, so row sums
        of K equal ``c_rb`` to rounding.
        """
        N = len(self.X)
        rows = np.arange(N)
        V = np.zeros((N, self.disc.n_trac, 2, 2)) if with_V else None
        K = np.zeros((N, self.disc.n_disp, 2, 2)) if with_K else None
        S = np.zeros((N, 2, 2))
        for e, el in enumerate(self.elements):
            if with_V:
                q = self.element_integrals(e, rows, "V")
                V[:, el.dofs["traction"]] += q.transpose(0, 3, 1, 2)
            if with_K:
                q = self.element_integrals(e, rows, "K")
                K[:, el.dofs["displacement"]] += q.transpose(0, 3, 1, 2)
                mask = np.ones(N, dtype=bool)
                mask[list(self.sing[e])] = False
                S[mask] += q[mask].sum(axis=-1)
        if with_K:
            self.S = S
            for i in range(N):
                for j, v in self.phi_at[i].items():
                    K[i, j] += v * (self.c_rb - S[i])
        return V, K


# ---------------------------------------------------------------------------
# block system


def direction_major(B: np.ndarray) -> np.ndarray:
    """``(n, m, 2, 2)`` point blocks to a ``(2n, 2m)`` matrix ordered by
    spatial direction first."""
    n, m = B.shape[:2]
    return B.transpose(2, 0, 3, 1).reshape(2 * n, 2 * m)


def interleaved(B: np.ndarray) -> np.ndarray:
    n, m = B.shape[:2]
    return B.transpose(0, 2, 1, 3).reshape(2 * n, 2 * m)


@dataclass
class StorageReport:
    dense_bytes: int
    actual_bytes: int
    c_sub: float = 1.0

    def __post_init__(self):
        if self.actual_bytes <= 0:
            raise ValueError("actual storage must be positive")

    @property
    def c_H(self) -> float:
        return self.dense_bytes / self.actual_bytes

    @property
    def c_tot(self) -> float:
        return self.c_H * self.c_sub


class BlockSystem:
    """``L z = R g`` with ``L = [V_.D, -K_.N]`` and ``R = [K_.D, -V_.N]``.

    Unknowns ``z``: Dirichlet tractions then Neumann displacements, stored
    direction-major.  Known coefficients ``g``: non-homogeneous Dirichlet
    displacements then Neumann tractions, likewise.
    """

    def __init__(self, disc: Discretisation, L: np.ndarray, R: np.ndarray, g: np.ndarray, engine=None):
        self.disc = disc
        self.L = L
        self.R = R
        self.g = g
        self.engine = engine

    @property
    def n(self) -> int:
        return self.L.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[1]

    def rhs(self) -> np.ndarray:
        """``R g`` accumulated column by column in ascending order."""
        out = np.zeros(self.R.shape[0])
        for c in range(self.R.shape[1]):
            out += self.R[:, c] * self.g[c]
        return out

    def solve(self, rhs: Optional[np.ndarray] = None) -> np.ndarray:
        import scipy.linalg
        return scipy.linalg.solve(self.L, self.rhs() if rhs is None else rhs)

    def fields(self, z: np.ndarray):
        """Global displacement and traction coefficients ``(n, 2)`` combining
        the solution ``z`` with the known data."""
        return fields_from_solution(self.disc, z)


def fields_from_solution(disc: Discretisation, z: np.ndarray):
    ud, td = disc.known_coefficients()
    n = disc.n_unknowns
    zz = np.column_stack([z[:n], z[n:]])
    nt = len(disc.unknown_trac)
    td[disc.unknown_trac] = zz[:nt]
    ud[disc.unknown_disp] = zz[nt:]
    return ud, td


def known_vector(disc: Discretisation) -> np.ndarray:
    ud, td = disc.known_coefficients()
    k = np.vstack([ud[disc.active_known_disp], td[disc.active_known_trac]])
    return np.concatenate([k[:, 0], k[:, 1]])


def build_system(disc: Discretisation, material: Material, config: QuadratureConfig,
                 engine: Optional[Engine] = None) -> BlockSystem:
    """Dense assembly of the mixed collocation system."""
    engine = engine or Engine.for_collocation(disc, material, config)
    V, K = engine.dense()
    Lb = np.concatenate([V[:, disc.unknown_trac], -K[:, disc.unknown_disp]], axis=1)
    Rb = np.concatenate([K[:, disc.active_known_disp], -V[:, disc.active_known_trac]], axis=1)
    sys = BlockSystem(disc, direction_major(Lb), direction_major(Rb), known_vector(disc), engine)
    sys.V, sys.K = V, K
    return sys


def known_count(disc: Discretisation) -> int:
    """Non-homogeneous known coefficients (scalar, both directions)."""
    return 2 * disc.n_known_active


def measure_c_sub(sub: Discretisation, iso: Discretisation) -> StorageReport:
    """Right-hand-side storage of the isoparametric layout relative to the
    subparametric one; homogeneous data excluded from both."""
    if sub.n_unknowns != iso.n_unknowns:
        raise ValueError("layouts must share the unknown field")
    n = 2 * sub.n_unknowns
    s_sub = 8 * n * known_count(sub)
    s_iso = 8 * n * known_count(iso)
    if s_sub == 0:
        return StorageReport(s_iso or 1, s_iso or 1, 1.0)
    return StorageReport(s_sub, s_sub, s_iso / s_sub)
