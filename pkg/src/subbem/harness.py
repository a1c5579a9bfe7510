"""Manufactured-solution convergence studies and compression reporting.

Exterior problems (direct tests) live outside a hole bounded by a clockwise
curve; the sources sit inside the hole.  Indirect tests solve for a density
whose potential reproduces a source field inside the hole; the sources
then sit outside the curve and the check points inside.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from .assembly import Engine, build_system, direction_major, fields_from_solution
from .geometry import builtin
from .kernels import Material, kelvin_T, kelvin_U
from .nurbs import DomainError, elevate_basis
from .patches import (
    DIRICHLET, NEUMANN, Discretisation, SubparametricPatch, build_patch, refine_unknown_field,
)
from .quadrature import QuadratureConfig, gauss_rule, integrate_pieces

log = logging.getLogger(__name__)

CSV_COLUMNS = ("level", "h", "n", "m", "e_rel", "rate", "c_H", "c_sub", "c_tot", "seconds")
DEFAULT_MATERIAL = Material(10000.0, 0.25)
KINDS = ("indirect_V", "indirect_K", "direct_neumann", "direct_dirichlet")


# ---------------------------------------------------------------------------
# manufactured fields


@dataclass
class TestSetting:
    __test__ = False  # not a pytest class

    kind: str
    sources: list  # [(x~ (2,), force (2,))]
    checks: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown test kind {self.kind!r}; expected one of {KINDS}")
        if not self.sources:
            raise DomainError("at least one source point is required")

    def u(self, mat: Material, y) -> np.ndarray:
        y = np.asarray(y, dtype=float).reshape(-1, 2)
        return sum(np.einsum("i,mij->mj", f, kelvin_U(mat, x, y)) for x, f in self.sources)

    def t(self, mat: Material, y, n) -> np.ndarray:
        y = np.asarray(y, dtype=float).reshape(-1, 2)
        return sum(np.einsum("i,mij->mj", f, kelvin_T(mat, x, y, n)) for x, f in self.sources)


_FORCES = [(1.0, 0.3), (-0.5, 1.0), (0.2, -0.8), (0.7, 0.6)]


def boundary_samples(curves, per_patch: int = 200) -> np.ndarray:
    """Closed polyline through points sampled on every patch."""
    pts = []
    for c in curves:
        kv = c.knot_vector
        pts.append(c.points(np.linspace(kv.lower, kv.upper, per_patch, endpoint=False)))
    return np.vstack(pts)


def winding_number(poly: np.ndarray, x) -> float:
    d = poly - np.asarray(x, dtype=float)
    ang = np.arctan2(d[:, 1], d[:, 0])
    return float(np.sum(np.angle(np.exp(1j * np.diff(np.append(ang, ang[0]))))) / (2 * np.pi))


def inside_curve(curves, x) -> bool:
    """True when ``x`` lies in the region enclosed by the curve chain."""
    return abs(winding_number(boundary_samples(curves), x)) > 0.5


def _curve_extent(curves):
    P = boundary_samples(curves)
    centre = 0.5 * (P.min(axis=0) + P.max(axis=0))
    r = np.hypot(*(P - centre).T)
    return centre, r.min(), r.max()


def default_setting(kind: str, curves) -> TestSetting:
    """Sources spread angularly: inside the hole for direct tests, about one
    radius outside the curve for indirect ones, whose check points lie in
    the hole."""
    centre, r_in, r_out = _curve_extent(curves)
    ang = [0.3, 2.0, 3.6, 5.1]
    direct = kind.startswith("direct")
    rad = 0.45 * r_in if direct else 2.0 * r_out
    src = [(centre + rad * np.array([math.cos(a), math.sin(a)]), np.array(f)) for a, f in zip(ang, _FORCES)]
    checks = np.zeros((0, 2)) if direct else np.array(
        [centre + 0.5 * r_in * np.array([math.cos(a), math.sin(a)])
         for a in np.linspace(0, 2 * np.pi, 8, endpoint=False)])
    setting = TestSetting(kind, src, checks)
    validate_setting(setting, curves)
    return setting


def validate_setting(setting: TestSetting, curves):
    """Sources and check points on the correct sides of the curve."""
    poly = boundary_samples(curves)
    direct = setting.kind.startswith("direct")
    for x, _ in setting.sources:
        if (abs(winding_number(poly, x)) > 0.5) != direct:
            raise DomainError(f"source point {tuple(x)} on the wrong side of the boundary")
    for x in setting.checks:
        if abs(winding_number(poly, x)) < 0.5:
            raise DomainError(f"check point {tuple(x)} outside the enclosed region")
    if not direct and len(setting.checks) == 0:
        raise DomainError("indirect tests need check points")


# ---------------------------------------------------------------------------
# discretisations


def set_field_order(patch: SubparametricPatch, p: int, known_boost: int = 0) -> SubparametricPatch:
    """Raise both field bases to order ``p`` (never below the geometry); the
    known field gets ``known_boost`` further orders."""
    q = patch.displacement.order
    if p < q:
        raise DomainError(f"field order {p} below geometry order {q}")
    raise_by = {patch.unknown_field: p - q, patch.known_field: p - q + known_boost}
    return replace(patch, **{n: elevate_basis(patch.basis(n), k) for n, k in raise_by.items() if k})


def discretise(curves, bc: str, p: int, level: int, known=None, complex_data=True,
               homogeneous=False, strategy="uniform_midpoint_insertion", lockstep=False,
               known_boost: int = 0) -> Discretisation:
    patches = [set_field_order(build_patch(c, bc, known, homogeneous=homogeneous,
                                           complex_data=complex_data), p, known_boost) for c in curves]
    for _ in range(level):
        patches = [refine_unknown_field(q, strategy, lockstep=lockstep) for q in patches]
    return Discretisation(patches)


def element_lengths(disc: Discretisation, name: Optional[str] = None) -> np.ndarray:
    """Arc lengths of the non-zero spans of a field basis (the unknown
    field of each patch by default)."""
    xg, wg = gauss_rule(24)
    out = []
    for p in disc.patches:
        basis = p.basis(name or p.unknown_field)
        for _, a, b in basis.knot_vector.spans():
            u = 0.5 * (a + b) + 0.5 * (b - a) * xg
            out.append(0.5 * (b - a) * np.sum(wg * p.geometry.evaluate(u)[2]))
    return np.array(out)


def mesh_parameter_from_lengths(lengths) -> float:
    lengths = np.asarray(lengths, dtype=float)
    return float(lengths.max() / lengths.sum())


def mesh_parameter(disc: Discretisation, name: Optional[str] = None) -> float:
    """``h = (largest element length / total length)``; exponent 1/(d-1) = 1."""
    return mesh_parameter_from_lengths(element_lengths(disc, name))


# ---------------------------------------------------------------------------
# errors


def boundary_l2_error(disc: Discretisation, name: str, coef: np.ndarray, exact: Callable,
                      config: QuadratureConfig, patches: Optional[Sequence[int]] = None):
    """Relative L2 error of a field against ``exact(points, normals)``."""
    from .patches import curve_frame
    from .nurbs import basis_matrix
    cfg = QuadratureConfig(eps_q=max(config.eps_q / 10, 1e-14), g0=config.g0, g_max=config.g_max)
    num = den = 0.0
    for l, p in enumerate(disc.patches):
        if patches is not None and l not in patches:
            continue
        c = disc.patch_coefficients(name, coef, l)
        basis = p.basis(name)

        def f(u):
            x, n = curve_frame(p.geometry, u)
            J = p.geometry.evaluate(u)[2]
            ex = exact(x, n)
            e = basis_matrix(basis, u) @ c - ex
            return np.column_stack([np.sum(e * e, axis=1) * J, np.sum(ex * ex, axis=1) * J])

        # integrate per non-zero span of the field
        pieces = [(a, b, None, 0.0) for _, a, b in basis.knot_vector.spans()]
        v, _ = integrate_pieces(f, pieces, cfg, atol=1e-300)
        num += v[0]
        den += v[1]
    return math.sqrt(num / den)


# ---------------------------------------------------------------------------
# reports


@dataclass
class LevelRecord:
    level: int
    h: float
    n: int
    m: int
    e_rel: Optional[float]
    rate: Optional[float] = None
    c_H: float = 1.0
    c_sub: float = 1.0
    c_tot: float = 1.0
    seconds: Optional[float] = None


@dataclass
class StudyReport:
    name: str
    records: list = field(default_factory=list)

    def add(self, rec: LevelRecord):
        if self.records:
            last = self.records[-1]
            if not rec.h < last.h or not rec.n > last.n:
                raise ValueError("levels must have decreasing h and increasing n")
        self.records.append(rec)
        self._rates()

    def _rates(self):
        recs = self.records
        for k in range(1, len(recs)):
            a, b = recs[k - 1], recs[k]
            if a.e_rel > 0 and b.e_rel > 0:
                b.rate = math.log(a.e_rel / b.e_rel) / math.log(a.h / b.h)

    @property
    def h(self):
        return np.array([r.h for r in self.records])

    @property
    def errors(self):
        return np.array([r.e_rel for r in self.records])

    def fitted_rate(self, window: int = 3) -> float:
        return fit_rate(self.h, self.errors, window)[1]

    def to_csv(self, timings: bool = False) -> str:
        return records_csv(self.records, timings)


def _num(v, fmt):
    return "" if v is None else format(v, fmt)


def records_csv(records, timings: bool = False) -> str:
    """CSV with the fixed column set; ``seconds`` stays empty unless
    ``timings`` so that repeated runs are byte-identical."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([r.level, f"{r.h:.10e}", r.n, r.m, _num(r.e_rel, ".10e"), _num(r.rate, ".6f"),
                    f"{r.c_H:.6f}", f"{r.c_sub:.6f}", f"{r.c_tot:.6f}",
                    _num(r.seconds if timings else None, ".3f")])
    return buf.getvalue()


def fit_rate(h, e, window: int = 3):
    """Pairwise rates and the least-squares slope of log e against log h
    over the last ``window`` levels."""
    h = np.asarray(h, dtype=float)
    e = np.asarray(e, dtype=float)
    if len(h) < 3 or len(h) != len(e):
        raise DomainError("rate fitting needs at least 3 levels")
    lh, le = np.log(h), np.log(e)
    pair = np.diff(le) / np.diff(lh)
    w = min(window, len(h))
    slope = np.polyfit(lh[-w:], le[-w:], 1)[0]
    return pair, float(slope)


# ---------------------------------------------------------------------------
# studies


@dataclass
class StudyConfig:
    order: int = 2
    levels: Sequence[int] = (2, 3, 4, 5)
    quadrature: QuadratureConfig = field(default_factory=lambda: QuadratureConfig(eps_q=1e-11))
    material: Material = DEFAULT_MATERIAL
    known_boost: int = 1  # extra order of manufactured known data
    backend: str = "dense"
    hmatrix: Optional[object] = None  # HConfig for the hmatrix backend


def _direct_level(disc, study: StudyConfig):
    """Solve one direct discretisation; returns ``(z, n, m, c_H)``."""
    if study.backend == "dense":
        system = build_system(disc, study.material, study.quadrature)
        return system.solve(), system.n, system.m, 1.0
    if study.backend != "hmatrix":
        raise DomainError(f"unknown backend {study.backend!r}; expected 'dense' or 'hmatrix'")
    from .hmatrix import HConfig, HSystem
    hs = HSystem(disc, study.material, study.quadrature, study.hmatrix or HConfig())
    return hs.solve(), hs.n, hs.m, hs.c_H


def run_direct_test(curves, bc: str, study: StudyConfig, setting: Optional[TestSetting] = None) -> StudyReport:
    """Exterior Neumann or Dirichlet problem with fundamental-solution data;
    relative boundary L2 error of the solved field."""
    from .assembly import measure_c_sub
    kind = "direct_neumann" if bc == NEUMANN else "direct_dirichlet"
    setting = setting or default_setting(kind, curves)
    mat = study.material
    known = (lambda x, n: setting.t(mat, x, n)) if bc == NEUMANN else (lambda x, n: setting.u(mat, x))
    report = StudyReport(f"{kind}-p{study.order}")
    for level in study.levels:
        t0 = time.perf_counter()
        disc = discretise(curves, bc, study.order, level, known, known_boost=study.known_boost)
        z, n, m, c_H = _direct_level(disc, study)
        ud, td = fields_from_solution(disc, z)
        if bc == NEUMANN:
            e = boundary_l2_error(disc, "displacement", ud, lambda x, n: setting.u(mat, x), study.quadrature)
        else:
            e = boundary_l2_error(disc, "traction", td, lambda x, n: setting.t(mat, x, n), study.quadrature)
        iso = discretise(curves, bc, study.order, level, known, known_boost=study.known_boost, lockstep=True)
        c_sub = measure_c_sub(disc, iso).c_sub
        report.add(LevelRecord(level, mesh_parameter(disc), n, m, e, c_H=c_H, c_sub=c_sub,
                               c_tot=c_H * c_sub, seconds=time.perf_counter() - t0))
        log.info("%s level %d n=%d e=%.3e", kind, level, n, e)
    return report


def run_indirect_test(curves, operator: str, study: StudyConfig,
                      setting: Optional[TestSetting] = None) -> StudyReport:
    """Density on the boundary whose potential matches a source field at
    interior check points; max-norm relative error there.  Always dense:
    these studies check the discrete operators, not the solver backend.

    ``V``: single layer density in the traction space.  ``C+K``: double
    layer density in the displacement space (closed operator).
    """
    if operator not in ("V", "C+K"):
        raise DomainError("operator must be 'V' or 'C+K'")
    kind = "indirect_V" if operator == "V" else "indirect_K"
    setting = setting or default_setting(kind, curves)
    mat = study.material
    report = StudyReport(f"{kind}-p{study.order}")
    bc = DIRICHLET if operator == "V" else NEUMANN
    for level in study.levels:
        t0 = time.perf_counter()
        disc = discretise(curves, bc, study.order, level, homogeneous=True, complex_data=False)
        colloc = disc.collocation_points()
        eng = Engine.for_collocation(disc, mat, study.quadrature, colloc)
        name = "traction" if operator == "V" else "displacement"
        dofs = disc.unknown_trac if operator == "V" else disc.unknown_disp
        if operator == "V":
            A = eng.dense(with_K=False)[0][:, dofs]
        else:
            A = eng.dense(with_V=False)[1][:, dofs]
        M = direction_major(A)
        b = setting.u(mat, colloc.X)
        rhs = np.concatenate([b[:, 0], b[:, 1]])
        z, c_H = scipy.linalg.solve(M, rhs), 1.0
        n = len(dofs)
        dens = np.column_stack([z[:n], z[n:]])
        off = Engine(disc, mat, study.quadrature, setting.checks)
        P = off.columns(np.arange(len(setting.checks)), name, dofs, closure=False)
        uh = np.einsum("ijab,jb->ia", P, dens)
        ex = setting.u(mat, setting.checks)
        e = float(np.abs(uh - ex).max() / np.abs(ex).max())
        report.add(LevelRecord(level, mesh_parameter(disc), 2 * n, 0, e, c_H=c_H, c_tot=c_H,
                               seconds=time.perf_counter() - t0))
        log.info("%s level %d n=%d e=%.3e", kind, level, 2 * n, e)
    return report


def compression_report(dense_bytes: int, h_bytes: int, c_sub: float = 1.0):
    from .assembly import StorageReport
    return StorageReport(dense_bytes, h_bytes, c_sub)


def c_sub_study(curves, p: int, levels: Sequence[int], traction=(0.0, 1.0)):
    """``c_sub`` per level for constant (common) Neumann data."""
    from .assembly import measure_c_sub
    g = lambda x, n: np.tile(np.asarray(traction, dtype=float), (len(x), 1))
    out = []
    for level in levels:
        sub = discretise(curves, NEUMANN, p, level, g, complex_data=False)
        iso = discretise(curves, NEUMANN, p, level, g, complex_data=False, lockstep=True)
        out.append(measure_c_sub(sub, iso).c_sub)
    return out


def load_curves(name_or_path, clockwise: bool = True):
    from pathlib import Path
    from .geometry import BUILTINS, load_geometry
    if name_or_path in BUILTINS:
        return builtin(name_or_path, clockwise)
    path = Path(name_or_path)
    if path.suffix in (".yaml", ".yml") and path.exists():
        return load_geometry(path)[0]
    raise KeyError(f"unknown geometry {name_or_path!r}; built-ins are {sorted(BUILTINS)}")
