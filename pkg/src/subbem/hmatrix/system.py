"""H-matrix form of the collocation system.

Rows are collocation points, columns basis functions, both direction-major.
The rigid-body closure needs the row sums ``S_i`` of the double layer over
the whole boundary; they come from an auxiliary H-matrix with one column
per element applied to a vector of ones, so no dense row ever exists.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..assembly import Engine, known_vector
from ..nurbs import bezier_segments, support_bounding_box
from ..patches import Discretisation
from .blocktree import build_block_cluster_tree
from .cluster import build_cluster_tree, directional_tree
from .gmres import GmresResult, gmres_solve
from .hmat import Generator, HMatrix, build_hmatrix, coarsen
from .lu import h_lu

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HConfig:
    eps_h: float = 1e-6
    eta: float = 1.0
    n_min: int = 8
    eps_lu: Optional[float] = 1e-1  # None: no preconditioner
    eps_s: float = 1e-6
    max_iter: int = 1000
    coarsen: bool = True

    def __post_init__(self):
        if not 0.0 < self.eps_h < 1.0:
            raise ValueError("eps_h must lie in (0, 1)")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        if self.n_min < 1:
            raise ValueError("n_min must be positive")
        if self.eps_lu is not None and not 0.0 < self.eps_lu < 1.0:
            raise ValueError("eps_lu must lie in (0, 1)")
        if not 0.0 < self.eps_s < 1.0:
            raise ValueError("eps_s must lie in (0, 1)")


# ---------------------------------------------------------------------------
# geometry of columns


def _patch_segments(disc: Discretisation):
    return [bezier_segments([p.displacement.knot_vector, p.traction.knot_vector], p.geometry)[1]
            for p in disc.patches]


def support_boxes(disc: Discretisation, name: str, dofs, segments=None) -> np.ndarray:
    """``(len(dofs), 2, 2)`` boxes of global basis functions; displacement
    functions shared at a join take the union over both patches."""
    segments = segments or _patch_segments(disc)
    out = []
    for j in np.asarray(dofs, dtype=int):
        if name == "displacement":
            owners = disc.disp_owner[j]
        else:
            l = disc.trac_patch(j)
            owners = [(l, int(j - disc.trac_map[l][0]))]
        boxes = [support_bounding_box(disc.patches[l].basis(name).knot_vector, k,
                                      disc.patches[l].geometry, segments[l]) for l, k in owners]
        out.append(np.array([np.min([b[0] for b in boxes], axis=0), np.max([b[1] for b in boxes], axis=0)]))
    return np.array(out).reshape(-1, 2, 2)


def element_boxes(engine: Engine, segments=None) -> np.ndarray:
    segments = segments or _patch_segments(engine.disc)
    out = []
    for el in engine.elements:
        pts = [c for a, b, c in segments[el.patch] if a <= el.a and el.b <= b]
        if not pts:
            raise ValueError(f"no Bezier segment covers element [{el.a}, {el.b}] of patch {el.patch}")
        out.append(np.array([pts[0].min(axis=0), pts[0].max(axis=0)]))
    return np.array(out)


# ---------------------------------------------------------------------------
# entry generators


class OperatorGenerator(Generator):
    """Direction-major entries of ``sign * V`` / ``sign * (C+K)`` columns.

    ``columns``: list of ``(field name, global dof, sign)``.  The closure
    term is added from ``S`` (``(N, 2, 2)``) when given.
    """

    def __init__(self, engine: Engine, columns, S: Optional[np.ndarray] = None):
        self.engine = engine
        self.N = len(engine.X)
        self.names = np.array([c[0] for c in columns])
        self.dofs = np.array([c[1] for c in columns], dtype=int)
        self.signs = np.array([c[2] for c in columns], dtype=float)
        self.ncol = len(columns)
        self.S = S
        self._cache = {}

    def points_block(self, pts: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """``(len(pts), len(cols), 2, 2)`` for point and scalar-column ids."""
        key = (pts.tobytes(), cols.tobytes())
        if key in self._cache:
            return self._cache[key]
        eng = self.engine
        out = np.zeros((len(pts), len(cols), 2, 2))
        for name in ("traction", "displacement"):
            sel = np.nonzero(self.names[cols] == name)[0]
            if len(sel) == 0:
                continue
            dofs = self.dofs[cols[sel]]
            out[:, sel] = eng.columns(pts, name, dofs, closure=False)
            if name == "displacement" and self.S is not None:
                pos = {int(j): c for c, j in zip(sel, dofs)}
                for r, i in enumerate(pts):
                    for j, v in eng.phi_at[i].items():
                        if j in pos:
                            out[r, pos[j]] += v * (eng.c_rb - self.S[i])
        out *= self.signs[cols][None, :, None, None]
        self._cache[key] = out
        return out

    def block(self, rows, cols):
        rows = np.asarray(rows, dtype=int)
        cols = np.asarray(cols, dtype=int)
        pi, ri = np.unique(rows % self.N, return_inverse=True)
        pc, ci = np.unique(cols % self.ncol, return_inverse=True)
        full = self.points_block(pi, pc)
        return full[ri[:, None], ci[None, :], (rows // self.N)[:, None], (cols // self.ncol)[None, :]]

    def clear(self):
        self._cache.clear()


class ElementGenerator(Generator):
    """``int_e T(x_i, y) dGamma`` per element column; zero where ``x_i``
    lies in the element."""

    def __init__(self, engine: Engine):
        self.engine = engine
        self.N = len(engine.X)
        self.E = len(engine.elements)
        self._cache = {}

    def block(self, rows, cols):
        rows = np.asarray(rows, dtype=int)
        cols = np.asarray(cols, dtype=int)
        pi, ri = np.unique(rows % self.N, return_inverse=True)
        pe, ei = np.unique(cols % self.E, return_inverse=True)
        full = self._points_block(pi, pe)
        return full[ri[:, None], ei[None, :], (rows // self.N)[:, None], (cols // self.E)[None, :]]

    def _points_block(self, pi, pe):
        key = (pi.tobytes(), pe.tobytes())
        if key in self._cache:
            return self._cache[key]
        full = np.zeros((len(pi), len(pe), 2, 2))
        if len(pi) == 1:
            vals = self.engine.point_integrals(int(pi[0]), pe, "T1")
            for c, e in enumerate(pe):
                full[0, c] = vals[int(e)][..., 0]
        else:
            for c, e in enumerate(pe):
                full[:, c] = self.engine.element_integrals(int(e), pi, "T1")[..., 0]
        self._cache[key] = full
        return full


# ---------------------------------------------------------------------------
# system


def _tree(boxes, n_min):
    return directional_tree(build_cluster_tree(boxes, n_min))


def rigid_body_sums_h(engine: Engine, cfg: HConfig, row_tree=None, segments=None) -> np.ndarray:
    """Row sums ``S_i`` via an element-column H-matrix."""
    N, E = len(engine.X), len(engine.elements)
    rows = row_tree or _tree(engine.X, cfg.n_min)
    cols = _tree(element_boxes(engine, segments), cfg.n_min)
    H = build_hmatrix(build_block_cluster_tree(rows, cols, cfg.eta), ElementGenerator(engine), cfg.eps_h)
    S = np.zeros((N, 2, 2))
    for b in range(2):
        ones = np.zeros(2 * E)
        ones[b * E:(b + 1) * E] = 1.0
        y = H @ ones
        S[:, 0, b] = y[:N]
        S[:, 1, b] = y[N:]
    return S


class HSystem:
    """``L z = R g`` with both operators in H-format."""

    def __init__(self, disc: Discretisation, material, quad_config, cfg: HConfig = HConfig(),
                 engine: Optional[Engine] = None):
        t0 = time.perf_counter()
        self.disc = disc
        self.cfg = cfg
        self.engine = engine or Engine.for_collocation(disc, material, quad_config)
        eng = self.engine
        N = len(eng.X)
        if N != disc.n_unknowns:
            raise ValueError("collocation points and unknowns differ in number")
        segments = _patch_segments(disc)
        base = build_cluster_tree(eng.X, cfg.n_min)
        self.row_tree = directional_tree(base)
        lcols = [("traction", int(j), 1.0) for j in disc.unknown_trac] + \
                [("displacement", int(j), -1.0) for j in disc.unknown_disp]
        rcols = [("displacement", int(j), 1.0) for j in disc.active_known_disp] + \
                [("traction", int(j), -1.0) for j in disc.active_known_trac]
        needs_S = any(c[0] == "displacement" for c in lcols + rcols)
        self.S = rigid_body_sums_h(eng, cfg, self.row_tree, segments) if needs_S else None
        lboxes = np.concatenate([support_boxes(disc, "traction", disc.unknown_trac, segments),
                                 support_boxes(disc, "displacement", disc.unknown_disp, segments)])
        lcol_tree = directional_tree(base.rebox(lboxes))
        genL = OperatorGenerator(eng, lcols, self.S)
        self.L = build_hmatrix(build_block_cluster_tree(self.row_tree, lcol_tree, cfg.eta), genL, cfg.eps_h)
        genL.clear()
        self.R = None
        if rcols:
            rboxes = np.concatenate([support_boxes(disc, "displacement", disc.active_known_disp, segments),
                                     support_boxes(disc, "traction", disc.active_known_trac, segments)])
            genR = OperatorGenerator(eng, rcols, self.S)
            self.R = build_hmatrix(build_block_cluster_tree(self.row_tree, _tree(rboxes, cfg.n_min), cfg.eta),
                                   genR, cfg.eps_h)
            genR.clear()
        if cfg.coarsen:
            self.L = coarsen(self.L, cfg.eps_h)
            if self.R is not None:
                self.R = coarsen(self.R, cfg.eps_h)
        self.g = known_vector(disc)
        self.assembly_seconds = time.perf_counter() - t0
        self.lu = None
        self.last = None

    @property
    def n(self) -> int:
        return self.L.shape[0]

    @property
    def m(self) -> int:
        return 0 if self.R is None else self.R.shape[1]

    def rhs(self) -> np.ndarray:
        return np.zeros(self.n) if self.R is None else self.R @ self.g

    def storage(self):
        """``(dense bytes, H bytes)`` over L and R together."""
        mats = [h for h in (self.L, self.R) if h is not None]
        return sum(h.dense_bytes for h in mats), sum(h.nbytes for h in mats)

    @property
    def c_H(self) -> float:
        d, h = self.storage()
        return d / h

    def factor(self, eps_lu: Optional[float] = None):
        eps_lu = self.cfg.eps_lu if eps_lu is None else eps_lu
        self.lu = h_lu(self.L, eps_lu)
        return self.lu

    def solve(self, rhs: Optional[np.ndarray] = None, precondition: bool = True) -> np.ndarray:
        b = self.rhs() if rhs is None else rhs
        M = None
        if precondition and self.cfg.eps_lu is not None:
            M = (self.lu or self.factor()).solve
        self.last: GmresResult = gmres_solve(self.L.matvec, b, self.cfg.eps_s, M, self.cfg.max_iter)
        log.info("GMRES: %d iterations", self.last.iterations)
        return self.last.x


def solve_hmatrix(disc, material, quad_config, cfg: HConfig):
    """Solution vector and c_H of the H-matrix path."""
    sysh = HSystem(disc, material, quad_config, cfg)
    return sysh.solve(), sysh.c_H, sysh
