"""Acceptance criteria 1-12.  Each test records one PASS/FAIL line, printed
again in the terminal summary."""
import time
from fractions import Fraction

import numpy as np
import pytest

from subbem.assembly import Engine, build_system
from subbem.cli import main as cli_main
from subbem.geometry import circle, tunnel
from subbem.harness import (
    StudyConfig, c_sub_study, default_setting, discretise, run_direct_test, run_indirect_test,
)
from subbem.hmatrix import HConfig, HSystem
from subbem.nurbs import (
    OP_KINDS, KnotVector, NurbsBasis, NurbsCurve, OpCounter, counted_evaluate, greville_anchors,
    merged_bezier_knots, predicted_op_count,
)
from subbem.quadrature import QuadratureConfig

EPS_H = EPS_S = 1e-6
STUDY_LEVELS = (4, 5, 6, 7)  # n ~ 1000-1300 at the finest level


# -- 1 -----------------------------------------------------------------------


def random_basis(rng):
    p = int(rng.integers(1, 6))
    n_inner = int(rng.integers(0, 7))
    inner = []
    for v in np.sort(rng.uniform(0.05, 0.95, n_inner)):
        inner += [float(v)] * int(rng.integers(1, p + 1))
    kv = KnotVector((0.0,) * (p + 1) + tuple(inner) + (1.0,) * (p + 1), p)
    return NurbsBasis(kv, tuple(rng.uniform(0.5, 2.0, kv.count))), np.array([0.0] + inner + [1.0])


def test_criterion_01_basis(criterion):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_pu = worst_d = 0.0
    h = 1e-6
    for _ in range(1000):
        basis, knots = random_basis(rng)
        while True:
            u = float(rng.uniform(0, 1))
            if np.min(np.abs(knots - u)) > 10 * h:
                break
        span, R, dR = basis.evaluate(np.array([u - h, u, u + h]))
        worst_pu = max(worst_pu, float(np.abs(R[1].sum() - 1.0)))
        assert span[0] == span[1] == span[2]
        fd = (R[2] - R[0]) / (2 * h)
        worst_d = max(worst_d, float(np.linalg.norm(fd - dR[1]) / max(np.linalg.norm(dR[1]), 1.0)))
    dt = time.perf_counter() - t0
    ok = worst_pu <= 1e-12 and worst_d < 1e-6 and dt < 1.0
    criterion(1, ok, f"max |sum-1| {worst_pu:.1e}, max FD rel err {worst_d:.1e}, {dt:.2f} s")


# -- 2 -----------------------------------------------------------------------


def test_criterion_02_op_counts(criterion):
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    bad = []
    for p in range(1, 6):
        n = p + 5
        kv = KnotVector((0.0,) * (p + 1) + tuple(np.sort(rng.uniform(0.1, 0.9, n - p - 1))) + (1.0,) * (p + 1), p)
        curve = NurbsCurve(NurbsBasis(kv, tuple(rng.uniform(0.5, 2, n))), rng.normal(size=(n, 2)))
        for kind in OP_KINDS:
            c = OpCounter()
            counted_evaluate(kind, curve, float(rng.uniform(0, 1)), c)
            if c.multiplications_and_divisions != predicted_op_count(kind, p):
                bad.append((p, kind, c.multiplications_and_divisions))
    dt = time.perf_counter() - t0
    criterion(2, not bad and dt < 1.0, f"20 (p, kind) pairs, mismatches {bad}, {dt:.3f} s")


# -- 3, 4 --------------------------------------------------------------------


def test_criterion_03_anchor_offsets(criterion):
    kv = KnotVector(tuple(Fraction(k) for k in (0, 0, 0, 1, 2, 2, 2, 3, 3, 3)), 2)
    a = greville_anchors(kv)
    offs = [o for o in a.offsets if o != 0]
    ok = offs == [Fraction(-1, 6), Fraction(1, 6)] and all(isinstance(o, Fraction) for o in a.offsets)
    criterion(3, ok, f"offsets {[str(o) for o in a.offsets]}")


def test_criterion_04_bezier_merge(criterion):
    geo = KnotVector((0, 0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 4), 2)
    disp = KnotVector((0, 0, 0, 0, 2, 4, 4, 4, 4), 3)
    trac = KnotVector((0, 0, 1, 2, 3, 4, 4), 1)
    merged = merged_bezier_knots([geo, disp, trac], 3).knots
    expected = (0, 0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4, 4)
    criterion(4, merged == expected, f"merged {list(merged)}")


# -- 5 -----------------------------------------------------------------------


def test_criterion_05_rigid_body(criterion):
    mat = StudyConfig().material
    q = QuadratureConfig(eps_q=1e-11)
    worst = 0.0
    for make in (circle, tunnel):
        for p in (2, 3, 4):
            d = discretise(make(clockwise=False), "neumann", p, 1, homogeneous=True)
            K = Engine.for_collocation(d, mat, q).dense(with_V=False)[1]
            worst = max(worst, float(np.abs(K.sum(axis=1)).max()))
    errs = []
    for level in range(1, 6):
        d = discretise(circle(clockwise=False), "neumann", 2, level, homogeneous=True)
        eng = Engine.for_collocation(d, mat, q)
        eng.dense(with_V=False)
        errs.append(float(np.abs(eng.c_rb - eng.S - 0.5 * np.eye(2)).max()))
    ratios = np.array(errs[1:]) / np.array(errs[:-1])
    ok = worst <= 1e-10 and np.all(ratios <= 0.6)
    criterion(5, ok, f"max row sum {worst:.1e} (p=2..4, circle+tunnel); "
                     f"free-term error ratios {np.round(ratios, 3).tolist()}")


# -- 6 -----------------------------------------------------------------------


STUDIES = [
    ("indirect V p=2", 4.0, lambda g: run_indirect_test(g, "V", StudyConfig(order=2, levels=STUDY_LEVELS))),
    ("indirect C+K p=2", 3.0, lambda g: run_indirect_test(g, "C+K", StudyConfig(order=2, levels=STUDY_LEVELS))),
    ("Neumann p=2", 3.0, lambda g: run_direct_test(g, "neumann", StudyConfig(order=2, levels=STUDY_LEVELS))),
    ("Neumann p=3", 4.0, lambda g: run_direct_test(g, "neumann", StudyConfig(order=3, levels=STUDY_LEVELS))),
    ("Dirichlet p=2", 3.0, lambda g: run_direct_test(g, "dirichlet", StudyConfig(order=2, levels=STUDY_LEVELS))),
]


def test_criterion_06_convergence(criterion):
    parts, ok = [], True
    for gname, make in (("circle", circle), ("tunnel", tunnel)):
        for label, target, run in STUDIES:
            report = run(make())
            rate = report.fitted_rate()
            good = abs(rate - target) <= 0.5
            ok &= good
            pair = [round(r.rate, 2) for r in report.records[-2:]]
            parts.append(f"{gname} {label}: {rate:.2f} (pairwise {pair}, n={report.records[-1].n}, "
                         f"target {target:.0f}) {'ok' if good else 'OFF'}")
    criterion(6, ok, "; ".join(parts))


# -- 7, 8, 9, 11: tunnel Neumann system on the H-matrix path ---------------------


def tunnel_disc(level):
    curves, study = tunnel(), StudyConfig()
    s = default_setting("direct_neumann", curves)
    return discretise(curves, "neumann", 2, level, lambda x, n: s.t(study.material, x, n), known_boost=1)


@pytest.fixture(scope="module")
def tunnel6():
    study = StudyConfig()
    disc = tunnel_disc(6)
    hs = HSystem(disc, study.material, study.quadrature, HConfig(eps_h=EPS_H, eps_s=EPS_S))
    return hs, build_system(disc, study.material, study.quadrature)


def eps_rank(M, eps):
    s = np.linalg.svd(M, compute_uv=False)
    tail = np.sqrt(np.cumsum((s ** 2)[::-1]))[::-1]
    ok = np.nonzero(tail <= eps * tail[0])[0]
    return int(ok[0]) if len(ok) else len(s)


def test_criterion_07_aca_fidelity(criterion, tunnel6):
    _, ds = tunnel6
    study = StudyConfig()
    hs = HSystem(ds.disc, study.material, study.quadrature, HConfig(eps_h=EPS_H, coarsen=False))
    worst, excess, count = 0.0, -np.inf, 0
    for H, D in ((hs.L, ds.L), (hs.R, ds.R)):
        Dp = D[np.ix_(H.row_perm, H.col_perm)]
        for leaf in H.leaves():
            if leaf.kind != "rk":
                continue
            M = Dp[leaf.r0:leaf.r1, leaf.c0:leaf.c1]
            worst = max(worst, np.linalg.norm(M - leaf.data.to_dense()) / (EPS_H * np.linalg.norm(M)))
            excess = max(excess, leaf.data.rank - eps_rank(M, EPS_H))
            count += 1
    ok = count > 0 and worst <= 10.0 and excess <= 5
    criterion(7, ok, f"n={hs.n}, {count} low-rank blocks, worst error {worst:.2f} eps_H, "
                     f"max rank over SVD rank {excess}")


def test_criterion_08_h_vs_dense(criterion, tunnel6):
    hs, ds = tunnel6
    rng = np.random.default_rng(11)
    tol = 10 * (EPS_H + EPS_S)
    mv = 0.0
    for _ in range(10):
        x = rng.normal(size=hs.n)
        mv = max(mv, np.linalg.norm(hs.L @ x - ds.L @ x) / np.linalg.norm(ds.L @ x))
        y = rng.normal(size=hs.m)
        mv = max(mv, np.linalg.norm(hs.R @ y - ds.R @ y) / np.linalg.norm(ds.R @ y))
    z, zd = hs.solve(), ds.solve()
    sol = np.linalg.norm(z - zd) / np.linalg.norm(zd)
    ok = mv <= tol and sol <= tol
    criterion(8, ok, f"n={hs.n}, matvec rel diff {mv:.1e}, GMRES solution rel diff {sol:.1e}, bound {tol:.0e}")


def test_criterion_09_compression_trend(criterion):
    study = StudyConfig()
    out = []
    for level in (5, 7):
        hs = HSystem(tunnel_disc(level), study.material, study.quadrature, HConfig(eps_h=EPS_H))
        out.append((hs.n, hs.c_H, hs.L.nbytes / (hs.n * np.log2(hs.n))))
    (n1, c1, s1), (n2, c2, s2) = out
    ratio = s2 / s1
    ok = c2 > c1 > 1.0 and 0.25 <= ratio <= 4.0
    criterion(9, ok, f"c_H(n={n1}) {c1:.2f}, c_H(n={n2}) {c2:.2f}; S(M_H)/(n log2 n) "
                     f"{s1:.1f} -> {s2:.1f} (ratio {ratio:.2f})")


def test_criterion_10_c_sub(criterion):
    vals = c_sub_study(tunnel(), 2, (1, 2, 3, 4))
    ok = all(b > a for a, b in zip(vals, vals[1:])) and vals[-1] > 4.0
    criterion(10, ok, f"c_sub per level {[round(v, 3) for v in vals]}")


def test_criterion_11_preconditioning(criterion, tunnel6):
    hs, _ = tunnel6
    hs.solve(precondition=True)
    with_lu = hs.last.iterations
    hs.solve(precondition=False)
    without = hs.last.iterations
    ok = hs.n >= 512 and without >= 2 * with_lu
    criterion(11, ok, f"n={hs.n}, eps_LU={hs.cfg.eps_lu}: {with_lu} iterations with H-LU, {without} without")


# -- 12 ----------------------------------------------------------------------


def test_criterion_12_determinism(criterion, tmp_path):
    outs = []
    for k in range(2):
        path = tmp_path / f"run{k}.csv"
        code = cli_main(["converge", "--geometry", "circle", "--levels", "1-3", "--out", str(path)])
        assert code == 0
        outs.append(path.read_bytes())
    ok = outs[0] == outs[1] and len(outs[0]) > 0
    criterion(12, ok, f"two converge runs, {len(outs[0])} bytes each, identical={outs[0] == outs[1]}")
