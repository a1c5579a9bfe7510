import numpy as np
import pytest

from subbem.assembly import StorageReport, build_system
from subbem.geometry import circle, square, tunnel
from subbem.harness import (
    DEFAULT_MATERIAL, CSV_COLUMNS, LevelRecord, StudyConfig, StudyReport, TestSetting,
    c_sub_study, compression_report, default_setting, discretise, element_lengths, fit_rate,
    inside_curve, mesh_parameter, mesh_parameter_from_lengths, run_direct_test, run_indirect_test,
    validate_setting,
)
from subbem.nurbs import DomainError
from subbem.patches import project_known_data
from subbem.quadrature import QuadratureConfig


def test_fit_rate_synthetic():
    h = 0.5 ** np.arange(1, 6)
    assert abs(fit_rate(h, h ** 3)[1] - 3.0) < 1e-12
    assert abs(fit_rate(h, 5 * h ** 2 + 1e-9)[1] - 2.0) < 1e-3
    assert abs(fit_rate(h, np.full(5, 0.1))[1]) < 1e-12
    pair, _ = fit_rate(h, h ** 3)
    assert np.allclose(pair, 3.0)
    with pytest.raises(DomainError):
        fit_rate(h[:2], h[:2])


def test_mesh_parameter_forms():
    assert mesh_parameter_from_lengths(np.full(10, 0.7)) == pytest.approx(0.1, abs=1e-15)
    lengths = np.r_[1.0, np.full(198, 0.5)]  # largest span is A / 100
    assert mesh_parameter_from_lengths(lengths) == pytest.approx(0.01)
    # straight sides are uniform in arc length
    hs = [mesh_parameter(discretise(square(), "neumann", 2, lev, homogeneous=True)) for lev in (1, 2, 3)]
    assert hs[1] / hs[0] == pytest.approx(0.5, abs=1e-12)
    assert hs[2] / hs[1] == pytest.approx(0.5, abs=1e-12)


def test_element_lengths_sum_to_perimeter():
    d = discretise(circle(2.0), "neumann", 2, 2, homogeneous=True)
    assert element_lengths(d).sum() == pytest.approx(4 * np.pi, rel=1e-12)


def test_settings_are_valid():
    for curves in (circle(), tunnel()):
        for kind in ("indirect_V", "indirect_K", "direct_neumann", "direct_dirichlet"):
            s = default_setting(kind, curves)
            validate_setting(s, curves)
            inside = [inside_curve(curves, x) for x, _ in s.sources]
            # indirect: sources outside the curve; direct: inside the hole
            assert all(inside) == kind.startswith("direct") and any(inside) == kind.startswith("direct")
    with pytest.raises(DomainError):
        TestSetting("direct_neumann", [])


def test_report_monotonicity():
    r = StudyReport("x")
    r.add(LevelRecord(1, 0.1, 10, 4, 1e-2))
    r.add(LevelRecord(2, 0.05, 20, 4, 1.25e-3))
    assert r.records[1].rate == pytest.approx(3.0)
    with pytest.raises(ValueError):
        r.add(LevelRecord(3, 0.06, 40, 4, 1e-4))
    with pytest.raises(ValueError):
        r.add(LevelRecord(3, 0.025, 20, 4, 1e-4))
    head, *rows = r.to_csv().splitlines()
    assert head == ",".join(CSV_COLUMNS) and len(rows) == 2
    assert rows[0].endswith(",")  # seconds blank without timings


def test_compression_report():
    r = compression_report(100, 100)
    assert (r.c_H, r.c_sub, r.c_tot) == (1.0, 1.0, 1.0)
    r = compression_report(200, 100, c_sub=3.0)
    assert r.c_H == 2.0 and r.c_tot == 6.0
    with pytest.raises(ValueError):
        StorageReport(100, 0)


@pytest.mark.parametrize("op", ["V", "C+K"])
def test_far_source_is_nearly_exact(op):
    s = TestSetting("indirect_V" if op == "V" else "indirect_K",
                    [(np.array([1000.0, 300.0]), np.array([1.0, 0.5]))],
                    np.array([[0.3, 0.1], [-0.2, 0.25]]))
    r = run_indirect_test(circle(), op, StudyConfig(order=4, levels=(3,)), s)
    assert r.records[0].e_rel < 1e-10


def test_circle_double_layer_p3_rate():
    r = run_indirect_test(circle(), "C+K", StudyConfig(order=3, levels=(2, 3, 4, 5)))
    assert abs(r.fitted_rate() - 4.0) <= 0.5


def test_manufactured_residual_decreases():
    curves, mat = tunnel(), DEFAULT_MATERIAL
    s = default_setting("direct_neumann", curves)
    res = []
    for level in (1, 2, 3):
        d = discretise(curves, "neumann", 2, level, lambda x, n: s.t(mat, x, n), known_boost=1)
        system = build_system(d, mat, QuadratureConfig(eps_q=1e-11))
        ud = np.zeros((d.n_disp, 2))
        for l, p in enumerate(d.patches):
            ud[d.disp_map[l]] = project_known_data(p, lambda x, n: s.u(mat, x), "displacement")
        z = ud[d.unknown_disp]
        z = np.concatenate([z[:, 0], z[:, 1]])
        rhs = system.rhs()
        res.append(np.linalg.norm(system.L @ z - rhs) / np.linalg.norm(rhs))
    assert res[0] > res[1] > res[2]


def test_hmatrix_path_matches_dense():
    from subbem.hmatrix import HConfig
    curves = circle()
    dense = run_direct_test(curves, "neumann", StudyConfig(levels=(2, 3, 4)))
    hm = run_direct_test(curves, "neumann", StudyConfig(levels=(2, 3, 4), backend="hmatrix",
                                                         hmatrix=HConfig(n_min=8)))
    assert np.allclose(dense.errors, hm.errors, rtol=1e-3)
    assert all(r.c_H >= 1.0 for r in hm.records)


def test_c_sub_study_increases():
    vals = c_sub_study(tunnel(), 2, (1, 2, 3))
    assert vals[0] < vals[1] < vals[2] and vals[0] > 1.0
