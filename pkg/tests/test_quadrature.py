import numpy as np
import pytest

from subbem.kernels import Material, kelvin_U
from subbem.nurbs import KnotVector, NurbsBasis, NurbsCurve
from subbem.quadrature import (
    QuadratureConfig, QuadratureError, chord_diameter, classify_and_subdivide,
    gauss_rule, integrate_adaptive, integrate_element, integrate_pieces,
    integrate_singular_V, sample_distance, singular_pieces,
)

CFG = QuadratureConfig(eps_q=1e-9)
S2 = np.sqrt(0.5)


def line(a=(0.0, 0.0), b=(1.0, 0.0)):
    return NurbsCurve(NurbsBasis(KnotVector((0, 0, 1, 1), 1)), [a, b])


def arc():
    return NurbsCurve(NurbsBasis(KnotVector((0, 0, 0, 1, 1, 1), 2), (1, S2, 1)), [[1, 0], [1, 1], [0, 1]])


def test_gauss_rules():
    x, w = gauss_rule(1)
    assert x[0] == 0 and w[0] == 2
    x, w = gauss_rule(2)
    assert np.allclose(x, [-1 / np.sqrt(3), 1 / np.sqrt(3)]) and np.allclose(w, 1)
    x, w = gauss_rule(4)
    assert abs(np.sum(w * x**6) - 2 / 7) < 1e-14


def test_config_validation():
    with pytest.raises(ValueError):
        QuadratureConfig(eps_q=1.5)
    with pytest.raises(ValueError):
        QuadratureConfig(g0=64, g_max=64)


def test_cubic_exact_at_first_pair():
    cfg = QuadratureConfig(g0=2, g_step=1)
    v, used = integrate_pieces(lambda u: u**3 - u, [(0.0, 2.0, None, 0.0)], cfg)
    assert abs(v - 2.0) < 1e-14 and used == 5


def test_log_integrand():
    exact = 1.01 * np.log(1.01) - 0.01 * np.log(0.01) - 1.0
    v = integrate_element(lambda u: np.log(u + 0.01), line(), 0.0, 1.0, np.array([-0.01, 0.0]), CFG)
    assert abs(v - exact) <= 1e-9 * abs(exact)


def test_coarse_tolerance_uses_fewer_nodes():
    f = lambda u: np.log(u + 0.05)
    n = [integrate_pieces(f, [(0.0, 1.0, None, 0.0)], QuadratureConfig(eps_q=e))[1] for e in (1e-3, 1e-9)]
    assert n[0] <= n[1]


def test_non_convergence():
    with pytest.raises(QuadratureError) as info:
        integrate_adaptive(lambda u: np.abs(u - 0.3) ** 0.1, 0.0, 1.0, QuadratureConfig(eps_q=1e-14, g_max=10))
    assert info.value.estimate is not None


def test_singular_log():
    v = integrate_pieces(lambda u: np.log(1.0 / np.abs(u)), singular_pieces(0.0, 1.0, 0.0, CFG), CFG)[0]
    assert abs(v - 1.0) < 1e-9
    # interior split, both halves
    v = integrate_pieces(lambda u: np.log(1.0 / np.abs(u - 0.3)), singular_pieces(0.0, 1.0, 0.3, CFG), CFG)[0]
    exact = 0.3 - 0.3 * np.log(0.3) + 0.7 - 0.7 * np.log(0.7)
    assert abs(v - exact) < 1e-9


def test_far_single_region_and_midpoint_split():
    c = line()
    regs = classify_and_subdivide(c, 0.0, 1.0, np.array([0.5, 20.0]), CFG)
    assert len(regs) == 1 and regs[0].kind == "regular"
    regs = classify_and_subdivide(c, 0.0, 1.0, np.array([0.5, 0.0]), CFG, u0=0.5)
    assert [(r.a, r.b) for r in regs] == [(0.0, 0.5), (0.5, 1.0)]


def test_near_subdivision_ratio_and_cover():
    c = arc()
    x = c.points([0.4])[0] * (1 + 0.05 * chord_diameter(c, 0, 1))
    regs = classify_and_subdivide(c, 0.0, 1.0, x, CFG)
    assert len(regs) > 1
    for r in regs:
        assert chord_diameter(c, r.a, r.b) <= sample_distance(c, r.a, r.b, x)
    assert abs(sum(r.b - r.a for r in regs) - 1.0) < 1e-14


def test_arc_length_jacobian():
    c = arc()
    v = integrate_adaptive(lambda u: c.evaluate(u)[2], 0.0, 1.0, QuadratureConfig(eps_q=1e-13))
    assert abs(v - np.pi / 2) < 1e-12


def test_singular_V_against_graded_bisection():
    mat = Material(10000.0, 0.25)
    c = arc()
    basis = NurbsBasis(KnotVector((0, 0, 0, 1, 1, 1), 2), (1, S2, 1))
    u0 = 0.37
    val = integrate_singular_V(c, 0.0, 1.0, u0, basis, 1, mat, QuadratureConfig(eps_q=1e-12))
    x = c.points([u0])[0]

    def f(u):
        y, _, J = c.evaluate(u)
        _, R, _ = basis.evaluate(u)
        return kelvin_U(mat, x, y) * (R[:, 1] * J)[:, None, None]

    # brute force: 50 graded bisections towards u0 on each side, 20-point Gauss each
    xg, wg = gauss_rule(20)
    ref = np.zeros((2, 2))
    for lo, hi in ((0.0, u0), (1.0, u0)):
        d = hi - lo
        for _ in range(50):
            a, b = sorted((lo, lo + 0.5 * d))
            u = 0.5 * (a + b) + 0.5 * (b - a) * xg
            ref += np.einsum("m,mij->ij", wg * 0.5 * (b - a), f(u))
            lo += 0.5 * d
            d *= 0.5
    assert np.allclose(val, ref, rtol=0, atol=1e-8 * np.abs(ref).max())


def test_symmetric_halves():
    cfg = QuadratureConfig(eps_q=1e-12)
    g = lambda u: np.log(1.0 / np.abs(u - 0.5)) * (1 + (u - 0.5) ** 2)
    left = integrate_pieces(g, singular_pieces(0.0, 0.5, 0.5, cfg), cfg)[0]
    right = integrate_pieces(g, singular_pieces(0.5, 1.0, 0.5, cfg), cfg)[0]
    assert abs(left - right) < 1e-13


def test_doubled_orders_stable():
    cfg = QuadratureConfig(eps_q=1e-9)
    f = lambda u: 1.0 / ((u - 1.2) ** 2 + 0.04)
    v = integrate_adaptive(f, 0.0, 1.0, cfg)
    v2 = integrate_adaptive(f, 0.0, 1.0, QuadratureConfig(eps_q=1e-9, g0=8, g_step=4))
    assert abs(v - v2) < 10 * 1e-9 * abs(v)
