import numpy as np
import pytest

from subbem.geometry import (
    TUNNEL_RADII, builtin, circle, load_geometry, save_geometry, square, tunnel, tunnel_circles,
)
from subbem.patches import Discretisation, build_patch


def test_tunnel_points_on_circles():
    for c, (centre, r) in zip(tunnel(clockwise=False), tunnel_circles()):
        x = c.points(np.linspace(c.knot_vector.lower, c.knot_vector.upper, 101))
        assert np.allclose(np.hypot(*(x - centre).T), r, rtol=0, atol=1e-12)
    assert sorted({r for _, r in tunnel_circles()}) == sorted(TUNNEL_RADII)


def test_tunnel_closed_and_tangent_continuous():
    cs = tunnel(clockwise=False)
    for a, b in zip(cs, cs[1:] + cs[:1]):
        ea, ta, _ = a.evaluate([a.knot_vector.upper])
        sb, tb, _ = b.evaluate([b.knot_vector.lower])
        assert np.linalg.norm(ea - sb) < 1e-12
        ta, tb = ta[0] / np.linalg.norm(ta), tb[0] / np.linalg.norm(tb)
        assert abs(ta[0] * tb[1] - ta[1] * tb[0]) < 1e-12
    inv = cs[2]
    assert np.isclose(inv.points([0.5])[0][1], -3.15)


@pytest.mark.parametrize("make", [circle, tunnel, square])
def test_orientation(make):
    ccw = Discretisation([build_patch(c, "neumann", homogeneous=True) for c in make(clockwise=False)])
    cw = Discretisation([build_patch(c, "neumann", homogeneous=True) for c in make(clockwise=True)])
    assert ccw.signed_area() > 0 and np.isclose(cw.signed_area(), -ccw.signed_area())


def test_circle_area_and_length():
    d = Discretisation([build_patch(c, "neumann", homogeneous=True) for c in circle(clockwise=False)])
    assert abs(d.signed_area() - np.pi) < 1e-12
    assert abs(d.total_length() - 2 * np.pi) < 1e-11


def test_yaml_round_trip(tmp_path):
    cs = tunnel()
    save_geometry(tmp_path / "g.yaml", cs, [{"bc_type": "neumann"}] * 4)
    back, meta = load_geometry(tmp_path / "g.yaml")
    u = np.linspace(0, 1, 17)
    for a, b in zip(cs, back):
        assert np.allclose(a.points(u), b.points(u), atol=1e-15)
    assert meta[0] == {"bc_type": "neumann"}


def test_unknown_builtin():
    with pytest.raises(KeyError, match="circle"):
        builtin("torus")
