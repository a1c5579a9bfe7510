"""Built-in boundary geometries and the YAML geometry format."""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import yaml

from .nurbs import KnotVector, NurbsBasis, NurbsCurve

TUNNEL_RADII = (4.55, 2.95, 9.45)


def arc(center, radius, theta0, theta1) -> NurbsCurve:
    """Exact rational quadratic arc; the sweep must stay below pi."""
    d = theta1 - theta0
    if not 0 < abs(d) < math.pi:
        raise ValueError("arc sweep must lie in (0, pi)")
    c = np.asarray(center, dtype=float)
    tm = 0.5 * (theta0 + theta1)
    h = math.cos(0.5 * d)
    P = [c + radius * np.array([math.cos(theta0), math.sin(theta0)]),
         c + radius / h * np.array([math.cos(tm), math.sin(tm)]),
         c + radius * np.array([math.cos(theta1), math.sin(theta1)])]
    return NurbsCurve(NurbsBasis(KnotVector((0, 0, 0, 1, 1, 1), 2), (1.0, h, 1.0)), P)


def join_arcs(arcs) -> NurbsCurve:
    """Chain quadratic Bezier arcs into one patch with double interior knots."""
    knots = [0, 0, 0]
    P, w = [arcs[0].control_points[0]], [arcs[0].basis.weights[0]]
    for n, a in enumerate(arcs, start=1):
        P += list(a.control_points[1:])
        w += list(a.basis.weights[1:])
        knots += [n, n]
    knots.append(len(arcs))
    return NurbsCurve(NurbsBasis(KnotVector(tuple(knots), 2), tuple(w)), np.array(P))


def reverse(curve: NurbsCurve) -> NurbsCurve:
    kv = curve.knot_vector
    a, b = kv.lower, kv.upper
    knots = tuple(a + b - k for k in reversed(kv.knots))
    return NurbsCurve(NurbsBasis(KnotVector(knots, kv.order), tuple(reversed(curve.basis.weights))),
                      curve.control_points[::-1])


def orient(curves, clockwise: bool):
    """Counter-clockwise input chain, optionally reversed."""
    if not clockwise:
        return list(curves)
    return [reverse(c) for c in reversed(curves)]


def circle(radius: float = 1.0, center=(0.0, 0.0), clockwise: bool = True):
    """Four quarter-arc patches."""
    q = 0.5 * math.pi
    return orient([arc(center, radius, k * q, (k + 1) * q) for k in range(4)], clockwise)


def tunnel(clockwise: bool = True):
    """Tangent-continuous horseshoe profile from three circles.

    Crown: radius 4.55 about the origin, upper half.  Side walls: radius 2.95
    about (+-1.6, 0).  Invert: radius 9.45 about (0, 6.3), internally tangent
    to both side circles (centre distance 6.5 = 9.45 - 2.95).
    """
    r1, r2, r3 = TUNNEL_RADII
    cs, ci = 1.6, 6.3
    # tangency of the left side circle with the invert, seen from both centres
    phi = math.atan2(-ci, -cs)  # direction from invert centre to left side centre
    t_left = phi % (2 * math.pi)
    crown = join_arcs([arc((0, 0), r1, 0.0, 0.5 * math.pi), arc((0, 0), r1, 0.5 * math.pi, math.pi)])
    left = arc((-cs, 0), r2, math.pi, t_left)
    invert = arc((0, ci), r3, t_left, 3 * math.pi - t_left)
    right = arc((cs, 0), r2, 3 * math.pi - t_left, 2 * math.pi)
    return orient([crown, left, invert, right], clockwise)


def tunnel_circles():
    """``(center, radius)`` of each tunnel patch in counter-clockwise order."""
    r1, r2, r3 = TUNNEL_RADII
    return [((0.0, 0.0), r1), ((-1.6, 0.0), r2), ((0.0, 6.3), r3), ((1.6, 0.0), r2)]


def line(a, b, order: int = 2) -> NurbsCurve:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    P = [a + (b - a) * k / order for k in range(order + 1)]
    return NurbsCurve(NurbsBasis(KnotVector((0,) * (order + 1) + (1,) * (order + 1), order)), P)


def square(side: float = 2.0, clockwise: bool = True, order: int = 2):
    """Axis-aligned square centred at the origin, one straight patch per side."""
    h = 0.5 * side
    c = [(h, -h), (h, h), (-h, h), (-h, -h)]
    return orient([line(c[k], c[(k + 1) % 4], order) for k in range(4)], clockwise)


BUILTINS = {"circle": circle, "tunnel": tunnel}


def builtin(name: str, clockwise: bool = True):
    if name not in BUILTINS:
        raise KeyError(f"unknown geometry {name!r}; built-ins are {sorted(BUILTINS)}")
    return BUILTINS[name](clockwise=clockwise)


# ---------------------------------------------------------------------------
# YAML


def curve_to_dict(c: NurbsCurve) -> dict:
    w = c.basis.weights
    return {
        "order": c.order,
        "knots": [float(k) for k in c.knot_vector.knots],
        "control_points": [[float(x), float(y), float(wi)] for (x, y), wi in zip(c.control_points, w)],
    }


def curve_from_dict(d: dict, where: str = "patch") -> NurbsCurve:
    for key in ("order", "knots", "control_points"):
        if key not in d:
            raise ValueError(f"{where}.{key}: missing field")
    pts = np.asarray(d["control_points"], dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"{where}.control_points: expected [x, y, w] triplets")
    kv = KnotVector(tuple(float(k) for k in d["knots"]), int(d["order"]))
    return NurbsCurve(NurbsBasis(kv, tuple(pts[:, 2])), pts[:, :2])


def save_geometry(path, curves, extra=None):
    doc = {"patches": [curve_to_dict(c) for c in curves]}
    for n, e in enumerate(extra or []):
        doc["patches"][n].update(e)
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


def load_geometry(path):
    """Curves and per-patch metadata (bc_type, known) from a YAML file."""
    doc = yaml.safe_load(Path(path).read_text())
    if not isinstance(doc, dict) or "patches" not in doc:
        raise ValueError(f"{path}: expected a mapping with a 'patches' list")
    curves, meta = [], []
    for n, d in enumerate(doc["patches"]):
        curves.append(curve_from_dict(d, f"patches[{n}]"))
        meta.append({k: v for k, v in d.items() if k not in ("order", "knots", "control_points")})
    return curves, meta
