"""Kelvin fundamental solutions for 2D plane-strain isotropic elasticity.

Index convention: ``U[..., i, j]`` is displacement component ``j`` at the
field point ``y`` caused by a unit force in direction ``i`` at the source
``x``.  ``T`` is the matching traction on a surface with unit normal ``n``
at ``y``.  All functions broadcast over leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SingularPointError(ValueError):
    """Kernel evaluated with coincident source and field points."""


@dataclass(frozen=True)
class Material:
    E: float
    nu: float

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError("Young's modulus must be positive")
        if not -1.0 < self.nu < 0.5:
            raise ValueError("Poisson's ratio must lie in (-1, 0.5)")

    @property
    def mu(self) -> float:
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def lam(self) -> float:
        return self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))


def _geometry(x, y):
    d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    r = np.hypot(d[..., 0], d[..., 1])
    if np.any(r == 0.0):
        raise SingularPointError("source and field point coincide")
    return d / r[..., None], r


def kelvin_U(mat: Material, x, y) -> np.ndarray:
    """Displacement fundamental solution, shape ``(..., 2, 2)``."""
    dr, r = _geometry(x, y)
    nu = mat.nu
    c = 1.0 / (8.0 * np.pi * mat.mu * (1.0 - nu))
    out = dr[..., :, None] * dr[..., None, :]
    diag = -(3.0 - 4.0 * nu) * np.log(r)
    out[..., 0, 0] += diag
    out[..., 1, 1] += diag
    return c * out


def kelvin_T(mat: Material, x, y, n) -> np.ndarray:
    """Traction fundamental solution, shape ``(..., 2, 2)``."""
    dr, r = _geometry(x, y)
    n = np.asarray(n, dtype=float)
    if np.any(np.abs(np.hypot(n[..., 0], n[..., 1]) - 1.0) > 1e-8):
        raise ValueError("normal must have unit length")
    nu = mat.nu
    a = 1.0 - 2.0 * nu
    drdn = np.einsum("...d,...d->...", dr, n)
    rr = dr[..., :, None] * dr[..., None, :]
    skew = dr[..., :, None] * n[..., None, :] - n[..., :, None] * dr[..., None, :]
    out = (2.0 * drdn[..., None, None]) * rr - a * skew
    out[..., 0, 0] += a * drdn
    out[..., 1, 1] += a * drdn
    return (-1.0 / (4.0 * np.pi * (1.0 - nu))) / r[..., None, None] * out


def kelvin_stress(mat: Material, x, y) -> np.ndarray:
    """Stress ``S[..., i, k, l]`` at ``y`` due to a unit force ``i`` at ``x``;
    ``T_ij = S_ijl n_l``."""
    dr, r = _geometry(x, y)
    nu = mat.nu
    a = 1.0 - 2.0 * nu
    eye = np.eye(2)
    S = np.zeros(dr.shape[:-1] + (2, 2, 2))
    for i in range(2):
        for k in range(2):
            for l in range(2):
                S[..., i, k, l] = (
                    a * (eye[k, l] * dr[..., i] - eye[i, k] * dr[..., l] - eye[i, l] * dr[..., k])
                    - 2.0 * dr[..., i] * dr[..., k] * dr[..., l])
    return S / (4.0 * np.pi * (1.0 - nu) * r[..., None, None, None])


def free_term_smooth() -> np.ndarray:
    """Free term at a smooth boundary point."""
    return 0.5 * np.eye(2)
