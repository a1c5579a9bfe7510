"""Run configuration for the command-line front end.

A :class:`RunConfig` is built from an optional YAML mapping overlaid with
command-line flags.  Geometry files may carry boundary conditions per
patch::

    patches:
      - order: 2
        knots: [0, 0, 0, 1, 1, 1]
        control_points: [[1, 0, 1], [1, 1, 0.7071], [0, 1, 1]]
        bc_type: neumann
        known: {type: constant, value: [0.0, 1.0]}

Known-data specs: ``constant`` (``value``), ``linear`` (``value`` plus a
2x2 ``gradient``, g(x) = value + gradient @ x) and ``fundamental``
(Kelvin solution of a point ``force`` at ``source``).
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .geometry import BUILTINS
from .kernels import Material, kelvin_T, kelvin_U
from .patches import DIRICHLET, NEUMANN

PROBLEMS = ("neumann", "dirichlet", "indirect-V", "indirect-K")
BACKENDS = ("dense", "hmatrix")
KNOWN_TYPES = ("constant", "linear", "fundamental")


class ConfigError(ValueError):
    """Malformed or out-of-range configuration; the message names the field."""


@dataclass(frozen=True)
class RunConfig:
    geometry: str = "circle"
    problem: str = "neumann"
    order: int = 2
    levels: tuple = (1, 2, 3, 4)
    eps_q: float = 1e-9
    eps_h: float = 1e-6
    eps_lu: float = 1e-1
    eps_s: float = 1e-6
    eta: float = 1.0
    n_min: int = 8
    backend: str = "hmatrix"
    out: Optional[str] = None
    youngs: float = 10000.0
    poisson: float = 0.25
    timings: bool = False

    def __post_init__(self):
        validate(self)

    @property
    def material(self) -> Material:
        return Material(self.youngs, self.poisson)

    def hconfig(self):
        from .hmatrix import HConfig
        return HConfig(eps_h=self.eps_h, eta=self.eta, n_min=self.n_min,
                       eps_lu=self.eps_lu, eps_s=self.eps_s)


def validate(cfg: RunConfig):
    for name in ("eps_q", "eps_h", "eps_lu", "eps_s"):
        v = getattr(cfg, name)
        if not 0.0 < v < 1.0:
            raise ConfigError(f"{name}: must lie in (0, 1), got {v}")
    if not 0.0 < cfg.eta <= 1.0:
        raise ConfigError(f"eta: must satisfy 0 < eta <= 1, got {cfg.eta}")
    if cfg.order < 1:
        raise ConfigError(f"order: must be >= 1, got {cfg.order}")
    if cfg.n_min < 1:
        raise ConfigError(f"n_min: must be >= 1, got {cfg.n_min}")
    if not cfg.levels:
        raise ConfigError("levels: at least one level required")
    if any(l < 1 for l in cfg.levels):
        raise ConfigError(f"levels: every level must be >= 1, got {list(cfg.levels)}")
    if list(cfg.levels) != sorted(set(cfg.levels)):
        raise ConfigError(f"levels: must be strictly increasing, got {list(cfg.levels)}")
    if cfg.problem not in PROBLEMS:
        raise ConfigError(f"problem: expected one of {', '.join(PROBLEMS)}, got {cfg.problem!r}")
    if cfg.backend not in BACKENDS:
        raise ConfigError(f"backend: expected one of {', '.join(BACKENDS)}, got {cfg.backend!r}")
    if not cfg.youngs > 0 or not -1.0 < cfg.poisson < 0.5:
        raise ConfigError("material: need E > 0 and -1 < nu < 0.5")
    if cfg.geometry not in BUILTINS:
        path = Path(cfg.geometry)
        if path.suffix not in (".yaml", ".yml"):
            raise ConfigError(f"geometry: unknown name {cfg.geometry!r}; "
                              f"built-ins are {', '.join(sorted(BUILTINS))}")
        if not path.is_file():
            raise ConfigError(f"geometry: file {cfg.geometry!r} not found")


def parse_levels(value, where: str = "levels") -> tuple:
    """``4`` -> levels 1..4; ``"2,3,5"`` or ``[2, 3, 5]`` -> explicit;
    ``"2-5"`` -> inclusive range."""
    try:
        if isinstance(value, int) and not isinstance(value, bool):
            return tuple(range(1, value + 1)) if value >= 1 else (value,)
        if isinstance(value, (list, tuple)):
            return tuple(int(v) for v in value)
        text = str(value).strip()
        if "," in text:
            return tuple(int(v) for v in text.split(","))
        if "-" in text[1:]:
            lo, hi = text.split("-", 1)
            return tuple(range(int(lo), int(hi) + 1))
        return parse_levels(int(text), where)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: cannot read {value!r} as levels") from None


_ALIASES = {"nmin": "n_min", "eps-q": "eps_q", "eps-h": "eps_h", "eps-lu": "eps_lu",
            "eps-s": "eps_s", "n-min": "n_min", "p": "order"}


def parse_config(source=None, **overrides) -> RunConfig:
    """Defaults, then the YAML file or mapping ``source``, then ``overrides``
    (flags left at ``None`` are ignored)."""
    data = {}
    if source is not None:
        if isinstance(source, (str, Path)):
            try:
                loaded = yaml.safe_load(Path(source).read_text())
            except OSError as exc:
                raise ConfigError(f"config: cannot read {source}: {exc.strerror}") from None
            except yaml.YAMLError as exc:
                raise ConfigError(f"config: invalid YAML in {source}: {exc}") from None
            source = loaded if loaded is not None else {}
        if not isinstance(source, dict):
            raise ConfigError("config: expected a mapping at the top level")
        data.update(source)
    data.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name: f for f in fields(RunConfig)}
    kwargs = {}
    for key, value in data.items():
        name = _ALIASES.get(key, key)
        if name not in known:
            raise ConfigError(f"{key}: unknown field")
        kwargs[name] = _coerce(name, value)
    return RunConfig(**kwargs)


def _coerce(name, value):
    if name == "levels":
        return parse_levels(value)
    kind = {"order": int, "n_min": int, "timings": bool, "geometry": str, "problem": str,
            "backend": str, "out": str}.get(name, float)
    if value is None and name == "out":
        return None
    if kind is int and isinstance(value, float) and not value.is_integer():
        raise ConfigError(f"{name}: expected an integer, got {value!r}")
    if kind is bool and not isinstance(value, bool):
        raise ConfigError(f"{name}: expected true or false, got {value!r}")
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot read {value!r} as {kind.__name__}") from None


# ---------------------------------------------------------------------------
# per-patch boundary conditions from geometry files


@dataclass
class PatchCondition:
    bc_type: str
    known: Optional[object]  # callable (x, n) -> (m, 2) or None for zero data
    complex_data: bool = False


def _vector(d, key, where, shape=(2,)):
    if key not in d:
        raise ConfigError(f"{where}.{key}: missing field")
    try:
        v = np.asarray(d[key], dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key}: expected numbers") from None
    if v.shape != shape:
        raise ConfigError(f"{where}.{key}: expected shape {list(shape)}, got {list(v.shape)}")
    return v


def known_from_spec(spec, bc_type: str, material: Material, where: str = "known"):
    """Callable known data for one patch plus its complexity flag."""
    if spec is None:
        return None, False
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError(f"{where}.type: missing field")
    kind = spec["type"]
    if kind == "constant":
        c = _vector(spec, "value", where)
        return (lambda x, n: np.tile(c, (len(x), 1))), False
    if kind == "linear":
        c = _vector(spec, "value", where)
        G = _vector(spec, "gradient", where, (2, 2))
        return (lambda x, n: c + np.asarray(x) @ G.T), False
    if kind == "fundamental":
        y = _vector(spec, "source", where)
        f = _vector(spec, "force", where) if "force" in spec else np.array([1.0, 0.0])
        if bc_type == NEUMANN:
            return (lambda x, n: np.einsum("i,mij->mj", f, kelvin_T(material, y, x, n))), True
        return (lambda x, n: np.einsum("i,mij->mj", f, kelvin_U(material, y, x))), True
    raise ConfigError(f"{where}.type: expected one of {', '.join(KNOWN_TYPES)}, got {kind!r}")


def patch_conditions(meta, material: Material):
    """Conditions for every patch of a geometry file, or ``None`` when the
    file carries no boundary conditions at all."""
    if not any("bc_type" in m for m in meta):
        return None
    out = []
    for l, m in enumerate(meta):
        where = f"patches[{l}]"
        bc = m.get("bc_type")
        if bc not in (DIRICHLET, NEUMANN):
            raise ConfigError(f"{where}.bc_type: expected {DIRICHLET!r} or {NEUMANN!r}, got {bc!r}")
        known, cplx = known_from_spec(m.get("known"), bc, material, f"{where}.known")
        out.append(PatchCondition(bc, known, cplx))
    return out
