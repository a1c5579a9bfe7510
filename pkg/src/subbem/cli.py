"""``subbem`` command line: converge | compress | ops-count | solve.

Study output (converge, compress) uses the fixed column set of
:data:`subbem.harness.CSV_COLUMNS`; ops-count and solve emit their own
tables.  CSV goes to ``--out`` or standard output, errors to standard
error with exit status 1.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import PROBLEMS, ConfigError, RunConfig, parse_config, patch_conditions
from .geometry import BUILTINS, load_geometry
from .harness import (
    LevelRecord, StudyConfig, default_setting, discretise, fields_from_solution, load_curves,
    mesh_parameter, records_csv, run_direct_test, run_indirect_test, set_field_order,
)
from .nurbs import OP_KINDS, KnotVector, NurbsBasis, NurbsCurve, OpCounter, counted_evaluate, predicted_op_count
from .patches import DIRICHLET, NEUMANN, Discretisation, build_patch, refine_unknown_field
from .quadrature import QuadratureConfig

log = logging.getLogger("subbem")

CONSTANT_TRACTION = (0.0, 1.0)


def _common(p: argparse.ArgumentParser):
    g = p.add_argument_group("run configuration")
    g.add_argument("--config", help="YAML file with RunConfig fields (flags override it)")
    g.add_argument("--geometry", help=f"built-in ({', '.join(sorted(BUILTINS))}) or YAML geometry file")
    g.add_argument("--problem", choices=PROBLEMS, help="manufactured problem kind (default neumann)")
    g.add_argument("--order", type=int, help="field order p (default 2)")
    g.add_argument("--levels", help="N (levels 1..N), a comma list, or a range a-b (default 4)")
    g.add_argument("--eps-q", type=float, dest="eps_q", help="quadrature tolerance (default 1e-9)")
    g.add_argument("--eps-h", type=float, dest="eps_h", help="ACA tolerance (default 1e-6)")
    g.add_argument("--eps-lu", type=float, dest="eps_lu", help="H-LU truncation (default 1e-1)")
    g.add_argument("--eps-s", type=float, dest="eps_s", help="GMRES tolerance (default 1e-6)")
    g.add_argument("--eta", type=float, help="admissibility parameter, 0 < eta <= 1 (default 1)")
    g.add_argument("--nmin", type=int, dest="n_min", help="leaf cluster size (default 8)")
    g.add_argument("--backend", choices=("dense", "hmatrix"), help="solver backend (default hmatrix)")
    g.add_argument("--out", help="CSV destination (default standard output)")
    g.add_argument("--timings", action="store_true", default=None,
                   help="fill the seconds column (output is then not reproducible)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="subbem", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("converge", "manufactured-solution convergence study"),
                       ("compress", "storage compression across levels"),
                       ("ops-count", "operation counts of point/tangent evaluation, p = 1..5"),
                       ("solve", "boundary solution at the finest level")):
        _common(sub.add_parser(name, help=text, description=text))
    return parser


def config_from_args(args) -> RunConfig:
    keys = ("geometry", "problem", "order", "levels", "eps_q", "eps_h", "eps_lu", "eps_s",
            "eta", "n_min", "backend", "out", "timings")
    return parse_config(args.config, **{k: getattr(args, k) for k in keys})


# ---------------------------------------------------------------------------
# commands


def study_config(cfg: RunConfig, levels=None) -> StudyConfig:
    return StudyConfig(order=cfg.order, levels=tuple(levels or cfg.levels),
                       quadrature=QuadratureConfig(eps_q=cfg.eps_q), material=cfg.material,
                       backend=cfg.backend, hmatrix=cfg.hconfig())


def cmd_converge(cfg: RunConfig) -> str:
    curves = load_curves(cfg.geometry)
    study = study_config(cfg)
    if cfg.problem in ("neumann", "dirichlet"):
        report = run_direct_test(curves, NEUMANN if cfg.problem == "neumann" else DIRICHLET, study)
    else:
        if cfg.backend == "hmatrix":
            log.info("indirect studies always run dense")
        report = run_indirect_test(curves, "V" if cfg.problem == "indirect-V" else "C+K", study)
    return report.to_csv(cfg.timings)


def _constant_traction(x, n):
    return np.tile(np.asarray(CONSTANT_TRACTION), (len(x), 1))


def discretise_file(curves, conds, p: int, level: int, lockstep: bool = False) -> Discretisation:
    """Discretisation with per-patch conditions read from a geometry file."""
    patches = []
    for c, cond in zip(curves, conds):
        q = build_patch(c, cond.bc_type, cond.known, homogeneous=cond.known is None,
                        complex_data=cond.complex_data)
        q = set_field_order(q, p)
        for _ in range(level):
            q = refine_unknown_field(q, lockstep=lockstep)
        patches.append(q)
    return Discretisation(patches)


def _problem_discretiser(cfg: RunConfig, default):
    """``(curves, f(level, lockstep) -> Discretisation, setting)``; geometry-file
    conditions win, otherwise ``default`` picks the built-in data."""
    curves = load_curves(cfg.geometry)
    conds = None
    if cfg.geometry not in BUILTINS:
        conds = patch_conditions(load_geometry(cfg.geometry)[1], cfg.material)
    if conds is not None:
        return curves, (lambda level, lockstep=False: discretise_file(curves, conds, cfg.order, level, lockstep)), None
    return (curves,) + default(curves)


def cmd_compress(cfg: RunConfig) -> str:
    """Neumann problem with constant traction (or the file's conditions);
    storage of the assembled operators per level."""
    from .assembly import measure_c_sub
    from .hmatrix import HSystem

    def default(curves):
        f = lambda level, lockstep=False: discretise(curves, NEUMANN, cfg.order, level, _constant_traction,
                                                     complex_data=False, lockstep=lockstep)
        return f, None

    _, disc_at, _ = _problem_discretiser(cfg, default)
    quad = QuadratureConfig(eps_q=cfg.eps_q)
    records = []
    for level in cfg.levels:
        t0 = time.perf_counter()
        disc = disc_at(level)
        if cfg.backend == "hmatrix":
            hs = HSystem(disc, cfg.material, quad, cfg.hconfig())
            n, m, c_H = hs.n, hs.m, hs.c_H
        else:
            n, m, c_H = 2 * disc.n_unknowns, 2 * disc.n_known_active, 1.0
        c_sub = measure_c_sub(disc, disc_at(level, True)).c_sub
        records.append(LevelRecord(level, mesh_parameter(disc), n, m, None, c_H=c_H, c_sub=c_sub,
                                   c_tot=c_H * c_sub, seconds=time.perf_counter() - t0))
        log.info("compress level %d n=%d c_H=%.3f c_sub=%.3f", level, n, c_H, c_sub)
    return records_csv(records, cfg.timings)


def ops_curve(p: int) -> NurbsCurve:
    """Fixed rational test curve of order ``p`` with three interior knots."""
    kv = KnotVector((0.0,) * (p + 1) + (0.25, 0.5, 0.75) + (1.0,) * (p + 1), p)
    k = np.arange(p + 4, dtype=float)
    pts = np.column_stack([np.cos(0.7 * k) + 0.1 * k, np.sin(0.9 * k)])
    return NurbsCurve(NurbsBasis(kv, tuple(1.0 + 0.2 * (k % 3))), pts)


def cmd_ops_count(cfg: RunConfig) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("p", "kind", "counted", "closed_form"))
    for p in range(1, 6):
        curve = ops_curve(p)
        for kind in OP_KINDS:
            counter = OpCounter()
            counted_evaluate(kind, curve, 0.37, counter)
            w.writerow((p, kind, counter.multiplications_and_divisions, predicted_op_count(kind, p)))
    return buf.getvalue()


SOLVE_COLUMNS = ("patch", "u", "x", "y", "ux", "uy", "tx", "ty")


def cmd_solve(cfg: RunConfig) -> str:
    """Boundary displacement and traction at the finest level, sampled at
    five points per span of each patch's unknown field."""
    from .assembly import build_system
    from .hmatrix import HSystem

    def default(curves):
        if cfg.problem not in ("neumann", "dirichlet"):
            raise ConfigError("problem: solve supports neumann or dirichlet")
        bc = NEUMANN if cfg.problem == "neumann" else DIRICHLET
        setting = default_setting("direct_" + cfg.problem, curves)
        mat = cfg.material
        known = (lambda x, n: setting.t(mat, x, n)) if bc == NEUMANN else (lambda x, n: setting.u(mat, x))
        return (lambda level, lockstep=False: discretise(curves, bc, cfg.order, level, known,
                                                         known_boost=1, lockstep=lockstep)), setting

    _, disc_at, _ = _problem_discretiser(cfg, default)
    quad = QuadratureConfig(eps_q=cfg.eps_q)
    disc = disc_at(cfg.levels[-1])
    if cfg.backend == "hmatrix":
        z = HSystem(disc, cfg.material, quad, cfg.hconfig()).solve()
    else:
        z = build_system(disc, cfg.material, quad).solve()
    ud, td = fields_from_solution(disc, z)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SOLVE_COLUMNS)
    for l, patch in enumerate(disc.patches):
        spans = patch.basis(patch.unknown_field).knot_vector.spans()
        u = np.concatenate([np.linspace(a, b, 5, endpoint=False) for _, a, b in spans] + [[spans[-1][2]]])
        x = patch.geometry.points(u)
        uv = disc.field_values("displacement", ud, l, u)
        tv = disc.field_values("traction", td, l, u)
        for k in range(len(u)):
            w.writerow([l, f"{u[k]:.10e}"] + [f"{v:.10e}" for v in (*x[k], *uv[k], *tv[k])])
    return buf.getvalue()


COMMANDS = {"converge": cmd_converge, "compress": cmd_compress,
            "ops-count": cmd_ops_count, "solve": cmd_solve}


def _emit(text: str, out):
    if out is None:
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(out).write_text(text)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        _emit(COMMANDS[args.command](cfg), cfg.out)
    except (ConfigError, ValueError, KeyError, RuntimeError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"subbem {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
