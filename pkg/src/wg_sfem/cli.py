"""Command-line entry point: mesh generation, single solves, convergence studies.

Exit codes: 0 success, 2 usage error, 3 solver failure, 4 partial study.
Stdout numbers use 4-significant-digit scientific notation; files carry full
precision.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass

from .analysis import (
    CASES,
    energy_error,
    get_case,
    l2_projection_error,
    run_convergence,
    solve_case,
)
from .localspaces import MAX_DEGREE
from .polymesh import GENERATORS, read_mesh, write_mesh
from .wgsolve import SolverError, build_dof_map

LEVEL_CAPS = {"square": 8, "quad": 8, "hex": 7}
FORMATS = ("csv", "md", "json")


@dataclass(frozen=True)
class RunConfig:
    """Validated options of one CLI invocation."""

    subcommand: str
    family: str | None = None
    level: int | None = None
    levels: tuple[int, int] | None = None
    degree: int = 0
    case: str = "sin2d"
    mesh_path: str | None = None
    out: str | None = None
    fmt: str = "csv"
    tol: float = 1e-12


def _fmt(v: float) -> str:
    return f"{v:.3E}"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wg-sfem",
        description="Stabilizer-free weak Galerkin Poisson solver on polytopal meshes",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_mesh = sub.add_parser("mesh", help="generate a mesh family level and write JSON")
    p_mesh.add_argument("--family", required=True, choices=sorted(GENERATORS))
    p_mesh.add_argument("--level", required=True, type=int)
    p_mesh.add_argument("--out", required=True)

    p_solve = sub.add_parser("solve", help="solve one manufactured case on a mesh")
    p_solve.add_argument("--mesh", dest="mesh_path")
    p_solve.add_argument("--family", choices=sorted(GENERATORS))
    p_solve.add_argument("--level", type=int)
    p_solve.add_argument("--degree", required=True, type=int)
    p_solve.add_argument("--case", default="sin2d", choices=sorted(CASES))
    p_solve.add_argument("--out")
    p_solve.add_argument("--tol", type=float, default=1e-12)

    p_conv = sub.add_parser("convergence", help="run a convergence study over levels")
    p_conv.add_argument("--family", required=True, choices=sorted(GENERATORS))
    p_conv.add_argument("--degree", required=True, type=int)
    p_conv.add_argument("--levels", required=True, help="range A:B, inclusive")
    p_conv.add_argument("--case", default="sin2d", choices=sorted(CASES))
    p_conv.add_argument("--format", dest="fmt", default="csv", choices=FORMATS)
    p_conv.add_argument("--out")
    p_conv.add_argument("--tol", type=float, default=1e-12)
    return parser


def _validate(parser: argparse.ArgumentParser, args: argparse.Namespace) -> RunConfig:
    cfg_kwargs = {"subcommand": args.subcommand}

    def check_level(family: str, level: int) -> None:
        cap = LEVEL_CAPS[family]
        if not 1 <= level <= cap:
            parser.error(f"level {level} outside [1, {cap}] for family '{family}'")

    if args.subcommand == "mesh":
        check_level(args.family, args.level)
        cfg_kwargs.update(family=args.family, level=args.level, out=args.out)
        return RunConfig(**cfg_kwargs)

    if not 0 <= args.degree <= MAX_DEGREE:
        parser.error(f"degree {args.degree} outside [0, {MAX_DEGREE}]")

    if args.subcommand == "solve":
        if args.mesh_path is not None:
            if args.family is not None or args.level is not None:
                parser.error("give either --mesh or --family/--level, not both")
        else:
            if args.family is None or args.level is None:
                parser.error("either --mesh or both --family and --level are required")
            check_level(args.family, args.level)
        cfg_kwargs.update(
            family=args.family, level=args.level, degree=args.degree, case=args.case,
            mesh_path=args.mesh_path, out=args.out, tol=args.tol,
        )
        return RunConfig(**cfg_kwargs)

    try:
        a, b = args.levels.split(":")
        lo, hi = int(a), int(b)
    except ValueError:
        parser.error(f"levels must be 'A:B', got '{args.levels}'")
    if hi - lo + 1 < 2:
        parser.error(f"level range {args.levels} must contain at least 2 levels")
    check_level(args.family, lo)
    check_level(args.family, hi)
    cfg_kwargs.update(
        family=args.family, levels=(lo, hi), degree=args.degree, case=args.case,
        out=args.out, fmt=args.fmt, tol=args.tol,
    )
    return RunConfig(**cfg_kwargs)


def _cmd_mesh(cfg: RunConfig) -> int:
    mesh = GENERATORS[cfg.family](cfg.level)
    write_mesh(mesh, cfg.out)
    print(
        f"family={cfg.family} level={cfg.level} vertices={mesh.n_vertices} "
        f"cells={mesh.n_cells} edges={mesh.n_edges} -> {cfg.out}"
    )
    return 0


def _cmd_solve(cfg: RunConfig) -> int:
    if cfg.mesh_path is not None:
        mesh = read_mesh(cfg.mesh_path)
    else:
        mesh = GENERATORS[cfg.family](cfg.level)
    case = get_case(cfg.case)
    try:
        solution, cache = solve_case(mesh, cfg.degree, case, tol=cfg.tol)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    l2 = l2_projection_error(mesh, cfg.degree, case.u, solution, cache)
    energy = energy_error(mesh, cfg.degree, case.u, case.grad_u, solution, cache)
    dofs = build_dof_map(mesh, cfg.degree).n_dofs
    print(
        f"dofs={dofs} residual={_fmt(solution.residual)} "
        f"l2_err={_fmt(l2)} energy_err={_fmt(energy)}"
    )
    if cfg.out:
        payload = {
            "k": cfg.degree,
            "u0": [[float(v) for v in row] for row in solution.u0],
            "ub": [[float(v) for v in row] for row in solution.ub],
            "residual": solution.residual,
        }
        with open(cfg.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
            fh.write("\n")
    return 0


def _cmd_convergence(cfg: RunConfig) -> int:
    lo, hi = cfg.levels
    case = get_case(cfg.case)
    table = run_convergence(cfg.family, cfg.degree, range(lo, hi + 1), case,
                            tol=cfg.tol)
    rendered = table.render(cfg.fmt)
    print(rendered, end="")
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8") as fh:
            fh.write(rendered)
    if table.partial:
        print(f"study incomplete: {table.failure}", file=sys.stderr)
        return 4
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    cfg = _validate(parser, args)
    if cfg.subcommand == "mesh":
        return _cmd_mesh(cfg)
    if cfg.subcommand == "solve":
        return _cmd_solve(cfg)
    return _cmd_convergence(cfg)


if __name__ == "__main__":
    sys.exit(main())
