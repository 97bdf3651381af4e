"""Manufactured solutions, error norms, rates and the convergence driver.

The L2 error compares the interior solution against the element-wise
projection of the exact solution; the energy error compares weak-gradient
coefficients against the projected exact gradient, using the commuting
property of projection and weak gradient.  Rates are dyadic logs of
consecutive errors, matching the level-halving mesh families.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .localspaces import OperatorCache, project_qb
from .polymesh import GENERATORS, PolyMesh
from .wgsolve import SolverError, WGSolution, assemble, build_dof_map, solve


@dataclass(frozen=True)
class ManufacturedCase:
    """Exact solution bundle: u, its gradient, source f = -Laplace(u), and
    boundary data g = u restricted to the boundary."""

    label: str
    u: object
    grad_u: object
    f: object
    g: object

    def consistency_residual(self, n: int = 20, seed: int = 1234,
                             step: float = 1e-5) -> float:
        """Max |f + Laplace(u)| over random interior points, by central
        differences.

        Evaluated in extended precision: double-precision cancellation noise
        at step 1e-5 (~1e-5) would otherwise swamp the truncation error.
        """
        rng = np.random.default_rng(seed)
        pts = rng.uniform(0.2, 0.8, size=(n, 2)).astype(np.longdouble)
        x, y = pts[:, 0], pts[:, 1]
        h = np.longdouble(step)
        lap = (
            self.u(x + h, y) + self.u(x - h, y)
            + self.u(x, y + h) + self.u(x, y - h)
            - 4.0 * self.u(x, y)
        ) / h**2
        return float(np.max(np.abs(self.f(x, y) + lap)))


def _sin2d() -> ManufacturedCase:
    def u(x, y):
        return np.sin(np.pi * x) * np.sin(np.pi * y)

    def grad_u(x, y):
        return np.stack(
            [
                np.pi * np.cos(np.pi * x) * np.sin(np.pi * y),
                np.pi * np.sin(np.pi * x) * np.cos(np.pi * y),
            ],
            axis=-1,
        )

    def f(x, y):
        return 2.0 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y)

    return ManufacturedCase("sin2d", u, grad_u, f, u)


def _patch_linear() -> ManufacturedCase:
    def u(x, y):
        return 2.0 * x + 3.0 * y - 1.0

    def grad_u(x, y):
        return np.stack([np.full_like(x, 2.0), np.full_like(y, 3.0)], axis=-1)

    def f(x, y):
        return np.zeros_like(x)

    return ManufacturedCase("patch-linear", u, grad_u, f, u)


def _patch_quadratic() -> ManufacturedCase:
    def u(x, y):
        return x**2 - y**2

    def grad_u(x, y):
        return np.stack([2.0 * x, -2.0 * y], axis=-1)

    def f(x, y):
        return np.zeros_like(x)

    return ManufacturedCase("patch-quadratic", u, grad_u, f, u)


CASES = {
    "sin2d": _sin2d,
    "patch-linear": _patch_linear,
    "patch-quadratic": _patch_quadratic,
}


def get_case(label: str) -> ManufacturedCase:
    try:
        return CASES[label]()
    except KeyError:
        raise KeyError(
            f"unknown case '{label}'; available: {sorted(CASES)}"
        ) from None


def l2_projection_error(mesh: PolyMesh, k: int, u, solution: WGSolution,
                        cache: OperatorCache | None = None) -> float:
    """L2 norm of (projected exact solution - interior solution)."""
    if cache is None:
        cache = OperatorCache(mesh, k)
    acc = 0.0
    for c in range(mesh.n_cells):
        ops = cache.get(c)
        delta = ops.project_interior(u) - solution.u0[c]
        acc += float(ops.scalar_norm_sq(delta))
    return math.sqrt(acc)


def energy_error(mesh: PolyMesh, k: int, u, grad_u, solution: WGSolution,
                 cache: OperatorCache | None = None) -> float:
    """Energy norm of (projected exact solution - discrete solution).

    Per cell this is the weak-gradient-space distance between the projected
    exact gradient and the weak gradient of the discrete solution.
    """
    if cache is None:
        cache = OperatorCache(mesh, k)
    dofmap = build_dof_map(mesh, k)
    full = solution.full_vector(dofmap)
    acc = 0.0
    for c in range(mesh.n_cells):
        ops = cache.get(c)
        exact = ops.project_lambda_field(grad_u)
        discrete = ops.apply_weak_gradient(full[dofmap.cell_dofs(mesh, c)])
        acc += float(ops.lambda_norm_sq(exact - discrete))
    return math.sqrt(acc)


def energy_error_via_projection(mesh: PolyMesh, k: int, u, solution: WGSolution,
                                cache: OperatorCache | None = None) -> float:
    """Energy error evaluated as the weak gradient of the projected exact
    solution minus the weak gradient of the discrete one; consistency oracle
    for the commuting route used by energy_error."""
    if cache is None:
        cache = OperatorCache(mesh, k)
    dofmap = build_dof_map(mesh, k)
    full = solution.full_vector(dofmap)
    qb = {e: project_qb(mesh, e, k, u) for e in range(mesh.n_edges)}
    acc = 0.0
    for c in range(mesh.n_cells):
        ops = cache.get(c)
        local_exact = np.concatenate(
            [ops.project_interior(u)] + [qb[e] for e in mesh.cell_edges[c]]
        )
        diff = ops.apply_weak_gradient(local_exact - full[dofmap.cell_dofs(mesh, c)])
        acc += float(ops.lambda_norm_sq(diff))
    return math.sqrt(acc)


def rate(e_prev: float, e_curr: float) -> float:
    """Dyadic convergence rate; NaN marks undefined (nonpositive) input."""
    if e_prev <= 0.0 or e_curr <= 0.0:
        return math.nan
    return math.log2(e_prev / e_curr)


@dataclass(frozen=True)
class ErrorReport:
    level: int
    dofs: int
    l2_err: float
    energy_err: float
    iterations: int
    residual: float
    method: str


@dataclass(frozen=True)
class ConvergenceRow:
    level: int
    l2_err: float
    l2_rate: float
    energy_err: float
    energy_rate: float


@dataclass
class ConvergenceTable:
    """Per-level errors and dyadic rates for one (family, degree, case) study."""

    family: str
    k: int
    case: str
    rows: list[ConvergenceRow] = field(default_factory=list)
    reports: list[ErrorReport] = field(default_factory=list)
    partial: bool = False
    failure: str = ""

    @staticmethod
    def _fmt_rate(r: float) -> str:
        return "" if math.isnan(r) else repr(r)

    def to_csv(self) -> str:
        lines = ["level,l2_err,l2_rate,energy_err,energy_rate"]
        for row in self.rows:
            lines.append(
                f"{row.level},{row.l2_err!r},{self._fmt_rate(row.l2_rate)},"
                f"{row.energy_err!r},{self._fmt_rate(row.energy_rate)}"
            )
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        head = (
            f"| level | l2_err | rate | energy_err | rate |\n"
            f"|------:|----------:|-----:|----------:|-----:|\n"
        )
        body = []
        for row in self.rows:
            l2r = "  -- " if math.isnan(row.l2_rate) else f"{row.l2_rate:5.2f}"
            enr = "  -- " if math.isnan(row.energy_rate) else f"{row.energy_rate:5.2f}"
            body.append(
                f"| {row.level:5d} | {row.l2_err:.3E} | {l2r} | "
                f"{row.energy_err:.3E} | {enr} |"
            )
        return head + "\n".join(body) + "\n"

    def to_json(self) -> str:
        payload = {
            "family": self.family,
            "k": self.k,
            "case": self.case,
            "partial": self.partial,
            "rows": [
                {
                    "level": row.level,
                    "l2_err": row.l2_err,
                    "l2_rate": None if math.isnan(row.l2_rate) else row.l2_rate,
                    "energy_err": row.energy_err,
                    "energy_rate": None
                    if math.isnan(row.energy_rate)
                    else row.energy_rate,
                    "dofs": rep.dofs,
                    "residual": rep.residual,
                }
                for row, rep in zip(self.rows, self.reports)
            ],
        }
        if self.partial:
            payload["failure"] = self.failure
        return json.dumps(payload, indent=2) + "\n"

    def render(self, fmt: str) -> str:
        if fmt == "csv":
            return self.to_csv()
        if fmt == "md":
            return self.to_markdown()
        if fmt == "json":
            return self.to_json()
        raise ValueError(f"unknown table format '{fmt}'")


def solve_case(mesh: PolyMesh, k: int, case: ManufacturedCase, tol: float = 1e-12,
               cache: OperatorCache | None = None
               ) -> tuple[WGSolution, OperatorCache]:
    """Assemble and solve one manufactured problem on a given mesh."""
    if cache is None:
        cache = OperatorCache(mesh, k)
    system = assemble(mesh, k, case.f, case.g, cache=cache)
    return solve(system, tol=tol), cache


def run_level(family: str, level: int, k: int, case: ManufacturedCase,
              tol: float = 1e-12) -> ErrorReport:
    mesh = GENERATORS[family](level)
    solution, cache = solve_case(mesh, k, case, tol=tol)
    l2 = l2_projection_error(mesh, k, case.u, solution, cache)
    energy = energy_error(mesh, k, case.u, case.grad_u, solution, cache)
    dofs = build_dof_map(mesh, k).n_dofs
    return ErrorReport(
        level=level, dofs=dofs, l2_err=l2, energy_err=energy,
        iterations=solution.iterations, residual=solution.residual,
        method=solution.method,
    )


NOISE_FLOOR = 1e-13


def run_convergence(family: str, k: int, levels, case: ManufacturedCase,
                    tol: float = 1e-12) -> ConvergenceTable:
    """Solve on successive levels and tabulate errors with dyadic rates.

    Rates touching the solver noise floor (exactly-reproduced polynomial
    cases) are marked undefined.  A failed level flags the table as partial
    and keeps the completed rows.
    """
    if family not in GENERATORS:
        raise ValueError(f"unknown mesh family '{family}'")
    table = ConvergenceTable(family=family, k=k, case=case.label)
    prev: ErrorReport | None = None
    for level in levels:
        try:
            rep = run_level(family, level, k, case, tol=tol)
        except SolverError as exc:
            table.partial = True
            table.failure = f"level {level}: {exc}"
            break
        if prev is None:
            l2_rate = en_rate = math.nan
        else:
            l2_rate = rate(prev.l2_err, rep.l2_err)
            en_rate = rate(prev.energy_err, rep.energy_err)
            if min(prev.l2_err, rep.l2_err) <= NOISE_FLOOR:
                l2_rate = math.nan
            if min(prev.energy_err, rep.energy_err) <= NOISE_FLOOR:
                en_rate = math.nan
        table.rows.append(
            ConvergenceRow(level, rep.l2_err, l2_rate, rep.energy_err, en_rate)
        )
        table.reports.append(rep)
        prev = rep
    return table
