"""Stabilizer-free weak Galerkin Poisson solver on 2D polytopal meshes.

Discrete functions carry separate cell-interior and edge polynomials tied
together only through a weak gradient taken in a piecewise Raviart-Thomas
space on each cell's fan sub-triangulation.  The resulting scheme needs no
penalty term and converges one order above optimal in both the energy norm
and L2.
"""

from .analysis import (
    CASES,
    ConvergenceTable,
    ErrorReport,
    ManufacturedCase,
    energy_error,
    get_case,
    l2_projection_error,
    rate,
    run_convergence,
)
from .localspaces import (
    CellScalarBasis,
    RTFrame,
    EdgeScalarBasis,
    LambdaBasis,
    LocalCellOperators,
    OperatorCache,
    WeakGradientOperator,
    build_lambda_basis,
    build_rt_basis,
    compute_weak_gradient,
    dim_pk,
    expected_lambda_dim,
    project_lambda,
    project_q0,
    project_qb,
)
from .polymesh import (
    GENERATORS,
    PolyMesh,
    SubTriangulation,
    generate_hex_grid,
    generate_quad_grid,
    generate_square_grid,
    read_mesh,
    triangulate_cell,
    write_mesh,
)
from .quadrature import (
    QuadRule,
    integrate_cell,
    integrate_edge,
    segment_rule,
    triangle_rule,
)
from .wgsolve import (
    DofMap,
    SparseSymSystem,
    WGSolution,
    assemble,
    build_dof_map,
    solve,
)

__version__ = "0.1.0"
