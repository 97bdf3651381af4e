"""Gauss quadrature on segments and triangles, composed over sub-triangulations.

Segment rules are Gauss-Legendre on [0, 1].  Triangle rules are collapsed
(Duffy-type) Gauss products on the reference triangle {x, y >= 0, x + y <= 1};
the extra (1 - x) Jacobian factor raises the x-direction degree by one, which
the point count accounts for.  Any rule construction is acceptable as long as
the monomial exactness sweep in the test suite passes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np

MAX_SEGMENT_DEGREE = 40
MAX_TRIANGLE_DEGREE = 25


class UnsupportedDegreeError(ValueError):
    """Polynomial exactness degree outside the supported range."""


def assembly_degree(k: int) -> int:
    """Quadrature degree for products of two degree-(k+1) discrete fields."""
    return 2 * k + 4


def data_degree(k: int) -> int:
    """Quadrature degree for integrals against analytic data (f, u, grad u).

    Chosen so data-side quadrature error stays orders below both the finest
    discretization errors and the 1e-10 projection-commutation tolerance,
    even on coarse-level cells.
    """
    return 2 * k + 12


@dataclass(frozen=True)
class QuadRule:
    """Immutable point/weight set exact for polynomials up to exact_degree."""

    points: np.ndarray
    weights: np.ndarray
    exact_degree: int


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@lru_cache(maxsize=None)
def segment_rule(degree: int) -> QuadRule:
    """Gauss-Legendre rule on [0, 1] exact for P_degree."""
    if degree < 0:
        raise UnsupportedDegreeError(f"negative quadrature degree {degree}")
    if degree > MAX_SEGMENT_DEGREE:
        raise UnsupportedDegreeError(
            f"segment rules support degree <= {MAX_SEGMENT_DEGREE}, got {degree}"
        )
    n = degree // 2 + 1
    t, w = np.polynomial.legendre.leggauss(n)
    return QuadRule(_readonly(0.5 * (t + 1.0)), _readonly(0.5 * w), degree)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadRule:
    """Collapsed Gauss product rule on the reference triangle, exact for P_degree."""
    if degree < 0:
        raise UnsupportedDegreeError(f"negative quadrature degree {degree}")
    if degree > MAX_TRIANGLE_DEGREE:
        raise UnsupportedDegreeError(
            f"triangle rules support degree <= {MAX_TRIANGLE_DEGREE}, got {degree}"
        )
    nx = (degree + 3) // 2
    ny = (degree + 2) // 2
    tx, wx = np.polynomial.legendre.leggauss(nx)
    ty, wy = np.polynomial.legendre.leggauss(ny)
    gx, gy = 0.5 * (tx + 1.0), 0.5 * (ty + 1.0)
    wx, wy = 0.5 * wx, 0.5 * wy

    X = np.repeat(gx, ny)
    Y = np.tile(gy, nx) * (1.0 - X)
    W = np.repeat(wx * (1.0 - gx), ny) * np.tile(wy, nx)
    pts = np.column_stack([X, Y])
    return QuadRule(_readonly(pts), _readonly(W), degree)


def reference_triangle_monomial_integral(a: int, b: int) -> float:
    """Exact value of the x^a y^b integral over the reference triangle."""
    return factorial(a) * factorial(b) / factorial(a + b + 2)


def triangle_points(tri: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Physical quadrature points/weights on a triangle; weights sum to its area."""
    tri = np.asarray(tri, dtype=float)
    rule = triangle_rule(degree)
    e1 = tri[1] - tri[0]
    e2 = tri[2] - tri[0]
    det = e1[0] * e2[1] - e1[1] * e2[0]
    pts = tri[0] + np.outer(rule.points[:, 0], e1) + np.outer(rule.points[:, 1], e2)
    return pts, rule.weights * abs(det)


def segment_points(a: np.ndarray, b: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Physical quadrature points/weights on segment [a, b]; weights sum to |b - a|."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    rule = segment_rule(degree)
    pts = a + np.outer(rule.points, b - a)
    return pts, rule.weights * float(np.linalg.norm(b - a))


def integrate_cell(mesh, subtri, f, degree: int):
    """Integrate a scalar or vector field over a cell via its sub-triangulation.

    f is called as f(x, y) with coordinate arrays and must return shape (n,)
    for scalar fields or (n, 2) for vector fields.
    """
    total = None
    for tri in subtri.triangles:
        pts, w = triangle_points(mesh.vertices[list(tri)], degree)
        vals = np.asarray(f(pts[:, 0], pts[:, 1]), dtype=float)
        contrib = w @ vals
        total = contrib if total is None else total + contrib
    return total


def integrate_edge(mesh, edge: int, f, degree: int):
    """Integrate a field along a mesh edge with arc-length weighting."""
    va, vb = mesh.edges[edge]
    pts, w = segment_points(mesh.vertices[va], mesh.vertices[vb], degree)
    vals = np.asarray(f(pts[:, 0], pts[:, 1]), dtype=float)
    return w @ vals
