"""Quadrature rules on triangles and edges.

Triangle rules are stored in barycentric coordinates with weights summing
to one; physical integrals are obtained by multiplying with the element
area.  Edge rules live on the unit interval with weights summing to one
and scale with the edge length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class QuadratureError(Exception):
    """A rule failed its exactness validation."""


@dataclass(frozen=True)
class TriangleRule:
    """Quadrature rule on a triangle.

    Attributes
    ----------
    points : numpy.ndarray
        Barycentric coordinates, shape (n, 3), rows summing to one.
    weights : numpy.ndarray
        Weights summing to one, shape (n,).
    degree : int
        Largest total polynomial degree integrated exactly.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def npoints(self) -> int:
        return self.points.shape[0]

    def physical_points(self, coords: np.ndarray) -> np.ndarray:
        """Map the rule nodes onto triangles.

        Parameters
        ----------
        coords : numpy.ndarray
            Vertex coordinates with shape (..., 3, 2).

        Returns
        -------
        numpy.ndarray of shape (..., n, 2).
        """
        return np.einsum("qi,...id->...qd", self.points, coords)

    def integrate(self, values: np.ndarray, area) -> np.ndarray:
        """Integrate nodal values over triangles of the given areas.

        ``values`` has shape (..., n); ``area`` broadcasts against the
        leading axes.
        """
        return np.einsum("...q,q->...", values, self.weights) * area


@dataclass(frozen=True)
class EdgeRule:
    """Gauss rule on the unit interval (weights sum to one)."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def npoints(self) -> int:
        return self.points.shape[0]

    def physical_points(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Map nodes onto segments a->b; a, b have shape (..., 2)."""
        t = self.points
        return a[..., None, :] * (1.0 - t)[:, None] + b[..., None, :] * t[:, None]

    def integrate(self, values: np.ndarray, length) -> np.ndarray:
        return np.einsum("...q,q->...", values, self.weights) * length


def midpoint_rule() -> TriangleRule:
    """Edge-midpoint rule, exact for quadratics."""
    pts = np.array([[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]])
    wts = np.full(3, 1.0 / 3.0)
    return TriangleRule(pts, wts, degree=2)


def seven_point_rule() -> TriangleRule:
    """Seven-point degree-5 rule (centroid plus two symmetric orbits)."""
    s15 = math.sqrt(15.0)
    a = (6.0 + s15) / 21.0
    b = (6.0 - s15) / 21.0
    wa = (155.0 + s15) / 1200.0
    wb = (155.0 - s15) / 1200.0
    pts = [[1.0 / 3.0] * 3]
    wts = [9.0 / 40.0]
    for c, w in ((a, wa), (b, wb)):
        rest = 1.0 - 2.0 * c
        pts += [[rest, c, c], [c, rest, c], [c, c, rest]]
        wts += [w, w, w]
    return TriangleRule(np.array(pts), np.array(wts), degree=5)


def collapsed_gauss_rule(n: int = 6) -> TriangleRule:
    """Tensor Gauss rule collapsed onto the triangle (oracle rule).

    An n-by-n Gauss-Legendre grid on the unit square mapped by
    (s, t) -> (s(1-t), t) integrates total degree <= 2n-2 exactly.
    Structurally independent of the symmetric production rules.
    """
    x, w = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (x + 1.0)
    ws = 0.5 * w
    S, T = np.meshgrid(s, s, indexing="ij")
    WS, WT = np.meshgrid(ws, ws, indexing="ij")
    xs = (S * (1.0 - T)).ravel()
    ys = T.ravel()
    wts = (WS * WT * (1.0 - T)).ravel()
    lam = np.column_stack([1.0 - xs - ys, xs, ys])
    return TriangleRule(lam, wts / wts.sum(), degree=2 * n - 2)


def gauss_edge_rule(n: int) -> EdgeRule:
    """n-point Gauss rule on [0, 1], exact to degree 2n-1."""
    x, w = np.polynomial.legendre.leggauss(n)
    return EdgeRule(0.5 * (x + 1.0), 0.5 * w, degree=2 * n - 1)


def _reference_monomial_integral(i: int, j: int) -> float:
    # int over {x,y>=0, x+y<=1} of x^i y^j = i! j! / (i+j+2)!
    return math.factorial(i) * math.factorial(j) / math.factorial(i + j + 2)


def validate_triangle_rule(rule: TriangleRule, tol: float = 1e-14) -> None:
    """Check the rule against closed-form monomial integrals.

    Raises QuadratureError on the first monomial x^i y^j with
    i + j <= rule.degree whose quadrature error exceeds ``tol``.
    """
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    pts = rule.physical_points(coords)
    if abs(rule.weights.sum() - 1.0) > tol:
        raise QuadratureError("rule weights do not sum to one")
    for i in range(rule.degree + 1):
        for j in range(rule.degree + 1 - i):
            approx = 0.5 * np.dot(rule.weights, pts[:, 0] ** i * pts[:, 1] ** j)
            exact = _reference_monomial_integral(i, j)
            if abs(approx - exact) > tol * max(1.0, abs(exact)):
                raise QuadratureError(
                    f"rule of degree {rule.degree} misses x^{i} y^{j}: "
                    f"{approx!r} vs {exact!r}"
                )


def validate_edge_rule(rule: EdgeRule, tol: float = 1e-14) -> None:
    """Check an edge rule against 1D monomial integrals."""
    for k in range(rule.degree + 1):
        approx = np.dot(rule.weights, rule.points**k)
        exact = 1.0 / (k + 1)
        if abs(approx - exact) > tol:
            raise QuadratureError(f"edge rule misses t^{k}")


# Shared instances; validated once on import so a bad table fails loudly.
MIDPOINT = midpoint_rule()
SEVEN_POINT = seven_point_rule()
ORACLE_TRI = collapsed_gauss_rule(6)
EDGE_GAUSS2 = gauss_edge_rule(2)
EDGE_GAUSS3 = gauss_edge_rule(3)
ORACLE_EDGE = gauss_edge_rule(10)

for _rule in (MIDPOINT, SEVEN_POINT, ORACLE_TRI):
    validate_triangle_rule(_rule)
for _erule in (EDGE_GAUSS2, EDGE_GAUSS3, ORACLE_EDGE):
    validate_edge_rule(_erule)
del _rule, _erule
