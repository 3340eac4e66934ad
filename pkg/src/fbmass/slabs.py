"""Compact reference manifolds with boundary for the spectral experiments.

All are coordinate boxes (``TorusSlab`` charts, periodic or not):

* ``flat_slab``: flat torus-slab ``T^{n-1} x [0, 1]``.
* ``bump_slab``: round ``S^2`` times ``[0, 1]`` with an octahedrally
  symmetric warp vanishing to first order at both ends; one gnomonic cube
  face with mirror sides.  Positive scalar curvature, minimal boundary.
* ``hyperbolic_slab``: Klein square of the hyperbolic plane times ``[0, 1]``;
  negative scalar curvature, totally geodesic boundary.
* ``sphere_hyperbolic_box``: gnomonic square of ``S^2`` times Klein square of
  ``H^2`` (``n = 4``); scalar-flat, Ricci-nonflat, totally geodesic boundary.
"""
from __future__ import annotations

import numpy as np
import sympy

from .fields import SymbolicTensor, coordinate_symbols
from .geometry import AnalyticMetric, FlatMetric, MetricField, TorusSlab


def gnomonic_sphere(x, y, kappa=1):
    """Round metric of curvature ``kappa`` in gnomonic coordinates (geodesics are lines)."""
    d = (1 + x**2 + y**2) ** 2
    return sympy.Matrix([[1 + y**2, -x * y], [-x * y, 1 + x**2]]) / (kappa * d)


def klein_hyperbolic(x, y):
    """Hyperbolic metric (curvature -1) in the Klein model (geodesics are lines)."""
    d = (1 - x**2 - y**2) ** 2
    return sympy.Matrix([[1 - y**2, x * y], [x * y, 1 - x**2]]) / d


def flat_slab(n: int = 3, length: float = 1.0, thickness: float = 1.0) -> MetricField:
    return FlatMetric(TorusSlab(n, lengths=[length] * (n - 1), thickness=thickness))


def _box(n, half_width, thickness):
    return TorusSlab(n, lengths=[2 * half_width] * (n - 1), periodic=(False,) * (n - 1),
                     thickness=thickness, lower=[-half_width] * (n - 1))


def cube_face_invariant(x, y):
    """``p1^4 + p2^4 + p3^4`` of the unit vector ``(x, y, 1) / |(x, y, 1)|``; octahedrally symmetric."""
    return (x**4 + y**4 + 1) / (1 + x**2 + y**2) ** 2


def bump_slab(eps: float = 0.1, delta: float = 0.5, kappa: float = 1.0, thickness: float = 1.0) -> AnalyticMetric:
    """``exp(2 w) g_S + dt^2`` on ``S^2 x [0, thickness]`` with ``w = eps psi(t) (1 + delta s)``.

    ``S^2`` (curvature ``kappa``) is tiled by the six faces of the cube and
    ``s`` is the octahedral invariant, so one face with mirror sides
    represents the whole manifold.  The face uses equiangular coordinates
    ``x = tan(xi)``, ``xi`` in ``[-pi/4, pi/4]``, which keep the metric
    nearly uniform.  ``psi = sin^2(pi t)`` has ``psi' = 0`` at both ends, so
    the boundary is minimal.
    """
    xi, eta, t = coordinate_symbols(3)
    x, y = sympy.tan(xi), sympy.tan(eta)
    w = eps * sympy.sin(sympy.pi * t / thickness) ** 2 * (1 + delta * cube_face_invariant(x, y))
    jac = sympy.diag(1 / sympy.cos(xi) ** 2, 1 / sympy.cos(eta) ** 2)
    g = sympy.zeros(3, 3)
    g[:2, :2] = sympy.exp(2 * w) * (jac * gnomonic_sphere(x, y, kappa) * jac)
    g[2, 2] = 1
    a = np.pi / 4
    chart = TorusSlab(3, lengths=[2 * a, 2 * a], periodic=(False, False), thickness=thickness,
                      lower=[-a, -a], mirror=(True, True))
    return AnalyticMetric(chart, g)


def hyperbolic_slab(half_width: float = 0.5, thickness: float = 1.0) -> AnalyticMetric:
    x, y, t = coordinate_symbols(3)
    g = sympy.zeros(3, 3)
    g[:2, :2] = klein_hyperbolic(x, y)
    g[2, 2] = 1
    return AnalyticMetric(_box(3, half_width, thickness), g)


def sphere_hyperbolic_box(half_width: float = 0.4) -> AnalyticMetric:
    """``n = 4`` product ``(S^2 square) x (H^2 square)``; the last axis is the slab axis."""
    x1, x2, x3, x4 = coordinate_symbols(4)
    g = sympy.zeros(4, 4)
    g[:2, :2] = gnomonic_sphere(x1, x2)
    g[2:, 2:] = klein_hyperbolic(x3, x4)
    return AnalyticMetric(_box(4, half_width, 2 * half_width), _shift_last(g, x4, half_width))


def _shift_last(g, s, a):
    # the slab axis runs over [0, 2a]; the Klein square is centred at the origin
    return g.subs(s, s - a)


def sphere_hyperbolic_ricci_gamma(phi=None, half_width: float = 0.4) -> SymbolicTensor:
    """``-phi Ric`` for :func:`sphere_hyperbolic_box` (``Ric = g_S (+) -g_H``)."""
    x1, x2, x3, x4 = coordinate_symbols(4)
    phi = sympy.Integer(1) if phi is None else phi
    ric = sympy.zeros(4, 4)
    ric[:2, :2] = gnomonic_sphere(x1, x2)
    ric[2:, 2:] = -klein_hyperbolic(x3, x4)
    return SymbolicTensor(-phi * _shift_last(ric, x4, half_width), 4)


class ScaledMetric(MetricField):
    """``s^2 g`` in the same coordinates."""

    def __init__(self, base: MetricField, s: float):
        super().__init__(base.chart)
        self.base, self.s2 = base, float(s) ** 2

    def _jet(self, x):
        return tuple(self.s2 * a for a in self.base._jet(x))
