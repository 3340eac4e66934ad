"""Closed-form reference surfaces: catenoids, sphere pieces, flat pieces."""
from __future__ import annotations

import numpy as np

from ..geometry import FlatMetric, HalfSpace, TorusSlab
from ..grid import StructuredGrid, bounded_axis, periodic_axis
from .gridsurface import GridSurface
from .mesh import FIXED, FREE, TriMesh, grid_mesh


def _catenoid_jets(u, v):
    cu, su, ch, sh = np.cos(u), np.sin(u), np.cosh(v), np.sinh(v)
    z = np.zeros_like(u)
    P = np.stack([ch * su, ch * cu, v], -1)
    Pu = np.stack([ch * cu, -ch * su, z], -1)
    Pv = np.stack([sh * su, sh * cu, np.ones_like(u)], -1)
    Puu = np.stack([-ch * su, -ch * cu, z], -1)
    Puv = np.stack([sh * cu, -sh * su, z], -1)
    Pvv = np.stack([ch * su, ch * cu, z], -1)
    dP = np.stack([Pu, Pv], 1)
    ddP = np.stack([np.stack([Puu, Puv], 1), np.stack([Puv, Pvv], 1)], 1)
    return P, dP, ddP


def half_catenoid(nu: int, nv: int, V: float = 1.5) -> GridSurface:
    """``(cosh v sin u, cosh v cos u, v)`` for ``0 <= u <= pi``, ``|v| <= V``.

    Lies in ``{x1 >= 0}`` and meets the plane ``{x1 = 0}`` orthogonally along the
    free edges ``u = 0`` and ``u = pi``; the edges ``v = +-V`` are fixed.
    """
    grid = StructuredGrid([bounded_axis(0.0, np.pi, nu), bounded_axis(-V, V, nv)])
    u, v = grid.coords[:, 0], grid.coords[:, 1]
    P, dP, ddP = _catenoid_jets(u, v)
    P[:, 0] = np.maximum(P[:, 0], 0.0)  # sin(pi) round-off
    return GridSurface(grid, P, dP, ddP, FlatMetric(HalfSpace(3)),
                       free_faces=[(0, "low"), (0, "high")], fixed_faces=[(1, "low"), (1, "high")])


def catenoid_band(nu: int, nv: int, V: float = 2.5) -> GridSurface:
    """Full catenoid band ``|v| <= V`` (periodic in ``u``), fixed edges at ``v = +-V``.

    The ambient chart is a large box so the band has no free boundary.
    """
    grid = StructuredGrid([periodic_axis(0.0, 2 * np.pi, nu), bounded_axis(-V, V, nv)])
    u, v = grid.coords[:, 0], grid.coords[:, 1]
    P, dP, ddP = _catenoid_jets(u, v)
    R = np.cosh(V) + 1
    chart = TorusSlab(3, lengths=[2 * R, 2 * R], periodic=(False, False), thickness=2 * V + 2,
                      lower=[-R, -R])
    P = P + np.array([0.0, 0.0, V + 1])
    return GridSurface(grid, P, dP, ddP, FlatMetric(chart), fixed_faces=[(1, "low"), (1, "high")])


def catenoid_mesh(nu: int, nv: int, V: float = 1.5, half: bool = True) -> TriMesh:
    """Triangulation of the (half-)catenoid grid with exact unit normals."""
    surf = half_catenoid(nu, nv, V) if half else catenoid_band(nu, nv, V)
    pts = surf.P
    normals = surf.nu

    def label(a, b):
        if half and a[0] == b[0] and a[0] in (0, nu - 1):
            return FREE
        return FIXED

    return grid_mesh(pts, (nu, nv), periodic=(not half, False), labels_fn=label, normals=normals)


def sphere_zone(ntheta: int, nphi: int, theta0: float, theta1: float, center=(2.0, 0.0, 0.0)) -> GridSurface:
    """Zone ``theta0 <= theta <= theta1`` of the unit sphere, outward normal."""
    grid = StructuredGrid([bounded_axis(theta0, theta1, ntheta), periodic_axis(0.0, 2 * np.pi, nphi)])
    t, p = grid.coords[:, 0], grid.coords[:, 1]
    st, ct, sp, cp = np.sin(t), np.cos(t), np.sin(p), np.cos(p)
    z = np.zeros_like(t)
    P = np.stack([st * cp, st * sp, ct], -1) + np.asarray(center)
    Pt = np.stack([ct * cp, ct * sp, -st], -1)
    Pp = np.stack([-st * sp, st * cp, z], -1)
    Ptt = np.stack([-st * cp, -st * sp, -ct], -1)
    Ptp = np.stack([-ct * sp, ct * cp, z], -1)
    Ppp = np.stack([-st * cp, -st * sp, z], -1)
    dP = np.stack([Pt, Pp], 1)
    ddP = np.stack([np.stack([Ptt, Ptp], 1), np.stack([Ptp, Ppp], 1)], 1)
    surf = GridSurface(grid, P, dP, ddP, FlatMetric(HalfSpace(3)),
                       fixed_faces=[(0, "low"), (0, "high")])
    if np.mean(np.einsum("ni,ni->n", surf.nu, P - center)) < 0:
        surf = GridSurface(grid, P, dP, ddP, surf.metric, fixed_faces=surf.fixed_faces, normal_sign=-1.0)
    return surf


def flat_sheet(nx: int, ny: int, half_width: float = 1.0, height: float = 1.0, metric=None) -> GridSurface:
    """Piece ``{x3 = height, 0 <= x1 <= w, |x2| <= w}`` of a horizontal plane.

    The edge ``x1 = 0`` is free, the other three are fixed.
    """
    w = half_width
    grid = StructuredGrid([bounded_axis(0.0, w, nx), bounded_axis(-w, w, ny)])
    N = grid.size
    P = np.stack([grid.coords[:, 0], grid.coords[:, 1], np.full(N, height)], -1)
    dP = np.zeros((N, 2, 3))
    dP[:, 0, 0] = dP[:, 1, 1] = 1.0
    ddP = np.zeros((N, 2, 2, 3))
    return GridSurface(grid, P, dP, ddP, metric or FlatMetric(HalfSpace(3)),
                       free_faces=[(0, "low")], fixed_faces=[(0, "high"), (1, "low"), (1, "high")])


def _fan_disk(points_fn, nr: int, nt: int, closed: bool):
    """Centre vertex plus ``nr`` rings of ``nt`` (or ``nt + 1`` when open) vertices."""
    m = nt if closed else nt + 1
    V = [points_fn(0.0, 0.0)]
    for k in range(1, nr + 1):
        for j in range(m):
            V.append(points_fn(k / nr, (j / nt)))
    ring = lambda k, j: 1 + (k - 1) * m + (j % nt if closed else j)  # noqa: E731
    F = []
    jr = range(nt)
    for j in jr:
        F.append((0, ring(1, j), ring(1, j + 1)))
    for k in range(1, nr):
        for j in jr:
            a, b = ring(k, j), ring(k, j + 1)
            c, d = ring(k + 1, j + 1), ring(k + 1, j)
            F += [(a, d, c), (a, c, b)]
    return np.array(V), np.array(F)


def flat_half_disk(nr: int = 8, nt: int = 16) -> TriMesh:
    """Unit half-disk in the plane ``{x3 = 0}``: free diameter, fixed half circle."""
    V, F = _fan_disk(lambda r, s: np.array([r * np.sin(np.pi * s), r * np.cos(np.pi * s), 0.0]),
                     nr, nt, closed=False)
    mesh = TriMesh(V, F)
    labels = {}
    for a, b in mesh.boundary_edges:
        on_diameter = abs(V[a, 0]) < 1e-12 and abs(V[b, 0]) < 1e-12
        labels[(a, b)] = FREE if on_diameter else FIXED
    return TriMesh(V, F, labels)


def sphere_cap_mesh(nr: int = 16, nt: int = 48, alpha: float = np.pi / 3, exact_normals: bool = False) -> TriMesh:
    """Cap ``{polar angle <= alpha}`` of the unit sphere, outward orientation."""
    def pt(r, s):
        th, ph = alpha * r, 2 * np.pi * s
        return np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])

    V, F = _fan_disk(pt, nr, nt, closed=True)
    mesh = TriMesh(V, F, normals=V.copy() if exact_normals else None)
    if np.mean(np.einsum("ij,ij->i", mesh.face_normals(), V[F].mean(1))) < 0:
        mesh = TriMesh(V, F[:, ::-1], normals=V.copy() if exact_normals else None)
    return mesh


def cap_area(alpha: float) -> float:
    return 2 * np.pi * (1 - np.cos(alpha))
