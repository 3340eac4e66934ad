"""Metrics on half-space and torus-slab charts, curvature, and conformal laws.

Conventions
-----------
* ``g[..., i, j]`` metric, ``dg[..., k, i, j] = d_k g_ij``,
  ``d2g[..., k, l, i, j] = d_k d_l g_ij``.
* ``Gamma[..., k, i, j]`` is the Christoffel symbol with upper index ``k``.
* ``R(X, Y)Z = nabla_X nabla_Y Z - nabla_Y nabla_X Z - nabla_[X,Y] Z`` and
  ``Ric(Y, Z) = tr(X -> R(X, Y)Z)`` so round spheres have positive curvature.
* Boundary quantities use the outward unit normal ``N``; ``A(Y, Z) = <nabla_Y N, Z>``
  and ``H = tr A``.  A flat half-space boundary has ``H = 0``, a round ball ``H > 0``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

from .errors import (DegenerateStencil, IoFailure, NonPositiveConformalFactor,
                     NonPositiveDefinite, PointOutsideChart)
from .fields import ScalarField, SymbolicTensor
from .grid import PERIODIC, POLE, StructuredGrid, bounded_axis, periodic_axis

_EDGE_TOL = 1e-10


def c_n(n: int) -> float:
    """Coupling constant of the conformal Laplacian, ``(n-2)/(4(n-1))``."""
    return (n - 2) / (4.0 * (n - 1))


@lru_cache(maxsize=None)
def _calibration_table() -> dict:
    with resources.files("fbmass.data").joinpath("calibration.json").open() as fh:
        return json.load(fh)


def calibration(n: int) -> dict:
    """Golden calibration record for dimension ``n`` (keys ``kappa``, ``C``)."""
    table = _calibration_table()
    if str(n) not in table:
        raise ValueError(f"no calibration stored for n={n}")
    return table[str(n)]


# --------------------------------------------------------------------------
# charts
# --------------------------------------------------------------------------
class Chart:
    """Coordinate domain with a list of boundary faces ``(axis, value, outward_sign)``."""

    n: int
    faces: tuple

    def check(self, x: np.ndarray) -> None:
        raise NotImplementedError

    def face_mask(self, x: np.ndarray, face, tol: float = 1e-9) -> np.ndarray:
        axis, value, _ = face
        return np.abs(np.real(x[..., axis]) - value) <= tol

    def face_of(self, x: np.ndarray, tol: float = 1e-9):
        """First boundary face containing the single point ``x``, else ``None``."""
        for face in self.faces:
            if self.face_mask(np.asarray(x), face, tol):
                return face
        return None


class HalfSpace(Chart):
    """``{x1 >= 0}``; the boundary is ``{x1 = 0}`` with outward normal ``-d_1``."""

    kind = "halfspace"

    def __init__(self, n: int):
        if not 3 <= n <= 7:
            raise ValueError("dimension must lie in 3..7")
        self.n = n
        self.faces = ((0, 0.0, -1),)

    def check(self, x):
        if np.any(np.real(x[..., 0]) < -_EDGE_TOL):
            raise PointOutsideChart("half-space points need x1 >= 0")


class TorusSlab(Chart):
    """Box ``prod [lower_a, lower_a + L_a] x [0, thickness]``.

    Lateral axes ``0 .. n-2`` are periodic when flagged (the torus-slab); the
    slab axis is the last one.  Non-periodic lateral axes turn the chart into a
    box whose side faces are boundary faces too, unless flagged ``mirror``:
    then the side is a reflection plane of the underlying manifold and is left
    out of ``boundary_faces``.
    """

    kind = "torusslab"

    def __init__(self, n: int, lengths=None, periodic=None, thickness: float = 1.0, lower=None, mirror=None):
        if not 2 <= n <= 7:
            raise ValueError("dimension must lie in 2..7")
        self.n = n
        self.lengths = np.ones(n - 1) if lengths is None else np.asarray(lengths, float)
        self.periodic = (True,) * (n - 1) if periodic is None else tuple(bool(p) for p in periodic)
        self.lower = np.zeros(n - 1) if lower is None else np.asarray(lower, float)
        self.thickness = float(thickness)
        faces = [(n - 1, 0.0, -1), (n - 1, self.thickness, 1)]
        for a in range(n - 1):
            if not self.periodic[a]:
                faces += [(a, self.lower[a], -1), (a, self.lower[a] + self.lengths[a], 1)]
        self.faces = tuple(faces)
        # mirror sides are symmetry planes of a larger closed manifold, not part of its boundary
        self.mirror = (False,) * (n - 1) if mirror is None else tuple(bool(m) for m in mirror)
        self.boundary_faces = tuple(f for f in self.faces if f[0] == n - 1 or not self.mirror[f[0]])

    def check(self, x):
        t = np.real(x[..., -1])
        if np.any(t < -_EDGE_TOL) or np.any(t > self.thickness + _EDGE_TOL):
            raise PointOutsideChart("slab coordinate outside [0, thickness]")
        for a in range(self.n - 1):
            if not self.periodic[a]:
                y = np.real(x[..., a]) - self.lower[a]
                if np.any(y < -_EDGE_TOL) or np.any(y > self.lengths[a] + _EDGE_TOL):
                    raise PointOutsideChart(f"coordinate {a + 1} outside the box")

    def volume(self) -> float:
        return float(np.prod(self.lengths) * self.thickness)


class GridChart(Chart):
    """Computational coordinates of a structured grid, with explicit boundary faces."""

    kind = "grid"

    def __init__(self, grid: StructuredGrid, faces=()):
        self.grid, self.n, self.faces = grid, grid.ndim, tuple(faces)

    def check(self, x):
        for a, ax in enumerate(self.grid.axes):
            if ax.kind == PERIODIC:
                continue
            y = np.real(x[..., a])
            lo = 0.0 if ax.kind == POLE else ax.start
            if np.any(y < lo - _EDGE_TOL) or np.any(y > ax.stop + _EDGE_TOL):
                raise PointOutsideChart(f"coordinate {a + 1} outside the grid")


# --------------------------------------------------------------------------
# metric fields
# --------------------------------------------------------------------------
def check_positive_definite(g: np.ndarray) -> None:
    """Raise unless every matrix in ``g`` is positive definite (relative tolerance 1e-12)."""
    if np.iscomplexobj(g):
        return
    scale = np.linalg.norm(g, axis=(-2, -1))
    lam = np.linalg.eigvalsh(g)
    if np.any(lam[..., 0] <= 1e-12 * scale) or not np.all(np.isfinite(lam)):
        raise NonPositiveDefinite("metric is not positive definite at a queried point")


class MetricField:
    """Smooth Riemannian metric on a chart with 2-jet access."""

    def __init__(self, chart: Chart):
        self.chart = chart
        self.n = chart.n

    def jet(self, x, check: bool = True):
        """Return ``(g, dg, d2g)`` at points ``x`` of shape ``(..., n)``."""
        x = np.asarray(x)
        if x.shape[-1] != self.n:
            raise ValueError(f"points must have trailing dimension {self.n}")
        self.chart.check(x)
        g, dg, d2g = self._jet(x)
        if check:
            check_positive_definite(g)
        return g, dg, d2g

    def _jet(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.jet(x)[0]


class FlatMetric(MetricField):
    def _jet(self, x):
        dtype = np.result_type(x, float)
        s, n = x.shape[:-1], self.n
        g = np.broadcast_to(np.eye(n, dtype=dtype), s + (n, n)).copy()
        return g, np.zeros(s + (n,) * 3, dtype), np.zeros(s + (n,) * 4, dtype)


class AnalyticMetric(MetricField):
    """Metric given in closed form by a sympy matrix in ``x1 .. xn``."""

    def __init__(self, chart: Chart, matrix):
        super().__init__(chart)
        self.tensor = matrix if isinstance(matrix, SymbolicTensor) else SymbolicTensor(matrix, chart.n)

    def _jet(self, x):
        return self.tensor.jet(x)


class ConformalMetric(MetricField):
    """``u^{4/(n-2)} g0`` for a positive scalar ``u`` and base metric ``g0`` (flat by default)."""

    def __init__(self, u: ScalarField, base: MetricField | None = None, chart: Chart | None = None):
        if base is None:
            if chart is None:
                chart = HalfSpace(u.n)
            base = FlatMetric(chart)
        super().__init__(base.chart)
        self.u, self.base = u, base

    def _jet(self, x):
        n = self.n
        u, du, ddu = self.u.jet(x)
        if np.any(np.real(u) <= 0):
            raise NonPositiveConformalFactor("conformal factor must be positive")
        q = 4.0 / (n - 2)
        phi = u**q
        dphi = q * u[..., None] ** (q - 1) * du
        ddphi = (q * (q - 1) * u[..., None, None] ** (q - 2) * du[..., :, None] * du[..., None, :]
                 + q * u[..., None, None] ** (q - 1) * ddu)
        g0, dg0, ddg0 = self.base._jet(x)
        g = phi[..., None, None] * g0
        dg = dphi[..., :, None, None] * g0[..., None, :, :] + phi[..., None, None, None] * dg0
        d2g = (ddphi[..., :, :, None, None] * g0[..., None, None, :, :]
               + dphi[..., :, None, None, None] * dg0[..., None, :, :, :]
               + dphi[..., None, :, None, None] * dg0[..., :, None, :, :]
               + phi[..., None, None, None, None] * ddg0)
        return g, dg, d2g


class ConformalFactor(ScalarField):
    """``h(x) = 1 + C m |x|^{2-n}`` plus an optional correction field.

    ``C`` defaults to the calibrated constant that makes the ADM integral of
    ``h^{4/(n-2)} delta`` tend to ``m``.
    """

    def __init__(self, m: float, n: int, C: float | None = None, correction: ScalarField | None = None):
        self.m, self.n = float(m), n
        self.C = calibration(n)["C"] if C is None else float(C)
        self.correction = correction

    def jet(self, x):
        x = np.asarray(x)
        n = self.n
        r2 = np.sum(x * x, axis=-1)  # no abs: complex-step safe
        p = 2.0 - n
        a = self.C * self.m
        rp = r2 ** (p / 2)
        val = 1.0 + a * rp
        grad = a * p * (r2 ** ((p - 2) / 2))[..., None] * x
        hess = a * p * ((r2 ** ((p - 2) / 2))[..., None, None] * np.eye(n)
                        + (p - 2) * (r2 ** ((p - 4) / 2))[..., None, None] * x[..., :, None] * x[..., None, :])
        if self.correction is not None:
            cv, cg, ch = self.correction.jet(x)
            val, grad, hess = val + cv, grad + cg, hess + ch
        return val, grad, hess


def conformally_flat(factor: ConformalFactor, chart: Chart | None = None) -> ConformalMetric:
    """``h^{4/(n-2)} delta`` on the half-space (or a given chart)."""
    return ConformalMetric(factor, chart=chart or HalfSpace(factor.n))


class PerturbedMetric(MetricField):
    """``g_t = g + t gamma`` for a symmetric tensor field ``gamma`` with a 2-jet."""

    def __init__(self, base: MetricField, gamma, t: float):
        super().__init__(base.chart)
        self.base, self.gamma, self.t = base, gamma, float(t)

    def _jet(self, x):
        g, dg, d2g = self.base._jet(x)
        if self.t == 0.0:
            return g, dg, d2g
        c, dc, d2c = self.gamma.jet(x)
        return g + self.t * c, dg + self.t * dc, d2g + self.t * d2c


class ExplicitMetric(MetricField):
    """Metric sampled at the nodes of a structured grid.

    Jets are available at grid nodes only and come from second-order finite
    differences: central in the interior, one-sided at bounded ends, wrapped on
    periodic axes.  Bounded ends that are not boundary faces of the chart are
    off limits within two cells.  On pole axes each component carries a mirror
    ``parity`` (``+1`` or ``-1``).
    """

    def __init__(self, chart: Chart, grid: StructuredGrid, values: np.ndarray, parity=None):
        super().__init__(chart)
        if grid.ndim != chart.n:
            raise ValueError("grid and chart dimensions differ")
        self.grid = grid
        self.values = np.asarray(values, float).reshape(grid.size, self.n, self.n)
        self.parity = np.ones((self.n, self.n)) if parity is None else np.asarray(parity, float)
        self._interior = self._usable_nodes()

    def _usable_nodes(self) -> np.ndarray:
        ok = np.ones(self.grid.size, bool)
        for a, ax in enumerate(self.grid.axes):
            if ax.kind == PERIODIC:
                continue
            i = self.grid.index[:, a]
            face_vals = {(f[0], round(f[1], 9)) for f in self.chart.faces}
            if ax.kind != POLE and (a, round(ax.start, 9)) not in face_vals:
                ok &= i >= 2
            if (a, round(ax.stop, 9)) not in face_vals:
                ok &= i <= ax.size - 3
        return ok

    def node_of(self, x: np.ndarray) -> np.ndarray:
        """Flat node index of each point in ``x``; raises if a point is off the grid."""
        x = np.real(np.asarray(x, dtype=complex) if np.iscomplexobj(x) else np.asarray(x, float))
        idx = []
        for a, ax in enumerate(self.grid.axes):
            k = (x[..., a] - ax.start) / ax.step
            kr = np.rint(k)
            if np.any(np.abs(k - kr) > 1e-6):
                raise PointOutsideChart("explicit metrics are queried at grid nodes only")
            kr = kr.astype(int)
            if ax.kind == PERIODIC:
                kr = np.mod(kr, ax.size)
            elif np.any(kr < 0) or np.any(kr >= ax.size):
                raise PointOutsideChart("point outside the sampled region")
            idx.append(kr)
        flat = np.ravel_multi_index(tuple(idx), self.grid.shape)
        if not np.all(self._interior[flat]):
            raise PointOutsideChart("point within two cells of the sampled region's edge")
        return flat

    def node_jet(self, rows=None):
        """Jet at the given node indices (all nodes by default)."""
        grid, n = self.grid, self.n
        rows = np.arange(grid.size) if rows is None else np.asarray(rows)
        shape = rows.shape
        rows = rows.ravel()
        g = self.values[rows]
        dg = np.empty((len(rows), n, n, n))
        d2g = np.empty((len(rows), n, n, n, n))
        flat = self.values.reshape(grid.size, n * n)
        for par in np.unique(self.parity):
            comps = np.flatnonzero(self.parity.ravel() == par)
            sub = flat[:, comps]
            for a in range(n):
                dg.reshape(len(rows), n, n * n)[:, a, comps] = grid.d1(a, par)[rows] @ sub
                for b in range(a, n):
                    block = grid.dd(a, b, par)[rows] @ sub
                    d2g.reshape(len(rows), n, n, n * n)[:, a, b, comps] = block
                    d2g.reshape(len(rows), n, n, n * n)[:, b, a, comps] = block
        return (g.reshape(shape + (n, n)), dg.reshape(shape + (n,) * 3),
                d2g.reshape(shape + (n,) * 4))

    def _jet(self, x):
        return self.node_jet(self.node_of(x))

    @property
    def spacing(self) -> float:
        return self.grid.spacing()


def box_grid(lower, upper, dims, periodic=None) -> StructuredGrid:
    """Tensor grid over a coordinate box; periodic axes drop the duplicate end node."""
    periodic = (False,) * len(dims) if periodic is None else periodic
    axes = []
    for lo, hi, m, per in zip(lower, upper, dims, periodic):
        axes.append(periodic_axis(lo, hi - lo, m) if per else bounded_axis(lo, hi, m))
    return StructuredGrid(axes)


def sample_explicit(field: MetricField, grid: StructuredGrid, chart: Chart | None = None) -> ExplicitMetric:
    """Explicit resampling of any metric field at the nodes of ``grid``."""
    g = field.jet(grid.coords)[0]
    return ExplicitMetric(chart or field.chart, grid, g)


def read_explicit(path) -> ExplicitMetric:
    """Read a columnar explicit-metric file.

    Header ``n chart spacing dims...``; rows ``x1 .. xn g11 g12 .. gnn`` (upper
    triangle) in C order of the grid.  ``chart`` is ``halfspace`` or
    ``torusslab`` (lateral axes periodic, no duplicate end node).
    """
    try:
        with open(path) as fh:
            head = fh.readline().split()
            data = np.loadtxt(fh, ndmin=2)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    n, kind, h = int(head[0]), head[1], float(head[2])
    dims = tuple(int(d) for d in head[3:3 + n])
    iu = np.triu_indices(n)
    if data.shape != (int(np.prod(dims)), n + len(iu[0])):
        raise IoFailure("row count or column count does not match the header")
    x0 = data[0, :n]
    if kind == "halfspace":
        chart = HalfSpace(n)
        periodic = (False,) * n
    elif kind == "torusslab":
        lengths = [dims[a] * h for a in range(n - 1)]
        thickness = (dims[-1] - 1) * h
        chart = TorusSlab(n, lengths, thickness=thickness, lower=x0[:-1])
        periodic = (True,) * (n - 1) + (False,)
    else:
        raise IoFailure(f"unknown chart kind {kind!r}")
    upper = [x0[a] + (dims[a] if periodic[a] else dims[a] - 1) * h for a in range(n)]
    grid = box_grid(x0, upper, dims, periodic)
    if not np.allclose(data[:, :n], grid.coords, atol=1e-9 * max(1.0, h)):
        raise IoFailure("coordinates are not a C-ordered uniform grid")
    g = np.empty((grid.size, n, n))
    g[:, iu[0], iu[1]] = data[:, n:]
    g[:, iu[1], iu[0]] = data[:, n:]
    return ExplicitMetric(chart, grid, g)


def write_explicit(field: ExplicitMetric, path) -> None:
    grid, n = field.grid, field.n
    steps = {round(ax.step, 12) for ax in grid.axes}
    if len(steps) != 1 or isinstance(field.chart, GridChart):
        raise IoFailure("the columnar format needs a uniform Cartesian grid")
    iu = np.triu_indices(n)
    rows = np.hstack([grid.coords, field.values[:, iu[0], iu[1]]])
    head = f"{n} {field.chart.kind} {grid.axes[0].step!r} " + " ".join(str(s) for s in grid.shape)
    try:
        np.savetxt(path, rows, header=head, comments="", fmt="%.17g")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


# --------------------------------------------------------------------------
# curvature
# --------------------------------------------------------------------------
@dataclass
class Curvature:
    """Pointwise curvature tensors computed from a metric jet."""

    g: np.ndarray
    ginv: np.ndarray
    gamma: np.ndarray          # Gamma^k_ij  [..., k, i, j]
    dgamma: np.ndarray         # d_m Gamma^k_ij  [..., m, k, i, j]
    riemann: np.ndarray        # R^l_ijk  [..., l, i, j, k]
    ricci: np.ndarray
    scalar: np.ndarray

    def lowered_riemann(self) -> np.ndarray:
        """``R_lijk = g_la R^a_ijk``, so ``<R(X,Y)Z, W> = R_lijk W^l X^i Y^j Z^k``."""
        return np.einsum("...la,...aijk->...lijk", self.g, self.riemann)


def _lowered_christoffel(dg):
    # low[..., l, i, j] = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)
    d_i_gjl = np.einsum("...ijl->...lij", dg)
    d_j_gil = np.einsum("...jil->...lij", dg)
    return 0.5 * (d_i_gjl + d_j_gil - dg)


def christoffel(g, dg):
    """``Gamma^k_ij = (1/2) g^kl (d_i g_jl + d_j g_il - d_l g_ij)``."""
    return np.einsum("...kl,...lij->...kij", np.linalg.inv(g), _lowered_christoffel(dg))


def curvature_from_jet(g, dg, d2g) -> Curvature:
    ginv = np.linalg.inv(g)
    low = _lowered_christoffel(dg)
    gamma = np.einsum("...kl,...lij->...kij", ginv, low)
    dlow = 0.5 * (np.einsum("...mijl->...mlij", d2g) + np.einsum("...mjil->...mlij", d2g) - d2g)
    dginv = -np.einsum("...ka,...mab,...bl->...mkl", ginv, dg, ginv)
    dgamma = (np.einsum("...mkl,...lij->...mkij", dginv, low)
              + np.einsum("...kl,...mlij->...mkij", ginv, dlow))
    # R^l_ijk = d_i G^l_jk - d_j G^l_ik + G^l_im G^m_jk - G^l_jm G^m_ik
    d_i = np.einsum("...iljk->...lijk", dgamma)
    quad = np.einsum("...lim,...mjk->...lijk", gamma, gamma)
    riem = d_i - np.swapaxes(d_i, -3, -2) + quad - np.swapaxes(quad, -3, -2)
    ric = np.einsum("...iijk->...jk", riem)
    scal = np.einsum("...jk,...jk->...", ginv, ric)
    return Curvature(g, ginv, gamma, dgamma, riem, ric, scal)


def face_normal(curv: Curvature, face):
    """Outward unit normal vector ``N^i`` of a coordinate face."""
    axis, _, sign = face
    gcc = curv.ginv[..., axis, axis]
    return sign * curv.ginv[..., :, axis] / np.sqrt(gcc)[..., None]


def face_second_form(curv: Curvature, face):
    """``A_ij = -n_k Gamma^k_ij`` with ``n`` the outward unit conormal of the face.

    Restricted to tangent vectors this is ``<nabla_Y N, Z>``; evaluated on the
    full space it is the natural extension used for ``A(nu, nu)``.
    Returns ``(A, H, N)``.
    """
    axis, _, sign = face
    gcc = curv.ginv[..., axis, axis]
    A = -sign * curv.gamma[..., axis, :, :] / np.sqrt(gcc)[..., None, None]
    N = face_normal(curv, face)
    proj = curv.ginv - N[..., :, None] * N[..., None, :]
    H = np.einsum("...ij,...ij->...", proj, A)
    return A, H, N


@dataclass
class CurvatureSample:
    x: np.ndarray
    R: float
    ric_nu: float = float("nan")
    H: float = float("nan")
    A: list = field(default_factory=list)
    face: tuple | None = None


def curvature(field_: MetricField, x, nu=None, tangents=()) -> CurvatureSample:
    """Scalar curvature, ``Ric(nu, nu)``, and, on a boundary face, ``H`` and ``A``."""
    x = np.asarray(x, float)
    curv = curvature_from_jet(*field_.jet(x[None]))
    out = CurvatureSample(x=x, R=float(curv.scalar[0]))
    if nu is not None:
        nu = np.asarray(nu, float)
        out.ric_nu = float(nu @ curv.ricci[0] @ nu)
    face = field_.chart.face_of(x)
    if face is not None:
        A, H, _ = face_second_form(curv, face)
        out.face, out.H = face, float(H[0])
        out.A = [float(np.asarray(y) @ A[0] @ np.asarray(z)) for y, z in tangents]
    return out


# --------------------------------------------------------------------------
# conformal laws
# --------------------------------------------------------------------------
def laplacian(curv: Curvature, du, ddu):
    """``Delta_g u = g^ij (u_ij - Gamma^k_ij u_k)``."""
    return np.einsum("...ij,...ij->...", curv.ginv, ddu - np.einsum("...kij,...k->...ij", curv.gamma, du))


def conformal_laplacian(curv: Curvature, u, du, ddu):
    """``L u = -Delta_g u + c_n R_g u``."""
    n = curv.g.shape[-1]
    return -laplacian(curv, du, ddu) + c_n(n) * curv.scalar * u


def conformal_change(field_: MetricField, u: ScalarField, x):
    """Scalar and boundary mean curvature of ``u^{4/(n-2)} g`` at points ``x``.

    ``R_new = c_n^{-1} u^{-(n+2)/(n-2)} L u`` everywhere and
    ``H_new = (1/2) c_n^{-1} u^{-n/(n-2)} (d_N u + 2 c_n H u)`` on boundary faces
    (``nan`` elsewhere).
    """
    x = np.asarray(x, float)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    n = field_.n
    cn = c_n(n)
    val, du, ddu = u.jet(xs)
    if np.any(val <= 0):
        raise NonPositiveConformalFactor("conformal factor must be positive")
    curv = curvature_from_jet(*field_.jet(xs))
    R_new = val ** (-(n + 2) / (n - 2)) * conformal_laplacian(curv, val, du, ddu) / cn
    H_new = np.full(len(xs), np.nan)
    for face in field_.chart.faces:
        mask = field_.chart.face_mask(xs, face)
        if not np.any(mask) or not np.all(np.isnan(H_new[mask])):
            continue
        sub = Curvature(*(getattr(curv, f)[mask] for f in
                          ("g", "ginv", "gamma", "dgamma", "riemann", "ricci", "scalar")))
        _, H, N = face_second_form(sub, face)
        dnu = np.einsum("...i,...i->...", N, du[mask])
        H_new[mask] = 0.5 / cn * val[mask] ** (-n / (n - 2)) * (dnu + 2 * cn * H * val[mask])
    if single:
        return float(R_new[0]), float(H_new[0])
    return R_new, H_new


def divergence_eta(factor: ScalarField, x):
    """``div_g eta`` for ``g = h^{4/(n-2)} delta`` and ``eta = h^{-2/(n-2)} d_n``.

    Uses ``div eta = d_n eta^n + eta^n Gamma^k_kn`` with
    ``Gamma^k_kn = (1/2) tr(g^{-1} d_n g)``.
    """
    x = np.asarray(x, float)
    n = factor.n
    metric = conformally_flat(factor) if isinstance(factor, ConformalFactor) else ConformalMetric(factor)
    g, dg, _ = metric.jet(x)
    h, dh, _ = factor.jet(x)
    eta = h ** (-2.0 / (n - 2))
    d_eta = (-2.0 / (n - 2)) * h ** (-n / (n - 2)) * dh[..., n - 1]
    trace = 0.5 * np.einsum("...ij,...ji->...", np.linalg.inv(g), dg[..., n - 1, :, :])
    return d_eta + eta * trace


def leading_divergence_eta(factor: ConformalFactor, x):
    """Leading asymptotic term ``-2(n-1) C m x^n / |x|^n``."""
    x = np.asarray(x, float)
    n = factor.n
    return -2 * (n - 1) * factor.C * factor.m * x[..., n - 1] / np.linalg.norm(x, axis=-1) ** n
