"""Graphs ``x^n = f(x')`` over half-annuli ``{rho_in <= |x'| <= rho_out, x^1 >= 0}``.

The half-annulus is parametrised by ``s = log |x'|`` and angles:

* ``polar2`` (``n = 3``): ``(s, theta)``, ``theta in [0, pi]``,
  ``x' = e^s (sin theta, cos theta)``; free edges ``theta = 0, pi``.
* ``polar3`` (``n = 4``): ``(s, theta, phi)`` with ``theta`` a pole axis on
  ``(0, pi/2]``, ``x' = e^s (cos theta, sin theta cos phi, sin theta sin phi)``;
  free face ``theta = pi/2``.
* ``radial`` (any ``n``): ``(s,)`` only, for rotationally symmetric data; the
  free boundary condition holds by symmetry.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ..errors import DegenerateStencil, IoFailure
from ..geometry import ConformalFactor, ExplicitMetric, FlatMetric, GridChart, HalfSpace, conformally_flat
from ..grid import StructuredGrid, bounded_axis, periodic_axis, pole_axis
from .gridsurface import GridSurface

FIXED_OUTER, FIXED_INNER, FREE = "FixedOuter", "FixedInner", "Free"


@dataclass(frozen=True)
class HalfAnnulus:
    """Parameter grid and the map ``p -> x'`` with its first two derivatives."""

    n: int
    rho_in: float
    rho_out: float
    kind: str
    grid: StructuredGrid

    @property
    def d(self) -> int:
        return self.n - 1

    @cached_property
    def jets(self):
        """``(X, J, K)``: positions ``(N, d)``, ``J[:, p, i]`` and ``K[:, p, q, i]``."""
        c = self.grid.coords
        r = np.exp(c[:, 0])
        N, d = self.grid.size, self.d
        if self.kind == "radial":
            e = np.zeros(d)
            e[-1] = 1.0
            om = np.tile(e, (N, 1))
            dom = np.zeros((N, 0, d))
            ddom = np.zeros((N, 0, 0, d))
        elif self.kind == "polar2":
            t = c[:, 1]
            om = np.stack([np.sin(t), np.cos(t)], -1)
            dom = np.stack([np.cos(t), -np.sin(t)], -1)[:, None]
            ddom = -om[:, None, None]
        else:
            t, p = c[:, 1], c[:, 2]
            ct, st, cp, sp = np.cos(t), np.sin(t), np.cos(p), np.sin(p)
            om = np.stack([ct, st * cp, st * sp], -1)
            o_t = np.stack([-st, ct * cp, ct * sp], -1)
            o_p = np.stack([0 * t, -st * sp, st * cp], -1)
            o_tt = -om
            o_tp = np.stack([0 * t, -ct * sp, ct * cp], -1)
            o_pp = np.stack([0 * t, -st * cp, -st * sp], -1)
            dom = np.stack([o_t, o_p], 1)
            ddom = np.stack([np.stack([o_tt, o_tp], 1), np.stack([o_tp, o_pp], 1)], 1)
        k = dom.shape[1]
        X = r[:, None] * om
        J = np.empty((N, k + 1, d))
        J[:, 0] = X
        J[:, 1:] = r[:, None, None] * dom
        K = np.empty((N, k + 1, k + 1, d))
        K[:, 0, 0] = X
        K[:, 0, 1:] = K[:, 1:, 0] = J[:, 1:]
        K[:, 1:, 1:] = r[:, None, None, None] * ddom
        if self.kind != "radial":
            X[:, 0] = np.maximum(X[:, 0], 0.0)  # round-off on the free face
        return X, J, K

    @property
    def rho(self):
        return np.exp(self.grid.coords[:, 0])

    @property
    def free_faces(self):
        if self.kind == "polar2":
            return ((1, "low"), (1, "high"))
        if self.kind == "polar3":
            return ((1, "high"),)
        return ()

    def tags(self) -> np.ndarray:
        """Boundary tag per node (``""`` for interior); rings take precedence over free edges."""
        t = np.full(self.grid.size, "", dtype=object)
        for face in self.free_faces:
            t[self.grid.on_face(*face)] = FREE
        t[self.grid.on_face(0, "low")] = FIXED_INNER
        t[self.grid.on_face(0, "high")] = FIXED_OUTER
        return t

    def cartesian_derivatives(self, fp, fpq):
        """Cartesian gradient ``(N, d)`` and Hessian ``(N, d, d)`` from parameter derivatives.

        Accepts complex input (complex-step differentiation).
        """
        _, J, K = self.jets
        if self.kind == "radial":
            r = self.rho
            fr = fp[:, 0] / r
            frr = (fpq[:, 0, 0] - fp[:, 0]) / r**2
            d = self.d
            e = np.zeros(d)
            e[-1] = 1.0
            grad = fr[:, None] * e
            ee = np.outer(e, e)
            hess = frr[:, None, None] * ee + (fr / r)[:, None, None] * (np.eye(d) - ee)
            return grad, hess
        Jinv = np.linalg.inv(J)  # Jinv[:, i, p]
        grad = np.einsum("nip,np->ni", Jinv, fp)
        corr = fpq - np.einsum("npqk,nk->npq", K, grad)
        hess = np.einsum("nip,npq,njq->nij", Jinv, corr, Jinv)
        return grad, hess


def half_annulus(n: int, rho_in: float, rho_out: float, nr: int, nt: int | None = None,
                 nphi: int | None = None, kind: str | None = None) -> HalfAnnulus:
    """Build the parameter grid; ``kind`` defaults to the full grid for ``n <= 4``."""
    if rho_in <= 0 or rho_out <= rho_in:
        raise DegenerateStencil("need 0 < rho_in < rho_out")
    if kind is None:
        kind = {3: "polar2", 4: "polar3"}.get(n, "radial")
    s = bounded_axis(np.log(rho_in), np.log(rho_out), nr)
    if kind == "radial":
        axes = [s]
    elif kind == "polar2":
        if n != 3:
            raise ValueError("polar2 grids are for n = 3")
        axes = [s, bounded_axis(0.0, np.pi, nt or 33)]
    elif kind == "polar3":
        if n != 4:
            raise ValueError("polar3 grids are for n = 4")
        nphi = nphi or 16
        if nphi % 2:
            raise DegenerateStencil("pole grids need an even number of azimuthal nodes")
        axes = [s, pole_axis(np.pi / 2, nt or 9, partner=2), periodic_axis(0.0, 2 * np.pi, nphi)]
    else:
        raise ValueError(f"unknown grid kind {kind!r}")
    return HalfAnnulus(n, float(rho_in), float(rho_out), kind, StructuredGrid(axes))


@dataclass
class GraphSurface:
    """Height samples ``f`` over a half-annulus, with the ambient conformal factor ``h``."""

    domain: HalfAnnulus
    f: np.ndarray
    factor: ConformalFactor | None = None
    a: float = 0.0
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.f = np.asarray(self.f, float).reshape(self.domain.grid.size)
        if not np.all(np.isfinite(self.f)):
            raise ValueError("heights must be finite")

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def grid(self) -> StructuredGrid:
        return self.domain.grid

    def parameter_derivatives(self, f=None):
        f = self.f if f is None else f
        g = self.grid
        fp = g.grad(f)
        fpq = g.hessian(f)
        return fp, fpq

    def cartesian_derivatives(self):
        return self.domain.cartesian_derivatives(*self.parameter_derivatives())

    def points(self) -> np.ndarray:
        """Ambient points ``(x', f)``."""
        X = self.domain.jets[0]
        return np.concatenate([X, self.f[:, None]], 1)

    def free_normal_derivative(self) -> np.ndarray:
        """``d_1 f`` at the free-edge nodes."""
        grad, _ = self.cartesian_derivatives()
        mask = self.domain.tags() == FREE
        return grad[mask, 0]

    def ambient_metric(self):
        chart = HalfSpace(self.n)
        return FlatMetric(chart) if self.factor is None else conformally_flat(self.factor, chart)

    def h_values(self) -> np.ndarray:
        if self.factor is None:
            return np.ones(self.grid.size)
        return np.real(self.factor.jet(self.points())[0])

    def induced_cartesian(self) -> np.ndarray:
        """``h(x', f)^{4/(n-2)} (delta_ij + f_i f_j)`` at every node."""
        grad, _ = self.cartesian_derivatives()
        h = self.h_values()
        g = np.eye(self.n - 1) + grad[:, :, None] * grad[:, None, :]
        return h[:, None, None] ** (4 / (self.n - 2)) * g

    def to_grid_surface(self) -> GridSurface:
        """The graph as a parametric sheet in the ambient half-space (upward normal)."""
        if self.domain.kind == "radial":
            raise DegenerateStencil("radial graphs have no full parameter sheet")
        X, J, K = self.domain.jets
        fp, fpq = self.parameter_derivatives()
        P = np.concatenate([X, self.f[:, None]], 1)
        dP = np.concatenate([J, fp[:, :, None]], 2)
        ddP = np.concatenate([K, fpq[:, :, :, None]], 3)
        surf = GridSurface(self.grid, P, dP, ddP, self.ambient_metric(),
                           free_faces=self.domain.free_faces, fixed_faces=[(0, "low"), (0, "high")])
        if np.mean(surf.nu[:, -1]) < 0:
            surf = GridSurface(self.grid, P, dP, ddP, surf.metric, surf.free_faces, surf.fixed_faces,
                               normal_sign=-1.0)
        return surf

    def fundamental_forms(self, node: int) -> dict:
        """``B``, ``H`` at a node; on free nodes also ``A(nu, nu)``, ``H_dSigma`` and ``H_dM``."""
        surf = self.to_grid_surface()
        out = {"B": surf.B[node], "H": float(surf.H[node])}
        for face in surf.free_faces:
            nodes, Ann, HdM = surf.ambient_boundary_terms(face)
            _, HdS = surf.boundary_mean_curvature(face)
            hit = np.flatnonzero(nodes == node)
            if hit.size:
                k = hit[0]
                out.update(A_nu_nu=float(Ann[k]), H_dM=float(HdM[k]), H_dSigma=float(HdS[k]))
        return out

    def area(self) -> float:
        return self.to_grid_surface().area()

    # -- serialization ---------------------------------------------------
    def to_csv(self, path) -> None:
        """CSV grid: a header row ``n, spacing, rho_in, rho_out, a`` then parameters, ``x'`` and ``f``."""
        X = self.domain.jets[0]
        d = self.grid.ndim
        try:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["n", "spacing", "rho_in", "rho_out", "a", "kind", "shape"])
                w.writerow([self.n, repr(self.grid.axes[0].step), repr(self.domain.rho_in),
                            repr(self.domain.rho_out), repr(self.a), self.domain.kind,
                            "x".join(str(s) for s in self.grid.shape)])
                w.writerow([f"p{k}" for k in range(d)] + [f"x{i + 1}" for i in range(self.n - 1)] + ["f"])
                for c, x, fv in zip(self.grid.coords, X, self.f):
                    w.writerow([repr(float(v)) for v in (*c, *x, fv)])
        except OSError as exc:
            raise IoFailure(str(exc)) from exc


def read_graph_csv(path, factor: ConformalFactor | None = None) -> GraphSurface:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    try:
        n, _, rin, rout, a, kind, shape = rows[1]
        shape = [int(s) for s in shape.split("x")]
        n = int(n)
        extra = {}
        if kind != "radial":
            extra["nt"] = shape[1]
        if kind == "polar3":
            extra["nphi"] = shape[2]
        dom = half_annulus(n, float(rin), float(rout), shape[0], kind=kind, **extra)
        f = np.array([float(r[-1]) for r in rows[3:]])
    except (ValueError, IndexError) as exc:
        raise IoFailure(f"malformed graph CSV: {exc}") from exc
    if f.size != dom.grid.size:
        raise IoFailure("row count does not match the grid shape")
    return GraphSurface(dom, f, factor, float(a))


def induced_metric(graph: GraphSurface) -> ExplicitMetric:
    """Induced metric in the graph's parameter coordinates as an explicit field.

    The parameter chart is a :class:`GridChart` whose faces are the free edges
    (where one-sided stencils are legitimate).  Use
    :meth:`GraphSurface.induced_cartesian` for Cartesian components.
    """
    dom = graph.domain
    _, J, _ = dom.jets
    fp, _ = graph.parameter_derivatives()
    h = graph.h_values()
    g = h[:, None, None] ** (4 / (graph.n - 2)) * (np.einsum("npi,nqi->npq", J, J) + fp[:, :, None] * fp[:, None, :])
    grid = dom.grid
    faces = []
    for axis, side in dom.free_faces:
        ax = grid.axes[axis]
        faces.append((axis, ax.start if side == "low" else ax.stop, -1.0 if side == "low" else 1.0))
    parity = None
    if dom.kind == "polar3":
        # theta-phi components are odd across the pole
        parity = np.ones((3, 3))
        parity[1, 2] = parity[2, 1] = -1.0
        parity[0, 1] = parity[1, 0] = -1.0
    return ExplicitMetric(GridChart(grid, faces), grid, g, parity)
