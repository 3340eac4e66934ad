"""Hypersurfaces given as structured parametric sheets in a Riemannian chart.

A :class:`GridSurface` stores the embedding ``P`` and its first two parameter
derivatives at the nodes of a :class:`~fbmass.grid.StructuredGrid`, together
with the ambient :class:`~fbmass.geometry.MetricField`.  Everything extrinsic
(normal, second fundamental form, Christoffel symbols of the induced metric) is
computed pointwise from these jets; derivatives of fields living on the sheet
use the grid stencils.

Orientation: ``B(X, Y) = <nabla_X nu, Y>`` and ``H = tr B``; a round sphere with
outward normal has ``H = 2 / r``.  On a boundary face of the sheet, ``eta`` is
the outward co-normal, ``A`` the second fundamental form of the ambient
boundary face with respect to its outward normal.
"""
from __future__ import annotations

from functools import cached_property

import numpy as np

from ..geometry import Curvature, MetricField, curvature_from_jet, face_second_form
from ..grid import POLE, StructuredGrid


def _generalized_cross(vectors: np.ndarray) -> np.ndarray:
    """Covector annihilating ``d = n - 1`` vectors, shape ``(N, d, n) -> (N, n)``."""
    N, d, n = vectors.shape
    out = np.empty((N, n))
    for k in range(n):
        minor = np.delete(vectors, k, axis=2)
        out[:, k] = (-1) ** k * np.linalg.det(minor)
    return out


class GridSurface:
    """Parametric hypersurface sampled on a structured grid.

    Parameters
    ----------
    grid : StructuredGrid
        Parameter grid of dimension ``d = n - 1``.
    P, dP, ddP : ndarray
        Positions ``(N, n)``, first derivatives ``(N, d, n)`` and second
        derivatives ``(N, d, d, n)`` with respect to the parameters.
    metric : MetricField
        Ambient metric; the sheet must lie in its chart.
    free_faces : sequence of ``(axis, side)``
        Parameter faces lying on the ambient boundary face ``ambient_face``.
    fixed_faces : sequence of ``(axis, side)``
        Remaining parameter faces (Dirichlet-type boundary of the sheet).
    normal_sign : +1 or -1
        Flips the normal obtained from the parameter orientation.
    """

    def __init__(self, grid: StructuredGrid, P, dP, ddP, metric: MetricField, free_faces=(),
                 fixed_faces=(), normal_sign: float = 1.0, ambient_face=None):
        self.grid = grid
        self.P, self.dP, self.ddP = np.asarray(P, float), np.asarray(dP, float), np.asarray(ddP, float)
        self.metric = metric
        self.n = metric.n
        self.d = grid.ndim
        if self.d != self.n - 1:
            raise ValueError("sheets must have codimension one")
        self.free_faces = tuple(free_faces)
        self.fixed_faces = tuple(fixed_faces)
        self.normal_sign = normal_sign
        if ambient_face is None and self.free_faces:
            ambient_face = metric.chart.faces[0]
        self.ambient_face = ambient_face
        self.pole_axis = next((a for a, ax in enumerate(grid.axes) if ax.kind == POLE), None)

    # -- ambient data ------------------------------------------------------
    @cached_property
    def ambient(self) -> Curvature:
        return curvature_from_jet(*self.metric.jet(self.P))

    @property
    def G(self):
        return self.ambient.g

    def inner(self, X, Y):
        return np.einsum("...i,...ij,...j->...", X, self.G, Y)

    # -- first fundamental form -------------------------------------------
    @cached_property
    def ghat(self):
        return np.einsum("naj,nij,nbi->nab", self.dP, self.G, self.dP)

    @cached_property
    def ghat_inv(self):
        return np.linalg.inv(self.ghat)

    @cached_property
    def sqrtg(self):
        return np.sqrt(np.linalg.det(self.ghat))

    @cached_property
    def nu(self):
        cov = _generalized_cross(self.dP)
        vec = np.einsum("nij,nj->ni", self.ambient.ginv, cov)
        norm = np.sqrt(np.einsum("ni,ni->n", vec, cov))
        return self.normal_sign * vec / norm[:, None]

    # -- second fundamental form -------------------------------------------
    @cached_property
    def K(self):
        """Covariant Hessian of the embedding, ``P_ab + Gamma(P_a, P_b)``."""
        gam = self.ambient.gamma
        return self.ddP + np.einsum("nkij,nai,nbj->nabk", gam, self.dP, self.dP)

    @cached_property
    def B(self):
        return -np.einsum("nabk,nkl,nl->nab", self.K, self.G, self.nu)

    @cached_property
    def B_mixed(self):
        """``B^a_b = g^{ac} B_cb``."""
        return np.einsum("nac,ncb->nab", self.ghat_inv, self.B)

    @cached_property
    def H(self):
        return np.einsum("nab,nab->n", self.ghat_inv, self.B)

    @cached_property
    def B2(self):
        return np.einsum("nab,nba->n", self.B_mixed, self.B_mixed)

    @cached_property
    def gamma_hat(self):
        """Christoffel symbols of the induced metric, ``[n, c, a, b]``."""
        low = np.einsum("nabk,nkl,ncl->ncab", self.K, self.G, self.dP)
        return np.einsum("ncd,ndab->ncab", self.ghat_inv, low)

    # -- curvature ----------------------------------------------------------
    @cached_property
    def ric_nu(self):
        return np.einsum("nij,ni,nj->n", self.ambient.ricci, self.nu, self.nu)

    @property
    def R_M(self):
        return self.ambient.scalar

    @cached_property
    def R_sigma_gauss(self):
        """Scalar curvature of the sheet from the twice-traced Gauss equation."""
        return self.R_M - 2 * self.ric_nu + self.H**2 - self.B2

    @cached_property
    def R_sigma_intrinsic(self):
        """Scalar curvature of the induced metric by finite differences of ``ghat``.

        Only on grids without a pole; ``nan`` otherwise.
        """
        if self.pole_axis is not None:
            return np.full(self.grid.size, np.nan)
        g = self.ghat
        dg = self.grid.grad(g)
        ddg = self.grid.hessian(g)
        return curvature_from_jet(g, dg, ddg).scalar

    @property
    def R_sigma(self):
        """Intrinsic value on two-dimensional sheets, Gauss-equation value otherwise."""
        if self.d == 2 and self.pole_axis is None:
            return self.R_sigma_intrinsic
        return self.R_sigma_gauss

    # -- sheet calculus ------------------------------------------------------
    def component_parity(self, a: int) -> float:
        """Mirror parity of the ``a``-th contravariant component across a pole."""
        return -1.0 if a == self.pole_axis else 1.0

    def grad(self, f):
        """Parameter gradient ``(N, d)`` of a scalar node field."""
        return np.stack([self.grid.d1(a) @ f for a in range(self.d)], 1)

    def grad_norm2(self, f):
        df = self.grad(f)
        return np.einsum("na,nab,nb->n", df, self.ghat_inv, df)

    def divergence(self, V):
        """``(1/sqrt g) d_a (sqrt g V^a)`` for contravariant components ``V`` ``(N, d)``."""
        out = np.zeros(self.grid.size)
        for a in range(self.d):
            # sqrt g is odd across a pole, so the flux picks up the opposite parity
            par = -self.component_parity(a) if self.pole_axis is not None else 1.0
            out += self.grid.d1(a, par) @ (self.sqrtg * V[:, a])
        return out / self.sqrtg

    def covariant_derivative(self, T):
        """``M[n, b, a] = nabla_b T^a`` for a tangent field with components ``T^a``."""
        M = np.empty((self.grid.size, self.d, self.d))
        for a in range(self.d):
            par = self.component_parity(a)
            for b in range(self.d):
                M[:, b, a] = self.grid.d1(b, par) @ T[:, a]
        return M + np.einsum("nabc,nc->nba", self.gamma_hat, T)

    def split(self, X):
        """Normal part ``phi = <X, nu>`` and tangent components ``T^a``."""
        phi = self.inner(X, self.nu)
        T = np.einsum("nab,nbi,nij,nj->na", self.ghat_inv, self.dP, self.G, X)
        return phi, T

    def push(self, T):
        """Ambient vector of tangent components ``T^a``."""
        return np.einsum("na,nai->ni", T, self.dP)

    # -- integration --------------------------------------------------------
    @cached_property
    def weights(self):
        return self.grid.trapezoid_weights() * self.sqrtg

    def integrate(self, values):
        return float(np.dot(self.weights, values))

    def face_nodes(self, face):
        axis, side = face
        return np.flatnonzero(self.grid.on_face(axis, side))

    def face_weights(self, face):
        """Nodes and induced boundary measure weights of a parameter face."""
        axis, side = face
        return self.level_weights(axis, 0 if side == "low" else self.grid.shape[axis] - 1)

    def level_weights(self, axis: int, k: int):
        """Nodes and induced measure weights of the coordinate level ``index[axis] == k``."""
        nodes = np.flatnonzero(self.grid.index[:, axis] == k)
        w = np.ones(len(nodes))
        others = [b for b in range(self.d) if b != axis]
        for b in others:
            ax = self.grid.axes[b]
            wb = np.full(ax.size, ax.step)
            if ax.kind != "periodic":
                wb[-1] *= 0.5
                if ax.kind != POLE:
                    wb[0] *= 0.5
            w *= wb[self.grid.index[nodes, b]]
        sub = self.ghat[nodes][:, others][:, :, others]
        return nodes, w * np.sqrt(np.linalg.det(sub))

    def boundary_integrate(self, face, values):
        nodes, w = self.face_weights(face)
        return float(np.dot(w, values[nodes]))

    def conormal(self, face):
        """Outward co-normal ``eta`` (ambient vectors) at the nodes of a parameter face."""
        axis, side = face
        nodes = self.face_nodes(face)
        s = -1.0 if side == "low" else 1.0
        ginv = self.ghat_inv[nodes]
        comps = s * ginv[:, :, axis] / np.sqrt(ginv[:, axis, axis])[:, None]
        return nodes, np.einsum("na,nai->ni", comps, self.dP[nodes]), comps

    def boundary_mean_curvature(self, face):
        """``H`` of the sheet's boundary face inside the sheet, w.r.t. ``eta``."""
        axis, side = face
        nodes, _, comps = self.conormal(face)
        s = -1.0 if side == "low" else 1.0
        ginv = self.ghat_inv[nodes]
        A = -s * self.gamma_hat[nodes][:, axis] / np.sqrt(ginv[:, axis, axis])[:, None, None]
        proj = ginv - comps[:, :, None] * comps[:, None, :]
        return nodes, np.einsum("nab,nab->n", proj, A)

    def ambient_boundary_terms(self, face):
        """``A(nu, nu)`` and ``H_dM`` of the ambient boundary at the nodes of a free face."""
        nodes = self.face_nodes(face)
        c = self.ambient
        sub = Curvature(*(getattr(c, f)[nodes] for f in
                          ("g", "ginv", "gamma", "dgamma", "riemann", "ricci", "scalar")))
        A, H, _ = face_second_form(sub, self.ambient_face)
        nu = self.nu[nodes]
        return nodes, np.einsum("ni,nij,nj->n", nu, A, nu), H

    def area(self) -> float:
        return float(self.weights.sum())

    def scale(self) -> float:
        """Characteristic length: the diameter of the node cloud."""
        return float(np.max(np.ptp(self.P, axis=0)))

    def with_positions(self, P, dP, ddP) -> "GridSurface":
        return GridSurface(self.grid, P, dP, ddP, self.metric, self.free_faces, self.fixed_faces,
                           self.normal_sign, self.ambient_face)
