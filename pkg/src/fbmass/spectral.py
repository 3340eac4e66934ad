"""Conformal-Laplacian boundary eigenproblems on box and torus-slab charts.

The operators ``L u = -Delta u + c_n R u`` in the interior and
``B u = d_nu u + 2 c_n H u`` on the boundary are discretized together through
the symmetric weak form

    Q(u, v) = int <du, dv> + c_n R u v  dmu  +  2 c_n oint H u v  dsigma

with tensor-product (Q1) elements on the chart grid.  Stiffness integrals use
the 2^n-point Gauss rule; the volume and boundary masses are lumped, so ``M``
and ``Mb`` are diagonal and ``R``, ``H`` enter through nodal values.  On a
uniform grid this is a second-order finite-difference scheme: interior rows of
``Q / M`` are a Laplace-Beltrami stencil plus ``c_n R``, and boundary rows carry
``B`` with the half-cell volume term.

* Neumann problem ``L u = lam u, B u = 0``:  ``Q u = lam M u``.
* Steklov problem ``L phi = 0, B phi = lam phi``:  ``Q phi = lam Mb phi``,
  solved by eliminating interior nodes (Schur complement).
"""
from __future__ import annotations

import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (BaseNotScalarFlat, EigenNotConverged, EigenvalueNotPositive, FitIllConditioned, InteriorSingular,
                     NonPositiveSolution, SolveSingular)
from .geometry import (ExplicitMetric, MetricField, PerturbedMetric, TorusSlab, box_grid, c_n,
                       curvature_from_jet, face_second_form)
from .grid import PERIODIC, StructuredGrid

EIGEN_TOL = 1e-9
DENSE_LIMIT = 3000
_GAUSS = np.array([0.5 - 0.5 / np.sqrt(3), 0.5 + 0.5 / np.sqrt(3)])


def lab_threads() -> int:
    try:
        return max(1, int(os.environ.get("LAB_THREADS", "1")))
    except ValueError:
        return 1


# --------------------------------------------------------------------------
# reference element
# --------------------------------------------------------------------------
def _q1_tables(d: int):
    """Gauss points, weights, shape values ``N[q, a]`` and gradients ``D[q, a, k]`` on ``[0,1]^d``."""
    bits = np.array(list(itertools.product((0, 1), repeat=d)), int).reshape(-1, d)
    pts = np.array(list(itertools.product(_GAUSS, repeat=d))).reshape(-1, d)
    w = np.full(len(pts), 0.5**d)
    lin = np.where(bits[None, :, :] == 1, pts[:, None, :], 1 - pts[:, None, :])  # [q, a, k]
    N = lin.prod(-1)
    D = np.empty(lin.shape)
    for k in range(d):
        dk = np.where(bits[:, k] == 1, 1.0, -1.0)
        others = np.delete(lin, k, axis=-1).prod(-1)
        D[:, :, k] = dk[None, :] * others
    return bits, pts, w, N, D


def _cells(grid: StructuredGrid, axes):
    """Lower-corner indices of the Q1 cells tiling ``axes`` (periodic axes wrap)."""
    starts = []
    for a in axes:
        ax = grid.axes[a]
        starts.append(np.arange(ax.size if ax.kind == PERIODIC else ax.size - 1))
    return np.stack(np.meshgrid(*starts, indexing="ij"), -1).reshape(-1, len(axes))


def _corner_nodes(grid: StructuredGrid, axes, starts, bits, fixed=None):
    idx = np.zeros((len(starts), len(bits), grid.ndim), int)
    if fixed is not None:
        idx[:, :, fixed[0]] = fixed[1]
    for j, a in enumerate(axes):
        k = starts[:, None, j] + bits[None, :, j]
        if grid.axes[a].kind == PERIODIC:
            k = np.mod(k, grid.axes[a].size)
        idx[:, :, a] = k
    return np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), grid.shape)


def _metric_samples(field: MetricField, grid: StructuredGrid, nodes, shape_vals, points):
    """Metric at quadrature points: Q1 interpolation for sampled fields, exact otherwise."""
    if isinstance(field, ExplicitMetric) and field.grid is grid:
        return np.einsum("qa,caij->cqij", shape_vals, field.values[nodes])
    return field.jet(points, check=False)[0]


def grid_for(field: MetricField, dims=None) -> StructuredGrid:
    if isinstance(field, ExplicitMetric):
        return field.grid
    chart = field.chart
    if not isinstance(chart, TorusSlab):
        raise ValueError("spectral problems need a torus-slab or box chart")
    n = chart.n
    if dims is None:
        raise ValueError("grid dimensions are required for analytic metrics")
    dims = (int(dims),) * n if np.isscalar(dims) else tuple(int(m) for m in dims)
    lower = list(chart.lower) + [0.0]
    upper = list(chart.lower + chart.lengths) + [chart.thickness]
    return box_grid(lower, upper, dims, tuple(chart.periodic) + (False,))


def node_jets(field: MetricField, grid: StructuredGrid):
    if isinstance(field, ExplicitMetric) and field.grid is grid:
        return field.node_jet()
    return field.jet(grid.coords)


def boundary_faces(chart) -> tuple:
    """Faces of the chart that belong to the manifold boundary (mirror sides excluded)."""
    return tuple(getattr(chart, "boundary_faces", chart.faces))


def _face_nodes(grid: StructuredGrid, face):
    axis, value, _ = face
    ax = grid.axes[axis]
    k = int(round((value - ax.start) / ax.step))
    return k, np.flatnonzero(grid.index[:, axis] == k)


# --------------------------------------------------------------------------
# assembly
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class OperatorPair:
    """Weak-form discretization of ``(L, B)`` on a chart grid.

    ``Q`` is the symmetric form matrix, ``M`` the lumped volume weights and
    ``Mb`` the lumped boundary weights (zero off the boundary).  ``R`` holds
    nodal scalar curvature and ``H[face]`` the mean curvature at that face's
    nodes.
    """

    field: MetricField
    grid: StructuredGrid
    n: int
    c: float
    K: sp.csr_matrix
    M: np.ndarray
    R: np.ndarray
    faces: tuple
    face_nodes: dict
    face_mass: dict
    H: dict
    Mb: np.ndarray
    Q: sp.csr_matrix

    @property
    def boundary(self) -> np.ndarray:
        return self.Mb > 0

    @property
    def potential(self) -> np.ndarray:
        """Diagonal zeroth-order part of ``Q``: ``c R M`` plus ``2 c H Mb`` summed over faces."""
        return np.asarray(self.Q.diagonal() - self.K.diagonal())

    @property
    def L(self) -> sp.csr_matrix:
        """Strong-form interior operator ``M^{-1} (K + c R M)``; valid on interior rows."""
        return (sp.diags(1 / self.M) @ (self.K + sp.diags(self.c * self.R * self.M))).tocsr()

    def B(self, u) -> np.ndarray:
        """Boundary rows of ``Q u`` per unit boundary measure.

        Equals ``d_nu u + 2 c H u`` up to the volume term ``(M / Mb) L u``,
        which is ``O(spacing)`` and vanishes for solutions of ``L u = 0``.
        """
        u = np.asarray(u, float)
        b = self.boundary
        return (self.Q @ u)[b] / self.Mb[b]

    def quadratic_form(self, u, v=None) -> float:
        v = u if v is None else v
        return float(np.asarray(u) @ (self.Q @ np.asarray(v)))

    @property
    def volume(self) -> float:
        return float(self.M.sum())

    @property
    def spacing(self) -> float:
        return self.grid.spacing()


def assemble(field: MetricField, dims=None) -> OperatorPair:
    """Assemble ``(L, B)`` for ``field`` on its chart grid.

    Parameters
    ----------
    field : MetricField
        Metric on a :class:`TorusSlab` chart, or an :class:`ExplicitMetric`
        (whose own grid is used).
    dims : int or tuple, optional
        Nodes per axis for analytic fields.
    """
    grid = grid_for(field, dims)
    n = grid.ndim
    c = c_n(n)
    h = np.array([ax.step for ax in grid.axes])
    bits, pts, w, N, D = _q1_tables(n)
    axes = list(range(n))
    starts = _cells(grid, axes)
    nodes = _corner_nodes(grid, axes, starts, bits)
    origin = np.array([grid.axes[a].start for a in axes]) + starts * h
    points = origin[:, None, :] + pts[None] * h
    g = _metric_samples(field, grid, nodes, N, points)
    ginv = np.linalg.inv(g)
    sqrtg = np.sqrt(np.linalg.det(g))
    J = np.prod(h)
    Dx = D / h  # physical gradients of the shape functions
    A = ginv * sqrtg[..., None, None]
    Kloc = np.einsum("q,qak,cqkl,qbl->cab", w * J, Dx, A, Dx, optimize=True)
    rows = np.repeat(nodes, len(bits), axis=1).ravel()
    cols = np.tile(nodes, (1, len(bits))).ravel()
    K = sp.csr_matrix((Kloc.ravel(), (rows, cols)), shape=(grid.size, grid.size))
    K = (0.5 * (K + K.T)).tocsr()
    M = np.bincount(nodes.ravel(), (np.einsum("q,qa,cq->ca", w * J, N, sqrtg)).ravel(), grid.size)

    jet = node_jets(field, grid)
    curv = curvature_from_jet(*jet)
    R = np.asarray(curv.scalar, float)

    faces = boundary_faces(field.chart)
    face_nodes, face_mass, Hs = {}, {}, {}
    Mb = np.zeros(grid.size)
    bt = np.zeros(grid.size)
    if n > 1:
        fbits, fpts, fw, fN, _ = _q1_tables(n - 1)
    for face in faces:
        axis, value, _ = face
        k, fnodes = _face_nodes(grid, face)
        tang = [a for a in axes if a != axis]
        fst = _cells(grid, tang)
        cn = _corner_nodes(grid, tang, fst, fbits, fixed=(axis, k))
        fp = np.empty((len(fst), len(fpts), n))
        fp[..., axis] = grid.axes[axis].start + k * h[axis]
        for j, a in enumerate(tang):
            fp[..., a] = grid.axes[a].start + (fst[:, None, j] + fpts[None, :, j]) * h[a]
        gf = _metric_samples(field, grid, cn, fN, fp)
        gt = gf[..., tang, :][..., :, tang]
        dsig = np.sqrt(np.linalg.det(gt))
        Jf = np.prod(h[tang])
        mass = np.bincount(cn.ravel(), np.einsum("q,qa,cq->ca", fw * Jf, fN, dsig).ravel(), grid.size)
        sub = _restrict(curv, fnodes)
        _, Hf, _ = face_second_form(sub, face)
        face_nodes[face] = fnodes
        face_mass[face] = mass[fnodes]
        Hs[face] = np.asarray(Hf, float)
        Mb += mass
        bt[fnodes] += 2 * c * Hs[face] * mass[fnodes]
    Q = (K + sp.diags(c * R * M + bt)).tocsr()
    return OperatorPair(field, grid, n, c, K, M, R, faces, face_nodes, face_mass, Hs, Mb, Q)


def _restrict(curv, rows):
    return type(curv)(*(getattr(curv, f)[rows] for f in
                        ("g", "ginv", "gamma", "dgamma", "riemann", "ricci", "scalar")))


# --------------------------------------------------------------------------
# eigenproblems
# --------------------------------------------------------------------------
@dataclass
class SpectralResult:
    """First eigenpair of a Neumann or Steklov problem.

    ``u`` is normalized to ``max u = 1``; ``positive`` records whether every
    nodal value is strictly positive.
    """

    kind: str
    eigenvalue: float
    u: np.ndarray
    positive: bool
    interior_residual: float
    boundary_residual: float
    tolerance: float = EIGEN_TOL
    method: str = ""
    info: dict = dc_field(default_factory=dict)

    @property
    def residual(self) -> float:
        return max(self.interior_residual, self.boundary_residual)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "eigenvalue": self.eigenvalue, "positive": self.positive,
                "min_u": float(self.u.min()), "interior_residual": self.interior_residual,
                "boundary_residual": self.boundary_residual, "method": self.method, **self.info}


def _normalize(u):
    u = np.real(np.asarray(u, float)).ravel()
    return u / u[np.argmax(np.abs(u))]


def _scaled_residual(r, A_norm, u):
    return float(np.abs(r).max() / (A_norm * np.abs(u).max() + 1e-300))


def _norm_inf(A) -> float:
    return float(abs(A).sum(axis=1).max())


def eigen_neumann(pair: OperatorPair, tol: float = EIGEN_TOL) -> SpectralResult:
    """Smallest eigenvalue of ``L u = lam u`` with ``B u = 0``.

    Dense symmetric solve for small grids; otherwise shift-and-invert Lanczos
    with a shift below the lower bound ``min(potential / M)``.
    """
    Q, M = pair.Q, pair.M
    size = len(M)
    if size <= DENSE_LIMIT:
        Mh = 1 / np.sqrt(M)
        A = (Mh[:, None] * Q.toarray()) * Mh[None, :]
        vals, vecs = sla.eigh(A, subset_by_index=[0, 0])
        lam, u = float(vals[0]), vecs[:, 0] * Mh
        method = "dense"
    else:
        sigma = float(min(0.0, np.min(pair.potential / M))) - 1.0
        try:
            vals, vecs = spla.eigsh(Q, k=1, M=sp.diags(M).tocsc(), sigma=sigma, which="LM",
                                    v0=np.ones(size), tol=1e-13)
        except spla.ArpackNoConvergence as exc:
            raise EigenNotConverged("shift-invert Lanczos did not converge") from exc
        lam, u = float(vals[0]), vecs[:, 0]
        method = "shift-invert"
    u = _normalize(u)
    lam = rayleigh(pair, u)
    r = Q @ u - lam * M * u
    b = pair.boundary
    scale = _norm_inf(Q) + abs(lam) * M.max()
    ri = _scaled_residual(r[~b], scale, u)
    rb = _scaled_residual(r[b], scale, u) if b.any() else 0.0
    if max(ri, rb) > tol:
        raise EigenNotConverged(f"eigen residual {max(ri, rb):.2e} exceeds {tol:.0e}")
    return SpectralResult("neumann", lam, u, bool(np.all(u > 0)), ri, rb, tol, method)


def rayleigh(pair: OperatorPair, u) -> float:
    """Rayleigh quotient ``Q(u, u) / int u^2``."""
    u = np.asarray(u, float)
    return pair.quadratic_form(u) / float(np.dot(pair.M, u * u))


def lower_bound_quotient(pair: OperatorPair, u) -> float:
    """``2 c (int |du|^2 + R u^2 / 2 + oint H u^2) / int u^2``; never exceeds the Rayleigh quotient."""
    u = np.asarray(u, float)
    grad = float(u @ (pair.K @ u))
    pot = 0.5 * float(np.dot(pair.R * pair.M, u * u))
    bdry = sum(float(np.dot(pair.H[f] * pair.face_mass[f], u[pair.face_nodes[f]] ** 2)) for f in pair.faces)
    return 2 * pair.c * (grad + pot + bdry) / float(np.dot(pair.M, u * u))


def eigen_steklov(pair: OperatorPair, tol: float = EIGEN_TOL) -> SpectralResult:
    """Smallest ``lam`` with ``L phi = 0`` inside and ``B phi = lam phi`` on the boundary.

    The generalized problem ``Q phi = lam Mb phi`` on the full coupled system
    is reduced exactly to the boundary: ``S = Q_bb - Q_bi Q_ii^{-1} Q_ib`` and
    ``S phi_b = lam Mb_b phi_b``.  A flat slab gives ``lam = 0``, ``phi = 1``.
    """
    b = pair.boundary
    ib, ii = np.flatnonzero(b), np.flatnonzero(~b)
    Q = pair.Q.tocsr()
    Qbb = Q[ib][:, ib].toarray()
    Qbi = Q[ib][:, ii]
    Qii = Q[ii][:, ii].tocsc()
    try:
        lu = spla.splu(Qii)
    except RuntimeError as exc:
        raise InteriorSingular("interior block of L is singular") from exc
    X = lu.solve(Qbi.T.toarray())
    if not np.all(np.isfinite(X)):
        raise InteriorSingular("interior block of L is singular")
    diag_u = np.abs(lu.U.diagonal())
    if diag_u.min() <= 1e-13 * diag_u.max():
        raise InteriorSingular("interior block of L is numerically singular")
    S = Qbb - Qbi @ X
    S = 0.5 * (S + S.T)
    mb = pair.Mb[ib]
    mh = 1 / np.sqrt(mb)
    vals, vecs = sla.eigh(mh[:, None] * S * mh[None, :], subset_by_index=[0, 0])
    lam = float(vals[0])
    phi = np.empty(pair.grid.size)
    phi[ib] = vecs[:, 0] * mh
    phi[ii] = -X @ phi[ib]
    phi = _normalize(phi)
    r = Q @ phi - lam * pair.Mb * phi
    scale = _norm_inf(Q) + abs(lam) * mb.max()
    ri = _scaled_residual(r[ii], scale, phi) if len(ii) else 0.0
    rb = _scaled_residual(r[ib], scale, phi)
    if max(ri, rb) > tol:
        raise EigenNotConverged(f"Steklov residual {max(ri, rb):.2e} exceeds {tol:.0e}")
    return SpectralResult("steklov", lam, phi, bool(np.all(phi > 0)), ri, rb, tol, "schur")


# --------------------------------------------------------------------------
# eigenvalue perturbation
# --------------------------------------------------------------------------
@dataclass
class DerivativeReport:
    """``d lam / dt`` at ``t = 0`` for ``g_t = g + t gamma``: formula and finite differences."""

    formula: float
    slopes: dict
    extrapolated: float
    lam0: float

    @property
    def relative_error(self) -> float:
        return abs(self.formula - self.extrapolated) / max(abs(self.formula), 1e-300)

    def to_dict(self) -> dict:
        return {"formula": self.formula, "slopes": {str(k): v for k, v in self.slopes.items()},
                "extrapolated": self.extrapolated, "lam0": self.lam0,
                "relative_error": self.relative_error if self.formula else None}


def derivative_formula(pair: OperatorPair, gamma) -> float:
    """``(c / vol) [ -int <Ric, gamma> dmu - oint <A, gamma> dsigma ]`` by nodal quadrature.

    Valid at a base with ``R = 0``, ``H = 0`` (first eigenfunction constant,
    ``lam = 0``).  The boundary pairing uses tangential components only.
    """
    grid = pair.grid
    jet = node_jets(pair.field, grid)
    curv = curvature_from_jet(*jet)
    gam = np.asarray(gamma.jet(grid.coords)[0], float)
    ginv = curv.ginv
    inner = np.einsum("nij,nik,njl,nkl->n", curv.ricci, ginv, ginv, gam)
    total = -float(np.dot(pair.M, inner))
    for face in pair.faces:
        rows = pair.face_nodes[face]
        A, _, N = face_second_form(_restrict(curv, rows), face)
        P = ginv[rows] - N[:, :, None] * N[:, None, :]
        ag = np.einsum("nij,nik,njl,nkl->n", A, P, P, gam[rows])
        total -= float(np.dot(pair.face_mass[face], ag))
    return pair.c * total / pair.volume


def check_scalar_flat(pair: OperatorPair, tol: float = 1e-8) -> None:
    scale = 1.0 / max(np.ptp(pair.grid.coords, axis=0).max(), 1e-300) ** 2
    worst_r = float(np.abs(pair.R).max())
    worst_h = max((float(np.abs(v).max()) for v in pair.H.values()), default=0.0)
    if worst_r > tol * scale or worst_h > tol * np.sqrt(scale):
        raise BaseNotScalarFlat(f"base has |R| up to {worst_r:.2e} and |H| up to {worst_h:.2e}")


def eigenvalue_derivative(base: MetricField, gamma, dims=None, ts=(1e-3, 5e-4)) -> DerivativeReport:
    """First-eigenvalue derivative along ``g + t gamma`` at a scalar-flat, minimal-boundary base.

    ``gamma`` is a symmetric tensor field with a ``jet`` (lower indices).  The
    finite-difference slopes ``(lam(t) - lam(0)) / t`` come from
    :func:`eigen_neumann` on the same grid; ``extrapolated`` removes their
    ``O(t)`` error using the two smallest steps.
    """
    pair = assemble(base, dims)
    check_scalar_flat(pair)
    formula = derivative_formula(pair, gamma)
    lam0 = eigen_neumann(pair).eigenvalue

    def slope(t):
        return (eigen_neumann(assemble(PerturbedMetric(base, gamma, t), dims)).eigenvalue - lam0) / t

    ts = sorted(ts, reverse=True)
    with ThreadPoolExecutor(max_workers=lab_threads()) as pool:
        slopes = dict(zip(ts, pool.map(slope, ts)))
    t1, t2 = ts[-2], ts[-1]
    r = t1 / t2
    extrap = (r * slopes[t2] - slopes[t1]) / (r - 1)
    return DerivativeReport(formula, slopes, float(extrap), lam0)


# --------------------------------------------------------------------------
# conformal deformations
# --------------------------------------------------------------------------
@dataclass
class Certificate:
    """Curvature certificate of a deformed metric, evaluated on its sample grid."""

    kind: str
    min_R: float
    max_abs_R: float
    min_H: float
    max_abs_H: float
    tolerance_R: float
    tolerance_H: float
    eigenvalue: float
    spacing: float

    @property
    def passed(self) -> bool:
        if self.kind == "psc_minimal":
            return self.min_R > 0 and self.max_abs_H <= self.tolerance_H
        return self.max_abs_R <= self.tolerance_R and self.min_H > 0

    def to_dict(self) -> dict:
        return {**self.__dict__, "passed": self.passed}


def conformal_explicit(pair: OperatorPair, u) -> ExplicitMetric:
    """``u^{4/(n-2)} g`` sampled at the nodes of the pair's grid."""
    g = node_jets(pair.field, pair.grid)[0]
    w = np.asarray(u, float) ** (4.0 / (pair.n - 2))
    return ExplicitMetric(pair.field.chart, pair.grid, w[:, None, None] * g)


def curvature_scale(field: ExplicitMetric):
    """``(R, {face: H}, K)`` at all nodes; ``K`` is the largest ``|Rm|`` plus squared ``|A|``."""
    curv = curvature_from_jet(*field.node_jet())
    riem = curv.lowered_riemann()
    ginv = curv.ginv
    rm2 = np.einsum("nabcd,nae,nbf,ncg,ndh,nefgh->n", riem, ginv, ginv, ginv, ginv, riem)
    K = float(np.sqrt(np.abs(rm2)).max())
    H = {}
    for face in boundary_faces(field.chart):
        _, rows = _face_nodes(field.grid, face)
        A, Hf, _ = face_second_form(_restrict(curv, rows), face)
        a2 = np.einsum("nij,nik,njl,nkl->n", A, ginv[rows], ginv[rows], A)
        K = max(K, float(a2.max()))
        H[face] = np.asarray(Hf, float)
    return np.asarray(curv.scalar, float), H, K


def certify(field: ExplicitMetric, kind: str, eigenvalue: float = float("nan")) -> Certificate:
    """Curvature certificate with tolerance ``10 h^2 K`` for the quantities meant to vanish."""
    R, H, K = curvature_scale(field)
    h = field.grid.spacing()
    tol_R = 10 * h**2 * K
    tol_H = 10 * h**2 * K
    allH = np.concatenate(list(H.values())) if H else np.zeros(1)
    return Certificate(kind, float(R.min()), float(np.abs(R).max()), float(allH.min()),
                       float(np.abs(allH).max()), tol_R, tol_H, eigenvalue, h)


def _positive_eigenvalue(res: SpectralResult, pair: OperatorPair):
    floor = 1e-8 / max(np.ptp(pair.grid.coords, axis=0).max(), 1e-300) ** 2
    if not res.eigenvalue > floor:
        raise EigenvalueNotPositive(f"first eigenvalue {res.eigenvalue:.3e} is not positive")
    if not res.positive:
        raise EigenNotConverged("first eigenfunction changes sign")


def deform_psc_minimal(field: MetricField, dims=None):
    """Conformal change by the first Neumann eigenfunction.

    Returns ``(ExplicitMetric, Certificate)``; the certificate records
    ``min R`` (expected positive) and ``max |H|`` (expected within tolerance).
    """
    pair = assemble(field, dims)
    res = eigen_neumann(pair)
    _positive_eigenvalue(res, pair)
    out = conformal_explicit(pair, res.u)
    return out, certify(out, "psc_minimal", res.eigenvalue)


def deform_scalarflat_meanconvex(field: MetricField, dims=None):
    """Conformal change by the first Steklov eigenfunction.

    Returns ``(ExplicitMetric, Certificate)``; the certificate records
    ``max |R|`` (expected within tolerance) and ``min H`` (expected positive).
    """
    pair = assemble(field, dims)
    res = eigen_steklov(pair)
    _positive_eigenvalue(res, pair)
    out = conformal_explicit(pair, res.u)
    return out, certify(out, "scalarflat_meanconvex", res.eigenvalue)


# --------------------------------------------------------------------------
# dimension reduction on a minimal graph
# --------------------------------------------------------------------------
@dataclass
class ReductionResult:
    """Solution ``u = 1 + v`` of ``L u = 0``, ``B u = 0``, ``u = 1`` at the outer ring.

    ``flux`` maps ring radii ``sigma`` to ``-4 oint d_eta u``.  The flux
    approaches its limit like ``1 / sigma``, so ``mass_change`` is the
    constant ``L`` of a least-squares fit ``L + k1 / sigma + k2 / sigma^2`` on
    ``rho_out / 8 <= sigma <= rho_out / 2``.  ``m0`` comes from fitting ring
    averages of ``u - 1`` to ``m0 rho^{3-n} + b rho^{2-n}`` (each basis
    function shifted to vanish at ``rho_out``) on the same window.
    """

    u: np.ndarray
    flux: dict
    mass_change: float
    min_u: float
    m0: float
    rho_out: float
    residual: float
    info: dict = dc_field(default_factory=dict)

    @property
    def positive(self) -> bool:
        return self.min_u > 0

    def to_dict(self) -> dict:
        ratio = self.mass_change / self.m0 if self.m0 else float("nan")
        return {"min_u": self.min_u, "positive": self.positive, "mass_change": self.mass_change,
                "m0": self.m0, "flux_over_m0": ratio, "rho_out": self.rho_out, "residual": self.residual,
                "flux": [[s, v] for s, v in self.flux.items()], **self.info}


def _conormal_components(surf, rows, axis, sign):
    ginv = surf.ghat_inv[rows]
    return sign * ginv[:, :, axis] / np.sqrt(ginv[:, axis, axis])[:, None]


def reduction_operator(surf):
    """Sparse ``L`` on the sheet and the coefficient pieces of ``B`` on its free faces.

    Returns ``(Lmat, free_rows, Bmat, Hfree)``: ``Lmat`` acts on node values
    (``-Delta + c R``), ``Bmat`` holds ``eta^a D_a + 2 c H`` on free rows.
    """
    grid, d = surf.grid, surf.d
    c = c_n(d)
    ginv, gam = surf.ghat_inv, surf.gamma_hat
    size = grid.size
    lap = sp.csr_matrix((size, size))
    # Delta v = g^pq (v_pq - Gamma^r_pq v_r)
    trace_gamma = np.einsum("npq,nrpq->nr", ginv, gam)
    for a in range(d):
        for b in range(d):
            lap = lap + sp.diags(ginv[:, a, b]) @ grid.dd(a, b)
        lap = lap - sp.diags(trace_gamma[:, a]) @ grid.d1(a)
    Lmat = (-lap + sp.diags(c * surf.R_sigma)).tocsr()
    rows_all, B_all, H_all = [], [], []
    for face in surf.free_faces:
        axis, side = face
        rows = surf.face_nodes(face)
        comps = _conormal_components(surf, rows, axis, -1.0 if side == "low" else 1.0)
        _, H = surf.boundary_mean_curvature(face)
        D = sum(sp.diags(comps[:, a]) @ grid.d1(a)[rows] for a in range(d))
        rows_all.append(rows)
        pick = sp.csr_matrix((2 * c * H, (np.arange(len(rows)), rows)), shape=(len(rows), size))
        B_all.append((D + pick).tocsr())
        H_all.append(H)
    return Lmat, rows_all, B_all, H_all


def _ring_rows(surf, axis, k, sign=1.0):
    rows = np.flatnonzero(surf.grid.index[:, axis] == k)
    comps = _conormal_components(surf, rows, axis, sign)
    D = sum(sp.diags(comps[:, a]) @ surf.grid.d1(a)[rows] for a in range(surf.d))
    return rows, D.tocsr()


def solve_reduction(surf, interior_rhs=None, free_rhs=None, outer=0.0, inner_flux=0.0):
    """Solve for ``v`` on a graph sheet.

    Rows: ``L v = interior_rhs`` inside, ``B v = free_rhs`` on free faces,
    ``v = outer`` on the outer ring and ``d_eta v = inner_flux`` on the inner
    ring (``eta`` the outward co-normal there).  Defaults give the
    homogeneous problem; :func:`dimension_reduce` supplies the curvature
    sources.  Returns ``(v, relative residual)``.
    """
    grid = surf.grid
    size = grid.size
    Lmat, free_rows, Bmats, _ = reduction_operator(surf)
    A = Lmat.tolil()
    rhs = np.zeros(size) if interior_rhs is None else np.array(interior_rhs, float)
    for k, (rows, Bm) in enumerate(zip(free_rows, Bmats)):
        A[rows] = Bm
        rhs[rows] = 0.0 if free_rhs is None else np.asarray(free_rhs[k], float)
    inner, Din = _ring_rows(surf, 0, 0, -1.0)
    A[inner] = Din
    rhs[inner] = np.broadcast_to(inner_flux, inner.shape)
    outer_rows = np.flatnonzero(grid.index[:, 0] == grid.shape[0] - 1)
    A[outer_rows] = sp.eye(size, format="csr")[outer_rows]
    rhs[outer_rows] = np.broadcast_to(outer, outer_rows.shape)
    A = A.tocsc()
    try:
        v = spla.spsolve(A, rhs)
    except RuntimeError as exc:
        raise SolveSingular(str(exc)) from exc
    if not np.all(np.isfinite(v)):
        raise SolveSingular("reduction system is singular")
    res = float(np.abs(A @ v - rhs).max() / (_norm_inf(A) * max(np.abs(v).max(), 1.0)))
    return v, res


def ring_flux(surf, u, k: int) -> float:
    """``-4 oint d_eta u`` over the level ``s``-index ``k`` (``eta`` toward larger radii)."""
    rows, D = _ring_rows(surf, 0, k, 1.0)
    _, w = surf.level_weights(0, k)
    return float(-4 * np.dot(w, D @ u))


def boundary_mass_flux(graph, u, sigmas=None) -> dict:
    """Flux sweep over ring radii (nearest grid levels); keys are the actual radii."""
    surf = graph.to_grid_surface() if hasattr(graph, "to_grid_surface") else graph
    dom = graph.domain
    s_axis = dom.grid.axes[0]
    if sigmas is None:
        ks = range(2, s_axis.size - 2)
    else:
        ks = sorted({int(round((np.log(sg) - s_axis.start) / s_axis.step)) for sg in sigmas})
    out = {}
    for k in ks:
        if not 1 <= k <= s_axis.size - 2:
            continue
        sigma = float(np.exp(s_axis.start + k * s_axis.step))
        out[sigma] = ring_flux(surf, u, k)
    return out


def _ring_means(graph, u):
    surf = graph.to_grid_surface()
    axis0 = graph.domain.grid.axes[0]
    rho = np.exp(axis0.values)
    means = np.array([np.dot(w, u[nodes]) / w.sum() for nodes, w in
                      (surf.level_weights(0, k) for k in range(axis0.size))])
    return rho, means


def flux_limit(flux: dict, rho_out: float, window=(1 / 8, 1 / 2)):
    """``(L, k1, k2)`` from fitting ``L + k1 / sigma + k2 / sigma^2`` to the flux sweep."""
    sig = np.array(list(flux), float)
    val = np.array(list(flux.values()), float)
    sel = (sig >= window[0] * rho_out * (1 - 1e-9)) & (sig <= window[1] * rho_out * (1 + 1e-9))
    if sel.sum() < 6:
        raise FitIllConditioned("too few rings in the flux window")
    A = np.stack([np.ones(sel.sum()), 1 / sig[sel], 1 / sig[sel] ** 2], 1)
    coef = np.linalg.lstsq(A, val[sel], rcond=None)[0]
    return tuple(float(c) for c in coef)


def dimension_reduce(graph, sigmas=None, window=(1 / 8, 1 / 2)) -> ReductionResult:
    """Conformal factor making the graph's induced metric scalar-flat with minimal free boundary.

    Solves ``L v = -c R``, ``B v = -2 c H`` (``c = c_{n-1}``), ``v = 0`` on
    the outer ring and ``d_eta v = 0`` on the inner ring, then ``u = 1 + v``.
    Raises :class:`NonPositiveSolution` if ``u`` is not positive.
    """
    if graph.n < 4:
        raise ValueError("dimension reduction needs n >= 4 (the sheet must have dimension >= 3)")
    surf = graph.to_grid_surface()
    c = c_n(surf.d)
    _, _, _, Hs = reduction_operator(surf)
    v, res = solve_reduction(surf, -c * surf.R_sigma, [-2 * c * H for H in Hs])
    u = 1.0 + v
    min_u = float(u.min())
    if not min_u > 0:
        raise NonPositiveSolution(f"conformal factor reaches {min_u:.3e}")
    rho_out = graph.domain.rho_out
    sweep = boundary_mass_flux(graph, u)
    L, k1, k2 = flux_limit(sweep, rho_out, window)
    flux = sweep if sigmas is None else boundary_mass_flux(graph, u, sigmas)
    rho, means = _ring_means(graph, u)
    sel = (rho >= window[0] * rho_out) & (rho <= window[1] * rho_out)
    n = graph.n
    basis = np.stack([rho[sel] ** (3 - n) - rho_out ** (3 - n), rho[sel] ** (2 - n) - rho_out ** (2 - n)], 1)
    coef = np.linalg.lstsq(basis, means[sel] - 1, rcond=None)[0]
    half = [s for s in sweep if s <= rho_out / 2 * (1 + 1e-9)]
    return ReductionResult(u, flux, L, min_u, float(coef[0]), float(rho_out), res,
                           {"m0_b": float(coef[1]), "flux_k1": k1, "flux_k2": k2,
                            "flux_at_half": sweep[max(half)] if half else float("nan")})


def manufactured_reduction(graph, expr):
    """Solve the reduction system with data built from an exact ``v`` (sympy, in ``x1 .. x_{n-1}``).

    Sources use exact derivatives of ``v`` with the sheet's discrete
    coefficients, so the error measures the stencils alone.  Returns
    ``(v_numeric, v_exact)``.
    """
    import sympy

    from .fields import coordinate_symbols

    surf = graph.to_grid_surface()
    dom = graph.domain
    d = surf.d
    xs = coordinate_symbols(d)
    grad = [sympy.diff(expr, x) for x in xs]
    hess = [[sympy.diff(gi, x) for x in xs] for gi in grad]
    X, J, K = dom.jets
    cols = [X[:, i] for i in range(d)]
    N = X.shape[0]

    def ev(e):
        return np.broadcast_to(np.asarray(sympy.lambdify(xs, e, "numpy")(*cols), float), (N,))

    v = ev(expr).copy()
    gr = np.stack([ev(e) for e in grad], 1)
    he = np.stack([np.stack([ev(e) for e in row], 1) for row in hess], 1)
    vp = np.einsum("npi,ni->np", J, gr)
    vpq = np.einsum("npqi,ni->npq", K, gr) + np.einsum("npi,nqj,nij->npq", J, J, he)
    c = c_n(d)
    lap = np.einsum("npq,npq->n", surf.ghat_inv, vpq - np.einsum("nrpq,nr->npq", surf.gamma_hat, vp))
    interior = -lap + c * surf.R_sigma * v
    _, free_rows, _, Hs = reduction_operator(surf)
    free = []
    for face, rows, H in zip(surf.free_faces, free_rows, Hs):
        comps = _conormal_components(surf, rows, face[0], -1.0 if face[1] == "low" else 1.0)
        free.append(np.einsum("na,na->n", comps, vp[rows]) + 2 * c * H * v[rows])
    inner = np.flatnonzero(dom.grid.index[:, 0] == 0)
    comps = _conormal_components(surf, inner, 0, -1.0)
    outer = np.flatnonzero(dom.grid.index[:, 0] == dom.grid.shape[0] - 1)
    num, _ = solve_reduction(surf, interior, free, outer=v[outer],
                             inner_flux=np.einsum("na,na->n", comps, vp[inner]))
    return num, v
