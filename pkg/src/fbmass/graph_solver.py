"""Newton solver for free-boundary minimal graphs in conformally flat half-spaces.

A graph ``x^n = f(x')`` is minimal for ``g = h^{4/(n-2)} delta`` iff

    (delta_ij - f_i f_j / W^2) f_ij - (2(n-1)/(n-2)) W d_{nu0} log h = 0,

with ``W = sqrt(1 + |df|^2)`` and upward Euclidean unit normal
``nu0 = (-df, 1) / W``; it meets ``{x^1 = 0}`` orthogonally iff ``d_1 f = 0``
there.  (With ``B = <nabla nu, .>`` and the upward normal, the mean curvature
is ``-h^{-2/(n-2)} / W`` times the left-hand side.)
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ExtrapolationIllConditioned, FitIllConditioned, MaxIterations, NewtonDiverged
from .geometry import ConformalFactor
from .mass import fit_power_tail
from .surface.graph import FIXED_INNER, FIXED_OUTER, FREE, GraphSurface, HalfAnnulus, half_annulus

CSTEP = 1e-30


def _pointwise(domain: HalfAnnulus, factor, X, f, fp, fpq):
    """Interior operator at every node from ``f`` and its parameter derivatives."""
    n = domain.n
    grad, hess = domain.cartesian_derivatives(fp, fpq)
    W2 = 1 + np.sum(grad * grad, -1)
    W = np.sqrt(W2)
    A = np.eye(n - 1) - grad[:, :, None] * grad[:, None, :] / W2[:, None, None]
    lhs = np.einsum("nij,nij->n", A, hess)
    if factor is None:
        return lhs
    x = np.concatenate([X.astype(f.dtype), f[:, None]], 1)
    h, dh, _ = factor.jet(x)
    nu0 = np.concatenate([-grad, np.ones_like(f)[:, None]], 1) / W[:, None]
    dlogh = np.einsum("ni,ni->n", nu0, dh) / h
    return lhs - (2 * (n - 1) / (n - 2)) * W * dlogh


def _boundary_rows(domain: HalfAnnulus):
    tags = domain.tags()
    return tags == FIXED_INNER, tags == FIXED_OUTER, tags == FREE


def pde_residual(graph: GraphSurface, forcing=None):
    """Interior residual field (zero on boundary nodes) and ``d_1 f`` on free nodes.

    ``forcing`` (node array) is subtracted from the interior operator.
    """
    dom = graph.domain
    fp, fpq = graph.parameter_derivatives()
    r = _pointwise(dom, graph.factor, dom.jets[0], graph.f, fp, fpq)
    if forcing is not None:
        r = r - forcing
    inner, outer, free = _boundary_rows(dom)
    r = np.where(inner | outer | free, 0.0, r)
    grad, _ = dom.cartesian_derivatives(fp, fpq)
    return r, grad[free, 0]


@dataclass
class NewtonLog:
    iterations: int
    residuals: list
    tolerance: float
    converged: bool


class _System:
    """Discrete nonlinear system ``F(f) = 0`` with a sparse complex-step Jacobian."""

    def __init__(self, domain: HalfAnnulus, factor, inner_value, outer_value, forcing, inner_neumann=False):
        self.dom = domain
        self.inner_neumann = inner_neumann
        self.factor = factor
        g = domain.grid
        self.D1 = [g.d1(p) for p in range(g.ndim)]
        self.D2 = {(p, q): g.dd(p, q) for p in range(g.ndim) for q in range(p, g.ndim)}
        self.inner, self.outer, self.free = _boundary_rows(domain)
        self.inner_value = np.broadcast_to(np.asarray(inner_value, float), (g.size,))
        self.outer_value = np.broadcast_to(np.asarray(outer_value, float), (g.size,))
        self.forcing = np.zeros(g.size) if forcing is None else np.asarray(forcing, float)
        # row of d_1 f in parameter derivatives at free nodes: d_1 f = Jinv[:, 0, p] f_p
        if domain.kind != "radial":
            self.Jinv0 = np.linalg.inv(domain.jets[1])[:, 0, :]

    def _derivs(self, f):
        d = self.dom.grid.ndim
        fp = np.stack([D @ f for D in self.D1], 1)
        fpq = np.empty((f.size, d, d), dtype=f.dtype)
        for (p, q), D in self.D2.items():
            fpq[:, p, q] = fpq[:, q, p] = D @ f
        return fp, fpq

    def residual(self, f):
        fp, fpq = self._derivs(f)
        X = self.dom.jets[0]
        F = _pointwise(self.dom, self.factor, X, f, fp, fpq) - self.forcing
        if self.free.any():
            d1f = np.einsum("np,np->n", self.Jinv0, fp)
            F = np.where(self.free, d1f, F)
        F = np.where(self.inner, fp[:, 0] if self.inner_neumann else f - self.inner_value, F)
        F = np.where(self.outer, f - self.outer_value, F)
        return F

    def jacobian(self, f):
        fp, fpq = self._derivs(f)
        X = self.dom.jets[0]
        N, d = f.size, self.dom.grid.ndim

        def partial(which, p=None, q=None):
            fc, fpc, fpqc = f.astype(complex), fp.astype(complex), fpq.astype(complex)
            if which == 0:
                fc = fc + 1j * CSTEP
            elif which == 1:
                fpc[:, p] += 1j * CSTEP
            else:
                fpqc[:, p, q] += 1j * CSTEP
                if p != q:
                    fpqc[:, q, p] += 1j * CSTEP
            return np.imag(_pointwise(self.dom, self.factor, X, fc, fpc, fpqc)) / CSTEP

        Jm = sp.diags(partial(0))
        for p in range(d):
            Jm = Jm + sp.diags(partial(1, p)) @ self.D1[p]
        for (p, q), D in self.D2.items():
            Jm = Jm + sp.diags(partial(2, p, q)) @ D
        Jm = sp.lil_matrix(Jm.tocsr())
        if self.free.any():
            Bfree = sum(sp.diags(self.Jinv0[:, p]) @ self.D1[p] for p in range(d)).tolil()
            rows = np.flatnonzero(self.free)
            Jm[rows] = Bfree[rows]
        eye = sp.identity(N, format="lil")
        for mask in (self.inner, self.outer):
            rows = np.flatnonzero(mask)
            Jm[rows] = (self.D1[0].tolil() if mask is self.inner and self.inner_neumann else eye)[rows]
        return Jm.tocsc()


def solve_graph(domain: HalfAnnulus, factor: ConformalFactor | None = None, outer_dirichlet=0.0,
                init: GraphSurface | np.ndarray | None = None, inner_dirichlet=None, forcing=None,
                inner_neumann: bool = False, max_iter: int = 40, max_backtracks: int = 30, tol_scale: float = 1e-10):
    """Damped Newton iteration for the free-boundary minimal graph.

    The outer ring is Dirichlet at ``outer_dirichlet``; the inner ring is
    Dirichlet at ``inner_dirichlet`` (defaults to the initial heights, which
    default to ``outer_dirichlet``), or, with ``inner_neumann``, carries
    ``d_rho f = 0``: a small hole then stands in for a graph over the whole
    half-space.  Returns ``(graph, log)``.
    """
    g = domain.grid
    if isinstance(init, GraphSurface):
        f = init.f.copy()
    elif init is None:
        f = np.broadcast_to(np.asarray(outer_dirichlet, float), (g.size,)).copy()
    else:
        f = np.asarray(init, float).copy()
    inner_value = f.copy() if inner_dirichlet is None else inner_dirichlet
    system = _System(domain, factor, inner_value, outer_dirichlet, forcing, inner_neumann)
    h = g.axes[0].step
    F = system.residual(f)
    norms = [float(np.abs(F).max())]
    for it in range(1, max_iter + 1):
        tol = tol_scale * (1 + np.abs(f).max() / h**2)
        if norms[-1] <= tol:
            return _finish(domain, factor, outer_dirichlet, f, NewtonLog(it - 1, norms, tol, True))
        step = spla.spsolve(system.jacobian(f), -F)
        lam, ok = 1.0, False
        for _ in range(max_backtracks + 1):
            trial = f + lam * step
            Ft = system.residual(trial)
            if np.all(np.isfinite(Ft)) and np.abs(Ft).max() < norms[-1]:
                ok = True
                break
            lam *= 0.5
        if not ok:
            raise NewtonDiverged(f"residual did not decrease after {max_backtracks} backtracks "
                                 f"(|F| = {norms[-1]:.3e})")
        f, F = trial, Ft
        norms.append(float(np.abs(F).max()))
    tol = tol_scale * (1 + np.abs(f).max() / h**2)
    if norms[-1] <= tol:
        return _finish(domain, factor, outer_dirichlet, f, NewtonLog(max_iter, norms, tol, True))
    raise MaxIterations(f"no convergence in {max_iter} Newton steps (|F| = {norms[-1]:.3e})")


def _finish(domain, factor, a, f, log):
    a = float(np.mean(a))
    return GraphSurface(domain, f, factor, a, info={"newton": asdict(log)}), log


# --------------------------------------------------------------------------
# decay fit
# --------------------------------------------------------------------------
@dataclass
class DecayFit:
    a0: float
    a1: float
    exponent: float
    exponent_error: float
    residual: float
    window: tuple
    model: str

    def to_dict(self):
        return asdict(self)


def ring_average(graph: GraphSurface):
    """Radii and surface-measure averages of ``f`` over each ring ``|x'| = rho``."""
    dom = graph.domain
    g = dom.grid
    idx = g.index[:, 0]
    w = np.ones(g.size)
    for a in range(1, g.ndim):
        ax = g.axes[a]
        wa = np.full(ax.size, ax.step)
        if ax.kind == "bounded":
            wa[0] *= 0.5
            wa[-1] *= 0.5
        elif ax.kind == "pole":
            wa[-1] *= 0.5
        w *= wa[g.index[:, a]]
    if dom.kind == "polar3":
        w *= np.sin(g.coords[:, 1])
    num = np.bincount(idx, w * graph.f)
    den = np.bincount(idx, w)
    return np.exp(g.axes[0].values), num / den


def decay_fit_arrays(n: int, rho, fbar, window=None) -> DecayFit:
    rho, fbar = np.asarray(rho, float), np.asarray(fbar, float)
    lo, hi = window if window is not None else (rho.min(), rho.max())
    sel = (rho >= lo * (1 - 1e-12)) & (rho <= hi * (1 + 1e-12))
    if sel.sum() < 8:
        raise FitIllConditioned("decay fit needs at least 8 radial samples in the window")
    r, y = rho[sel], fbar[sel]
    if n == 3:
        A = np.stack([np.ones_like(r), np.log(r)], 1)
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        res = float(np.linalg.norm(A @ coef - y))
        return DecayFit(float(coef[0]), float(coef[1]), 0.0, 0.0, res, (float(lo), float(hi)), "LogPlusPower")
    if np.ptp(y) <= 1e-14 * max(1.0, np.abs(y).max()):
        return DecayFit(float(y.mean()), 0.0, float("nan"), float("nan"), 0.0, (float(lo), float(hi)), "PowerLaw")
    try:
        m, b, s, res = fit_power_tail(r, y)
    except ExtrapolationIllConditioned as exc:
        raise FitIllConditioned(str(exc)) from exc
    target = 3.0 - n
    return DecayFit(float(m), float(b), float(-s), float(abs(-s - target)), float(res),
                    (float(lo), float(hi)), "PowerLaw")


def decay_fit(graph: GraphSurface, window=None) -> DecayFit:
    """Fit the ring averages of ``f`` over the outer half of the annulus."""
    rho, fbar = ring_average(graph)
    if window is None:
        window = (graph.domain.rho_out / 2, graph.domain.rho_out)
    return decay_fit_arrays(graph.n, rho, fbar, window)


# --------------------------------------------------------------------------
# manufactured solutions
# --------------------------------------------------------------------------
def manufactured_forcing(domain: HalfAnnulus, expr, factor: ConformalFactor | None = None):
    """Exact heights and the continuous operator applied to a sympy expression in ``x1..x_{n-1}``."""
    import sympy

    from .fields import coordinate_symbols

    n = domain.n
    xs = coordinate_symbols(n - 1)
    grad = [sympy.diff(expr, x) for x in xs]
    hess = [[sympy.diff(gi, x) for x in xs] for gi in grad]
    f_fn = sympy.lambdify(xs, expr, "numpy")
    g_fn = sympy.lambdify(xs, grad, "numpy")
    h_fn = sympy.lambdify(xs, hess, "numpy")
    X = domain.jets[0]
    cols = [X[:, i] for i in range(n - 1)]
    N = X.shape[0]
    f = np.broadcast_to(np.asarray(f_fn(*cols), float), (N,)).copy()
    gr = np.stack([np.broadcast_to(np.asarray(v, float), (N,)) for v in g_fn(*cols)], 1)
    he = np.stack([np.stack([np.broadcast_to(np.asarray(v, float), (N,)) for v in row], 1)
                   for row in h_fn(*cols)], 1)
    W2 = 1 + np.sum(gr * gr, -1)
    A = np.eye(n - 1) - gr[:, :, None] * gr[:, None, :] / W2[:, None, None]
    force = np.einsum("nij,nij->n", A, he)
    if factor is not None:
        x = np.concatenate([X, f[:, None]], 1)
        h, dh, _ = factor.jet(x)
        nu0 = np.concatenate([-gr, np.ones((N, 1))], 1) / np.sqrt(W2)[:, None]
        force = force - (2 * (n - 1) / (n - 2)) * np.sqrt(W2) * np.einsum("ni,ni->n", nu0, dh) / h
    return f, force


def solve_manufactured(domain: HalfAnnulus, expr, factor=None):
    """Solve with the manufactured forcing and the exact heights on both rings."""
    exact, force = manufactured_forcing(domain, expr, factor)
    graph, log = solve_graph(domain, factor, outer_dirichlet=exact, inner_dirichlet=exact,
                             init=exact * 0 + exact.mean(), forcing=force)
    return graph, exact, log


__all__ = ["pde_residual", "solve_graph", "decay_fit", "decay_fit_arrays", "DecayFit", "ring_average",
           "manufactured_forcing", "solve_manufactured", "half_annulus", "NewtonLog"]
