"""First and second variation of area, stability forms, and the finite-difference area oracle."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import InadmissibleVariation, NotMinimal, StepTooLargeForStencil
from .gridsurface import GridSurface

MINIMAL_TOL = 1e-6


@dataclass
class VariationField:
    """Ambient vector field ``X`` on the nodes of a sheet, plus the flow acceleration.

    The flow is ``x -> x + t X + t^2/2 Zc`` in chart coordinates, so
    ``nabla_X X = Zc + Gamma(X, X)``.  ``dX`` and ``dZc`` are optional parameter
    derivatives ``(N, d, n)``; finite differences are used when omitted.
    """

    X: np.ndarray
    Zc: np.ndarray | None = None
    dX: np.ndarray | None = None
    dZc: np.ndarray | None = None

    def acceleration(self, surf: GridSurface) -> np.ndarray:
        Zc = np.zeros_like(self.X) if self.Zc is None else self.Zc
        return Zc + np.einsum("nkij,ni,nj->nk", surf.ambient.gamma, self.X, self.X)

    def derivatives(self, surf: GridSurface):
        dX = self.dX if self.dX is not None else surf.grid.grad(self.X)
        if self.Zc is None:
            dZ = np.zeros_like(dX)
        else:
            dZ = self.dZc if self.dZc is not None else surf.grid.grad(self.Zc)
        return dX, dZ

    def decompose(self, surf: GridSurface):
        """``(phi, T, Zhat, phi_Z)`` with ``X = T + phi nu`` and ``nabla_X X = Zhat + phi_Z nu``."""
        phi, T = surf.split(self.X)
        phiZ, Zhat = surf.split(self.acceleration(surf))
        return phi, T, Zhat, phiZ


def normal_field(surf: GridSurface, phi, phi_grad=None) -> VariationField:
    """``X = phi nu`` with coordinate acceleration zero.

    Parameter derivatives of ``nu`` come from the Weingarten relation
    ``d_a nu = B_a^c P_c - Gamma(P_a, nu)``, so only ``phi`` is differenced.
    """
    phi = np.asarray(phi, float)
    dphi = surf.grad(phi) if phi_grad is None else np.asarray(phi_grad, float)
    dnu = (np.einsum("nac,nci->nai", surf.B_mixed.transpose(0, 2, 1), surf.dP)
           - np.einsum("nkij,nai,nj->nak", surf.ambient.gamma, surf.dP, surf.nu))
    dX = dphi[:, :, None] * surf.nu[:, None, :] + phi[:, None, None] * dnu
    return VariationField(phi[:, None] * surf.nu, dX=dX)


def check_admissible(surf: GridSurface, V: VariationField, tol: float = 1e-12) -> None:
    """X (and the flow acceleration) must stay tangent to the ambient boundary on free faces."""
    if not surf.free_faces:
        return
    axis = surf.ambient_face[0]
    for face in surf.free_faces:
        nodes = surf.face_nodes(face)
        scale = max(1.0, float(np.abs(V.X).max()))
        if np.abs(V.X[nodes, axis]).max(initial=0) > tol * scale:
            raise InadmissibleVariation("X must be tangent to the ambient boundary on free faces")
        if V.Zc is not None and np.abs(V.Zc[nodes, axis]).max(initial=0) > tol * scale:
            raise InadmissibleVariation("flow acceleration leaves the ambient boundary")


def interior_mask(surf: GridSurface) -> np.ndarray:
    mask = np.ones(surf.grid.size, bool)
    for face in surf.free_faces + surf.fixed_faces:
        mask[surf.face_nodes(face)] = False
    return mask


def check_minimal(surf: GridSurface, tol: float = MINIMAL_TOL) -> float:
    """Largest interior ``|H|``; raises :class:`NotMinimal` above ``tol / scale``."""
    h = float(np.abs(surf.H[interior_mask(surf)]).max())
    if h > tol / surf.scale():
        raise NotMinimal(f"max |H| = {h:.3e} exceeds {tol / surf.scale():.3e}")
    return h


# --------------------------------------------------------------------------
# first variation
# --------------------------------------------------------------------------
def first_variation(surf: GridSurface, V: VariationField, check: bool = True) -> float:
    """``int H <X, nu> + int_{boundary} <X, eta>`` over every boundary face."""
    if check:
        check_admissible(surf, V)
    total = surf.integrate(surf.H * surf.inner(V.X, surf.nu))
    for face in surf.free_faces + surf.fixed_faces:
        nodes, eta, _ = surf.conormal(face)
        vals = np.zeros(surf.grid.size)
        vals[nodes] = np.einsum("ni,nij,nj->n", V.X[nodes], surf.G[nodes], eta)
        total += surf.boundary_integrate(face, vals)
    return float(total)


# --------------------------------------------------------------------------
# second variation
# --------------------------------------------------------------------------
@dataclass
class DensityReport:
    F: np.ndarray               # assembled density
    grad_phi2: np.ndarray
    phi2_ric: np.ndarray
    phi2_B2: np.ndarray
    div_first: np.ndarray       # div(T div T - nabla_T T), evaluated as a divergence
    div_first_rhs: np.ndarray   # its curvature expansion
    div_second: np.ndarray      # -2 (phi B_ij T_i)_{;j}, as a divergence
    div_second_rhs: np.ndarray
    div_Zhat: np.ndarray
    phi_Z: np.ndarray           # normal part of nabla_X X; enters with coefficient H = 0
    integral: float
    boundary_flux: dict         # per face: int <T div T - nabla_T T - 2 phi B(T) + Zhat, eta>
    free_boundary_A: float      # -int_{free} phi^2 A(nu, nu)
    max_H: float

    def identity_residuals(self, mask=None):
        m = slice(None) if mask is None else mask
        return (float(np.abs(self.div_first - self.div_first_rhs)[m].max()),
                float(np.abs(self.div_second - self.div_second_rhs)[m].max()))


def second_variation_density(surf: GridSurface, V: VariationField, check: bool = True,
                             minimal_tol: float = MINIMAL_TOL) -> DensityReport:
    """Second-variation density ``F_X`` at every node, with both divergence identities."""
    max_H = check_minimal(surf, minimal_tol) if check else float(np.abs(surf.H).max())
    if check:
        check_admissible(surf, V)
    phi, T, Zhat, phiZ = V.decompose(surf)
    gi = surf.ghat_inv
    dphi = surf.grad(phi)
    grad_phi2 = np.einsum("na,nab,nb->n", dphi, gi, dphi)
    M = surf.covariant_derivative(T)              # M[b, a] = nabla_b T^a
    divT = np.einsum("naa->n", M)
    nablaTT = np.einsum("nb,nba->na", T, M)
    Vfirst = T * divT[:, None] - nablaTT
    BT = np.einsum("nab,nb->na", surf.B_mixed, T)  # (B T)^a
    W = phi[:, None] * BT

    div_first = surf.divergence(Vfirst)
    div_second = -2.0 * surf.divergence(W)
    div_Z = surf.divergence(Zhat)

    # right-hand sides: ambient curvature, B, and nabla T
    Rlow = surf.ambient.lowered_riemann()
    Tamb = surf.push(T)
    # <R(T, e_i) T, e_i> = g^{ab} R(P_b; T, P_a, T)
    RTT = np.einsum("nab,nlijk,nbl,ni,naj,nk->n", gi, Rlow, surf.dP, Tamb, surf.dP, Tamb)
    BTe2 = np.einsum("na,nab,nb->n", np.einsum("nb,nba->na", T, surf.B), gi,
                     np.einsum("nb,nba->na", T, surf.B))
    trMM = np.einsum("nba,nab->n", M, M)
    div_first_rhs = RTT + divT**2 + BTe2 - trMM
    # <R(T, e_i) nu, e_i> = g^{ab} R(P_b; T, P_a, nu)
    RTnu = np.einsum("nab,nlijk,nbl,ni,naj,nk->n", gi, Rlow, surf.dP, Tamb, surf.dP, surf.nu)
    B_T_gradphi = np.einsum("na,nab,nb->n", np.einsum("nb,nba->na", T, surf.B), gi, dphi)
    MB = np.einsum("nba,nba->n", M, surf.B_mixed)  # <nabla_i T, e_j> B_ij
    div_second_rhs = 2 * phi * RTnu - 2 * B_T_gradphi - 2 * phi * MB

    phi2_ric = phi**2 * surf.ric_nu
    phi2_B2 = phi**2 * surf.B2
    F = -phi2_ric - phi2_B2 + grad_phi2 + div_first + div_Z + div_second

    flux = {}
    for face in surf.free_faces + surf.fixed_faces:
        nodes, eta, comps = surf.conormal(face)
        vec = Vfirst[nodes] - 2 * W[nodes] + Zhat[nodes]
        vals = np.zeros(surf.grid.size)
        vals[nodes] = np.einsum("na,nab,nb->n", vec, surf.ghat[nodes], comps)
        flux[face] = surf.boundary_integrate(face, vals)
    free_A = 0.0
    for face in surf.free_faces:
        nodes, Ann, _ = surf.ambient_boundary_terms(face)
        vals = np.zeros(surf.grid.size)
        vals[nodes] = phi[nodes] ** 2 * Ann
        free_A -= surf.boundary_integrate(face, vals)
    return DensityReport(F, grad_phi2, phi2_ric, phi2_B2, div_first, div_first_rhs, div_second,
                         div_second_rhs, div_Z, phiZ, surf.integrate(F), flux, free_A, max_H)


def second_variation_normal(surf: GridSurface, phi, check: bool = True,
                            minimal_tol: float = MINIMAL_TOL):
    """``int |grad phi|^2 - (Ric(nu) + |B|^2) phi^2`` and the boundary term ``-int phi^2 A(nu, nu)``.

    Returns ``(total, interior, boundary)``.
    """
    if check:
        check_minimal(surf, minimal_tol)
    phi = np.asarray(phi, float)
    interior = surf.integrate(surf.grad_norm2(phi) - (surf.ric_nu + surf.B2) * phi**2)
    boundary = 0.0
    for face in surf.free_faces:
        nodes, Ann, _ = surf.ambient_boundary_terms(face)
        vals = np.zeros(surf.grid.size)
        vals[nodes] = phi[nodes] ** 2 * Ann
        boundary -= surf.boundary_integrate(face, vals)
    return interior + boundary, interior, boundary


@dataclass
class StabilityReport:
    grad_phi2: float
    phi2_ric: float
    phi2_B2: float
    phi2_RM: float
    phi2_RSigma: float
    bdry_A: float
    bdry_HdM: float
    bdry_HdSigma: float
    stability: float
    stability2: float
    stability_use: float
    strong_stability: float
    rough_lhs: float
    rough_rhs: float
    decomposition_residual: float
    flags: dict

    def to_dict(self):
        return asdict(self)


def stability_report(surf: GridSurface, phi, check: bool = True,
                     minimal_tol: float = MINIMAL_TOL) -> StabilityReport:
    """All assembled forms of the stability inequality for a test function ``phi``."""
    if check:
        check_minimal(surf, minimal_tol)
    phi = np.asarray(phi, float)
    p2 = phi**2
    I = surf.integrate
    grad2 = I(surf.grad_norm2(phi))
    ric = I(p2 * surf.ric_nu)
    b2 = I(p2 * surf.B2)
    rm = I(p2 * surf.R_M)
    rs = I(p2 * surf.R_sigma)
    bA = bHM = bHS = 0.0
    resid = 0.0
    for face in surf.free_faces:
        nodes, Ann, HdM = surf.ambient_boundary_terms(face)
        _, HdS = surf.boundary_mean_curvature(face)
        resid = max(resid, float(np.abs(HdM - HdS - Ann).max()))
        for arr, key in ((Ann, "A"), (HdM, "M"), (HdS, "S")):
            vals = np.zeros(surf.grid.size)
            vals[nodes] = p2[nodes] * arr
            v = surf.boundary_integrate(face, vals)
            if key == "A":
                bA += v
            elif key == "M":
                bHM += v
            else:
                bHS += v
    stab = grad2 - ric - b2 - bA
    stab2 = grad2 - 0.5 * rm + 0.5 * rs - 0.5 * b2 - (bHM - bHS)
    use = grad2 + 0.5 * rs + bHS
    rough_rhs = 0.5 * (rm + b2) + bHM
    flags = {
        "stability_nonnegative": stab >= 0,
        "stability2_nonnegative": stab2 >= 0,
        "stability_use_positive": use > 0,
        "rough_chain_holds": use >= rough_rhs and rough_rhs > 0,
    }
    return StabilityReport(grad2, ric, b2, rm, rs, bA, bHM, bHS, stab, stab2, use, stab,
                           use, rough_rhs, resid, flags)


def strong_cutoff(rho, sigma: float, n: int) -> np.ndarray:
    """Test function for the strong stability inequality.

    Equal to 1 on ``rho <= sigma / 2`` and 0 on ``rho >= sigma``; in between it
    is linear in ``log rho`` for ``n = 3`` (its energy stays bounded as
    ``sigma`` grows) and linear in ``rho`` for ``n >= 4``.
    """
    rho = np.asarray(rho, float)
    if n == 3:
        t = np.log(sigma / rho) / np.log(2.0)
    else:
        t = 2.0 * (sigma - rho) / sigma
    return np.clip(t, 0.0, 1.0)


def stability_tolerance(surf: GridSurface, phi, report: StabilityReport, factor: float = 10.0) -> float:
    """Discretization allowance for ``|stability - stability2|``.

    The two forms differ by the Gauss equation and the boundary mean
    curvature split, each exact in the continuum and second order on the
    grid.  The allowance is ``factor * h^2`` times the absolute size of all
    terms, ``h`` the largest parameter spacing.
    """
    phi = np.asarray(phi, float)
    p2 = phi**2
    I = surf.integrate
    size = I(surf.grad_norm2(phi)) + I(p2 * (np.abs(surf.ric_nu) + surf.B2 + np.abs(surf.R_M) + np.abs(surf.R_sigma)))
    size += abs(report.bdry_A) + abs(report.bdry_HdM) + abs(report.bdry_HdSigma)
    h = max(ax.step for ax in surf.grid.axes)
    return float(factor * h * h * size)


# --------------------------------------------------------------------------
# finite-difference area oracle
# --------------------------------------------------------------------------
def flowed_area(surf: GridSurface, V: VariationField, t: float) -> float:
    dX, dZ = V.derivatives(surf)
    Zc = np.zeros_like(V.X) if V.Zc is None else V.Zc
    P = surf.P + t * V.X + 0.5 * t * t * Zc
    dP = surf.dP + t * dX + 0.5 * t * t * dZ
    G = surf.metric.jet(P)[0]
    gh = np.einsum("naj,nij,nbi->nab", dP, G, dP)
    return float(np.dot(surf.grid.trapezoid_weights(), np.sqrt(np.linalg.det(gh))))


def _central(area_fn, order: int, h: float) -> float:
    if order == 1:
        return (area_fn(h) - area_fn(-h)) / (2 * h)
    return (area_fn(h) - 2 * area_fn(0.0) + area_fn(-h)) / h**2


def richardson(area_fn, order: int, step: float, levels: int = 3):
    """Central differences at ``step / 2^k`` combined by Richardson extrapolation.

    Returns ``(value, raw_sequence)``.  Raises :class:`StepTooLargeForStencil` if
    successive raw differences fail to shrink (the step is outside the
    asymptotic range).
    """
    seq = [_central(area_fn, order, step / 2**k) for k in range(levels)]
    diffs = np.abs(np.diff(seq))
    scale = max(1.0, abs(seq[-1]))
    noise = 1e-13 * scale / (step / 2 ** (levels - 1)) ** order
    if levels >= 3 and diffs[-1] > max(diffs[-2], noise) * 1.01 and diffs[-1] > 1e3 * noise:
        raise StepTooLargeForStencil("finite-difference sequence is not converging")
    table = list(seq)
    for k in range(1, levels):
        table = [(4**k * table[i + 1] - table[i]) / (4**k - 1) for i in range(len(table) - 1)]
    return float(table[0]), seq


def fd_area_variation(surface, V, order: int = 2, step: float = 1e-2, levels: int = 3) -> float:
    """Derivative of area along the flow ``x + tX + t^2/2 Zc`` at ``t = 0``.

    Works on :class:`GridSurface` (with a :class:`VariationField`) and on
    :class:`~fbmass.surface.mesh.TriMesh` (with per-vertex displacement arrays
    ``(X, Zc)`` or a :class:`VariationField`).
    """
    if isinstance(surface, GridSurface):
        fn = lambda t: flowed_area(surface, V, t)  # noqa: E731
    else:
        X = V.X if isinstance(V, VariationField) else np.asarray(V)
        Zc = V.Zc if isinstance(V, VariationField) and V.Zc is not None else np.zeros_like(X)
        fn = lambda t: surface.displaced(t * X + 0.5 * t * t * Zc).area()  # noqa: E731
    return richardson(fn, order, step, levels)[0]
