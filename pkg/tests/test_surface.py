import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbmass.errors import InadmissibleVariation, NonManifoldMesh, NotMinimal, StepTooLargeForStencil
from fbmass.geometry import ConformalFactor, curvature_from_jet
from fbmass.surface import TriMesh, read_off, write_off
from fbmass.surface.graph import GraphSurface, half_annulus, induced_metric, read_graph_csv
from fbmass.surface.mesh import FIXED, FREE
from fbmass.surface.testbeds import (cap_area, catenoid_band, catenoid_mesh, flat_half_disk, flat_sheet,
                                     half_catenoid, sphere_cap_mesh, sphere_zone)
from fbmass.surface.variation import (VariationField, fd_area_variation, first_variation, interior_mask,
                                      normal_field, richardson, second_variation_density,
                                      second_variation_normal, stability_report)


def smooth_cut(v, V):
    return np.cos(np.pi * v / (2 * V))


# -- Gauss-Bonnet ---------------------------------------------------------------
def test_gauss_bonnet_flat_half_disk():
    mesh = flat_half_disk()
    gb = mesh.gauss_bonnet()
    assert gb.chi == 1
    assert len(mesh.corners) == 2
    # chord polygon: the corner angle is pi/2 less half the arc step
    assert np.allclose(gb.inner_angles, np.pi / 2 - np.pi / 32, atol=1e-12)
    assert abs(gb.interior) <= 1e-12
    assert gb.defect <= 1e-12


@pytest.mark.parametrize("nr,nt", [(6, 18), (16, 48)])
def test_gauss_bonnet_sphere_cap(nr, nt):
    mesh = sphere_cap_mesh(nr, nt)
    assert mesh.gauss_bonnet_defect() <= 1e-10
    gb = mesh.gauss_bonnet()
    assert gb.chi == 1 and gb.corners == 0


@pytest.mark.parametrize("N", [17, 33])
def test_gauss_bonnet_half_catenoid(N):
    mesh = catenoid_mesh(N, N)
    gb = mesh.gauss_bonnet()
    assert len(mesh.corners) == 4
    assert gb.chi == 1
    assert gb.defect <= 1e-10


def test_gauss_bonnet_random_perturbation():
    rng = np.random.default_rng(3)
    mesh = catenoid_mesh(13, 13)
    moved = mesh.displaced(0.02 * rng.normal(size=mesh.V.shape))
    assert moved.gauss_bonnet_defect() <= 1e-10


def test_non_manifold_mesh_rejected():
    V = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1.0]])
    with pytest.raises(NonManifoldMesh):
        TriMesh(V, [[0, 1, 2], [0, 1, 3], [0, 1, 4]])
    with pytest.raises(NonManifoldMesh):
        TriMesh(V[:4], [[0, 1, 2], [0, 1, 3]])  # inconsistent orientation


def test_off_round_trip(tmp_path):
    mesh = flat_half_disk(4, 8)
    write_off(mesh, tmp_path / "m.off", tmp_path / "m.edges")
    back = read_off(tmp_path / "m.off", tmp_path / "m.edges")
    assert np.array_equal(back.F, mesh.F)
    assert np.allclose(back.V, mesh.V)
    assert back.labels == mesh.labels
    assert set(back.labels.values()) == {FIXED, FREE}


# -- fundamental forms ----------------------------------------------------------
def test_flat_graph_forms_vanish():
    dom = half_annulus(3, 1.0, 8.0, 17, 17)
    g = GraphSurface(dom, np.zeros(dom.grid.size))
    free_node = int(np.flatnonzero(dom.grid.on_face(1, "low"))[5])
    ff = g.fundamental_forms(free_node)
    assert np.abs(ff["B"]).max() == 0 and ff["H"] == 0
    assert ff["A_nu_nu"] == 0 and ff["H_dM"] == 0


def test_sphere_cap_mean_curvature():
    errs = []
    for nr, nt in ((8, 24), (16, 48), (32, 96)):
        mesh = sphere_cap_mesh(nr, nt)
        H = mesh.mean_curvature()
        # rings 3 .. nr-2: one-ring normals are not biased by the fan centre or the boundary
        inner = np.arange(1 + 2 * nt, 1 + (nr - 2) * nt)
        errs.append(np.median(np.abs(H[inner] - 2)))
        assert np.abs(H[inner] - 2).max() <= 5e-3
    assert errs[2] < errs[1] < errs[0]
    exact = sphere_cap_mesh(8, 24, exact_normals=True)
    assert np.allclose(exact.mean_curvature(), 2, atol=1e-12)


def test_half_catenoid_mesh_forms():
    mesh = catenoid_mesh(33, 33)
    H = mesh.mean_curvature()
    inner = np.setdiff1d(np.arange(len(mesh.V)), mesh.boundary_vertices)
    assert np.abs(H[inner]).max() <= 5e-3
    free = [v for v in mesh.boundary_vertices if abs(mesh.V[v, 0]) < 1e-12 and v not in mesh.corners]
    ff = mesh.fundamental_forms(free[3])
    assert ff["H_dM"] - ff["H_dSigma"] - ff["A_nunu"] == pytest.approx(0, abs=1e-2)
    assert abs(ff["H_dSigma"]) <= 1e-2


def test_grid_half_catenoid_minimal_and_decomposition():
    s = half_catenoid(41, 41)
    assert np.abs(s.H).max() <= 1e-12
    for face in s.free_faces:
        nodes, Ann, HdM = s.ambient_boundary_terms(face)
        _, HdS = s.boundary_mean_curvature(face)
        assert np.abs(Ann).max() == 0 and np.abs(HdM).max() == 0
        assert np.abs(HdS).max() <= 1e-12


def test_sphere_zone_mean_curvature():
    s = sphere_zone(21, 24, 0.6, 2.4)
    assert np.allclose(s.H, 2, atol=1e-12)
    assert np.allclose(s.B2, 2, atol=1e-12)


# -- induced metric ---------------------------------------------------------------
def test_induced_metric_flat_and_conformal():
    dom = half_annulus(3, 1.0, 8.0, 17, 17)
    g = GraphSurface(dom, np.zeros(dom.grid.size))
    assert np.array_equal(g.induced_cartesian(), np.broadcast_to(np.eye(2), (dom.grid.size, 2, 2)))
    fac = ConformalFactor(1.5, 3)
    g = GraphSurface(dom, np.zeros(dom.grid.size), fac)
    X = dom.jets[0]
    h = 1 + fac.C * 1.5 / np.linalg.norm(X, axis=1)
    assert np.allclose(g.induced_cartesian(), h[:, None, None] ** 4 * np.eye(2), rtol=1e-13)


def test_induced_metric_asymptotics():
    dom = half_annulus(4, 2.0, 256.0, 33, 7, 8)
    g = GraphSurface(dom, np.zeros(dom.grid.size), ConformalFactor(1.0, 4))
    dev = np.abs(g.induced_cartesian() - np.eye(3)).max(axis=(1, 2))
    rho = dom.rho
    # delta + O(|x|^{2-n})
    assert np.all(dev * rho**2 <= 4 * ConformalFactor(1.0, 4).C * 1.01)


def test_ramp_graph_is_flat():
    errs = []
    for N in (17, 33):
        dom = half_annulus(3, 1.0, 4.0, N, N)
        X = dom.jets[0]
        g = GraphSurface(dom, 0.7 * X[:, 1])
        cart = g.induced_cartesian()
        assert np.allclose(cart, np.eye(2) + np.diag([0, 0.49]), atol=20.0 / N**2)
        em = induced_metric(g)
        rows = np.flatnonzero(em._interior)
        errs.append(np.abs(curvature_from_jet(*em.node_jet(rows)).scalar).max())
    assert errs[1] < errs[0] / 3
    assert errs[1] < 0.05


def test_graph_csv_round_trip(tmp_path):
    dom = half_annulus(3, 1.0, 8.0, 9, 9)
    g = GraphSurface(dom, np.sin(dom.grid.coords[:, 0]), a=0.5)
    g.to_csv(tmp_path / "g.csv")
    back = read_graph_csv(tmp_path / "g.csv")
    assert np.array_equal(back.f, g.f)
    assert back.a == 0.5 and back.domain.kind == "polar2"


# -- first variation ------------------------------------------------------------------
def test_first_variation_minimal_surface_vanishes():
    s = half_catenoid(41, 41)
    u, v = s.grid.coords.T
    X = (np.sin(u) * np.cos(np.pi * v / 3) ** 2)[:, None] * s.dP[:, 0] + np.cos(np.pi * v / 3)[:, None] * s.nu
    assert abs(first_variation(s, VariationField(X))) <= 1e-10


def test_first_variation_flat_disk_vertical():
    s = flat_sheet(9, 17)
    X = np.zeros((s.grid.size, 3))
    X[:, 2] = 1.0
    assert first_variation(s, VariationField(X)) == 0.0
    mesh = flat_half_disk()
    assert abs(mesh.first_variation(np.tile([0, 0, 1.0], (len(mesh.V), 1)))) <= 1e-14


def test_first_variation_sphere_cap():
    mesh = sphere_cap_mesh(16, 48, exact_normals=True)
    fv = mesh.first_variation(mesh.normals)
    assert fv == pytest.approx(2 * cap_area(np.pi / 3), rel=0.01)
    for step in (1e-2, 1e-3, 1e-4):
        assert fd_area_variation(mesh, mesh.normals, 1, step) == pytest.approx(fv, rel=1e-3)


def test_fd_oracle_flat_bump_first_order():
    s = flat_sheet(17, 33)
    x, y = s.grid.coords.T
    phi = np.cos(np.pi * x / 2) ** 2 * np.cos(np.pi * y / 2) ** 2
    assert abs(fd_area_variation(s, normal_field(s, phi), 1, 1e-2)) <= 1e-12


def test_inadmissible_variation_rejected():
    s = half_catenoid(17, 17)
    with pytest.raises(InadmissibleVariation):
        first_variation(s, VariationField(s.dP[:, 0].copy()))


# -- second variation -----------------------------------------------------------------
def test_flat_density_is_gradient_squared():
    s = flat_sheet(17, 33)
    x, y = s.grid.coords.T
    phi = np.cos(np.pi * x / 2) ** 2 * np.cos(np.pi * y / 2) ** 2
    rep = second_variation_density(s, normal_field(s, phi))
    assert np.allclose(rep.F, rep.grad_phi2, atol=1e-12)
    tot, interior, bdry = second_variation_normal(s, phi)
    assert tot > 0 and bdry == 0


def test_flat_tangential_variation():
    s = flat_sheet(33, 65)
    x, y = s.grid.coords.T
    bump = np.sin(np.pi * x) ** 2 * np.cos(np.pi * y / 2) ** 2
    X = np.stack([x * (1 - x) * bump, 0.3 * bump, 0 * x], 1)  # tangent to x1 = 0 on the free edge
    rep = second_variation_density(s, VariationField(X))
    assert np.allclose(rep.grad_phi2, 0)
    assert np.allclose(rep.F, rep.div_first + rep.div_Zhat + rep.div_second, atol=1e-12)
    fd = fd_area_variation(s, VariationField(X), 2, 1e-2)
    assert rep.integral == pytest.approx(fd, abs=2e-3)
    assert abs(fd) < 0.05


@pytest.mark.parametrize("N", [81, 121, 161])
def test_half_catenoid_second_variation_vs_oracle(N):
    s = half_catenoid(N, N)
    phi = smooth_cut(s.grid.coords[:, 1], 1.5)
    V = normal_field(s, phi)
    rep = second_variation_density(s, V)
    tot, interior, bdry = second_variation_normal(s, phi)
    fd_grid = fd_area_variation(s, V, 2, 1e-2)
    fd_mesh = fd_area_variation(catenoid_mesh(N, N), V.X, 2, 1e-2)
    assert rep.integral == pytest.approx(tot, rel=1e-10)
    assert rep.integral == pytest.approx(fd_grid, rel=5e-3)
    assert rep.integral == pytest.approx(fd_mesh, rel=5e-3)
    assert abs(rep.free_boundary_A) == 0


def test_divergence_identities_second_order():
    res = []
    for N in (21, 41, 81):
        s = half_catenoid(N, N)
        u, v = s.grid.coords.T
        bump = np.cos(np.pi * v / 3) ** 2
        X = ((0.3 * np.sin(u) * bump)[:, None] * s.dP[:, 0] + (0.4 * bump * np.cos(u))[:, None] * s.dP[:, 1]
             + (bump * (0.5 + 0.3 * np.cos(2 * u)))[:, None] * s.nu)
        rep = second_variation_density(s, VariationField(X))
        res.append(rep.identity_residuals(interior_mask(s)))
        assert abs(sum(rep.boundary_flux.values()) - rep.free_boundary_A) <= 1e-12
        assert np.abs(rep.phi_Z * s.H).max() <= 1e-12
    res = np.array(res)
    assert np.all(res[1:] < res[:-1] / 3)


def test_not_minimal_rejected():
    s = sphere_zone(9, 12, 0.8, 2.2)
    with pytest.raises(NotMinimal):
        second_variation_normal(s, np.ones(s.grid.size))


def test_catenoid_band_is_unstable():
    s = catenoid_band(48, 81, 2.5)
    phi = smooth_cut(s.grid.coords[:, 1], 2.5)
    tot, _, _ = second_variation_normal(s, phi)
    assert tot < 0
    assert fd_area_variation(s, normal_field(s, phi), 2, 1e-2) < 0


def test_richardson_rejects_large_steps():
    with pytest.raises(StepTooLargeForStencil):
        richardson(lambda t: np.cos(40 * t), 2, 1.0)


# -- stability forms -------------------------------------------------------------------
def test_flat_stability_forms_agree_exactly():
    s = flat_sheet(17, 33)
    x, y = s.grid.coords.T
    phi = np.cos(np.pi * x / 2) ** 2 * np.cos(np.pi * y / 2) ** 2
    rep = stability_report(s, phi)
    assert rep.stability == rep.grad_phi2
    assert rep.stability == pytest.approx(rep.stability2, abs=1e-14)
    assert rep.flags["stability_nonnegative"]


@settings(max_examples=10, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4))
def test_half_catenoid_stability_forms_agree(c):
    s = _catenoid81()
    u, v = s.grid.coords.T
    phi = smooth_cut(v, 1.5) * (1 + 0.3 * c[0] * np.cos(u) + 0.3 * c[1] * np.cos(2 * u) + 0.2 * c[2] * v + 0.1 * c[3])
    rep = stability_report(s, phi)
    assert rep.stability == pytest.approx(rep.stability2, rel=2e-3, abs=1e-3)
    assert rep.decomposition_residual <= 1e-12


_CACHE = {}


def _catenoid81():
    if "c" not in _CACHE:
        _CACHE["c"] = half_catenoid(81, 81)
    return _CACHE["c"]


def test_stability_forms_on_solved_graph_within_allowance():
    from fbmass.graph_solver import solve_graph
    from fbmass.surface.variation import stability_tolerance

    gaps, tols = [], []
    for N in (41, 81):
        dom = half_annulus(3, 0.25, 16.0, N, N)
        g, _ = solve_graph(dom, ConformalFactor(-1.0, 3), 1.0)
        s = g.to_grid_surface()
        phi = np.sin(np.pi * np.log(dom.rho / 0.25) / np.log(64.0)) ** 2 * (1 + 0.3 * np.cos(dom.grid.coords[:, 1]))
        rep = stability_report(s, phi)
        gaps.append(abs(rep.stability - rep.stability2))
        tols.append(stability_tolerance(s, phi, rep))
    assert all(0 < gap <= tol for gap, tol in zip(gaps, tols))
    # both the gap and the allowance are second order in the spacing
    assert gaps[0] / gaps[1] > 3.5 and tols[0] / tols[1] > 3.5


def test_strong_cutoff_shape_and_energy():
    from fbmass.surface.variation import strong_cutoff

    rho = np.array([0.5, 4.0, 4 * np.sqrt(2), 8.0, 9.0])
    assert np.allclose(strong_cutoff(rho, 8.0, 3), [1, 1, 0.5, 0, 0])
    assert np.allclose(strong_cutoff(rho, 8.0, 4), [1, 1, 2 - np.sqrt(2), 0, 0])
    # flat half-plane: the log cutoff has energy pi / log 2 for every sigma
    dom = half_annulus(3, 1.0, 16.0, 161, 65)
    s = GraphSurface(dom, np.zeros(dom.grid.size)).to_grid_surface()
    for sigma in (4.0, 8.0):
        phi = strong_cutoff(dom.rho, sigma, 3)
        assert s.integrate(s.grad_norm2(phi)) == pytest.approx(np.pi / np.log(2), rel=0.02)
        rep = stability_report(s, phi)
        assert rep.strong_stability == pytest.approx(rep.grad_phi2, abs=1e-12)
