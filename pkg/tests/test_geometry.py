import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

from fbmass.errors import NonPositiveConformalFactor, NonPositiveDefinite, PointOutsideChart
from fbmass.fields import ConstantScalar, ProductScalar, SymbolicScalar, SymbolicTensor, coordinate_symbols
from fbmass.geometry import (AnalyticMetric, ConformalFactor, ConformalMetric, FlatMetric, HalfSpace,
                             PerturbedMetric, TorusSlab, box_grid, c_n, calibration, conformal_change,
                             conformally_flat, curvature, curvature_from_jet, divergence_eta,
                             leading_divergence_eta, read_explicit, sample_explicit, write_explicit)


def test_flat_jet_is_trivial():
    g, dg, d2g = FlatMetric(HalfSpace(4)).jet(np.array([0.0, 1.0, 2.0, 3.0]))
    assert np.array_equal(g, np.eye(4))
    assert not dg.any() and not d2g.any()


def test_conformal_jet_matches_substitution():
    fac = ConformalFactor(1.0, 3)
    g = conformally_flat(fac).jet(np.array([0.0, 0.0, 10.0]))[0]
    h = 1 + fac.C / 10
    assert np.allclose(g, h**4 * np.eye(3), rtol=1e-14)
    assert fac.C == pytest.approx(1 / (16 * np.pi))


def test_conformal_jet_matches_complex_step():
    fac = ConformalFactor(-1.5, 4)
    metric = conformally_flat(fac)
    x = np.array([0.3, 1.2, -0.7, 2.1])
    _, dg, d2g = metric.jet(x)
    eps = 1e-30
    for k in range(4):
        xc = x.astype(complex)
        xc[k] += 1j * eps
        gc, dgc, _ = metric.jet(xc, check=False)
        assert np.allclose(gc.imag / eps, dg[k], atol=1e-12)
        assert np.allclose(dgc.imag / eps, d2g[k], atol=1e-10)


def test_chart_checks():
    with pytest.raises(PointOutsideChart):
        FlatMetric(HalfSpace(3)).jet(np.array([-0.1, 0.0, 0.0]))
    with pytest.raises(PointOutsideChart):
        FlatMetric(TorusSlab(3)).jet(np.array([0.2, 0.3, 1.5]))
    x1, x2, x3 = coordinate_symbols(3)
    bad = AnalyticMetric(HalfSpace(3), sympy.diag(1, 1, x3))
    with pytest.raises(NonPositiveDefinite):
        bad.jet(np.array([0.0, 0.0, -1.0]))
    with pytest.raises(NonPositiveConformalFactor):
        conformally_flat(ConformalFactor(-100.0, 3)).jet(np.array([0.0, 0.0, 0.1]))


def test_flat_boundary_curvature_vanishes():
    s = curvature(FlatMetric(HalfSpace(3)), [0.0, 0.4, -0.2], nu=[0, 0, 1],
                  tangents=[([0, 1, 0], [0, 0, 1])])
    assert s.R == 0 and s.H == 0 and s.A == [0.0] and s.ric_nu == 0


def test_boundary_orientation_ball_is_mean_convex():
    # dx1^2 + (1-x1)^2 (dx2^2 + dx3^2): the face x1 = 0 bends like a unit sphere seen from inside
    x1, _, _ = coordinate_symbols(3)
    g = AnalyticMetric(HalfSpace(3), sympy.diag(1, (1 - x1) ** 2, (1 - x1) ** 2))
    s = curvature(g, [0.0, 0.1, 0.2], tangents=[([0, 1, 0], [0, 1, 0])])
    assert s.H == pytest.approx(2.0)
    assert s.A[0] == pytest.approx(1.0)


def test_round_sphere_curvature():
    # stereographic metric of the unit 3-sphere
    xs = coordinate_symbols(3)
    r2 = sum(x**2 for x in xs)
    g = AnalyticMetric(HalfSpace(3), sympy.eye(3) * 4 / (1 + r2) ** 2)
    x = np.array([0.2, 0.1, -0.3])
    s = curvature(g, x, nu=np.array([1.0, 0, 0]) * (1 + x @ x) / 2)
    assert s.R == pytest.approx(6.0)
    assert s.ric_nu == pytest.approx(2.0)


def test_harmonic_factor_is_scalar_flat():
    s = curvature(conformally_flat(ConformalFactor(1.0, 3)), [0.5, 1.0, 4.0])
    assert abs(s.R) < 1e-6


def test_identity_conformal_change():
    x1, x2, x3 = coordinate_symbols(3)
    g = AnalyticMetric(HalfSpace(3), sympy.diag(1 + x2**2 / 10, 1 + x1 / 5, 1))
    x = [0.0, 0.3, 0.1]
    R, H = conformal_change(g, ConstantScalar(1.0, 3), x)
    s = curvature(g, x)
    assert R == pytest.approx(s.R, abs=1e-12)
    assert H == pytest.approx(s.H, abs=1e-12)


def test_neumann_symmetric_harmonic_factor():
    xs = coordinate_symbols(3)
    u = SymbolicScalar(1 + 1 / (2 * sympy.sqrt(sum(x**2 for x in xs))), 3)
    R, H = conformal_change(FlatMetric(HalfSpace(3)), u, [0.0, 1.0, 2.0])
    assert abs(R) < 1e-12 and abs(H) < 1e-12


def _random_polynomial(rng, n, deg=2):
    xs = coordinate_symbols(n)
    expr = sympy.Integer(1)
    for i in range(n):
        expr += sympy.Float(0.2 * rng.uniform(-1, 1)) * xs[i]
        for j in range(i, n):
            expr += sympy.Float(0.05 * rng.uniform(-1, 1)) * xs[i] * xs[j]
    return SymbolicScalar(expr, n)


def test_conformal_law_matches_explicit_direct_curvature():
    # oracle: finite-difference curvature of the sampled conformal metric
    rng = np.random.default_rng(3)
    u = _random_polynomial(rng, 3)
    x = np.array([0.0, 0.2, -0.1])
    R, H = conformal_change(FlatMetric(HalfSpace(3)), u, x)
    errs = []
    for h in (0.04, 0.02):
        grid = box_grid([0.0, 0.2 - 8 * h, -0.1 - 8 * h], [8 * h, 0.2 + 8 * h, -0.1 + 8 * h], (9, 17, 17))
        s = curvature(sample_explicit(ConformalMetric(u), grid), x)
        errs.append((abs(s.R - R), abs(s.H - H)))
    for k in range(2):
        assert errs[1][k] < errs[0][k] / 3  # second order
        assert errs[1][k] < 10 * 0.02**2 * 2


def test_composition_of_conformal_changes():
    rng = np.random.default_rng(11)
    u1, u2 = _random_polynomial(rng, 4), _random_polynomial(rng, 4)
    x = np.array([0.0, 0.1, 0.2, -0.3])
    a = conformal_change(ConformalMetric(u1), u2, x)
    b = conformal_change(FlatMetric(HalfSpace(4)), ProductScalar(u1, u2), x)
    assert np.allclose(a, b, rtol=1e-10, atol=1e-12)


def test_explicit_jet_matches_analytic():
    fac = ConformalFactor(1.0, 3)
    metric = conformally_flat(fac)
    x0 = np.array([0.0, 0.0, 10.0])
    grid = box_grid(x0 - [0, 0.5, 0.5], x0 + 0.5, (11, 21, 21))
    explicit = sample_explicit(metric, grid)
    ga, dga, d2a = metric.jet(x0)
    ge, dge, d2e = explicit.jet(x0)
    assert np.abs(ge - ga).max() <= 1e-3 * np.abs(ga).max()
    assert np.abs(dge - dga).max() <= 1e-3 * np.abs(dga).max()
    assert np.abs(d2e - d2a).max() <= 1e-3 * np.abs(d2a).max()
    with pytest.raises(PointOutsideChart):
        explicit.jet(x0 + [0.5, 0, 0])  # two cells from a non-face edge
    with pytest.raises(PointOutsideChart):
        explicit.jet(x0 + [0.0, 0.025, 0])  # off-node


def test_explicit_refinement_order_two():
    fac = ConformalFactor(-2.0, 3)
    metric = conformally_flat(fac)
    x = np.array([0.0, 0.5, 1.0])
    exact = curvature(metric, x)
    errs = []
    for h in (0.1, 0.05):
        grid = box_grid([0.0, 0.5 - 6 * h, 1.0 - 6 * h], [6 * h, 0.5 + 6 * h, 1.0 + 6 * h], (7, 13, 13))
        s = curvature(sample_explicit(metric, grid), x)
        errs.append((abs(s.R - exact.R), abs(s.H - exact.H)))
    ratios = np.array(errs[0]) / np.array(errs[1])
    assert np.all(ratios > 3.0)


def test_perturbed_torus_slab_matches_explicit_resampling():
    rng = np.random.default_rng(5)
    xs = coordinate_symbols(3)
    M = sympy.zeros(3, 3)
    for i in range(3):
        for j in range(i, 3):
            a, b = rng.uniform(-1, 1, 2)
            e = a * sympy.sin(2 * sympy.pi * xs[0] + b) * sympy.cos(2 * sympy.pi * xs[1]) * (1 + xs[2] ** 2)
            M[i, j] = M[j, i] = e
    chart = TorusSlab(3)
    metric = PerturbedMetric(FlatMetric(chart), SymbolicTensor(M, 3), 0.05)
    x = np.array([0.25, 0.5, 0.5])
    exact = curvature(metric, x).R
    errs = []
    for m in (20, 40):
        grid = box_grid([0, 0, 0], [1, 1, 1], (m, m, m + 1), (True, True, False))
        errs.append(abs(curvature(sample_explicit(metric, grid), x).R - exact))
    assert errs[1] < errs[0] / 3


def test_divergence_eta_flat_and_leading_term():
    assert divergence_eta(ConformalFactor(0.0, 3), [0.0, 1.0, 2.0]) == 0.0
    fac = ConformalFactor(-1.0, 3)
    x = np.array([0.0, 0.0, 50.0])
    lead = leading_divergence_eta(fac, x)
    assert divergence_eta(fac, x) == pytest.approx(lead, rel=0.05)


def test_divergence_eta_sign_for_negative_mass():
    # with m < 0 the barrier field has positive divergence above height a0
    for n in (3, 4):
        fac = ConformalFactor(-1.0, n)
        rng = np.random.default_rng(n)
        d = rng.normal(size=(400, n))
        d[:, 0] = np.abs(d[:, 0])
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        x = 100 * d
        a0 = 5.0
        x = x[x[:, -1] >= a0]
        div = divergence_eta(fac, x)
        assert np.all(div > 0)
        assert np.all(np.sign(div) == np.sign(leading_divergence_eta(fac, x)))


@settings(max_examples=25, deadline=None)
@given(st.floats(-2, 2), st.floats(0.0, 3.0), st.floats(-3, 3), st.floats(5, 30))
def test_divergence_eta_closed_form(m, a, b, c):
    fac = ConformalFactor(m, 4)
    x = np.array([a, b, 1.0, c])
    h, dh, _ = fac.jet(x)
    expected = 2 * 3 / 2 * h ** (-2.0) * dh[3]
    assert divergence_eta(fac, x) == pytest.approx(expected, rel=1e-10, abs=1e-15)


def test_calibration_golden_matches_oracle():
    from fbmass.mass import symbolic_leading_mass

    for n in (3, 4, 5):
        assert calibration(n)["kappa"] == pytest.approx(float(symbolic_leading_mass(n)), rel=1e-14)
    assert c_n(3) == pytest.approx(1 / 8)


def test_explicit_file_round_trip(tmp_path):
    metric = conformally_flat(ConformalFactor(1.0, 3))
    grid = box_grid([0.0, 1.0, 2.0], [0.5, 1.5, 2.5], (6, 6, 6))
    e = sample_explicit(metric, grid)
    path = tmp_path / "g.txt"
    write_explicit(e, path)
    back = read_explicit(path)
    assert np.allclose(back.values, e.values, rtol=1e-15)
    x = np.array([0.0, 1.2, 2.2])
    assert np.allclose(back.jet(x)[1], e.jet(x)[1])


def test_curvature_tensor_symmetries():
    rng = np.random.default_rng(0)
    xs = coordinate_symbols(3)
    M = sympy.eye(3) + sympy.Matrix(3, 3, lambda i, j: 0.1 * xs[(i + j) % 3] ** 2)
    M = (M + M.T) / 2
    c = curvature_from_jet(*AnalyticMetric(HalfSpace(3), M).jet(rng.uniform(0, 0.5, (5, 3))))
    low = c.lowered_riemann()
    assert np.allclose(low, -np.swapaxes(low, -3, -2))
    assert np.allclose(low, -np.swapaxes(low, -4, -1))
    assert np.allclose(low, np.einsum("...lijk->...jkli", low))
    assert np.allclose(c.ricci, np.swapaxes(c.ricci, -1, -2))
