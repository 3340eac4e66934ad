import numpy as np
import pytest
import sympy

from fbmass.errors import FitIllConditioned, NewtonDiverged
from fbmass.fields import coordinate_symbols
from fbmass.geometry import ConformalFactor
from fbmass.graph_solver import (decay_fit, decay_fit_arrays, manufactured_forcing, pde_residual, solve_graph,
                                 solve_manufactured)
from fbmass.surface.graph import GraphSurface, half_annulus
from fbmass.surface.variation import VariationField, first_variation, interior_mask


def test_constant_graph_residual_vanishes():
    dom = half_annulus(3, 1.0, 8.0, 17, 17)
    r, d1 = pde_residual(GraphSurface(dom, np.full(dom.grid.size, 2.0)))
    assert np.abs(r).max() == 0 and np.abs(d1).max() <= 1e-14


@pytest.mark.parametrize("n", [3, 4])
def test_constant_graph_residual_is_the_h_term(n):
    dom = half_annulus(n, 1.0, 8.0, 9, 9, 8) if n == 4 else half_annulus(n, 1.0, 8.0, 17, 17)
    fac = ConformalFactor(-1.0, n)
    c = 0.5
    r, _ = pde_residual(GraphSurface(dom, np.full(dom.grid.size, c), fac))
    X = dom.jets[0]
    R2 = np.sum(X**2, 1) + c**2
    h = 1 + fac.C * -1.0 * R2 ** ((2 - n) / 2)
    dnh = fac.C * -1.0 * (2 - n) * R2 ** (-n / 2) * c
    expect = -(2 * (n - 1) / (n - 2)) * dnh / h
    mask = r != 0
    assert mask.sum() > 0
    assert np.allclose(r[mask], expect[mask], rtol=1e-12)


def test_flat_zero_height_one_iteration():
    dom = half_annulus(3, 1.0, 8.0, 17, 17)
    g, log = solve_graph(dom, None, 0.0)
    assert log.iterations <= 1 and np.abs(g.f).max() == 0


def test_flat_translate():
    dom = half_annulus(3, 1.0, 8.0, 17, 17)
    g, log = solve_graph(dom, None, 1.0, inner_dirichlet=1.0, init=np.zeros(dom.grid.size))
    assert np.allclose(g.f, 1.0, atol=1e-12)


def _manufactured_errors(n, sizes, fac):
    xs = coordinate_symbols(n - 1)
    expr = 0.3 * sympy.exp(-(sum(x**2 for x in xs[1:]) + xs[0] ** 2 - 2 * xs[-1]) / 8) + 0.05 * xs[-1]
    errs = []
    for N in sizes:
        dom = half_annulus(n, 1.0, 8.0, N, N) if n == 3 else half_annulus(n, 1.0, 8.0, N, (N + 3) // 4, (N - 1) // 2)
        g, exact, _ = solve_manufactured(dom, expr, fac)
        errs.append(np.abs(g.f - exact).max())
    return np.array(errs)


def test_manufactured_solution_second_order_n3():
    errs = _manufactured_errors(3, (17, 33, 65), ConformalFactor(-1.0, 3))
    orders = np.log2(errs[:-1] / errs[1:])
    assert orders[-1] >= 1.7


def test_manufactured_forcing_is_zero_for_constants():
    dom = half_annulus(3, 1.0, 8.0, 9, 9)
    f, force = manufactured_forcing(dom, sympy.Integer(3))
    assert np.all(f == 3) and np.all(force == 0)


@pytest.mark.slow
def test_manufactured_solution_second_order_n4():
    errs = _manufactured_errors(4, (17, 33), ConformalFactor(-1.0, 4))
    assert np.log2(errs[0] / errs[1]) >= 1.5


def test_converged_graph_properties():
    dom = half_annulus(3, 0.25, 16.0, 41, 41)
    g, log = solve_graph(dom, ConformalFactor(-1.0, 3), 1.0)
    assert log.converged
    r, d1 = pde_residual(g)
    assert np.abs(r).max() <= log.tolerance and np.abs(d1).max() <= log.tolerance
    s = g.to_grid_surface()
    assert np.abs(s.H[interior_mask(s)]).max() <= 1e-6 / s.scale()
    # first variation with a random admissible field, vanishing on the rings
    rng = np.random.default_rng(0)
    rho = dom.rho
    bump = np.sin(np.pi * np.log(rho / 0.25) / np.log(64)) ** 2
    c = rng.normal(size=3)
    X = np.zeros((dom.grid.size, 3))
    X[:, 1] = bump * c[0]
    X[:, 2] = bump * (c[1] + c[2] * np.cos(dom.grid.coords[:, 1]))
    fv = first_variation(s, VariationField(X))
    assert abs(fv) <= 10 * log.tolerance * np.abs(X).max() + 1e-9


def test_grid_refinement_order():
    fac = ConformalFactor(-1.0, 3)
    sols = {}
    for N in (17, 33, 65):
        g, _ = solve_graph(half_annulus(3, 1.0, 8.0, N, N), fac, 1.0)
        sols[N] = g.f.reshape(N, N)
    e1 = np.abs(sols[17] - sols[65][::4, ::4]).max()
    e2 = np.abs(sols[33] - sols[65][::2, ::2]).max()
    # against the finest grid: (1 - 1/16) / (1 - 1/4) * 4 = 5 for order 2
    assert e1 / e2 >= 4.0


def test_decay_fit_exact_models():
    rho = np.geomspace(4, 64, 40)
    fit = decay_fit_arrays(4, rho, 1 + 2 / rho)
    assert (fit.a0, fit.a1, fit.exponent) == pytest.approx((1, 2, -1), rel=1e-6)
    assert fit.residual < 1e-7
    fit3 = decay_fit_arrays(3, rho, np.full_like(rho, 5.0))
    assert fit3.a0 == pytest.approx(5) and abs(fit3.a1) < 1e-12
    with pytest.raises(FitIllConditioned):
        decay_fit_arrays(4, rho[:5], 1 + 2 / rho[:5])


def test_decay_exponent_improves_with_radius():
    for n in (4, 5):
        devs = []
        for rout in (16, 32, 64):
            g, _ = solve_graph(half_annulus(n, 0.25, rout, 129, kind="radial"), ConformalFactor(-1.0, n), 1.0)
            devs.append(decay_fit(g).exponent_error)
        assert devs[0] > devs[1] > devs[2]


def test_sign_law_radial():
    signs = {}
    for m in (-2, -1, 1, 2):
        g, _ = solve_graph(half_annulus(4, 0.25, 64, 129, kind="radial"), ConformalFactor(m, 4), 1.0)
        signs[m] = np.sign(decay_fit(g).a1)
    assert signs == {-2: -1, -1: -1, 1: 1, 2: 1}


def test_polar_and_radial_agree():
    fac = ConformalFactor(-1.0, 4)
    radial, _ = solve_graph(half_annulus(4, 0.25, 16, 33, kind="radial"), fac, 1.0)
    full, _ = solve_graph(half_annulus(4, 0.25, 16, 33, 7, 8), fac, 1.0)
    ring = full.f.reshape(33, -1)
    assert np.abs(ring - radial.f[:, None]).max() <= 1e-10


def test_newton_diverged():
    dom = half_annulus(3, 1.0, 8.0, 9, 9)
    with pytest.raises(NewtonDiverged):
        solve_graph(dom, ConformalFactor(-1.0, 3), 1.0, max_backtracks=0,
                    init=np.full(dom.grid.size, 1.0) + 50 * np.sin(np.arange(dom.grid.size)))
