"""Config-driven experiment runner.

An experiment is a flat key/value table with a ``kind`` discriminator.
:func:`load_config` validates it against :data:`SCHEMA`, :func:`run` executes
the pipeline and collects named checks, and :func:`emit_report` writes
``report.json``, ``summary.csv`` and plot-ready sweep tables.  Wall-clock
timings go to a separate ``timings.json`` so that the report itself is
byte-identical for a fixed configuration and seed.
"""
from __future__ import annotations

import csv
import io
import json
import math
import sys
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid, IoFailure, LabError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

KINDS = ("mass", "graph", "stability", "spectra", "reduce", "identity-suite")


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class Param:
    type: type
    default: object
    rule: str = ""
    valid: object = None  # callable(value) -> bool


def _pos(v):
    return v > 0


def _radii_ok(v):
    return len(v) >= 3 and all(r > 0 for r in v) and all(b > a for a, b in zip(v, v[1:]))


COMMON = {
    "n": Param(int, 4, "3 <= n <= 7", lambda v: 3 <= v <= 7),
    "seed": Param(int, 0, "seed >= 0", lambda v: v >= 0),
    "output": Param(str, "", ""),
    "name": Param(str, "", ""),
}

SCHEMA = {
    "mass": {
        "m": Param(float, 1.0),
        "radii": Param(list, [25.0, 50.0, 100.0, 200.0], "at least 3 increasing positive radii", _radii_ok),
        "quad_tol": Param(float, 1e-8, "> 0", _pos),
        "rel_tol": Param(float, 0.01, "> 0", _pos),
        "flat_tol": Param(float, 1e-10, "> 0", _pos),
    },
    "graph": {
        "m": Param(float, -1.0),
        "height": Param(float, 1.0),
        "rho_in": Param(float, 0.25, "> 0", _pos),
        "rho_out": Param(float, 64.0, "> 0", _pos),
        "nr": Param(int, 129, ">= 9", lambda v: v >= 9),
        "nt": Param(int, 0, ">= 0 (0 picks a default)", lambda v: v >= 0),
        "nphi": Param(int, 0, "even, >= 0 (0 picks a default)", lambda v: v >= 0 and v % 2 == 0),
        "grid": Param(str, "radial", "radial or full", lambda v: v in ("radial", "full")),
        "exponent_tol": Param(float, 0.05, "> 0", _pos),
    },
    "stability": {
        "surface": Param(str, "half_catenoid", "half_catenoid, flat_sheet or graph",
                         lambda v: v in ("half_catenoid", "flat_sheet", "graph")),
        "m": Param(float, -1.0),
        "resolution": Param(int, 81, ">= 9", lambda v: v >= 9),
        "samples": Param(int, 20, ">= 1", lambda v: v >= 1),
        "tol_factor": Param(float, 10.0, "> 0", _pos),
    },
    "spectra": {
        "geometry": Param(str, "bump", "flat, bump or hyperbolic", lambda v: v in ("flat", "bump", "hyperbolic")),
        "dims": Param(list, [9, 9, 17], "three grid sizes >= 3", lambda v: len(v) == 3 and all(
            isinstance(k, int) and k >= 3 for k in v)),
        "eigen_tol": Param(float, 1e-9, "> 0", _pos),
        "deform": Param(bool, True),
    },
    "reduce": {
        "m": Param(float, -1.0),
        "height": Param(float, 0.3),
        "rho_in": Param(float, 0.01, "> 0", _pos),
        "rho_out": Param(float, 64.0, "> 0", _pos),
        "nr": Param(int, 225, ">= 17", lambda v: v >= 17),
        "nt": Param(int, 5, ">= 3", lambda v: v >= 3),
        "nphi": Param(int, 8, "even, >= 4", lambda v: v >= 4 and v % 2 == 0),
        "compare_half": Param(bool, True),
        "agree_tol": Param(float, 0.10, "> 0", _pos),
        "flat_tol": Param(float, 1e-10, "> 0", _pos),
    },
    "identity-suite": {
        "samples": Param(int, 5, ">= 1", lambda v: v >= 1),
    },
}


@dataclass
class ExperimentConfig:
    kind: str
    n: int
    seed: int
    output: str
    name: str
    params: dict

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n": self.n, "seed": self.seed, "name": self.name, **self.params}


def _coerce(key, p: Param, value):
    if p.type is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        value = float(value)
    elif p.type is list and isinstance(value, (list, tuple)):
        if isinstance(p.default[0], float):
            if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
                raise ConfigInvalid(f"{key}: expected a list of numbers")
            value = [float(v) for v in value]
        else:
            value = list(value)
    if not isinstance(value, p.type) or (p.type is int and isinstance(value, bool)):
        raise ConfigInvalid(f"{key}: expected {p.type.__name__}, got {type(value).__name__}")
    if p.valid is not None and not p.valid(value):
        raise ConfigInvalid(f"{key}: {value!r} violates {p.rule}")
    return value


def validate(table: dict) -> ExperimentConfig:
    """Check a raw key/value table and fill defaults.

    Raises :class:`ConfigInvalid` naming the offending field.
    """
    if "kind" not in table:
        raise ConfigInvalid("kind: missing")
    kind = table["kind"]
    if kind not in SCHEMA:
        raise ConfigInvalid(f"kind: {kind!r} is not one of {', '.join(KINDS)}")
    fields = {**COMMON, **SCHEMA[kind]}
    for key in table:
        if key != "kind" and key not in fields:
            raise ConfigInvalid(f"{key}: unknown field for kind {kind!r}")
    vals = {k: _coerce(k, p, table[k]) if k in table else p.default for k, p in fields.items()}
    if kind in ("graph", "reduce") and vals["rho_out"] <= vals["rho_in"]:
        raise ConfigInvalid("rho_out: must exceed rho_in")
    if kind == "graph" and vals["grid"] == "radial" and vals["n"] == 3:
        raise ConfigInvalid("grid: n = 3 needs the full grid")
    if kind == "reduce" and vals["n"] != 4:
        raise ConfigInvalid("n: the reduction pipeline runs with n = 4")
    if kind == "spectra" and vals["n"] != 3 and "n" in table:
        raise ConfigInvalid("n: spectral slabs are three-dimensional")
    if kind == "stability" and "n" in table and vals["n"] != 3:
        raise ConfigInvalid("n: the stability surfaces live in R^3")
    if kind in ("spectra", "stability"):
        vals["n"] = 3
    common = {k: vals.pop(k) for k in COMMON}
    return ExperimentConfig(kind, common["n"], common["seed"], common["output"], common["name"] or kind, vals)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            table = tomllib.load(fh)
    except OSError as exc:
        raise ConfigInvalid(f"config: cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigInvalid(f"config: {exc}") from exc
    return validate(table)


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------
_RELATIONS = {
    "<=": lambda v, t: v <= t,
    "<": lambda v, t: v < t,
    ">": lambda v, t: v > t,
    ">=": lambda v, t: v >= t,
    "==": lambda v, t: v == t,
}


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    relation: str = "<="

    @property
    def passed(self) -> bool:
        v = float(self.value)
        return bool(math.isfinite(v) and _RELATIONS[self.relation](v, self.tolerance))

    def to_dict(self) -> dict:
        return {"name": self.name, "value": float(self.value), "tolerance": float(self.tolerance),
                "relation": self.relation, "pass": self.passed}


@dataclass
class RunReport:
    config: dict
    outputs: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    sweeps: dict = field(default_factory=dict)  # name -> (header, rows)
    timings: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.errors and all(c.passed for c in self.checks)

    def check(self, name, value, tolerance, relation="<="):
        self.checks.append(Check(name, float(value), float(tolerance), relation))

    def to_dict(self) -> dict:
        return {"config": self.config, "seed": self.config.get("seed"), "passed": self.passed,
                "checks": [c.to_dict() for c in self.checks], "errors": self.errors,
                "outputs": self.outputs}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)  # strict JSON has no nan/inf
    return obj


def _fmt(v: float) -> str:
    return repr(float(v))


def emit_report(report: RunReport, directory) -> list:
    """Write ``report.json``, ``summary.csv``, sweep CSVs and ``timings.json``; return the paths."""
    d = Path(directory)
    written = []
    try:
        d.mkdir(parents=True, exist_ok=True)
        p = d / "report.json"
        p.write_text(json.dumps(_jsonable(report.to_dict()), indent=2, sort_keys=True) + "\n")
        written.append(p)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "value", "tolerance", "pass"])
        for c in report.checks:
            w.writerow([c.name, _fmt(c.value), _fmt(c.tolerance), str(c.passed).lower()])
        p = d / "summary.csv"
        p.write_text(buf.getvalue())
        written.append(p)
        for name, (header, rows) in sorted(report.sweeps.items()):
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(header)
            w.writerows([[_fmt(v) for v in row] for row in rows])
            p = d / f"{name}.csv"
            p.write_text(buf.getvalue())
            written.append(p)
        p = d / "timings.json"
        p.write_text(json.dumps({k: round(v, 6) for k, v in report.timings.items()}, indent=2) + "\n")
        written.append(p)
    except OSError as exc:
        raise IoFailure(f"cannot write report to {d}: {exc}") from exc
    return written


# --------------------------------------------------------------------------
# pipelines
# --------------------------------------------------------------------------
def _run_mass(cfg: ExperimentConfig, rep: RunReport):
    from .geometry import ConformalFactor, FlatMetric, HalfSpace, conformally_flat
    from .mass import adm_mass, adm_mass_at_radius

    p = cfg.params
    m = p["m"]
    if m == 0:
        field_ = FlatMetric(HalfSpace(cfg.n))
        values = [adm_mass_at_radius(field_, r, p["quad_tol"]) for r in p["radii"]]
        rep.outputs["mass"] = {"radii": p["radii"], "values": values}
        rep.check("mass.flat_abs", max(abs(v) for v in values), p["flat_tol"])
    else:
        res = adm_mass(conformally_flat(ConformalFactor(m, cfg.n)), p["radii"], p["quad_tol"])
        values = res.values
        rep.outputs["mass"] = res.to_dict()
        rep.check("mass.calibrated_rel_error", abs(res.calibrated_mass - m) / abs(m), p["rel_tol"])
    rep.sweeps["mass_sweep"] = (["radius", "value"], list(zip(p["radii"], values)))


def _graph_domain(cfg, p, n):
    from .surface.graph import half_annulus

    if p.get("grid", "full") == "radial":
        return half_annulus(n, p["rho_in"], p["rho_out"], p["nr"], kind="radial")
    return half_annulus(n, p["rho_in"], p["rho_out"], p["nr"], p["nt"] or None, p["nphi"] or None)


def _run_graph(cfg: ExperimentConfig, rep: RunReport):
    from .geometry import ConformalFactor
    from .graph_solver import decay_fit, pde_residual, ring_average, solve_graph

    p = cfg.params
    fac = ConformalFactor(p["m"], cfg.n)
    g, log = solve_graph(_graph_domain(cfg, p, cfg.n), fac, p["height"])
    r, d1 = pde_residual(g)
    fit = decay_fit(g)
    rep.outputs["newton"] = {"iterations": log.iterations, "residuals": log.residuals, "tolerance": log.tolerance}
    rep.outputs["decay_fit"] = fit.to_dict()
    rep.check("graph.interior_residual", np.abs(r).max(), log.tolerance)
    rep.check("graph.free_boundary_residual", np.abs(d1).max() if d1.size else 0.0, log.tolerance)
    if cfg.n >= 4:
        rep.check("graph.exponent_rel_error", fit.exponent_error / (cfg.n - 3), p["exponent_tol"])
    if p["m"] != 0:
        rep.check("graph.sign_a1_matches_m", float(np.sign(fit.a1) == np.sign(p["m"])), 1.0, "==")
    rho, fbar = ring_average(g)
    rep.sweeps["graph_profile"] = (["radius", "value"], list(zip(rho, fbar)))


def _stability_surface(p):
    from .geometry import ConformalFactor
    from .graph_solver import solve_graph
    from .surface.graph import half_annulus
    from .surface.testbeds import flat_sheet, half_catenoid

    N = p["resolution"]
    if p["surface"] == "graph":
        # solved n = 3 graph; the cutoff vanishes on both fixed rings
        dom = half_annulus(3, 0.25, 16.0, N, N)
        g, _ = solve_graph(dom, ConformalFactor(p["m"], 3), 1.0)
        return g.to_grid_surface(), np.sin(np.pi * np.log(dom.rho / 0.25) / np.log(64.0)) ** 2
    if p["surface"] == "flat_sheet":
        s = flat_sheet(N, 2 * N - 1)
        x, y = s.grid.coords.T
        return s, np.cos(np.pi * x / 2) ** 2 * np.cos(np.pi * y / 2) ** 2
    s = half_catenoid(N, N)
    return s, np.cos(np.pi * s.grid.coords[:, 1] / 3.0)


def _stability_checks(rep: RunReport, p, seed, prefix="stability"):
    from .surface.variation import stability_report, stability_tolerance

    s, base = _stability_surface(p)
    u, v = s.grid.coords.T
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(p["samples"]):
        c = rng.uniform(-1, 1, 4)
        phi = base * (1 + 0.3 * c[0] * np.cos(u) + 0.3 * c[1] * np.cos(2 * u) + 0.2 * c[2] * v + 0.1 * c[3])
        sr = stability_report(s, phi)
        gap = abs(sr.stability - sr.stability2)
        rep.check(f"{prefix}.forms_agree.{k:02d}", gap, stability_tolerance(s, phi, sr, p["tol_factor"]))
        rep.check(f"{prefix}.decomposition.{k:02d}", sr.decomposition_residual, 1e-12)
        rows.append((k, sr.stability, sr.stability2))
    return rows


def _run_stability(cfg: ExperimentConfig, rep: RunReport):
    rows = _stability_checks(rep, cfg.params, cfg.seed)
    rep.sweeps["stability_samples"] = (["sample", "stability", "stability2"], rows)


def _spectra_field(name):
    from . import slabs

    return {"flat": lambda: slabs.flat_slab(3), "bump": slabs.bump_slab, "hyperbolic": slabs.hyperbolic_slab}[name]()


def _run_spectra(cfg: ExperimentConfig, rep: RunReport):
    from .spectral import (assemble, deform_psc_minimal, deform_scalarflat_meanconvex, eigen_neumann, eigen_steklov,
                           lower_bound_quotient, rayleigh)

    p = cfg.params
    fld = _spectra_field(p["geometry"])
    dims = tuple(p["dims"])
    pair = assemble(fld, dims)
    neu = eigen_neumann(pair, p["eigen_tol"])
    ste = eigen_steklov(pair, p["eigen_tol"])
    rep.outputs["neumann"] = neu.to_dict()
    rep.outputs["steklov"] = ste.to_dict()
    rep.check("spectra.neumann_residual", neu.residual, p["eigen_tol"])
    rep.check("spectra.steklov_residual", ste.residual, p["eigen_tol"])
    scale = max(abs(neu.eigenvalue), 1.0 / pair.volume ** (2 / 3))
    rep.check("spectra.rayleigh_consistency", abs(rayleigh(pair, neu.u) - neu.eigenvalue) / scale, 1e-8)
    if neu.eigenvalue > 0:
        bound = lower_bound_quotient(pair, neu.u)
        rep.check("spectra.lower_bound_chain", neu.eigenvalue - bound, -1e-12 * scale, ">=")
    if p["deform"] and p["geometry"] == "bump":
        for label, fn in (("psc_minimal", deform_psc_minimal), ("scalarflat_meanconvex", deform_scalarflat_meanconvex)):
            _, cert = fn(fld, dims)
            rep.outputs[label] = cert.to_dict()
            if label == "psc_minimal":
                rep.check(f"spectra.{label}.min_R", cert.min_R, 0.0, ">")
                rep.check(f"spectra.{label}.max_abs_H", cert.max_abs_H, cert.tolerance_H)
            else:
                rep.check(f"spectra.{label}.max_abs_R", cert.max_abs_R, cert.tolerance_R)
                rep.check(f"spectra.{label}.min_H", cert.min_H, 0.0, ">")
    elif p["geometry"] == "flat":
        rep.check("spectra.flat_neumann_eigenvalue", abs(neu.eigenvalue), 1e-10)
        rep.check("spectra.flat_steklov_eigenvalue", abs(ste.eigenvalue), 1e-10)
        rep.check("spectra.flat_constant_eigenfunction", float(np.ptp(neu.u) + np.ptp(ste.u)), 1e-8)


def _reduction(n, p, rho_out, nr):
    from .geometry import ConformalFactor
    from .graph_solver import solve_graph
    from .spectral import dimension_reduce
    from .surface.graph import half_annulus

    dom = half_annulus(n, p["rho_in"], rho_out, nr, p["nt"], p["nphi"])
    fac = ConformalFactor(p["m"], n) if p["m"] != 0 else None
    g, _ = solve_graph(dom, fac, p["height"], inner_neumann=True)
    return dimension_reduce(g)


def _half_resolution(p):
    # same radial spacing on the half-size domain
    h = math.log(p["rho_out"] / p["rho_in"]) / (p["nr"] - 1)
    return int(round(math.log(p["rho_out"] / 2 / p["rho_in"]) / h)) + 1


def _run_reduce(cfg: ExperimentConfig, rep: RunReport):
    p = cfg.params
    res = _reduction(cfg.n, p, p["rho_out"], p["nr"])
    rep.outputs["reduction"] = res.to_dict()
    rep.check("reduce.min_u", res.min_u, 0.0, ">")
    rep.check("reduce.solve_residual", res.residual, 1e-10)
    rep.sweeps["reduce_flux"] = (["sigma", "flux"], sorted(res.flux.items()))
    if p["m"] == 0:
        rep.check("reduce.flat_u_minus_one", float(np.abs(res.u - 1).max()), p["flat_tol"])
        rep.check("reduce.flat_flux", max(abs(v) for v in res.flux.values()), p["flat_tol"])
        return
    sign = math.copysign(1.0, p["m"])
    rep.check("reduce.flux_limit_sign_matches_m", sign * res.mass_change, 0.0, ">")
    if p["compare_half"]:
        nr2 = _half_resolution(p)
        half = _reduction(cfg.n, p, p["rho_out"] / 2, nr2)
        rep.outputs["reduction_half"] = {**half.to_dict(), "nr": nr2}
        rep.check("reduce.half_min_u", half.min_u, 0.0, ">")
        rep.check("reduce.truncation_agreement", abs(res.mass_change - half.mass_change) / abs(res.mass_change),
                  p["agree_tol"])


# --------------------------------------------------------------------------
# identity suite
# --------------------------------------------------------------------------
def _random_polynomial(rng, n):
    import sympy

    from .fields import SymbolicScalar, coordinate_symbols

    xs = coordinate_symbols(n)
    expr = sympy.Integer(1)
    for i in range(n):
        expr += sympy.Float(0.2 * rng.uniform(-1, 1)) * xs[i]
        for j in range(i, n):
            expr += sympy.Float(0.05 * rng.uniform(-1, 1)) * xs[i] * xs[j]
    return SymbolicScalar(expr, n)


def _identity_geometry(rep, rng):
    from .fields import ProductScalar
    from .geometry import (ConformalFactor, ConformalMetric, FlatMetric, HalfSpace, conformal_change, curvature,
                           divergence_eta)

    x = np.concatenate([[0.0], rng.uniform(-0.3, 0.3, 3)])
    s = curvature(FlatMetric(HalfSpace(4)), x)
    rep.check("geometry.flat_curvature", abs(s.R) + abs(np.nan_to_num(s.H)), 0.0, "==")
    rep.check("geometry.flat_divergence_eta", abs(divergence_eta(ConformalFactor(0.0, 4), x + [0, 0, 0, 2.0])),
              0.0, "==")
    u1, u2 = _random_polynomial(rng, 4), _random_polynomial(rng, 4)
    a = conformal_change(ConformalMetric(u1), u2, x)
    b = conformal_change(FlatMetric(HalfSpace(4)), ProductScalar(u1, u2), x)
    rep.check("geometry.conformal_composition", float(np.max(np.abs(np.subtract(a, b)))), 1e-10)
    s = curvature(ConformalMetric(ConformalFactor(1.0, 3)), [0.0, 1.0, 4.0])
    rep.check("geometry.harmonic_factor_scalar_flat", abs(s.R), 1e-6)


def _identity_mass(rep, rng):
    from .geometry import ConformalFactor, FlatMetric, HalfSpace, conformally_flat
    from .mass import adm_mass_at_radius, equator_term

    r = float(rng.uniform(10, 40))
    rep.check("mass.flat_value", abs(adm_mass_at_radius(FlatMetric(HalfSpace(3)), r)), 1e-10)
    rep.check("mass.equator_term_conformal", abs(equator_term(conformally_flat(ConformalFactor(1.0, 3)), r, 16)),
              1e-12)


def _identity_surface(rep, rng, samples):
    from .surface.testbeds import catenoid_mesh, flat_half_disk, sphere_cap_mesh

    meshes = {"flat_half_disk": flat_half_disk(), "sphere_cap": sphere_cap_mesh(),
              "half_catenoid": catenoid_mesh(17, 17)}
    cat = meshes["half_catenoid"]
    meshes["half_catenoid_perturbed"] = cat.displaced(0.02 * rng.normal(size=cat.V.shape))
    for name, mesh in meshes.items():
        rep.check(f"surface.gauss_bonnet.{name}", mesh.gauss_bonnet_defect(), 1e-10)
    p = {**{k: v.default for k, v in SCHEMA["stability"].items()}, "samples": samples}
    _stability_checks(rep, p, int(rng.integers(2**31)), prefix="surface.stability")


def _identity_spectral(rep, rng):
    from . import slabs
    from .spectral import EIGEN_TOL, assemble, dimension_reduce, eigen_neumann, eigen_steklov, rayleigh
    from .surface.graph import GraphSurface, half_annulus

    flat = assemble(slabs.flat_slab(3), (6, 6, 6))
    for label, fn in (("neumann", eigen_neumann), ("steklov", eigen_steklov)):
        res = fn(flat)
        rep.check(f"spectral.flat_{label}_eigenvalue", abs(res.eigenvalue), 1e-10)
    hyp = assemble(slabs.hyperbolic_slab(), (7, 7, 7))
    res = eigen_neumann(hyp)
    rep.check("spectral.neumann_residual", res.residual, EIGEN_TOL)
    rep.check("spectral.rayleigh_consistency",
              abs(rayleigh(hyp, res.u) - res.eigenvalue) / abs(res.eigenvalue), 1e-8)
    dom = half_annulus(4, 0.25, 16, 33, 7, 8)
    height = float(rng.uniform(-1, 1))
    red = dimension_reduce(GraphSurface(dom, np.full(dom.grid.size, height)))
    rep.check("spectral.flat_reduction_u", float(np.abs(red.u - 1).max()), 1e-10)


def _run_identities(cfg: ExperimentConfig, rep: RunReport):
    rng = np.random.default_rng(cfg.seed)
    # independent streams per block keep checks stable if a block is edited
    streams = rng.spawn(4)
    _identity_geometry(rep, streams[0])
    _identity_mass(rep, streams[1])
    _identity_surface(rep, streams[2], cfg.params["samples"])
    _identity_spectral(rep, streams[3])


PIPELINES = {
    "mass": _run_mass,
    "graph": _run_graph,
    "stability": _run_stability,
    "spectra": _run_spectra,
    "reduce": _run_reduce,
    "identity-suite": _run_identities,
}


def run(cfg: ExperimentConfig) -> RunReport:
    """Execute the pipeline named by ``cfg.kind``; module errors are captured into the report."""
    rep = RunReport(cfg.to_dict())
    t0 = time.perf_counter()
    try:
        PIPELINES[cfg.kind](cfg, rep)
    except (LabError, ValueError, np.linalg.LinAlgError) as exc:
        rep.errors.append({"kind": cfg.kind, "type": type(exc).__name__, "message": str(exc),
                           "where": traceback.extract_tb(exc.__traceback__)[-1].name})
    rep.timings["total_seconds"] = time.perf_counter() - t0
    return rep
