"""Regenerate ``src/fbmass/data/goldens.json``: pipeline magnitudes used as regression goldens.

* ``decay_a1``: coefficient of ``rho^{3-n}`` in the ring-average fit of the
  n = 4 radial graph (rho in [0.25, 64], 129 nodes, height 1) for each m.
* ``reduction``: flux limit and ``m0`` of the n = 4, m = -1 reduction
  (rho in [0.01, 64], 225 x 5 x 8 nodes, height 0.3, Neumann inner ring).
"""
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
from fbmass.geometry import ConformalFactor  # noqa: E402
from fbmass.graph_solver import decay_fit, solve_graph  # noqa: E402
from fbmass.spectral import dimension_reduce  # noqa: E402
from fbmass.surface.graph import half_annulus  # noqa: E402


def main():
    dom = half_annulus(4, 0.25, 64, 129, kind="radial")
    a1 = {}
    for m in (-2, -1, 1, 2):
        g, _ = solve_graph(dom, ConformalFactor(m, 4), 1.0)
        fit = decay_fit(g)
        a1[str(m)] = {"a0": fit.a0, "a1": fit.a1, "exponent": fit.exponent}
    g, _ = solve_graph(half_annulus(4, 0.01, 64, 225, 5, 8), ConformalFactor(-1, 4), 0.3, inner_neumann=True)
    red = dimension_reduce(g)
    table = {"decay_a1": a1, "reduction": {"mass_change": red.mass_change, "m0": red.m0, "min_u": red.min_u}}
    out = Path(__file__).resolve().parents[1] / "src" / "fbmass" / "data" / "goldens.json"
    out.write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    print(out.read_text())


if __name__ == "__main__":
    main()
