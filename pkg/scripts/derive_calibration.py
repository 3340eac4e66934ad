"""Regenerate ``src/fbmass/data/calibration.json`` from the symbolic ADM oracle.

For each n the pure factor ``h = 1 + C m |x|^{2-n}`` has ADM limit ``kappa(n) C m``;
choosing ``C(n) = 1 / kappa(n)`` makes the limit equal ``m``.
"""
import json
import sys
from pathlib import Path

import sympy

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
from fbmass.mass import symbolic_leading_mass  # noqa: E402


def main():
    table = {}
    for n in range(3, 8):
        kappa = symbolic_leading_mass(n)
        table[str(n)] = {
            "kappa": float(kappa),
            "kappa_symbolic": str(kappa),
            "C": float(1 / kappa),
            "C_symbolic": str(sympy.simplify(1 / kappa)),
        }
    out = Path(__file__).resolve().parents[1] / "src" / "fbmass" / "data" / "calibration.json"
    out.write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    print(out.read_text())


if __name__ == "__main__":
    main()
