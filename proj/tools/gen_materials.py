#!/usr/bin/env python3
"""Regenerate the bundled (lambda, n, k) tables under data/materials.

Each material is modelled as a sum of Lorentz oscillators (one UV electronic
term plus infrared phonon terms). Parameters are rounded literature-style
values; the tables are smooth approximations, not measured data.
"""
import cmath
import math
import pathlib

# (nu0 [1/cm], strength, damping [1/cm])
MATERIALS = {
    "ZnO": [(45450.0, 2.70, 500.0), (410.0, 3.96, 12.0)],
    "AlN": [(66670.0, 3.60, 500.0), (667.0, 3.96, 8.0)],
    "Al2O3": [(83330.0, 2.07, 500.0), (430.0, 2.80, 12.0), (570.0, 3.30, 20.0), (635.0, 0.30, 25.0)],
    "MgF2": [(100000.0, 0.90, 500.0), (250.0, 0.50, 10.0), (410.0, 3.00, 15.0)],
    "SiO2": [(100000.0, 1.10, 500.0), (457.0, 0.88, 35.0), (797.0, 0.10, 60.0), (1067.0, 0.70, 70.0)],
    "TiO2": [(38460.0, 4.90, 500.0), (185.0, 80.0, 25.0), (380.0, 3.00, 40.0), (500.0, 1.00, 50.0)],
    "SiC": [(50000.0, 5.70, 500.0), (793.0, 3.30, 4.8)],
}


def nk(oscillators, lam_um):
    nu = 1.0e4 / lam_um
    eps = 1.0 + 0j
    for nu0, s, g in oscillators:
        eps += s * nu0 * nu0 / (nu0 * nu0 - nu * nu - 1j * g * nu)
    root = cmath.sqrt(eps)
    return abs(root.real), abs(root.imag)


def main():
    out = pathlib.Path(__file__).resolve().parent.parent / "data" / "materials"
    out.mkdir(parents=True, exist_ok=True)
    count = 600
    lo, hi = math.log(0.25), math.log(25.0)
    for name, osc in MATERIALS.items():
        lines = [f"# material {name}",
                 "# source: Lorentz-oscillator approximation generated by tools/gen_materials.py",
                 "# columns: lambda_um n k"]
        for i in range(count):
            lam = math.exp(lo + (hi - lo) * i / (count - 1))
            n, k = nk(osc, lam)
            lines.append(f"{lam:.9g} {n:.9g} {k:.9g}")
        (out / f"{name}.txt").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
