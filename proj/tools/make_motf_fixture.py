#!/usr/bin/env python3
"""Reference MOTF spectrum computed with a standalone scalar TMM.

Writes data/fixtures/motf_reference.json ({"x": point, "y": emissivity}) and
data/fixtures/eval_golden.json (the same point scored against the ideal
cooler target). Shares nothing with the C++ code except the material tables.
"""
import bisect
import cmath
import json
import math
import os
import sys

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load(name):
    lam, n, k = [], [], []
    with open(os.path.join(ROOT, "data", "materials", name + ".txt")) as f:
        for line in f:
            if line.startswith("#") or not line.strip():
                continue
            a, b, c = map(float, line.split())
            lam.append(a)
            n.append(b)
            k.append(c)
    return lam, n, k


def index(table, wl):
    lam, n, k = table
    if wl <= lam[0]:
        return complex(n[0], -k[0])
    if wl >= lam[-1]:
        return complex(n[-1], -k[-1])
    i = bisect.bisect_right(lam, wl) - 1
    t = (wl - lam[i]) / (lam[i + 1] - lam[i])
    return complex(n[i] + t * (n[i + 1] - n[i]), -(k[i] + t * (k[i + 1] - k[i])))


def emissivity(layers, wl, n0=1.0, ns=1.5):
    m = [[1, 0], [0, 1]]
    for N, d_nm in layers:
        if d_nm == 0:
            continue
        delta = 2 * math.pi * N * d_nm * 1e-3 / wl
        c, s = cmath.cos(delta), cmath.sin(delta)
        l = [[c, 1j * s / N], [1j * N * s, c]]
        m = [[m[0][0] * l[0][0] + m[0][1] * l[1][0], m[0][0] * l[0][1] + m[0][1] * l[1][1]],
             [m[1][0] * l[0][0] + m[1][1] * l[1][0], m[1][0] * l[0][1] + m[1][1] * l[1][1]]]
    B = m[0][0] + m[0][1] * ns
    C = m[1][0] + m[1][1] * ns
    r = (n0 * B - C) / (n0 * B + C)
    R = abs(r) ** 2
    T = 4 * n0 * ns / abs(n0 * B + C) ** 2
    return 1 - R - T


def main():
    mats = ["SiO2", "TiO2", "SiC", "AlN", "ZnO", "MgF2", "Al2O3", "SiO2", "TiO2", "SiC"]
    thick = [0.215, 0.0, 0.43, 0.11, 0.0, 0.305, 0.5, 0.0625, 0.61, 0.72]
    tables = {m: load(m) for m in set(mats)}
    grid = [0.3 + (20.0 - 0.3) * i / 2000 for i in range(2001)]
    y = []
    for wl in grid:
        layers = [(index(tables[m], wl), t * 1000.0) for m, t in zip(mats, thick)]
        y.append(emissivity(layers, wl))
    out = os.path.join(ROOT, "data", "fixtures", "motf_reference.json")
    with open(out, "w") as f:
        json.dump({"x": mats + thick, "y": y}, f)
        f.write("\n")
    print(out, file=sys.stderr)

    # ideal cooler: logistic edges of width 0.1 um at 8 and 13 um
    target = [1 / (1 + math.exp(-(wl - 8.0) / 0.1)) / (1 + math.exp(-(13.0 - wl) / 0.1)) for wl in grid]
    loss = sum((a - b) ** 2 for a, b in zip(y, target))
    out = os.path.join(ROOT, "data", "fixtures", "eval_golden.json")
    with open(out, "w") as f:
        json.dump({"x": mats + thick, "target": "default", "loss": loss}, f)
        f.write("\n")
    print(out, file=sys.stderr)


if __name__ == "__main__":
    main()
