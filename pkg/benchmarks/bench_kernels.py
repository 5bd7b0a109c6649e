"""
Compiled vs pure-Python kernels.

Times the three hot loops on identical inputs with both backends, checks the
outputs are bit-identical, and prints a table (or JSON with ``--json``).

    python3 benchmarks/bench_kernels.py [--paths 20000] [--repeat 3] [--json]
"""
from __future__ import annotations

import argparse
import json
import time

import numpy as np

from reebflow import kernels
from reebflow.coeffs import build_tables
from reebflow.fastflow import FastFlowConfig, RotationBudget, _poly_mats, min_period, simulate
from reebflow.graphgen import discretize, sample_paths
from reebflow.hamiltonian import find_critical_points, make_hamiltonian
from reebflow.reeb import build_reeb, project


def _best(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--paths", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args(argv)
    if "compiled" not in kernels.available():
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")

    H = make_hamiltonian("twowell", r_max=6.6)
    cps = find_critical_points(H, 128)
    graph, atlas = build_reeb(H, cps, 8.0, 400)
    tables = build_tables(H, graph, atlas)
    G = discretize(graph, tables, 0.05)
    rng = np.random.default_rng(0)
    n = args.paths

    pts = rng.uniform(-2, 2, size=(n, 2))
    Cx, Cy = _poly_mats(H)
    nsub = np.full(n, 50, dtype=np.int64)
    h = np.full(n, 0.01)
    start = project(atlas, H, [-1.0, 0.3])
    tmin = min_period(tables)

    cases = {"poly2d (grad H)": lambda k: k.poly2d(Cx, pts[:, 0].copy(), pts[:, 1].copy())}

    def advect(k):
        x = pts.copy()
        k.advect_rk4(Cx, Cy, x, nsub, h)
        return x
    cases["advect_rk4 (50 steps)"] = advect
    cases["ctmc (t=1)"] = lambda k: sample_paths(G, start, [1.0], n, 7, backend=k.NAME).states
    cases["fast flow eps=0.05 (t=0.25)"] = lambda k: simulate(
        H, [-1.0, 0.3], [0.25], FastFlowConfig(eps=0.05, n_paths=n // 10, seed=3, z_max=8.0, backend=k.NAME),
        t_min=tmin, budget=RotationBudget(H)).positions[0]

    rows = []
    for name, fn in cases.items():
        tc, oc = _best(lambda: fn(kernels.get("compiled")), args.repeat)
        tp, op = _best(lambda: fn(kernels.get("python")), args.repeat)
        rows.append({"kernel": name, "compiled_s": tc, "python_s": tp, "speedup": tp / tc,
                     "identical": bool(np.array_equal(oc, op))})
    if args.json:
        print(json.dumps(rows, indent=2))
        return
    print(f"{'kernel':32s} {'compiled s':>11s} {'python s':>10s} {'speedup':>8s}  identical")
    for r in rows:
        print(f"{r['kernel']:32s} {r['compiled_s']:11.4f} {r['python_s']:10.4f} {r['speedup']:8.1f}  {r['identical']}")


if __name__ == "__main__":
    main()
