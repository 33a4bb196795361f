"""Compiled versus pure-Python stencil kernels.

    python benchmarks/bench_stencil.py [--repeat 5] [--json out.json]

Times the moving-average synthesis kernel and the Verlet integrator on
lattice boxes of increasing size and prints the speed-up of the compiled
backend.  Both backends are checked to agree before timing.
"""
import argparse
import json
import timeit

import numpy as np

from halfcrystal import stencil
from halfcrystal.spectral import build_nn_kernel

CASES = [
    # name, box shape, batch / steps
    ("ma 1d", (4096,), 64),
    ("ma 2d", (128, 128), 16),
    ("ma 3d", (32, 32, 32), 4),
    ("verlet 1d", (4096,), 200),
    ("verlet 2d", (128, 128), 50),
]


def ma_case(shape, batch, rng):
    d = len(shape)
    offsets = list(np.ndindex(*(3,) * d))
    nbr = stencil.neighbor_table(shape, offsets)
    mats = rng.normal(size=(len(offsets), 2, 2))
    x = rng.normal(size=(batch, int(np.prod(shape)), 2))
    return lambda backend: stencil.apply_stencil(x, nbr, mats, backend=backend)


def verlet_case(shape, steps, rng):
    k = build_nn_kernel(len(shape), 1, 1.0, 0.5)
    offsets = sorted(k.entries)
    nbr = stencil.neighbor_table(shape, offsets)
    mats = np.stack([k.entries[o] for o in offsets])
    S = int(np.prod(shape))
    u, v = rng.normal(size=(S, 1)), rng.normal(size=(S, 1))
    return lambda backend: stencil.verlet(u, v, nbr, mats, 0.05, steps, backend=backend)


def run(repeat=5, seed=0):
    if stencil.BACKEND != "cython":
        raise SystemExit("compiled extension not built; run `pip install -e .` first")
    rng = np.random.default_rng(seed)
    rows = []
    for name, shape, size in CASES:
        fn = (verlet_case if name.startswith("verlet") else ma_case)(shape, size, rng)
        a, b = fn("cython"), fn("python")
        a, b = (np.concatenate([np.ravel(p) for p in r]) if isinstance(r, tuple) else r for r in (a, b))
        if not np.allclose(a, b, rtol=1e-12, atol=1e-12):
            raise AssertionError(f"{name}: backends disagree")
        t = {be: min(timeit.repeat(lambda: fn(be), number=1, repeat=repeat)) for be in ("cython", "python")}
        rows.append({"case": name, "shape": list(shape), "size": size, "cython_s": t["cython"],
                     "python_s": t["python"], "speedup": t["python"] / t["cython"]})
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the table as JSON")
    args = ap.parse_args()
    rows = run(args.repeat)
    print(f"{'case':<12}{'shape':>16}{'cython [ms]':>14}{'python [ms]':>14}{'speed-up':>10}")
    for r in rows:
        print(f"{r['case']:<12}{'x'.join(map(str, r['shape'])):>16}{1e3 * r['cython_s']:>14.2f}"
              f"{1e3 * r['python_s']:>14.2f}{r['speedup']:>10.1f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
