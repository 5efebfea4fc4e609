"""Time the compiled and numpy dynamics kernels on benchmark graphs.

    python benchmarks/bench_kernels.py [--n 400] [--repeats 200]

Both backends are called on the same edge list and state; the script checks
they agree before timing.
"""
import argparse
import timeit

import numpy as np

from sgode import graphs, kernels
from sgode import _kernels_py as py


def cases(x, r, c, w):
    n = x.shape[0]
    mut = (np.full(n, 0.1), np.full(n, 5.0), np.ones(n), np.full(n, 5.0), np.full(n, 0.9),
           np.full(n, 0.1))
    return {
        "heat": (lambda m: m.heat(x, r, c, w, 1.0)),
        "mutualistic": (lambda m: m.mutualistic(x, r, c, w, *mut)[0]),
        "gene": (lambda m: m.gene(x, r, c, w, np.ones(n), 2.0, 2.0)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=400)
    ap.add_argument("--repeats", type=int, default=200)
    args = ap.parse_args()
    if kernels.compiled_backend is None:
        raise SystemExit("compiled kernels are not built; run pip install -e . first")
    side = int(round(np.sqrt(args.n)))
    print(f"{'graph':<10} {'kernel':<12} {'python us':>10} {'cython us':>10} {'speedup':>8}")
    for family in ("grid", "random", "powerlaw", "smallworld"):
        g = graphs.generate(family, seed=0, n=args.n, side=side)
        r, c, w = g.edge_list()
        x = np.ascontiguousarray(np.random.default_rng(0).uniform(0, 25, size=(g.n, 1)))
        for name, call in cases(x, r, c, w).items():
            a, b = call(py), call(kernels.compiled_backend)
            if not np.allclose(a, b, rtol=1e-12, atol=1e-12):
                raise SystemExit(f"backends disagree on {name}/{family}")
            tp = min(timeit.repeat(lambda: call(py), number=args.repeats, repeat=3))
            tc = min(timeit.repeat(lambda: call(kernels.compiled_backend), number=args.repeats,
                                   repeat=3))
            print(f"{family:<10} {name:<12} {1e6 * tp / args.repeats:>10.1f} "
                  f"{1e6 * tc / args.repeats:>10.1f} {tp / tc:>7.1f}x")


if __name__ == "__main__":
    main()
