"""Compare the compiled and numpy kernel backends.

Usage: ``python benchmarks/bench_kernels.py [--repeat N]``.  Prints the best
wall time per kernel and backend, the speedup, and the max deviation.
"""
import argparse
import timeit

import numpy as np

from pqlab.integrand import default_mollifier
from pqlab.kernels import available_backends


def cases(rng):
    z = rng.uniform(-3, 3, (200_000, 2))
    zm = z[:20_000]
    nodes, w = default_mollifier().rule(0.05)
    n, h = 256, 2.0 / 256
    x = -1.0 + h * np.arange(n + 1)
    X, Y = np.meshgrid(x, x, indexing="ij")
    vals = np.sin(3 * X) * np.cos(2 * Y)
    ok = np.ones((n, n), np.uint8)
    patch = np.ones((n - 1, n - 1), np.uint8)
    pts = rng.uniform(-0.99, 0.99, (500_000, 2))
    return {
        "pq_eval (order 2)": lambda m: m.pq_eval(z, 1.0, 2.0, 4.0, 1.0, 1.0, 2),
        "pq_mollified (order 2)": lambda m: m.pq_mollified(zm, nodes, w, 1.0, 2.0, 4.0,
                                                           1.0, 1.0, 2),
        "sample_p1": lambda m: m.sample_p1(vals, ok, -1.0, -1.0, h, pts),
        "sample_q2": lambda m: m.sample_q2(vals, ok, patch, -1.0, -1.0, h, pts),
    }


def _first(out):
    return out[-1] if isinstance(out, tuple) else out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    backends = available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the numpy backend is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}" + "".join(f"{b:>12}" for b in sorted(backends))
          + f"{'speedup':>10}{'max dev':>11}")
    for name, fn in cases(rng).items():
        times, outs = {}, {}
        for b, mod in sorted(backends.items()):
            outs[b] = _first(fn(mod))
            times[b] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        line = f"{name:<26}" + "".join(f"{times[b] * 1e3:>10.1f}ms" for b in sorted(times))
        if len(times) == 2:
            dev = float(np.nanmax(np.abs(outs["cython"] - outs["python"])))
            line += f"{times['python'] / times['cython']:>9.1f}x{dev:>11.1e}"
        print(line)


if __name__ == "__main__":
    main()
