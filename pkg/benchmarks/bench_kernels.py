"""Compare the compiled and numpy norm kernels.

    python benchmarks/bench_kernels.py [--sizes 12 16 20] [--repeat 3]

Prints the best-of-``repeat`` wall time per kernel and backend, the
speedup, and whether the two backends return the same value.
"""

import argparse
import time

import numpy as np

from qgraphon import _kernels


def _time(fn, *args, repeat=3):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[12, 16, 20])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = _kernels.BACKENDS
    if "cython" not in backends:
        print("compiled extension not built; only the numpy backend is available")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<22}{'n':>4}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}{'match':>7}")
    for n in args.sizes:
        w = rng.uniform(-1, 1, (n, n))
        w = (w + w.T) / 2
        starts = (rng.random((32, n)) < 0.5).astype(float)
        cases = {
            "cut_norm_enum": (w,),
            "op_norm_enum": (w,),
            "cut_norm_alternating": (w, starts),
        }
        for name, fargs in cases.items():
            times, vals = {}, {}
            for b, mod in backends.items():
                times[b], vals[b] = _time(getattr(mod, name), *fargs, repeat=args.repeat)
            row = f"{name:<22}{n:>4}" + "".join(f"{times[b]:>11.4f}s" for b in backends)
            if len(backends) == 2:
                speed = times["python"] / times["cython"]
                match = abs(vals["python"] - vals["cython"]) <= 1e-9 * max(1.0, abs(vals["python"]))
                row += f"{speed:>9.1f}x{str(match):>7}"
            print(row)


if __name__ == "__main__":
    main()
