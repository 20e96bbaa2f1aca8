"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_backends.py [--repeat 5] [--dim 256]

Each kernel is run on identical inputs under both backends; the script
reports the best wall time and checks that the outputs agree bitwise.
"""

import argparse
import time

import numpy as np

from rosaq import _backend


def _best(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.array_equal(a, b)
    return a == b


def cases(dim, rng):
    x = rng.standard_normal((4 * dim, dim))
    gram = x.T @ x
    w = rng.standard_normal((dim, 4 * dim))
    codes = rng.integers(0, 16, size=(4 * dim, 128), dtype=np.uint8)
    return {
        f"jacobi {dim}x{dim}": lambda k: k.jacobi_sweeps(gram.copy(), 100, 1e-15),
        f"quantize {dim}x{4 * dim} int4": lambda k: k.quantize_columns(w, 4),
        f"pack {codes.shape[0]}x128 int3": lambda k: k.pack_rows(codes & 7, 3),
        f"unpack {codes.shape[0]}x128 int4": lambda k: k.unpack_rows(
            k.pack_rows(codes, 4), 4, 128),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--dim", type=int, default=256)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    try:
        compiled = _backend.get("cython")
    except ImportError:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`")
        return 1
    fallback = _backend.get("python")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<28}{'cython (s)':>12}{'python (s)':>12}{'speedup':>10}  match")
    for name, fn in cases(args.dim, rng).items():
        tc, oc = _best(lambda: fn(compiled), args.repeat)
        tp, op = _best(lambda: fn(fallback), args.repeat)
        print(f"{name:<28}{tc:>12.5f}{tp:>12.5f}{tp / tc:>9.1f}x  {_same(oc, op)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
