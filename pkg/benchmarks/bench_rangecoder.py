"""Throughput of the compiled range coder against the pure-Python twin.

    python benchmarks/bench_rangecoder.py [--symbols N] [--repeat R]

Both backends must produce identical bytes; the script checks that
before timing.
"""

import argparse
import time

import numpy as np

from v2icoop.codec import _rangecoder_py
from v2icoop.codec.tables import BOUND, NUM_SYMBOLS, build_coding_table, cum_array

try:
    from v2icoop.codec import _rangecoder_c
except ImportError:
    _rangecoder_c = None


def workload(n, seed=0):
    rng = np.random.default_rng(seed)
    cum = cum_array([build_coding_table(rng.dirichlet(np.full(NUM_SYMBOLS, 0.2))) for _ in range(16)])
    # values concentrated near zero like trained features, with a few escapes
    vals = np.clip(np.round(rng.laplace(scale=3.0, size=n)), -BOUND - 5, BOUND + 5).astype(np.int64)
    tids = rng.integers(0, 16, size=n)
    return vals, tids, cum


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--symbols", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    vals, tids, cum = workload(args.symbols)
    kernels = [("python", _rangecoder_py)] + ([("cython", _rangecoder_c)] if _rangecoder_c else [])
    ref = _rangecoder_py.encode(vals, tids, cum, BOUND)
    print(f"{args.symbols} symbols, {len(ref)} bytes ({8 * len(ref) / args.symbols:.3f} bits/symbol)")
    results = {}
    for name, k in kernels:
        data = k.encode(vals, tids, cum, BOUND)
        assert data == ref, f"{name} output differs from the reference"
        assert k.decode(data, tids, cum, BOUND) == vals.tolist()
        enc = best_of(lambda: k.encode(vals, tids, cum, BOUND), args.repeat)
        dec = best_of(lambda: k.decode(data, tids, cum, BOUND), args.repeat)
        results[name] = (enc, dec)
        print(f"{name:>7}: encode {args.symbols / enc / 1e6:7.3f} Msym/s  decode {args.symbols / dec / 1e6:7.3f} Msym/s")
    if len(results) == 2:
        (pe, pd), (ce, cd) = results["python"], results["cython"]
        print(f"speedup: encode x{pe / ce:.1f}, decode x{pd / cd:.1f}")
    else:
        print("compiled kernel not built; run `python setup.py build_ext --inplace`")


if __name__ == "__main__":
    main()
