"""Compare the compiled and pure-Python kernel backends on training-shaped CSR batches.

    python3 benchmarks/bench_kernels.py [--rows 2000] [--cols 4000] [--nnz-per-row 60] [--repeat 50]
"""
import argparse
import timeit

import numpy as np

from erdkit import kernels


def make_batch(rows, cols, nnz, seed=0):
    rng = np.random.default_rng(seed)
    indptr = np.arange(0, (rows + 1) * nnz, nnz, dtype=np.int64)
    indices = np.sort(rng.integers(0, cols, size=(rows, nnz)), axis=1).astype(np.int32).ravel()
    data = rng.random(rows * nnz)
    return indptr, indices, data


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--rows", type=int, default=2000)
    ap.add_argument("--cols", type=int, default=4000)
    ap.add_argument("--nnz-per-row", type=int, default=60)
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()

    indptr, indices, data = make_batch(args.rows, args.cols, args.nnz_per_row)
    rng = np.random.default_rng(1)
    w = rng.normal(size=args.cols)
    coef = rng.normal(size=args.rows)
    z = rng.normal(scale=5, size=args.rows * 10)
    backends = kernels.available_backends()
    print(f"active backend: {kernels.BACKEND}; available: {', '.join(sorted(backends))}")
    print(f"batch: {args.rows} rows x {args.cols} cols, {len(data)} nonzeros")
    cases = {
        "csr_matvec": lambda impl: kernels.csr_matvec(indptr, indices, data, w, impl=impl),
        "csr_rmatvec": lambda impl: kernels.csr_rmatvec(indptr, indices, data, coef, args.cols, impl=impl),
        "sigmoid": lambda impl: kernels.sigmoid(z, impl=impl),
        "softplus": lambda impl: kernels.softplus(z, impl=impl),
    }
    print(f"{'kernel':<12}" + "".join(f"{name + ' (us)':>16}" for name in sorted(backends)) + f"{'speedup':>10}")
    for label, fn in cases.items():
        times = {}
        for name, impl in sorted(backends.items()):
            out = fn(impl)  # warm up, and check agreement below
            times[name] = min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat)) * 1e6
            times[name + "_out"] = out
        if "cython" in backends:
            np.testing.assert_allclose(times["cython_out"], times["python_out"], rtol=1e-12, atol=1e-12)
            speedup = f"{times['python'] / times['cython']:>9.2f}x"
        else:
            speedup = f"{'n/a':>10}"
        print(f"{label:<12}" + "".join(f"{times[n]:>16.1f}" for n in sorted(backends)) + speedup)


if __name__ == "__main__":
    main()
