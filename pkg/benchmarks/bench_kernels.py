"""Compiled vs pure-Python kernels on the bootstrap hot path.

    python benchmarks/bench_kernels.py [--n 1000] [--B 200] [--repeat 3]

Times a single propensity fit and a batch of re-estimated bootstrap
replicates with each backend, and checks that both return the same numbers.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from pswinfer import _backend, dgp, rng
from pswinfer.bootstrap import BootstrapPlan, PointEstimator, Strategy, replicate_index_matrix
from pswinfer.harness import stratified_subsample


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--B", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    sp = dgp.build_superpopulation(0.5, 0.5, seed=1, N=100_000)
    d = stratified_subsample(sp, args.n, 0.5, rng.stream(1, 0))
    X = np.ascontiguousarray(PointEstimator().ps_design(d))
    z = np.ascontiguousarray(d.z)
    y = np.ascontiguousarray(d.y)
    e = np.full(d.n, 0.5)
    idx = replicate_index_matrix(d, BootstrapPlan(args.B, Strategy.STANDARD, seed=2))
    dummy = np.zeros((d.n, 1))

    try:
        c = _backend.kernels("cython")
    except ImportError:
        print("compiled extension not built; only the Python backend is available")
        c = None
    py = _backend.kernels("python")

    rows = []
    results = {}
    for name, k in (("cython", c), ("python", py)):
        if k is None:
            continue
        fit = min(timeit.repeat(lambda: k.fit_logistic(X, z), number=5, repeat=args.repeat)) / 5
        rep = min(timeit.repeat(lambda: k.replicate_estimates(X, z, y, e, idx, 0, 1, 0, dummy, 1),
                                number=1, repeat=args.repeat))
        results[name] = k.replicate_estimates(X, z, y, e, idx, 0, 1, 0, dummy, 1)
        rows.append((name, fit * 1e3, rep * 1e3 / args.B))

    print(f"n={args.n}, p={X.shape[1] - 1}, B={args.B}")
    print(f"{'backend':<8} {'one fit (ms)':>13} {'per replicate (ms)':>19}")
    for name, fit, rep in rows:
        print(f"{name:<8} {fit:>13.3f} {rep:>19.3f}")
    if len(rows) == 2:
        print(f"speed-up per replicate: {rows[1][2] / rows[0][2]:.1f}x")
        ec, sc = results["cython"]
        ep, sp_ = results["python"]
        ok = np.array_equal(sc, sp_) and np.allclose(ec, ep, rtol=0, atol=1e-12, equal_nan=True)
        print(f"backends agree (status identical, estimates within 1e-12): {ok}")


if __name__ == "__main__":
    main()
