"""Compare the compiled and pure-Python coordinate-descent kernels.

Runs both kernels on the same random weighted-lasso problems, checks that
they agree, and reports median wall time per solve::

    python3 benchmarks/bench_kernels.py --sizes 20,100,300 --repeats 5
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from semforge._kernels import KERNELS
from semforge.alasso import lambda_max, solve_gram


def make_problem(rng, n: int, m: int, k: int = 5):
    D = rng.standard_normal((n, m))
    g = np.zeros(m)
    g[rng.choice(m, size=min(k, m), replace=False)] = rng.uniform(0.5, 1.0, size=min(k, m))
    y = D @ g + 0.5 * rng.standard_normal(n)
    G, c = D.T @ D, D.T @ y
    omega = rng.uniform(0.5, 2.0, size=m)
    return G, c, omega


def path_solve(kernel, G, c, omega, length: int = 20):
    """Warm-started path, which is how the kernel is used in cross-validation."""
    lams = np.geomspace(lambda_max(c, omega), 1e-3 * lambda_max(c, omega), length)
    beta = None
    for lam in lams:
        beta = solve_gram(G, c, lam * omega, beta, polish=False, kernel=kernel).coef
    return beta


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="20,100,300", help="comma-separated numbers of columns")
    ap.add_argument("--n", type=int, default=200, help="rows per problem")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if "cython" not in KERNELS:
        print("compiled kernel not built; only the Python kernel is available")
    names = sorted(KERNELS)
    print(f"{'m':>6} " + " ".join(f"{k + ' [ms]':>14}" for k in names) + f" {'speedup':>9} {'max|diff|':>10}")
    for m in (int(s) for s in args.sizes.split(",")):
        rng = np.random.default_rng([args.seed, m])
        G, c, omega = make_problem(rng, args.n, m)
        times, sols = {}, {}
        for name in names:
            runs = []
            for _ in range(args.repeats):
                t0 = time.perf_counter()
                sols[name] = path_solve(KERNELS[name], G, c, omega)
                runs.append(time.perf_counter() - t0)
            times[name] = statistics.median(runs)
        diff = max(float(np.max(np.abs(sols[a] - sols[b]))) for a in names for b in names)
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{m:>6} " + " ".join(f"{1e3 * times[k]:>14.2f}" for k in names) + f" {speed:>9.1f} {diff:>10.2e}")


if __name__ == "__main__":
    main()
