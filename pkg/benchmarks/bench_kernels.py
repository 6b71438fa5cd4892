"""Compare the compiled and numpy kernel backends on representative workloads.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints the best-of-N wall time per kernel and backend, plus the speedup.
"""

import argparse
import timeit

import numpy as np

from alloc import kernels


def workloads(rng):
    n, K, d = 1000, 3, 1
    reports = rng.random((n, K))
    costs = rng.random((n, K, d))
    lam = np.array([0.4])
    explore = (rng.random(n) < 0.01).astype(np.uint8)
    agent = rng.integers(1, K + 1, n).astype(np.int64)
    price = rng.random(n)
    budget = np.array([n * 0.5])
    rho = np.array([0.5])
    lams = np.linspace(0, 2, 201).reshape(-1, 1)
    v6, c6 = rng.random((12, 2)), rng.random((12, 2, 1))

    def resolve(mod):
        mod.resolve_rounds(reports, costs, lam, explore, agent, price, np.zeros(d), budget)

    def vanilla(mod):
        mod.resolve_vanilla(reports, costs, np.zeros(d), rho, 0.03, np.zeros(d), budget)

    def predict(mod):
        mod.predicted_means(lams, reports, costs, rho)

    def offline(mod):
        mod.enumerate_offline(v6, c6, np.array([12 * 0.3]))

    return {
        "resolve_rounds (T=1000, K=3)": resolve,
        "resolve_vanilla (T=1000, K=3)": vanilla,
        "predicted_means (201 duals x 1000 rounds)": predict,
        "enumerate_offline (3^12 allocations)": offline,
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.compiled is None:
        print("compiled extension not available; only the numpy backend can be timed")
    backends = {"python": kernels.python}
    if kernels.compiled is not None:
        backends["cython"] = kernels.compiled
    rng = np.random.default_rng(0)
    print(f"{'kernel':45s} " + " ".join(f"{b:>11s}" for b in backends) + "   speedup")
    for name, fn in workloads(rng).items():
        times = {b: min(timeit.repeat(lambda: fn(m), number=1, repeat=args.repeat)) for b, m in backends.items()}
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:45s} " + " ".join(f"{times[b] * 1e3:9.2f}ms" for b in backends) + f"   {speed:6.1f}x")


if __name__ == "__main__":
    main()
