"""Compare the compiled and NumPy kernel backends on planning and occupancy.

Usage: python benchmarks/bench_kernels.py [--S 5] [--A 3] [--H 4] [--n 100] [--repeats 5]
"""

from __future__ import annotations

import argparse
import math
import time

import numpy as np

from cvarrl import kernels
from cvarrl.envs import make_random_mdp
from cvarrl.grid import BudgetGrid
from cvarrl.ucbvi import LearnerModel


def best_of(fn, repeats: int) -> float:
    best = math.inf
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--S", type=int, default=5)
    p.add_argument("--A", type=int, default=3)
    p.add_argument("--H", type=int, default=4)
    p.add_argument("--n", type=int, default=100, help="budget grid size, eta = 1/n")
    p.add_argument("--repeats", type=int, default=5)
    args = p.parse_args(argv)

    grid = BudgetGrid(args.n)
    mdp = make_random_mdp(args.S, args.A, args.H, grid.n, seed=0)
    model = LearnerModel(args.H, args.S, args.A, 1000, 0.1, 0.25, "bernstein")
    rng = np.random.default_rng(0)
    model.transitions[:] = rng.integers(0, 20, size=model.transitions.shape)
    P, N = model.P_hat, model.N

    print(f"S={args.S} A={args.A} H={args.H} n={args.n}; backends: {', '.join(kernels.AVAILABLE)}")
    print(f"{'kernel':<22}{'backend':<10}{'seconds':>12}")
    timings = {}
    for backend in kernels.AVAILABLE:
        for mode in ("exact", "hoeffding", "bernstein"):
            t = best_of(lambda: kernels.plan(mdp, P, N, grid.n, model.L, mode, backend), args.repeats)
            timings[(f"plan/{mode}", backend)] = t
        _, _, pol, _ = kernels.plan(mdp, P, N, grid.n, model.L, "bernstein", backend)
        t = best_of(lambda: kernels.occupancy(mdp, pol, grid.n // 2, grid.n, backend), args.repeats)
        timings[("occupancy", backend)] = t
    for (name, backend), t in timings.items():
        print(f"{name:<22}{backend:<10}{t:>12.5f}")
    if len(kernels.AVAILABLE) == 2:
        print()
        for name in sorted({k for k, _ in timings}):
            print(f"{name:<22}speedup x{timings[(name, 'python')] / timings[(name, 'cython')]:.1f}")


if __name__ == "__main__":
    main()
