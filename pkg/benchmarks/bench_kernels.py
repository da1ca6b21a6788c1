"""Compare the compiled and pure-Python kernels on the workloads the package runs.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import random
import statistics
import time

from fairflow import _pykernels
from fairflow.dispatch import build_nlwc, edge_decompose_solve
from fairflow.simharness import toy_world
from fairflow.stochastic import reward_tables

try:
    from fairflow import _ckernels
except ImportError:
    _ckernels = None


def ssp_case(seed, n=400, m=4000):
    rng = random.Random(seed)
    tail, head, cost, cap = [], [], [], []
    for _ in range(m):
        u, v = rng.sample(range(n), 2)
        tail.append(u)
        head.append(v)
        cost.append(rng.randint(0, 10**6))
        cap.append(rng.randint(1, 5))
    return n, tail, head, cost, cap


def time_ssp(impl, case, demand):
    n, tail, head, cost, cap = case
    res_f, res_b = list(cap), [0] * len(cap)
    t0 = time.perf_counter()
    routed = impl.successive_shortest_paths(n, tail, head, cost, res_f, res_b, 0, n - 1, demand)
    return time.perf_counter() - t0, routed


def time_theta(impl, calls=20000):
    rng = random.Random(1)
    args = [(rng.randint(1, 60), rng.uniform(0.1, 40.0)) for _ in range(calls)]
    t0 = time.perf_counter()
    for n, lam in args:
        impl.theta(n, lam)
    return time.perf_counter() - t0


def time_toy_solve(impl):
    from fairflow import kernels
    world = toy_world()
    net = build_nlwc(world, {a: t.rewards for a, t in reward_tables(world).items()})
    saved = kernels.successive_shortest_paths
    kernels.successive_shortest_paths = impl.successive_shortest_paths
    try:
        t0 = time.perf_counter()
        sol = edge_decompose_solve(net, "ironed")
        return time.perf_counter() - t0, sol.objective
    finally:
        kernels.successive_shortest_paths = saved


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    impls = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    if _ckernels is None:
        print("compiled kernels not built; timing the Python fallback only")
    case = ssp_case(0)
    rows = []
    for name, impl in impls:
        ssp = [time_ssp(impl, case, 200) for _ in range(args.repeat)]
        th = [time_theta(impl) for _ in range(args.repeat)]
        toy = [time_toy_solve(impl) for _ in range(args.repeat)]
        rows.append((name, statistics.median(t for t, _ in ssp), statistics.median(th),
                     statistics.median(t for t, _ in toy), ssp[0][1], toy[0][1]))
    print(f"{'backend':8} {'ssp 400x4000':>14} {'theta x20000':>14} {'toy dispatch':>14}")
    for name, a, b, c, _, _ in rows:
        print(f"{name:8} {a:13.4f}s {b:13.4f}s {c:13.4f}s")
    if len(rows) == 2:
        (_, pa, pb, pc, pr, po), (_, ca, cb, cc, cr, co) = rows
        assert pr == cr and po == co, "backends disagree"
        print(f"{'speedup':8} {pa / ca:13.1f}x {pb / cb:13.1f}x {pc / cc:13.1f}x")


if __name__ == "__main__":
    main()
