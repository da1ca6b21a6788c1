"""Independent reference implementations used only by the tests.

None of these share code with the package beyond the plain data types.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import linprog
from scipy.stats import poisson

from fairflow.model import Arc, CostModel, Instance, LatentOrder, State


def circulation_brute_force(n_nodes, edges):
    """Minimum cost over every integral flow vector; None when infeasible.

    ``edges`` holds (tail, head, lower, upper, cost) with finite integer bounds.
    """
    ranges = [range(lo, up + 1) for _, _, lo, up, _ in edges]
    if not edges:
        return 0.0, []
    flows = np.array(list(itertools.product(*ranges)), dtype=np.int64)
    inc = np.zeros((n_nodes, len(edges)), dtype=np.int64)
    for j, (t, h, *_rest) in enumerate(edges):
        inc[t, j] -= 1
        inc[h, j] += 1
    ok = np.all(flows @ inc.T == 0, axis=1)
    if not ok.any():
        return None, None
    costs = flows[ok] @ np.array([e[4] for e in edges], dtype=float)
    k = int(np.argmin(costs))
    return float(costs[k]), flows[ok][k].tolist()


def envelope_lp(r):
    """Least concave majorant by linear programming.

    Variables rbar(1..n) with rbar(0) = 0; minimise their sum subject to
    rbar >= r and non-increasing increments.
    """
    n = len(r)
    A, b = [], []
    for i in range(n):  # -rbar_i <= -r_i
        row = np.zeros(n)
        row[i] = -1.0
        A.append(row)
        b.append(-r[i])
    # increments: (rbar_{i+1} - rbar_i) - (rbar_i - rbar_{i-1}) <= 0 for i = 1..n-1, rbar_0 = 0
    for i in range(1, n):
        row = np.zeros(n)
        row[i] += 1.0
        row[i - 1] -= 2.0
        if i - 2 >= 0:
            row[i - 2] += 1.0
        A.append(row)
        b.append(0.0)
    res = linprog(np.ones(n), A_ub=np.array(A), b_ub=np.array(b), bounds=[(None, None)] * n,
                  method="highs-ds", options={"primal_feasibility_tolerance": 1e-10,
                                              "dual_feasibility_tolerance": 1e-10})
    assert res.status == 0, res.message
    return res.x.tolist()


def lemma_feasible(plan, instance, income=None) -> bool:
    """LP feasibility of the potential conditions for a plan (independent of the package solver)."""
    states = instance.states()
    idx = {s: i for i, s in enumerate(states)}
    n = len(states)
    A_eq, b_eq, A_ub, b_ub = [], [], [], []
    for s in plan.leave:
        row = np.zeros(n)
        row[idx[s]] = 1
        A_eq.append(row)
        b_eq.append(0.0)
    row = np.zeros(n)
    for s, k in plan.enter.items():
        row[idx[s]] += k
    for s, k in plan.leave.items():
        row[idx[s]] -= k
    A_eq.append(row)
    income = plan.income if income is None else income
    b_eq.append(income - sum(ap.total * ap.cost for ap in plan.arcs.values()))
    for arc, ap in plan.arcs.items():
        if ap.total:
            row = np.zeros(n)
            row[idx[arc.src]] = -1
            row[idx[arc.dst]] = 1
            A_ub.append(row)
            b_ub.append(0.0)
    res = linprog(np.zeros(n), A_ub=np.array(A_ub) if A_ub else None, b_ub=b_ub or None,
                  A_eq=np.array(A_eq), b_eq=b_eq, bounds=[(0, None)] * n, method="highs")
    return res.status == 0


def qp_grid_search(plan, instance, free_states, fixed, lo=0.0, hi=None, steps=201):
    """Brute-force the squared-distortion objective over a grid of potentials.

    ``free_states`` (at most three) vary on the grid; the budget equality is
    enforced by solving for the last free state with a positive entry count.
    """
    used = [(a, ap) for a, ap in plan.arcs.items() if ap.total]
    extra = plan.income - sum(ap.total * ap.cost for _, ap in used)
    hi = hi if hi is not None else max(extra, 1.0)
    enter = {s: plan.enter.get(s, 0) for s in free_states}
    pivot = next(s for s in reversed(free_states) if enter[s] > 0)
    others = [s for s in free_states if s != pivot]
    best = math.inf
    grid = np.linspace(lo, hi, steps)
    for combo in itertools.product(grid, repeat=len(others)):
        P = dict(fixed)
        P.update(zip(others, combo))
        rest = extra - sum(enter[s] * P[s] for s in others)
        P[pivot] = rest / enter[pivot]
        if P[pivot] < -1e-12:
            continue
        if any(P.get(a.src, 0.0) - P.get(a.dst, 0.0) < -1e-12 for a, _ in used):
            continue
        obj = 0.0
        for a, ap in used:
            y = P.get(a.src, 0.0) - P.get(a.dst, 0.0) + ap.cost
            obj += ap.total * (ap.income / ap.total - y) ** 2
        best = min(best, obj)
    return best


def theta_monte_carlo(n, lam, draws, rng):
    x = rng.poisson(lam, draws)
    return float(np.minimum(x, n).mean())


def poisson_chi_square_bins(counts, lam, min_expected=5.0):
    """Observed and expected frequencies with the tail merged until each bin expects >= 5."""
    total = len(counts)
    top = int(counts.max())
    k = 0
    obs, exp = [], []
    acc_o = acc_e = 0.0
    while True:
        acc_o += float(np.sum(counts == k))
        acc_e += total * poisson.pmf(k, lam)
        if acc_e >= min_expected and total * poisson.sf(k, lam) >= min_expected:
            obs.append(acc_o)
            exp.append(acc_e)
            acc_o = acc_e = 0.0
        elif total * poisson.sf(k, lam) < min_expected:
            # fold the remaining tail into this bin
            obs.append(acc_o + float(np.sum(counts > k)))
            exp.append(acc_e + total * poisson.sf(k, lam))
            break
        k += 1
        if k > top + 50:
            break
    return np.array(obs), np.array(exp)


def random_small_instance(rng, max_states=8, max_drivers=4, max_orders=6, max_value=15, max_cost=6):
    """Random deterministic instance in the exhaustive-search size class."""
    L = int(rng.integers(1, 4))
    T = int(rng.integers(2, max(3, max_states // L + 1)))
    while L * T > max_states:
        T -= 1
    shell = Instance(L, T, 1)
    arcs = shell.arcs()
    costs = {(a.src, a.dst): float(rng.integers(0, max_cost + 1)) for a in arcs}
    drivers = {}
    for _ in range(int(rng.integers(1, max_drivers + 1))):
        s = State(int(rng.integers(L)), int(rng.integers(T)))
        drivers[s] = drivers.get(s, 0) + 1
    orders = []
    if arcs:
        for _ in range(int(rng.integers(0, max_orders + 1))):
            a = arcs[int(rng.integers(len(arcs)))]
            orders.append(LatentOrder(a, float(rng.integers(0, max_value + 1))))
    return Instance(L, T, 1, CostModel(overrides=costs), drivers, orders)


def river_crossing() -> Instance:
    """Two drivers at W1 choosing between a cross-river trip to W2 and a trip to H."""
    W1, W2, H = 0, 1, 2
    src = State(W1, 0)
    to_w2, to_h = Arc(src, State(W2, 1)), Arc(src, State(H, 1))
    cost = CostModel(overrides={tuple(to_w2): 10.0, tuple(to_h): 8.0})
    return Instance(3, 2, 1, cost, {src: 2}, [LatentOrder(to_w2, 20.0), LatentOrder(to_h, 10.0)])


def dispatch_brute_force(instance: Instance) -> float:
    """Optimal revenue by letting every driver pick every possible route.

    An arc travelled by F drivers earns max over k <= F of k * v_k (posting
    the k-th highest valuation) minus F times the arc cost.
    """
    out: dict[State, list[Arc]] = {}
    for arc in instance.arcs():
        out.setdefault(arc.src, []).append(arc)

    def routes(s):
        res = [()]
        for arc in out.get(s, ()):
            res.extend((arc,) + rest for rest in routes(arc.dst))
        return res

    vals: dict[Arc, list[float]] = {}
    for o in instance.orders:
        vals.setdefault(o.arc, []).append(o.valuation)
    for v in vals.values():
        v.sort(reverse=True)

    # drivers are added one at a time; only distinct arc-load vectors are kept
    frontier = {()}
    for s, n in sorted(instance.drivers.items()):
        rs = routes(s)
        for _ in range(n):
            nxt = set()
            for load in frontier:
                base = dict(load)
                for r in rs:
                    cur = dict(base)
                    for arc in r:
                        cur[arc] = cur.get(arc, 0) + 1
                    nxt.add(tuple(sorted(cur.items())))
            frontier = nxt
    best = 0.0
    for load in frontier:
        total = 0.0
        for arc, f in load:
            v = vals.get(arc, [])
            total += max([0.0] + [k * v[k - 1] for k in range(1, min(f, len(v)) + 1)]) - f * instance.cost(arc)
        best = max(best, total)
    return best


def is_regular(instance: Instance) -> bool:
    vals: dict[Arc, list[float]] = {}
    for o in instance.orders:
        vals.setdefault(o.arc, []).append(o.valuation)
    for v in vals.values():
        v.sort(reverse=True)
        m = [k * v[k - 1] - (k - 1) * (v[k - 2] if k > 1 else 0.0) for k in range(1, len(v) + 1)]
        if any(b > a for a, b in zip(m, m[1:])):
            return False
    return True
