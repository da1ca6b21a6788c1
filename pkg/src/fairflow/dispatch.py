"""Maximum-revenue car dispatching on the non-linearly weighted circulation network.

Node layout: states use their instance state id, then the artificial source
``I`` and sink ``O``.  Every with-rider edge is split into unit-capacity edges
weighted by the first differences of its reward sequence and the resulting
linear network is handed to the circulation solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .circulation import CirculationNetwork, solve_min_cost_circulation, to_units
from .model import Arc, Instance, State

SOURCE, LEAVE, EMPTY, RIDER, RETURN = "source", "leave", "empty", "rider", "return"


class RegularityError(ValueError):
    """Exact mode was requested on a non-concave reward sequence."""


@dataclass(frozen=True)
class NlwcEdge:
    kind: str
    tail: int
    head: int
    lower: int
    upper: float
    reward_seq: tuple[float, ...] = ()
    unit_reward: float = 0.0
    arc: Arc | None = None

    def reward(self, f: int) -> float:
        if self.kind == RIDER:
            return self.reward_seq[f - 1] if f > 0 else 0.0
        return self.unit_reward * f


@dataclass
class NlwcNetwork:
    n_states: int
    edges: list[NlwcEdge]
    n_drivers: int

    @property
    def source(self) -> int:
        return self.n_states

    @property
    def sink(self) -> int:
        return self.n_states + 1


@dataclass
class NlwcSolution:
    network: NlwcNetwork
    flows: list[int]
    revenue: float
    objective: float
    mode: str


@dataclass
class ArcPlan:
    f_with: int
    f_empty: int
    price: float | None
    income: float
    cost: float

    @property
    def total(self) -> int:
        return self.f_with + self.f_empty


@dataclass
class DispatchPlan:
    arcs: dict[Arc, ArcPlan]
    enter: dict[State, int]
    leave: dict[State, int]
    revenue: float
    income: float
    upper_bound: float | None = None
    quotes: dict[Arc, float] = field(default_factory=dict)

    @property
    def total_cost(self) -> float:
        return math.fsum(a.total * a.cost for a in self.arcs.values())

    @property
    def terminal_states(self) -> set[State]:
        return {s for s, n in self.leave.items() if n > 0}

    def offered_price(self, arc: Arc) -> float | None:
        ap = self.arcs.get(arc)
        if ap is not None and ap.price is not None:
            return ap.price
        return self.quotes.get(arc)

    def to_json(self) -> dict:
        return {
            "arcs": [
                {"from": list(a.src), "to": list(a.dst), "f_with": p.f_with, "f_empty": p.f_empty,
                 "price": p.price, "income": p.income, "cost": p.cost}
                for a, p in sorted(self.arcs.items())
            ],
            "states": [
                {"state": list(s), "enter": self.enter.get(s, 0), "leave": self.leave.get(s, 0)}
                for s in sorted(set(self.enter) | set(self.leave))
            ],
            "quotes": [{"from": list(a.src), "to": list(a.dst), "price": p}
                       for a, p in sorted(self.quotes.items())],
            "totals": {"revenue": self.revenue, "income": self.income, "cost": self.total_cost,
                       "upper_bound": self.upper_bound},
        }

    @classmethod
    def from_json(cls, data: dict) -> "DispatchPlan":
        arcs = {
            Arc(State(*r["from"]), State(*r["to"])):
                ArcPlan(int(r["f_with"]), int(r["f_empty"]), r["price"], float(r["income"]), float(r["cost"]))
            for r in data["arcs"]
        }
        enter = {State(*r["state"]): int(r["enter"]) for r in data["states"] if r["enter"]}
        leave = {State(*r["state"]): int(r["leave"]) for r in data["states"] if r["leave"]}
        quotes = {Arc(State(*r["from"]), State(*r["to"])): float(r["price"]) for r in data.get("quotes", [])}
        t = data["totals"]
        return cls(arcs, enter, leave, float(t["revenue"]), float(t["income"]), t.get("upper_bound"), quotes)


@dataclass
class DriverRoute:
    start: State
    legs: list[tuple[Arc, str]] = field(default_factory=list)

    @property
    def end(self) -> State:
        return self.legs[-1][0].dst if self.legs else self.start


@dataclass
class RegularityReport:
    regular: bool
    violations: list[tuple[Arc, int]]


# -- regularity and ironing ---------------------------------------------


def marginal_rewards(valuations: Sequence[float]) -> list[float]:
    """v'_1 = v_1 and v'_k = k v_k - (k-1) v_{k-1} for valuations sorted descending."""
    v = list(valuations)
    if any(a < b for a, b in zip(v, v[1:])):
        raise ValueError("valuations must be sorted in descending order")
    return [v[0] if k == 0 else (k + 1) * v[k] - k * v[k - 1] for k in range(len(v))]


def check_regularity(instance: Instance, tol: float = 1e-9) -> RegularityReport:
    violations = []
    for arc, vals in sorted(instance.orders_by_arc().items()):
        m = marginal_rewards(vals)
        for k in range(1, len(m)):
            if m[k] > m[k - 1] + tol:
                violations.append((arc, k + 1))
    return RegularityReport(not violations, violations)


def concave_envelope(rewards: Sequence[float]) -> list[float]:
    """Least concave majorant of k -> r(k) on k = 0..n with r(0) = 0, at k = 1..n."""
    pts = [(0, 0.0)] + [(k + 1, float(r)) for k, r in enumerate(rewards)]
    hull: list[tuple[int, float]] = []
    for p in pts:
        while len(hull) >= 2:
            (x0, y0), (x1, y1) = hull[-2], hull[-1]
            # drop the middle point when it lies strictly below the chord
            if (x1 - x0) * (p[1] - y0) - (y1 - y0) * (p[0] - x0) > 0:
                hull.pop()
            else:
                break
        hull.append(p)
    out = []
    j = 0
    for k in range(1, len(pts)):
        while hull[j + 1][0] < k:
            j += 1
        (xa, ya), (xb, yb) = hull[j], hull[j + 1]
        out.append(yb if xb == k else ya + (yb - ya) * (k - xa) / (xb - xa))
    return out


def first_differences(seq: Sequence[float]) -> list[float]:
    prev = 0.0
    out = []
    for r in seq:
        out.append(r - prev)
        prev = r
    return out


# -- network construction -------------------------------------------------


def deterministic_reward_seqs(instance: Instance) -> dict[Arc, tuple[float, ...]]:
    """r(f) = (v_f - c) * f for every arc carrying latent orders."""
    out = {}
    for arc, vals in instance.orders_by_arc().items():
        c = instance.cost(arc)
        out[arc] = tuple((v - c) * (f + 1) for f, v in enumerate(vals))
    return out


def build_nlwc(instance: Instance, reward_seqs: Mapping[Arc, Sequence[float]] | None = None) -> NlwcNetwork:
    if reward_seqs is None:
        reward_seqs = deterministic_reward_seqs(instance)
    n = instance.n_states
    I, O = n, n + 1
    edges = [NlwcEdge(RETURN, O, I, 0, math.inf)]
    for s, cnt in sorted(instance.drivers.items(), key=lambda kv: instance.sid(kv[0])):
        edges.append(NlwcEdge(SOURCE, I, instance.sid(s), cnt, cnt))
    for sid in range(n):
        edges.append(NlwcEdge(LEAVE, sid, O, 0, math.inf))
    for arc in instance.arcs():
        u, v = instance.sid(arc.src), instance.sid(arc.dst)
        c = instance.cost(arc)
        edges.append(NlwcEdge(EMPTY, u, v, 0, math.inf, unit_reward=-c, arc=arc))
        seq = tuple(reward_seqs.get(arc, ()))
        if seq:
            edges.append(NlwcEdge(RIDER, u, v, 0, len(seq), reward_seq=seq, arc=arc))
    return NlwcNetwork(n, edges, instance.total_drivers)


def is_concave(seq: Sequence[float], scale: int | None = None) -> bool:
    w = [to_units(x, scale) for x in first_differences(seq)]
    return all(a >= b for a, b in zip(w, w[1:]))


def edge_decompose_solve(net: NlwcNetwork, mode: str = "exact", scale: int | None = None) -> NlwcSolution:
    """Solve the NLWC by unit-edge decomposition and a linear circulation.

    ``mode="exact"`` requires every with-rider reward sequence to be concave
    and returns the exact optimum.  ``mode="ironed"`` replaces each sequence by
    its concave envelope; the reported revenue is re-evaluated on the raw
    rewards and the ironed objective is kept as ``objective``.
    """
    if mode not in ("exact", "ironed"):
        raise ValueError(f"unknown mode {mode!r}")
    circ = CirculationNetwork(net.n_states + 2)
    owner: list[int] = []
    for idx, e in enumerate(net.edges):
        if e.kind == RIDER:
            seq = e.reward_seq
            if mode == "ironed":
                seq = concave_envelope(seq)
            elif not is_concave(seq, scale):
                raise RegularityError(f"reward sequence on {e.arc} is not concave")
            for w in first_differences(seq):
                circ.add_edge(e.tail, e.head, 0, 1, -w)
                owner.append(idx)
        else:
            circ.add_edge(e.tail, e.head, e.lower, e.upper, -e.unit_reward)
            owner.append(idx)
    flow = solve_min_cost_circulation(circ, inf_cap=net.n_drivers, scale=scale)
    flows = [0] * len(net.edges)
    for i, f in enumerate(flow.values):
        flows[owner[i]] += f
    revenue = math.fsum(e.reward(f) for e, f in zip(net.edges, flows))
    return NlwcSolution(net, flows, revenue, -flow.cost, mode)


# -- plans and routes ------------------------------------------------------


def extract_plan(solution: NlwcSolution, instance: Instance) -> DispatchPlan:
    """Deterministic plan: k accepted orders on an arc are priced at the k-th largest valuation."""
    valuations = instance.orders_by_arc()
    counts: dict[Arc, list[int]] = {}
    enter: dict[State, int] = {}
    leave: dict[State, int] = {}
    for e, f in zip(solution.network.edges, solution.flows):
        if f == 0:
            continue
        if e.kind == SOURCE:
            enter[instance.state(e.head)] = f
        elif e.kind == LEAVE:
            leave[instance.state(e.tail)] = f
        elif e.kind in (EMPTY, RIDER):
            slot = counts.setdefault(e.arc, [0, 0])
            slot[0 if e.kind == RIDER else 1] += f
    arcs = {}
    for arc, (fw, fe) in sorted(counts.items()):
        price = valuations[arc][fw - 1] if fw > 0 else None
        arcs[arc] = ArcPlan(fw, fe, price, fw * price if fw else 0.0, instance.cost(arc))
    income = math.fsum(a.income for a in arcs.values())
    revenue = income - math.fsum(a.total * a.cost for a in arcs.values())
    upper = solution.objective if solution.mode == "ironed" else None
    return DispatchPlan(arcs, enter, leave, revenue, income, upper)


def solve_deterministic(instance: Instance, mode: str = "exact") -> DispatchPlan:
    return extract_plan(edge_decompose_solve(build_nlwc(instance), mode), instance)


def check_conservation(plan: DispatchPlan) -> dict[State, int]:
    """Per-state (inflow - outflow), including entries and exits; empty when conserving."""
    bal: dict[State, int] = {}
    for s, n in plan.enter.items():
        bal[s] = bal.get(s, 0) + n
    for s, n in plan.leave.items():
        bal[s] = bal.get(s, 0) - n
    for arc, ap in plan.arcs.items():
        bal[arc.src] = bal.get(arc.src, 0) - ap.total
        bal[arc.dst] = bal.get(arc.dst, 0) + ap.total
    return {s: b for s, b in bal.items() if b}


def decompose_routes(plan: DispatchPlan, instance: Instance | None = None) -> list[DriverRoute]:
    """Split the aggregate plan into one route per driver.

    Drivers are released in (time, location) order of their start state; at
    each state a driver takes the earliest-arriving remaining arc, with-rider
    before empty, and leaves only when no planned arc remains.
    """
    bad = check_conservation(plan)
    if bad:
        raise ValueError(f"plan does not conserve drivers at {sorted(bad)[:5]}")
    options: dict[State, list[list]] = {}
    for arc, ap in plan.arcs.items():
        opts = options.setdefault(arc.src, [])
        if ap.f_with:
            opts.append([(arc.dst.time, 0, arc.dst.location), arc, RIDER, ap.f_with])
        if ap.f_empty:
            opts.append([(arc.dst.time, 1, arc.dst.location), arc, EMPTY, ap.f_empty])
    for opts in options.values():
        opts.sort(key=lambda o: o[0])
    routes = []
    for start in sorted(plan.enter, key=lambda s: (s.time, s.location)):
        for _ in range(plan.enter[start]):
            route = DriverRoute(start)
            cur = start
            while True:
                nxt = next((o for o in options.get(cur, ()) if o[3] > 0), None)
                if nxt is None:
                    break
                nxt[3] -= 1
                route.legs.append((nxt[1], nxt[2]))
                cur = nxt[1].dst
            routes.append(route)
    return routes


# -- exhaustive oracle -----------------------------------------------------


def _compositions(total: int, bins: int):
    if bins == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, bins - 1):
            yield (first,) + rest


def brute_force_optimal(instance: Instance, max_states: int = 8, max_drivers: int = 4,
                        max_orders: int = 8) -> float:
    """Exact optimum by enumerating every integral dispatch of the drivers.

    Each state's drivers are split in every possible way among its outgoing
    arcs and leaving; an arc carrying F drivers earns max over k <= F of
    k * v_k minus F * c.  Memoised on the arrivals still pending.
    """
    orders = instance.orders or ()
    if instance.n_states > max_states or instance.total_drivers > max_drivers or len(orders) > max_orders:
        raise ValueError("instance too large for exhaustive search")
    vals = instance.orders_by_arc()
    n = instance.n_states
    out_arcs = [[] for _ in range(n)]
    for arc in instance.arcs():
        out_arcs[instance.sid(arc.src)].append(arc)

    def arc_value(arc: Arc, f: int) -> float:
        v = vals.get(arc, [])
        best = max([0.0] + [k * v[k - 1] for k in range(1, min(f, len(v)) + 1)])
        return best - f * instance.cost(arc)

    start = [0] * n
    for s, cnt in instance.drivers.items():
        start[instance.sid(s)] += cnt
    memo: dict[tuple, float] = {}

    def solve(sid: int, pending: tuple[int, ...]) -> float:
        if sid == n:
            return 0.0
        key = (sid, pending)
        if key in memo:
            return memo[key]
        here = start[sid] + pending[0]
        arcs = out_arcs[sid]
        best = -math.inf
        for split in _compositions(here, len(arcs) + 1):
            nxt = list(pending[1:])
            gain = 0.0
            for arc, f in zip(arcs, split):
                if f:
                    gain += arc_value(arc, f)
                    nxt[instance.sid(arc.dst) - sid - 1] += f
            best = max(best, gain + solve(sid + 1, tuple(nxt)))
        memo[key] = best
        return best

    return solve(0, (0,) * n)


def route_enumeration(instance: Instance, start: State) -> list[list[Arc]]:
    """All routes (arc sequences) starting at ``start``, including the empty route."""
    out_arcs: dict[State, list[Arc]] = {}
    for arc in instance.arcs():
        out_arcs.setdefault(arc.src, []).append(arc)

    def walk(s: State) -> list[list[Arc]]:
        res = [[]]
        for arc in out_arcs.get(s, ()):
            res.extend([arc] + tail for tail in walk(arc.dst))
        return res

    return walk(start)


__all__ = [
    "SOURCE", "LEAVE", "EMPTY", "RIDER", "RETURN", "RegularityError", "NlwcEdge", "NlwcNetwork",
    "NlwcSolution", "ArcPlan", "DispatchPlan", "DriverRoute", "RegularityReport", "marginal_rewards",
    "check_regularity", "concave_envelope", "first_differences", "deterministic_reward_seqs",
    "build_nlwc", "is_concave", "edge_decompose_solve", "extract_plan", "solve_deterministic",
    "check_conservation", "decompose_routes", "brute_force_optimal", "route_enumeration",
]
