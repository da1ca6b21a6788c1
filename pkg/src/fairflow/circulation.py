"""Exact integral minimum-cost circulation with lower/upper bounds.

Lower bounds are removed by the usual imbalance transformation, negative-cost
edges are pre-saturated, and the remaining imbalances are routed with
successive shortest paths on non-negative reduced costs.  Money is scaled to
integers so that optimality comparisons are exact.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

from . import kernels

DEFAULT_MONEY_SCALE = 10**6


class InfeasibleCirculation(Exception):
    """The lower bounds cannot be met by any circulation."""


def money_scale() -> int:
    return int(os.environ.get("FAIRFLOW_MONEY_SCALE", DEFAULT_MONEY_SCALE))


def to_units(x: float, scale: int | None = None) -> int:
    return int(round(x * (scale or money_scale())))


@dataclass(frozen=True)
class CirculationEdge:
    tail: int
    head: int
    lower: int = 0
    upper: float = math.inf
    unit_cost: float = 0.0

    def __post_init__(self):
        if self.lower < 0 or self.lower > self.upper:
            raise ValueError(f"bad bounds [{self.lower}, {self.upper}] on {self.tail}->{self.head}")


@dataclass
class CirculationNetwork:
    n_nodes: int
    edges: list[CirculationEdge] = field(default_factory=list)

    def add_edge(self, tail: int, head: int, lower: int = 0, upper: float = math.inf,
                 unit_cost: float = 0.0) -> int:
        if not (0 <= tail < self.n_nodes and 0 <= head < self.n_nodes):
            raise IndexError(f"edge {tail}->{head} outside {self.n_nodes} nodes")
        self.edges.append(CirculationEdge(tail, head, lower, upper, unit_cost))
        return len(self.edges) - 1

    def to_dimacs(self, inf_cap: int | None = None) -> str:
        """DIMACS min-cost-flow text dump, for cross-checking with external solvers."""
        cap = inf_cap if inf_cap is not None else default_inf_cap(self)
        lines = [f"p min {self.n_nodes} {len(self.edges)}"]
        for e in self.edges:
            up = cap if math.isinf(e.upper) else int(e.upper)
            lines.append(f"a {e.tail + 1} {e.head + 1} {e.lower} {up} {e.unit_cost!r}")
        return "\n".join(lines) + "\n"


@dataclass
class Flow:
    values: list[int]
    cost: float
    scaled_cost: int
    scale: int

    def __getitem__(self, i: int) -> int:
        return self.values[i]

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class FlowReport:
    residuals: list[int]
    violations: list[tuple[int, int, str]]
    cost: float

    @property
    def feasible(self) -> bool:
        return not self.violations and not any(self.residuals)


def default_inf_cap(network: CirculationNetwork) -> int:
    finite = sum(int(e.upper) for e in network.edges if not math.isinf(e.upper))
    return max(1, finite)


def solve_min_cost_circulation(network: CirculationNetwork, inf_cap: int | None = None,
                               scale: int | None = None) -> Flow:
    """Minimum-cost integral circulation.

    Infinite upper bounds are replaced by ``inf_cap`` (default: the sum of all
    finite upper bounds).  Ties between equal-cost optima are broken by edge
    index, so the output is deterministic.
    """
    scale = scale or money_scale()
    cap_inf = inf_cap if inf_cap is not None else default_inf_cap(network)
    n = network.n_nodes
    m = len(network.edges)
    src, snk = n, n + 1

    tail, head, cost, res_f, res_b = [], [], [], [], []
    base = [0] * m
    excess = [0] * n
    for i, e in enumerate(network.edges):
        if e.lower != int(e.lower):
            raise ValueError("lower bounds must be integral")
        up = cap_inf if math.isinf(e.upper) else int(e.upper)
        if up != e.upper and not math.isinf(e.upper):
            raise ValueError("upper bounds must be integral")
        if up < e.lower:
            raise InfeasibleCirculation(f"edge {i}: capped upper {up} below lower {e.lower}")
        c = to_units(e.unit_cost, scale)
        room = up - e.lower
        # negative edges start saturated so every residual arc has cost >= 0
        g0 = room if c < 0 else 0
        base[i] = e.lower
        f0 = e.lower + g0
        excess[e.head] += f0
        excess[e.tail] -= f0
        tail.append(e.tail)
        head.append(e.head)
        cost.append(c)
        res_f.append(room - g0)
        res_b.append(g0)

    demand = 0
    for v in range(n):
        if excess[v] == 0:
            continue
        if excess[v] > 0:
            tail.append(src)
            head.append(v)
            res_f.append(excess[v])
            demand += excess[v]
        else:
            tail.append(v)
            head.append(snk)
            res_f.append(-excess[v])
        cost.append(0)
        res_b.append(0)

    routed = kernels.successive_shortest_paths(n + 2, tail, head, cost, res_f, res_b, src, snk, demand)
    if routed < demand:
        raise InfeasibleCirculation(f"only {routed} of {demand} units of imbalance could be routed")
    values = [base[i] + res_b[i] for i in range(m)]
    scaled = sum(v * c for v, c in zip(values, cost[:m]))
    return Flow(values, sum(v * e.unit_cost for v, e in zip(values, network.edges)), scaled, scale)


def verify_flow(network: CirculationNetwork, flow) -> FlowReport:
    """Conservation residual per node (inflow - outflow), bound violations and cost."""
    values = list(flow.values if isinstance(flow, Flow) else flow)
    if len(values) != len(network.edges):
        raise ValueError(f"flow has {len(values)} entries for {len(network.edges)} edges")
    residuals = [0] * network.n_nodes
    violations = []
    for i, (e, f) in enumerate(zip(network.edges, values)):
        if f != int(f):
            violations.append((i, f, "non-integral"))
        if f < e.lower:
            violations.append((i, f, "below lower bound"))
        if f > e.upper:
            violations.append((i, f, "above upper bound"))
        residuals[e.head] += f
        residuals[e.tail] -= f
    return FlowReport(residuals, violations, sum(f * e.unit_cost for e, f in zip(network.edges, values)))
