"""Day simulation, driver payment regimes, unfairness metrics and baselines."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dispatch import (ArcPlan, DispatchPlan, DriverRoute, EMPTY, LEAVE, RIDER, SOURCE, build_nlwc,
                       edge_decompose_solve)
from .fairalloc import PaymentScheme, driver_utilities
from .model import (Arc, CostModel, GaussianPoissonParams, Geometry, Instance, LatentOrder, State,
                    travel_time_table)
from .stochastic import default_n_max, qualified_rate, theta_table

REGIMES = ("2P", "P1")


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_day(distributions: Mapping[Arc, GaussianPoissonParams], seed) -> list[LatentOrder]:
    """Poisson counts and clipped Gaussian valuations, arcs visited in sorted order."""
    rng = _rng(seed)
    out = []
    for arc in sorted(distributions):
        prm = distributions[arc]
        k = int(rng.poisson(prm.lam)) if prm.lam > 0 else 0
        if k:
            vals = np.maximum(rng.normal(prm.mu, prm.sigma, k), 0.0)
            out.extend(LatentOrder(arc, float(v)) for v in vals)
    return out


@dataclass
class ArcOutcome:
    price: float | None
    realized: int
    qualified: int
    served: int


@dataclass
class Observation:
    arc: Arc
    price: float
    accepted: bool


@dataclass
class DayOutcome:
    arcs: dict[Arc, ArcOutcome]
    income: float
    cost: float
    starts: list[State]
    utilities: dict[str, list[float]]
    observations: list[Observation] = field(default_factory=list)
    counts: dict[Arc, int] = field(default_factory=dict)

    @property
    def revenue(self) -> float:
        return self.income - self.cost


def execute_plan(plan: DispatchPlan, routes: Sequence[DriverRoute], orders: Iterable[LatentOrder],
                 instance: Instance, scheme: PaymentScheme | None = None,
                 regimes: Sequence[str] = REGIMES) -> DayOutcome:
    """Run one day of a fixed plan against realised requests.

    Every request on a priced arc is an observation.  Qualified requests are
    served highest valuation first up to the arc's with-rider drivers; the rest
    of those drivers cross the arc empty.
    """
    if "2P" in regimes and scheme is None:
        raise ValueError("regime 2P needs a payment scheme")
    by_arc: dict[Arc, list[float]] = {}
    for o in orders:
        by_arc.setdefault(o.arc, []).append(o.valuation)
    arcs: dict[Arc, ArcOutcome] = {}
    obs: list[Observation] = []
    for arc in sorted(set(by_arc) | set(plan.arcs)):
        vals = sorted(by_arc.get(arc, ()), reverse=True)
        price = plan.offered_price(arc)
        if price is None:
            arcs[arc] = ArcOutcome(None, len(vals), 0, 0)
            continue
        qualified = sum(v >= price for v in vals)
        obs.extend(Observation(arc, price, v >= price) for v in vals)
        ap = plan.arcs.get(arc)
        served = min(ap.f_with if ap else 0, qualified)
        arcs[arc] = ArcOutcome(price, len(vals), qualified, served)
    income = math.fsum(a.price * a.served for a in arcs.values() if a.served)
    cost = math.fsum(ap.total * ap.cost for ap in plan.arcs.values())

    utilities: dict[str, list[float]] = {}
    if "P1" in regimes:
        left = {a: o.served for a, o in arcs.items()}
        p1 = []
        for r in routes:
            u = []
            for arc, role in r.legs:
                c = instance.cost(arc)
                if role == RIDER and left.get(arc, 0) > 0:
                    left[arc] -= 1
                    u.append(arcs[arc].price - c)
                else:
                    u.append(-c)
            p1.append(math.fsum(u))
        utilities["P1"] = p1
    if "2P" in regimes:
        utilities["2P"] = driver_utilities(routes, scheme, instance)
    counts = {a: o.realized for a, o in arcs.items() if o.realized}
    return DayOutcome(arcs, income, cost, [r.start for r in routes], utilities, obs, counts)


def planned_utilities(plan: DispatchPlan, routes: Sequence[DriverRoute], instance: Instance,
                      regime: str, scheme: PaymentScheme | None = None) -> list[float]:
    """Utilities if every driver receives its planned share.

    2P pays potential-derived y per arc.  P1 pays each with-rider driver the
    arc's planned income divided by its with-rider count, minus cost; empty legs
    only cost.
    """
    if regime == "2P":
        if scheme is None:
            raise ValueError("regime 2P needs a payment scheme")
        return driver_utilities(routes, scheme, instance)
    if regime != "P1":
        raise ValueError(f"unknown regime {regime!r}")
    out = []
    for r in routes:
        u = []
        for arc, role in r.legs:
            ap = plan.arcs[arc]
            share = ap.income / ap.f_with if role == RIDER and ap.f_with else 0.0
            u.append(share - ap.cost)
        out.append(math.fsum(u))
    return out


@dataclass
class UnfairnessMetrics:
    Xi: float
    xi: float
    mean_income: float

    @property
    def defined(self) -> bool:
        return not math.isnan(self.xi)


def unfairness(incomes: Sequence[float], starts: Sequence[State]) -> UnfairnessMetrics:
    """Root-mean-square deviation from the start-state mean, absolute and relative."""
    if len(incomes) != len(starts) or not incomes:
        raise ValueError("need one start state per driver and at least one driver")
    groups: dict[State, list[float]] = {}
    for u, s in zip(incomes, starts):
        groups.setdefault(s, []).append(u)
    # clamp the group mean into the group's range so identical incomes give exactly zero
    mean_at = {s: min(max(math.fsum(g) / len(g), min(g)), max(g)) for s, g in groups.items()}
    Xi = math.sqrt(math.fsum((u - mean_at[s]) ** 2 for u, s in zip(incomes, starts)) / len(incomes))
    mean = math.fsum(incomes) / len(incomes)
    xi = Xi / mean if mean > 0 else math.nan
    return UnfairnessMetrics(Xi, xi, mean)


def average_regret(revenues: Sequence[float], optimum: float) -> float:
    if not revenues:
        raise ValueError("need at least one day")
    return math.fsum(optimum - a for a in revenues) / len(revenues)


# -- fixed-price baseline -------------------------------------------------------


def arc_distance(arc: Arc, instance: Instance) -> float:
    """Trip length used by distance pricing; same-cell trips count as half a cell."""
    d = instance.geometry.distance_km(arc.src.location, arc.dst.location)
    return d if d > 0 else 0.5 * instance.geometry.cell_km


def default_ratio_grid(instance: Instance, n: int = 25, span: tuple[float, float] = (0.25, 4.0)) -> list[float]:
    dists = instance.distributions
    w = [(p.lam * p.mu, p.mu / arc_distance(a, instance)) for a, p in dists.items() if p.lam > 0]
    total = math.fsum(x for x, _ in w)
    if total <= 0:
        base = 1.0
    else:
        base = math.fsum(x * r for x, r in w) / total
    return list(base * np.geomspace(span[0], span[1], n))


@dataclass
class FixedPriceResult:
    plan: DispatchPlan
    ratio: float
    value: float
    values: list[tuple[float, float]]


def fixed_price_plan(instance: Instance, ratio: float) -> DispatchPlan:
    """Plan with every demand arc priced at ratio * distance."""
    dists = instance.distributions
    cap = instance.total_drivers
    prices: dict[Arc, float] = {}
    seqs: dict[Arc, tuple[float, ...]] = {}
    for arc, prm in sorted(dists.items()):
        if prm.lam <= 0 or cap <= 0:
            continue
        p = ratio * arc_distance(arc, instance)
        n_max = min(default_n_max(prm.lam), cap)
        th = theta_table(n_max, qualified_rate(p, prm))
        c = instance.cost(arc)
        prices[arc] = p
        seqs[arc] = tuple(float(p * t - c * (k + 1)) for k, t in enumerate(th))
    return plan_from_tables(instance, seqs, prices)


def plan_from_tables(instance: Instance, seqs: Mapping[Arc, Sequence[float]],
                     prices: Mapping[Arc, float]) -> DispatchPlan:
    """Solve the dispatch network for a fixed price per arc (price independent of count)."""
    net = build_nlwc(instance, seqs)
    sol = edge_decompose_solve(net, "ironed")
    counts: dict[Arc, list[int]] = {}
    enter: dict[State, int] = {}
    leave: dict[State, int] = {}
    for e, f in zip(net.edges, sol.flows):
        if not f:
            continue
        if e.kind == SOURCE:
            enter[instance.state(e.head)] = f
        elif e.kind == LEAVE:
            leave[instance.state(e.tail)] = f
        elif e.kind in (EMPTY, RIDER):
            counts.setdefault(e.arc, [0, 0])[0 if e.kind == RIDER else 1] += f
    arcs = {}
    for arc, (fw, fe) in sorted(counts.items()):
        c = instance.cost(arc)
        income = seqs[arc][fw - 1] + c * fw if fw else 0.0
        arcs[arc] = ArcPlan(fw, fe, prices[arc] if fw else None, income, c)
    quotes = {a: p for a, p in prices.items() if a not in arcs or arcs[a].f_with == 0}
    income = math.fsum(a.income for a in arcs.values())
    revenue = income - math.fsum(a.total * a.cost for a in arcs.values())
    return DispatchPlan(arcs, enter, leave, revenue, income, None, quotes)


def fixed_price_baseline(instance: Instance, ratios: Sequence[float] | None = None) -> FixedPriceResult:
    """Best single price-per-distance ratio over a grid, dispatched by the same network solve."""
    if not instance.stochastic:
        raise ValueError("fixed-price baseline needs demand distributions")
    ratios = default_ratio_grid(instance) if ratios is None else list(ratios)
    if not ratios:
        raise ValueError("empty ratio grid")
    best = None
    values = []
    for rho in ratios:
        plan = fixed_price_plan(instance, rho)
        values.append((float(rho), plan.revenue))
        if best is None or plan.revenue > best[1].revenue:
            best = (float(rho), plan)
    return FixedPriceResult(best[1], best[0], best[1].revenue, values)


# -- toy world ---------------------------------------------------------------------


def toy_world(seed: int = 7, rows: int = 5, cols: int = 5, n_times: int = 10,
              n_drivers: int = 12, n_hubs: int = 3, demand_per_state: float = 0.35) -> Instance:
    """Small synthetic stochastic city used by tests, benchmarks and the CLI.

    Travel takes 1 + ceil(0.5 * cell distance) slots, cost is 0.4 per km plus
    0.2 per slot.  Drivers start at a few hub cells at time 0.  A random subset
    of the fastest inter-cell arcs carries demand (denser out of hubs), with
    fares that vary by arc so no single price per km fits them all.
    """
    rng = np.random.default_rng(seed)
    L = rows * cols
    geometry = Geometry(cols=cols, cell_km=1.0)
    delta = travel_time_table(L, n_times, geometry, base=1, per_cell=0.5)
    spec = {"kind": "distance", "base": 1, "per_cell": 0.5}
    cost = CostModel(per_km=0.4, per_slot=0.2)
    hubs = rng.choice(L, size=n_hubs, replace=False)
    drivers: dict[State, int] = {}
    for i in range(n_drivers):
        s = State(int(hubs[i % n_hubs]), 0)
        drivers[s] = drivers.get(s, 0) + 1
    shell = Instance(L, n_times, delta, cost, drivers, geometry=geometry, arc_slack=0, delta_spec=spec)
    dists: dict[Arc, GaussianPoissonParams] = {}
    for arc in shell.arcs():
        if arc.src.location == arc.dst.location:
            continue
        if rng.random() >= demand_per_state * 4.0 / L * (1.0 + (arc.src.location in hubs)):
            continue
        d = geometry.distance_km(arc.src.location, arc.dst.location)
        mu = (1.0 + 1.2 * d) * float(rng.uniform(0.6, 1.8))
        sigma = mu * float(rng.uniform(0.1, 0.35))
        lam = float(rng.uniform(0.3, 3.0))
        dists[arc] = GaussianPoissonParams(round(mu, 4), round(sigma, 4), round(lam, 4))
    return shell.with_distributions(dists)


OUTCOME_COLUMNS = ("day", "revenue", "income", "cost")


def write_outcomes_csv(path, rows: Sequence[Mapping[str, object]]):
    """One row per simulated day; regime columns are appended in sorted order."""
    extra = sorted({k for r in rows for k in r} - set(OUTCOME_COLUMNS))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(OUTCOME_COLUMNS) + extra, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


__all__ = [
    "REGIMES", "sample_day", "ArcOutcome", "Observation", "DayOutcome", "execute_plan",
    "planned_utilities", "UnfairnessMetrics", "unfairness", "average_regret", "arc_distance",
    "default_ratio_grid", "FixedPriceResult", "fixed_price_plan", "plan_from_tables",
    "fixed_price_baseline", "toy_world", "write_outcomes_csv",
]
