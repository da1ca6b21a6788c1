"""Gaussian-Poisson demand: thinning, expected fulfilment and optimal arc prices."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.special import erfc, gammaln

from . import kernels
from .dispatch import (ArcPlan, DispatchPlan, RIDER, SOURCE, LEAVE, EMPTY, build_nlwc,
                       concave_envelope, edge_decompose_solve)
from .model import Arc, GaussianPoissonParams, Instance, State

SEARCH_WIDTH = 5.0
GRID_POINTS = 201
GOLDEN_ITERS = 48
CONCAVITY_TOL = 1e-9
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def acceptance(p, params: GaussianPoissonParams):
    """P(valuation >= p) = 1 - Phi((p - mu) / sigma), via erfc."""
    z = (np.asarray(p, dtype=float) - params.mu) / params.sigma
    out = 0.5 * erfc(z / math.sqrt(2.0))
    return float(out) if out.ndim == 0 else out


def qualified_rate(p, params: GaussianPoissonParams):
    return acceptance(p, params) * params.lam


def theta(n: int, lam: float) -> float:
    """Expected fulfilled orders E[min(n, X)], X ~ Pois(lam)."""
    if n < 0 or lam < 0:
        raise ValueError("theta needs n >= 0 and lam >= 0")
    return kernels.theta(int(n), float(lam))


def theta_table(n_max: int, lam) -> np.ndarray:
    """Theta(n, lam) for n = 1..n_max along the last axis; ``lam`` may be an array."""
    lam = np.asarray(lam, dtype=float)[..., None]
    k = np.arange(n_max, dtype=float)
    live = lam > 0
    safe = np.where(live, lam, 1.0)
    pmf = np.exp(k * np.log(safe) - safe - gammaln(k + 1.0))
    tails = np.where(live, np.maximum(1.0 - np.cumsum(pmf, axis=-1), 0.0), 0.0)  # P(X > k)
    return np.cumsum(tails, axis=-1)


def pmf_qualified(i: int, params: GaussianPoissonParams, p: float) -> float:
    lam = qualified_rate(p, params)
    if lam == 0:
        return 1.0 if i == 0 else 0.0
    return math.exp(i * math.log(lam) - lam - math.lgamma(i + 1.0))


def expected_revenue(n: int, p: float, params: GaussianPoissonParams, cost: float) -> float:
    if n == 0:
        return 0.0
    return p * theta(n, qualified_rate(p, params)) - cost * n


def price_bounds(params: GaussianPoissonParams) -> tuple[float, float]:
    return max(0.0, params.mu - SEARCH_WIDTH * params.sigma), max(0.0, params.mu + SEARCH_WIDTH * params.sigma)


def _accept(p: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    return 0.5 * erfc((p - mu) / sigma / math.sqrt(2.0))


def _income(p: np.ndarray, mu, sigma, lam) -> np.ndarray:
    """p * Theta(n, lam(p)) where column j of ``p`` holds the price for n = j + 1."""
    n_max = p.shape[-1]
    th = theta_table(n_max, lam * _accept(p, mu, sigma))  # (..., n_max, n_max)
    return p * np.diagonal(th, axis1=-2, axis2=-1)


def _optimize_batch(mu: np.ndarray, sigma: np.ndarray, lam: np.ndarray, n_max: int
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Income-maximising prices p*(n) and incomes for n = 1..n_max, one row per arc.

    A coarse grid over each arc's search window locates the maximiser, then a
    golden-section search inside the neighbouring grid bracket refines it.  All
    arcs and all n are processed together; rows never interact.
    """
    mu, sigma, lam = (np.asarray(x, dtype=float)[:, None] for x in (mu, sigma, lam))
    lo = np.maximum(0.0, mu - SEARCH_WIDTH * sigma)
    hi = np.maximum(0.0, mu + SEARCH_WIDTH * sigma)
    t = np.linspace(0.0, 1.0, GRID_POINTS)[None, :]
    grid = lo + (hi - lo) * t  # (A, G)
    th = theta_table(n_max, lam * _accept(grid, mu, sigma))  # (A, G, N)
    vals = grid[:, :, None] * th
    j = np.argmax(vals, axis=1)  # (A, N)
    best_p = np.take_along_axis(grid, j, axis=1)
    best_v = np.take_along_axis(vals, j[:, None, :], axis=1)[:, 0, :]
    a = np.take_along_axis(grid, np.maximum(j - 1, 0), axis=1)
    b = np.take_along_axis(grid, np.minimum(j + 1, GRID_POINTS - 1), axis=1)
    x1 = b - _INV_PHI * (b - a)
    x2 = a + _INV_PHI * (b - a)
    f1, f2 = _income(x1, mu, sigma, lam), _income(x2, mu, sigma, lam)
    for _ in range(GOLDEN_ITERS):
        left = f1 >= f2
        b = np.where(left, x2, b)
        a = np.where(left, a, x1)
        x1n = np.where(left, b - _INV_PHI * (b - a), x2)
        x2n = np.where(left, x1, a + _INV_PHI * (b - a))
        fn = _income(np.where(left, x1n, x2n), mu, sigma, lam)
        f1, f2 = np.where(left, fn, f2), np.where(left, f1, fn)
        x1, x2 = x1n, x2n
    cand_p = np.where(f1 >= f2, x1, x2)
    cand_v = np.maximum(f1, f2)
    better = cand_v > best_v
    prices = np.where(better, cand_p, best_p)
    incomes = np.where(better, cand_v, best_v)
    dead = (lam[:, 0] <= 0) | (hi[:, 0] <= lo[:, 0])
    prices[dead] = lo[dead]
    incomes[dead] = 0.0
    return prices, incomes


def optimal_price(n: int, params: GaussianPoissonParams, cost: float) -> tuple[float, float]:
    """(p*, r(n)) with r(n) = max_p p Theta(n, lam(p)) - c n."""
    if n < 1:
        raise ValueError("optimal_price needs n >= 1")
    p, v = _optimize_batch([params.mu], [params.sigma], [params.lam], n)
    return float(p[0, -1]), float(v[0, -1]) - cost * n


def default_n_max(lam: float) -> int:
    return max(1, math.ceil(lam + 6.0 * math.sqrt(lam) + 1.0))


@dataclass
class RewardTable:
    arc: Arc | None
    params: GaussianPoissonParams
    cost: float
    rewards: tuple[float, ...]
    prices: tuple[float, ...]

    @property
    def n_max(self) -> int:
        return len(self.rewards)

    def marginals(self) -> list[float]:
        r = (0.0,) + self.rewards
        return [r[i + 1] - r[i] for i in range(len(self.rewards))]

    def concavity_violations(self, tol: float = CONCAVITY_TOL) -> list[int]:
        """Indices n (1-based, n >= 2) where the n-th marginal exceeds the previous one by more than tol."""
        m = self.marginals()
        return [k + 1 for k in range(1, len(m)) if m[k] - m[k - 1] > tol]

    @property
    def concave(self) -> bool:
        return not self.concavity_violations()

    def to_json(self) -> dict:
        return {
            "arc": None if self.arc is None else {"from": list(self.arc.src), "to": list(self.arc.dst)},
            "mu": self.params.mu, "sigma": self.params.sigma, "lambda": self.params.lam, "cost": self.cost,
            "rows": [{"n": i + 1, "r": r, "price": p}
                     for i, (r, p) in enumerate(zip(self.rewards, self.prices))],
            "concave": self.concave,
        }


def stochastic_reward_table(params: GaussianPoissonParams, cost: float = 0.0,
                            n_max: int | None = None, arc: Arc | None = None) -> RewardTable:
    n_max = default_n_max(params.lam) if n_max is None else int(n_max)
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    p, v = _optimize_batch([params.mu], [params.sigma], [params.lam], n_max)
    return _table(arc, params, cost, p[0], v[0])


def _table(arc, params, cost, prices, incomes) -> RewardTable:
    r = incomes - cost * np.arange(1, len(incomes) + 1)
    return RewardTable(arc, params, float(cost), tuple(map(float, r)), tuple(map(float, prices)))


def reward_tables(instance: Instance, distributions: Mapping[Arc, GaussianPoissonParams] | None = None,
                  n_cap: int | None = None, batch: int = 64) -> dict[Arc, RewardTable]:
    """Tables for every arc with positive demand, n capped by the fleet size.

    Arcs are optimised in batches; each row is computed independently, so the
    result does not depend on the batching.
    """
    dists = instance.distributions if distributions is None else distributions
    cap = instance.total_drivers if n_cap is None else n_cap
    live = [(a, p) for a, p in sorted(dists.items()) if p.lam > 0 and cap > 0]
    out = {}
    for i in range(0, len(live), batch):
        chunk = live[i:i + batch]
        sizes = [min(default_n_max(p.lam), cap) for _, p in chunk]
        prices, incomes = _optimize_batch([p.mu for _, p in chunk], [p.sigma for _, p in chunk],
                                          [p.lam for _, p in chunk], max(sizes))
        for (arc, prm), k, pr, inc in zip(chunk, sizes, prices, incomes):
            out[arc] = _table(arc, prm, instance.cost(arc), pr[:k], inc[:k])
    return out


@dataclass
class StochasticSolution:
    plan: DispatchPlan
    tables: dict[Arc, RewardTable]
    ironed_arcs: list[Arc]
    objective: float


def solve_stochastic_dispatch(instance: Instance,
                              distributions: Mapping[Arc, GaussianPoissonParams] | None = None
                              ) -> StochasticSolution:
    """Expected-revenue-optimal plan for Gaussian-Poisson demand.

    ``distributions`` overrides the instance's own parameters (used when
    planning with sampled or fitted beliefs).  Non-concave tables are ironed.
    The plan price on an arc with k with-rider drivers is p*(k); arcs with
    demand but no rider assignment get the single-driver price as a quote.
    """
    dists = instance.distributions if distributions is None else distributions
    if dists is None:
        raise ValueError("instance has no demand distributions")
    tables = reward_tables(instance, dists)
    ironed = sorted(a for a, t in tables.items() if not t.concave)
    net = build_nlwc(instance, {a: t.rewards for a, t in tables.items()})
    sol = edge_decompose_solve(net, "ironed")
    counts: dict[Arc, list[int]] = {}
    enter: dict[State, int] = {}
    leave: dict[State, int] = {}
    for e, f in zip(net.edges, sol.flows):
        if f == 0:
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
        if fw:
            t = tables[arc]
            price = t.prices[fw - 1]
            income = t.rewards[fw - 1] + c * fw
        else:
            price, income = None, 0.0
        arcs[arc] = ArcPlan(fw, fe, price, income, c)
    quotes = {a: t.prices[0] for a, t in tables.items() if a not in arcs or arcs[a].f_with == 0}
    income = math.fsum(a.income for a in arcs.values())
    revenue = income - math.fsum(a.total * a.cost for a in arcs.values())
    plan = DispatchPlan(arcs, enter, leave, revenue, income, sol.objective if ironed else None, quotes)
    return StochasticSolution(plan, tables, ironed, sol.objective)


def plan_expected_revenue(plan: DispatchPlan, instance: Instance,
                          distributions: Mapping[Arc, GaussianPoissonParams] | None = None) -> float:
    """Expected revenue of a fixed plan (its prices and counts) under the given demand."""
    dists = instance.distributions if distributions is None else distributions
    total = []
    for arc, ap in plan.arcs.items():
        total.append(-ap.total * ap.cost)
        params = dists.get(arc)
        if ap.f_with and ap.price is not None and params is not None:
            total.append(ap.price * theta(ap.f_with, qualified_rate(ap.price, params)))
    return math.fsum(total)


def binomial_mixture_pmf(i: int, params: GaussianPoissonParams, p: float, tail: float = 1e-15) -> float:
    """Sum over realised counts m >= i of Pois(m; lam) * Binom(i; m, q); truncated series."""
    q = acceptance(p, params)
    lam = params.lam
    if lam == 0:
        return 1.0 if i == 0 else 0.0
    total = 0.0
    m = i
    m_stop = max(i, int(lam + 40 * math.sqrt(lam) + 40))
    while m <= m_stop:
        log_pois = m * math.log(lam) - lam - math.lgamma(m + 1.0)
        if q in (0.0, 1.0):
            binom = 1.0 if (q == 1.0 and i == m) or (q == 0.0 and i == 0) else 0.0
            total += math.exp(log_pois) * binom
        else:
            log_binom = (math.lgamma(m + 1.0) - math.lgamma(i + 1.0) - math.lgamma(m - i + 1.0)
                         + i * math.log(q) + (m - i) * math.log1p(-q))
            total += math.exp(log_pois + log_binom)
        m += 1
    return total


def concave_or_ironed(table: RewardTable) -> tuple[float, ...]:
    return table.rewards if table.concave else tuple(concave_envelope(table.rewards))


__all__ = [
    "acceptance", "qualified_rate", "theta", "theta_table", "pmf_qualified", "expected_revenue",
    "price_bounds", "optimal_price", "default_n_max", "RewardTable", "stochastic_reward_table",
    "reward_tables", "StochasticSolution", "solve_stochastic_dispatch", "plan_expected_revenue",
    "binomial_mixture_pmf", "concave_or_ironed",
]
