"""Demand learning: Laplace-approximated Gaussian posteriors, Thompson sampling
and an explore-then-exploit baseline."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_ndtr

from .dispatch import DispatchPlan, decompose_routes
from .model import Arc, GaussianPoissonParams, Instance
from .simharness import (arc_distance, average_regret, execute_plan, plan_from_tables, sample_day)
from .stochastic import (default_n_max, plan_expected_revenue, qualified_rate,
                         solve_stochastic_dispatch, theta_table)

OBS_WINDOW = 100_000
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ArcPrior:
    mu_mu: float
    sigma_mu: float
    mu_sigma: float
    sigma_sigma: float
    lam0: float = 1.0

    def __post_init__(self):
        if not (self.sigma_mu > 0 and self.sigma_sigma > 0 and self.mu_sigma > 0):
            raise ValueError("prior spreads must be positive")

    @property
    def sigma_min(self) -> float:
        return 1e-3 * self.mu_sigma


@dataclass
class ArcBelief:
    prior: ArcPrior
    mu_mu: float
    sigma_mu: float
    mu_sigma: float
    sigma_sigma: float
    prices: list[float] = field(default_factory=list)
    accepts: list[int] = field(default_factory=list)
    counts: list[int] = field(default_factory=list)
    flags: set[str] = field(default_factory=set)

    @classmethod
    def from_prior(cls, prior: ArcPrior) -> "ArcBelief":
        return cls(prior, prior.mu_mu, prior.sigma_mu, prior.mu_sigma, prior.sigma_sigma)

    @property
    def lambda_hat(self) -> float:
        return mle_lambda(self.counts) if self.counts else self.prior.lam0

    def observe(self, price: float, accepted: bool):
        self.prices.append(float(price))
        self.accepts.append(int(accepted))
        if len(self.prices) > OBS_WINDOW:
            del self.prices[:-OBS_WINDOW]
            del self.accepts[:-OBS_WINDOW]
            self.flags.add("window")


@dataclass
class PosteriorState:
    beliefs: dict[Arc, ArcBelief]

    @classmethod
    def from_priors(cls, priors: Mapping[Arc, ArcPrior]) -> "PosteriorState":
        return cls({a: ArcBelief.from_prior(p) for a, p in sorted(priors.items())})

    def to_json(self) -> dict:
        return {"arcs": [
            {"from": list(a.src), "to": list(a.dst), "mu_mu": b.mu_mu, "sigma_mu": b.sigma_mu,
             "mu_sigma": b.mu_sigma, "sigma_sigma": b.sigma_sigma, "lambda_hat": b.lambda_hat,
             "n_obs": len(b.prices), "flags": sorted(b.flags)}
            for a, b in sorted(self.beliefs.items())
        ]}


# -- likelihood ----------------------------------------------------------------


def _compress(prices, accepts) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unique (price, response) pairs with multiplicities."""
    if len(prices) == 0:
        return np.zeros(0), np.zeros(0), np.zeros(0)
    pairs = np.column_stack([np.asarray(prices, float), np.asarray(accepts, float)])
    uniq, counts = np.unique(pairs, axis=0, return_counts=True)
    return uniq[:, 0], uniq[:, 1], counts.astype(float)


def _loglik_terms(mu, sigma, p, y, w):
    x = (p - mu) / sigma
    # a reject has probability Phi(x), an accept 1 - Phi(x) = Phi(-x)
    s = np.where(y > 0, -x, x)
    ll = float(np.dot(w, log_ndtr(s)))
    mills = np.exp(-0.5 * s * s - _LOG_SQRT_2PI - log_ndtr(s))  # phi(s) / Phi(s)
    dx = np.where(y > 0, -mills, mills) * w  # d ll / d x per observation group
    return ll, float(-dx.sum() / sigma), float(-(dx * x).sum() / sigma)


def log_likelihood(mu: float, sigma: float, prior: ArcPrior | None, prices, accepts,
                   gradient: bool = False):
    """log of prior density times the product of response probabilities.

    ``prior=None`` drops the prior (flat).  With ``gradient=True`` returns
    (value, d/dmu, d/dsigma).
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    p, y, w = _compress(prices, accepts)
    return _loglik(mu, sigma, prior, p, y, w, gradient)


def _loglik(mu, sigma, prior, p, y, w, gradient):
    ll, gmu, gsig = _loglik_terms(mu, sigma, p, y, w) if len(p) else (0.0, 0.0, 0.0)
    if prior is not None:
        zm = (mu - prior.mu_mu) / prior.sigma_mu
        zs = (sigma - prior.mu_sigma) / prior.sigma_sigma
        ll += (-0.5 * zm * zm - 0.5 * zs * zs - 2.0 * _LOG_SQRT_2PI
               - math.log(prior.sigma_mu * prior.sigma_sigma))
        gmu -= zm / prior.sigma_mu
        gsig -= zs / prior.sigma_sigma
    return (ll, gmu, gsig) if gradient else ll


def _mode(prior: ArcPrior | None, p, y, w, start: tuple[float, float], sigma_min: float,
          bounds_mu=(None, None), sigma_max: float | None = None) -> tuple[float, float, bool]:
    def f(theta):
        mu, ls = theta
        sig = math.exp(ls)
        ll, gm, gs = _loglik(mu, sig, prior, p, y, w, True)
        return -ll, np.array([-gm, -gs * sig])

    lo_ls = math.log(sigma_min)
    hi_ls = None if sigma_max is None else math.log(sigma_max)
    x0 = np.array([start[0], math.log(max(start[1], sigma_min))])
    res = minimize(f, x0, jac=True, method="L-BFGS-B", bounds=[bounds_mu, (lo_ls, hi_ls)],
                   options={"gtol": 1e-8, "ftol": 1e-15, "maxiter": 1000})
    return float(res.x[0]), math.exp(float(res.x[1])), bool(res.success)


def laplace_posterior(prior: ArcPrior, prices: Sequence[float], accepts: Sequence[int]
                      ) -> tuple[float, float, float, float, set[str]]:
    """Gaussian approximation (mu_mu, sigma_mu, mu_sigma, sigma_sigma) around the posterior mode.

    The mode is found by L-BFGS-B on (mu, log sigma); the Hessian diagonal comes
    from symmetric differences of the analytic gradient.  Off-diagonal
    curvature is ignored.
    """
    if len(prices) == 0:
        return prior.mu_mu, prior.sigma_mu, prior.mu_sigma, prior.sigma_sigma, set()
    p, y, w = _compress(prices, accepts)
    flags: set[str] = set()
    mu, sig, ok = _mode(prior, p, y, w, (prior.mu_mu, prior.mu_sigma), prior.sigma_min)
    if not ok:
        flags.add("mode-search")
    h = 1e-4 * sig
    sig_lo = max(sig - h, 0.5 * sig)
    _, gm_p, _ = _loglik(mu + h, sig, prior, p, y, w, True)
    _, gm_m, _ = _loglik(mu - h, sig, prior, p, y, w, True)
    _, _, gs_p = _loglik(mu, sig + h, prior, p, y, w, True)
    _, _, gs_m = _loglik(mu, sig_lo, prior, p, y, w, True)
    h11 = (gm_p - gm_m) / (2 * h)
    h22 = (gs_p - gs_m) / (sig + h - sig_lo)
    if h11 < 0:
        s_mu = math.sqrt(-1.0 / h11)
    else:
        s_mu = prior.sigma_mu
        flags.add("hessian-mu")
    if h22 < 0:
        s_sig = math.sqrt(-1.0 / h22)
    else:
        s_sig = prior.sigma_sigma
        flags.add("hessian-sigma")
    return mu, s_mu, sig, s_sig, flags


def mle_fit(prices: Sequence[float], accepts: Sequence[int], prior: ArcPrior) -> tuple[float, float]:
    """Flat-prior maximum-likelihood (mu, sigma), boxed to keep one-sided data finite."""
    if len(prices) == 0:
        return prior.mu_mu, prior.mu_sigma
    p, y, w = _compress(prices, accepts)
    span = max(abs(prior.mu_mu), float(np.max(np.abs(p))), 1e-6)
    mu, sig, _ = _mode(None, p, y, w, (prior.mu_mu, prior.mu_sigma), prior.sigma_min,
                       (-10.0 * span, 10.0 * span), 10.0 * span)
    return mu, sig


def mle_lambda(daily_counts: Sequence[int]) -> float:
    if not len(daily_counts):
        raise ValueError("need at least one day of counts")
    return math.fsum(daily_counts) / len(daily_counts)


# -- priors ----------------------------------------------------------------------


def fare_model_priors(instance: Instance, base: float = 1.2, per_km: float = 1.44,
                      rel_mu_sd: float = 0.4, rel_sigma: float = 0.25, rel_sigma_sd: float = 0.5,
                      lam0: float = 1.0, arcs: Sequence[Arc] | None = None) -> dict[Arc, ArcPrior]:
    """Priors from a linear fare model in trip distance."""
    arcs = instance.demand_arcs() if arcs is None else arcs
    out = {}
    for arc in arcs:
        m = base + per_km * arc_distance(arc, instance)
        out[arc] = ArcPrior(m, rel_mu_sd * m, rel_sigma * m, rel_sigma_sd * rel_sigma * m, lam0)
    return out


# -- learning loops ----------------------------------------------------------------


@dataclass
class DayRecord:
    day: int
    revenue: float
    realized: float
    observations: int
    params: dict[Arc, tuple[float, float, float]] | None = None


@dataclass
class LearningCurve:
    algorithm: str
    seed: int
    optimum: float
    days: list[DayRecord]
    snapshots: dict[int, dict] = field(default_factory=dict)

    @property
    def revenues(self) -> list[float]:
        return [d.revenue for d in self.days]

    @property
    def regret(self) -> float:
        return average_regret(self.revenues, self.optimum)

    def rows(self) -> list[dict]:
        out, gap = [], 0.0
        for i, d in enumerate(self.days, 1):
            gap += self.optimum - d.revenue
            out.append({"day": d.day, "revenue": d.revenue, "realized": d.realized,
                        "OV": self.optimum, "regret_to_date": gap / i})
        return out


def write_curve_csv(path, curve: LearningCurve):
    cols = ("day", "revenue", "realized", "OV", "regret_to_date")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in curve.rows():
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def known_optimum(world: Instance) -> float:
    return solve_stochastic_dispatch(world).plan.revenue


def _play(world: Instance, plan: DispatchPlan, rng: np.random.Generator, state: PosteriorState):
    """Execute a plan on one sampled day and log counts and price responses."""
    orders = sample_day(world.distributions, rng)
    outcome = execute_plan(plan, decompose_routes(plan), orders, world, regimes=())
    for arc, b in state.beliefs.items():
        b.counts.append(outcome.counts.get(arc, 0))
    for ob in outcome.observations:
        b = state.beliefs.get(ob.arc)
        if b is not None:
            b.observe(ob.price, ob.accepted)
    return outcome


def ts_run(world: Instance, horizon: int, priors: Mapping[Arc, ArcPrior], seed: int,
           update_days: Sequence[int] | None = None, optimum: float | None = None,
           snapshot_days: Sequence[int] = ()) -> LearningCurve:
    """Thompson sampling: sample beliefs, plan on them, play a day, update.

    Day revenue is the true expected revenue of the day's plan; the sampled
    day's realised revenue is kept alongside.
    """
    rng = np.random.default_rng(seed)
    state = PosteriorState.from_priors(priors)
    optimum = known_optimum(world) if optimum is None else optimum
    updates = set(range(1, horizon + 1)) if update_days is None else set(update_days)
    days = []
    snaps = {}
    for day in range(1, horizon + 1):
        sampled = {}
        for arc, b in state.beliefs.items():
            mu = float(rng.normal(b.mu_mu, b.sigma_mu))
            sig = max(float(rng.normal(b.mu_sigma, b.sigma_sigma)), b.prior.sigma_min)
            sampled[arc] = GaussianPoissonParams(mu, sig, b.lambda_hat)
        plan = solve_stochastic_dispatch(world, sampled).plan
        out = _play(world, plan, rng, state)
        if day in updates:
            for b in state.beliefs.values():
                b.mu_mu, b.sigma_mu, b.mu_sigma, b.sigma_sigma, fl = laplace_posterior(
                    b.prior, b.prices, b.accepts)
                b.flags |= fl
        days.append(DayRecord(day, plan_expected_revenue(plan, world), out.revenue,
                              len(out.observations), {a: (p.mu, p.sigma, p.lam) for a, p in sampled.items()}))
        if day in snapshot_days:
            snaps[day] = state.to_json()
    return LearningCurve("TS", seed, optimum, days, snaps)


def _fixed_prices_plan(world: Instance, prices: Mapping[Arc, float],
                       beliefs: Mapping[Arc, GaussianPoissonParams]) -> DispatchPlan:
    """Dispatch with given per-arc prices, valued under believed demand."""
    cap = world.total_drivers
    seqs = {}
    for arc, prm in sorted(beliefs.items()):
        if prm.lam <= 0 or cap <= 0:
            continue
        p = prices[arc]
        th = theta_table(min(default_n_max(prm.lam), cap), qualified_rate(p, prm))
        c = world.cost(arc)
        seqs[arc] = tuple(float(p * t - c * (k + 1)) for k, t in enumerate(th))
    return plan_from_tables(world, seqs, {a: prices[a] for a in seqs})


def ee_run(world: Instance, horizon: int, priors: Mapping[Arc, ArcPrior], seed: int,
           explore_days: int = 19, optimum: float | None = None,
           interval: tuple[float, float] = (0.5, 1.5)) -> LearningCurve:
    """Explore with uniformly random prices, then fit once and exploit."""
    if not 0 <= explore_days < horizon:
        raise ValueError("explore days must be fewer than the horizon")
    rng = np.random.default_rng(seed)
    state = PosteriorState.from_priors(priors)
    optimum = known_optimum(world) if optimum is None else optimum
    days = []
    fixed = None
    for day in range(1, horizon + 1):
        if day <= explore_days:
            prices = {a: float(rng.uniform(interval[0] * b.prior.mu_mu, interval[1] * b.prior.mu_mu))
                      for a, b in state.beliefs.items()}
            believed = {a: GaussianPoissonParams(b.prior.mu_mu, b.prior.mu_sigma, b.lambda_hat)
                        for a, b in state.beliefs.items()}
            plan = _fixed_prices_plan(world, prices, believed)
        else:
            if fixed is None:
                fitted = {}
                for a, b in state.beliefs.items():
                    mu, sig = mle_fit(b.prices, b.accepts, b.prior)
                    fitted[a] = GaussianPoissonParams(mu, sig, b.lambda_hat)
                fixed = solve_stochastic_dispatch(world, fitted).plan
            plan = fixed
        out = _play(world, plan, rng, state)
        days.append(DayRecord(day, plan_expected_revenue(plan, world), out.revenue, len(out.observations)))
    return LearningCurve("EE", seed, optimum, days)


__all__ = [
    "OBS_WINDOW", "ArcPrior", "ArcBelief", "PosteriorState", "log_likelihood", "laplace_posterior",
    "mle_fit", "mle_lambda", "fare_model_priors", "DayRecord", "LearningCurve", "write_curve_csv",
    "known_optimum", "ts_run", "ee_run",
]
