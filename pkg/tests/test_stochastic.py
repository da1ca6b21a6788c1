import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm, poisson

from fairflow.dispatch import check_conservation
from fairflow.model import GaussianPoissonParams
from fairflow.simharness import toy_world
from fairflow.stochastic import (acceptance, binomial_mixture_pmf, concave_or_ironed, expected_revenue,
                                 optimal_price, plan_expected_revenue, pmf_qualified, qualified_rate,
                                 solve_stochastic_dispatch, stochastic_reward_table, theta, theta_table)


def theta_direct(n, lam):
    k = np.arange(0, n + 400)
    return float(np.sum(np.minimum(k, n) * poisson.pmf(k, lam)))


@pytest.mark.parametrize("lam", [0.1, 1.0, 4.5, 20.0, 60.0])
def test_theta_against_series(lam):
    for n in (1, 2, 5, 17, 40):
        assert theta(n, lam) == pytest.approx(theta_direct(n, lam), abs=1e-10)


def test_theta_table_matches_kernel():
    lams = np.array([0.0, 0.4, 3.0, 25.0])
    tab = theta_table(30, lams)
    for i, lam in enumerate(lams):
        for n in range(1, 31):
            assert tab[i, n - 1] == pytest.approx(theta(n, lam), abs=1e-12)


def test_theta_validates():
    with pytest.raises(ValueError):
        theta(-1, 1.0)
    with pytest.raises(ValueError):
        theta(1, -0.5)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 50.0), st.integers(1, 40))
def test_theta_properties(lam, n):
    t = theta(n, lam)
    assert 0.0 <= t <= min(n, lam) + 1e-9
    assert theta(n + 1, lam) >= t - 1e-12
    assert theta(n + 1, lam) - t <= t - theta(n - 1, lam) + 1e-12 if n >= 1 else True


def test_acceptance_is_gaussian_tail():
    prm = GaussianPoissonParams(10.0, 2.0, 3.0)
    for p in (4.0, 10.0, 13.5):
        assert acceptance(p, prm) == pytest.approx(norm.sf(p, 10.0, 2.0), rel=1e-12)
    assert qualified_rate(10.0, prm) == pytest.approx(1.5)


@pytest.mark.parametrize("p", [6.0, 9.0, 12.0])
def test_thinning_pmf_equals_binomial_mixture(p):
    prm = GaussianPoissonParams(10.0, 2.0, 4.0)
    for i in range(12):
        assert pmf_qualified(i, prm, p) == pytest.approx(binomial_mixture_pmf(i, prm, p), abs=1e-13)


def dense_optimum(n, prm, cost):
    grid = np.linspace(max(0.0, prm.mu - 5 * prm.sigma), prm.mu + 5 * prm.sigma, 200001)
    vals = np.array([expected_revenue(n, p, prm, cost) for p in grid[::50]])
    i = int(np.argmax(vals))
    lo, hi = grid[max(0, (i - 1) * 50)], grid[min(len(grid) - 1, (i + 1) * 50)]
    fine = np.linspace(lo, hi, 20001)
    v = np.array([expected_revenue(n, p, prm, cost) for p in fine])
    j = int(np.argmax(v))
    return float(fine[j]), float(v[j])


@pytest.mark.parametrize("n,prm,cost", [
    (1, GaussianPoissonParams(10.0, 1.0, 3.0), 2.0),
    (3, GaussianPoissonParams(10.0, 1.0, 3.0), 2.0),
    (2, GaussianPoissonParams(5.0, 2.5, 0.7), 0.0),
    (6, GaussianPoissonParams(1.0, 0.3, 9.0), 0.1),
])
def test_optimal_price_matches_dense_grid(n, prm, cost):
    p_ref, r_ref = dense_optimum(n, prm, cost)
    p, r = optimal_price(n, prm, cost)
    assert r == pytest.approx(r_ref, abs=1e-8)
    assert r >= r_ref - 1e-10
    assert p == pytest.approx(p_ref, abs=1e-3)


def test_frozen_single_driver_price():
    # frozen from the dense-grid oracle above
    p, r = optimal_price(1, GaussianPoissonParams(10.0, 1.0, 3.0), 2.0)
    assert p == pytest.approx(9.30046, abs=1e-5)
    assert r == pytest.approx(6.34314, abs=1e-5)


def test_reward_table_shape_and_concavity():
    prm = GaussianPoissonParams(1.0, 0.5, 7.0)
    t = stochastic_reward_table(prm, cost=0.2)
    assert t.n_max == math.ceil(7 + 6 * math.sqrt(7) + 1)
    assert t.concave and concave_or_ironed(t) == t.rewards
    assert all(b <= a + 1e-9 for a, b in zip(t.prices, t.prices[1:]))
    assert t.to_json()["rows"][0]["n"] == 1


def test_stochastic_solve_on_toy_world():
    world = toy_world()
    sol = solve_stochastic_dispatch(world)
    plan = sol.plan
    assert check_conservation(plan) == {}
    assert sol.ironed_arcs == []
    assert plan.revenue == pytest.approx(sol.objective, abs=1e-6)
    assert plan_expected_revenue(plan, world) == pytest.approx(plan.revenue, abs=1e-6)
    assert plan.revenue > 0
