import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import lemma_feasible, qp_grid_search, random_small_instance
from fairflow.dispatch import decompose_routes, solve_deterministic
from fairflow.fairalloc import (FairnessInfeasible, PaymentScheme, check_fairness, constructive_allocation,
                                driver_utilities, qp_allocation, zero_closure)
from fairflow.model import Arc, CostModel, Instance, LatentOrder, State


def test_river_allocation(river_instance):
    plan = solve_deterministic(river_instance)
    src = State(0, 0)
    for alloc in (constructive_allocation, qp_allocation):
        scheme = alloc(plan, river_instance)
        assert scheme.P(src) == pytest.approx(6.0, abs=1e-6)
        assert scheme.payments[Arc(src, State(1, 1))] == pytest.approx(16.0, abs=1e-6)
        assert scheme.payments[Arc(src, State(2, 1))] == pytest.approx(14.0, abs=1e-6)
        assert check_fairness(plan, scheme, None, river_instance).passed
        utils = driver_utilities(decompose_routes(plan), scheme, river_instance)
        assert utils == [6.0, 6.0]


def test_river_qp_objective(river_instance):
    plan = solve_deterministic(river_instance)
    scheme = qp_allocation(plan, river_instance)
    # (20-16)^2 + (10-14)^2
    assert scheme.objective == pytest.approx(32.0)
    assert scheme.kkt_residual == pytest.approx(0.0, abs=1e-9)


def chain_instance():
    # one driver, two rider legs in sequence: 0@0 -> 1@1 -> 0@2
    a1 = Arc(State(0, 0), State(1, 1))
    a2 = Arc(State(1, 1), State(0, 2))
    cost = CostModel(overrides={tuple(a1): 1.0, tuple(a2): 1.0})
    return Instance(2, 3, 1, cost, {State(0, 0): 1}, [LatentOrder(a1, 9.0), LatentOrder(a2, 3.0)],
                    arc_slack=0), a1, a2


def test_chain_qp_equalises_toward_income():
    inst, a1, a2 = chain_instance()
    plan = solve_deterministic(inst)
    cons = constructive_allocation(plan, inst)
    qp = qp_allocation(plan, inst)
    # surplus 10; longest-path potentials 2:1 give P = (10, 5)
    assert cons.P(State(0, 0)) == pytest.approx(10.0) and cons.P(State(1, 1)) == pytest.approx(5.0)
    # unconstrained optimum pays each leg its own income: P(1@1) = 2, P(0@0) = 10
    assert qp.P(State(1, 1)) == pytest.approx(2.0, abs=1e-9)
    assert qp.objective == pytest.approx(0.0, abs=1e-9)
    assert cons.objective > qp.objective
    best = qp_grid_search(plan, inst, [State(1, 1), State(0, 0)], {State(0, 2): 0.0}, 0.0, 10.0, 1001)
    assert qp.objective <= best + 1e-9


def test_deficit_is_infeasible():
    a = Arc(State(0, 0), State(1, 1))
    inst = Instance(2, 2, 1, CostModel(overrides={tuple(a): 5.0}), {State(0, 0): 1}, [LatentOrder(a, 5.0)])
    plan = solve_deterministic(inst)
    with pytest.raises(FairnessInfeasible):
        constructive_allocation(plan, inst, income=plan.total_cost - 1.0)


def test_zero_closure_follows_used_arcs():
    inst, a1, a2 = chain_instance()
    plan = solve_deterministic(inst)
    assert zero_closure(plan) == {State(0, 2)}


def test_scheme_json_roundtrip(river_instance):
    plan = solve_deterministic(river_instance)
    scheme = qp_allocation(plan, river_instance)
    rep = check_fairness(plan, scheme, None, river_instance)
    blob = json.loads(json.dumps(scheme.to_json(rep)))
    back = PaymentScheme.from_json(blob)
    assert back.potential == scheme.potential and back.payments == scheme.payments
    assert blob["report"]["passed"]


def test_unknown_arc_raises(river_instance):
    from fairflow.dispatch import DriverRoute, RIDER
    plan = solve_deterministic(river_instance)
    scheme = qp_allocation(plan, river_instance)
    bogus = Arc(State(5, 0), State(6, 1))
    with pytest.raises(KeyError):
        driver_utilities([DriverRoute(State(5, 0), [(bogus, RIDER)])], scheme, river_instance)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_allocations_are_fair_or_provably_infeasible(seed):
    inst = random_small_instance(np.random.default_rng(seed))
    plan = solve_deterministic(inst, mode="ironed")
    try:
        cons = constructive_allocation(plan, inst)
    except FairnessInfeasible:
        assert not lemma_feasible(plan, inst)
        return
    qp = qp_allocation(plan, inst)
    for scheme in (cons, qp):
        assert check_fairness(plan, scheme, None, inst, tol=1e-8).passed
    assert qp.objective <= cons.objective + 1e-6
    utils = driver_utilities(decompose_routes(plan), qp, inst)
    by_start = {}
    for r, u in zip(decompose_routes(plan), utils):
        by_start.setdefault(r.start, set()).add(u)
    assert all(len(v) == 1 for v in by_start.values())
