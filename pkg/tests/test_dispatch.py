import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import dispatch_brute_force, envelope_lp, is_regular, random_small_instance
from fairflow.dispatch import (EMPTY, RIDER, DispatchPlan, RegularityError, brute_force_optimal,
                               build_nlwc, check_conservation, check_regularity, concave_envelope,
                               decompose_routes, deterministic_reward_seqs, edge_decompose_solve,
                               first_differences, is_concave, marginal_rewards, route_enumeration,
                               solve_deterministic)
from fairflow.model import Arc, Instance, LatentOrder, State


def test_river_plan(river_instance):
    plan = solve_deterministic(river_instance)
    src = State(0, 0)
    to_w2, to_h = Arc(src, State(1, 1)), Arc(src, State(2, 1))
    assert plan.revenue == pytest.approx(12.0)
    assert plan.offered_price(to_w2) == 20.0 and plan.offered_price(to_h) == 10.0
    assert plan.arcs[to_w2].f_with == 1 and plan.arcs[to_h].f_with == 1
    routes = decompose_routes(plan, river_instance)
    assert sorted(r.legs[0][0] for r in routes) == sorted([to_w2, to_h])


def test_marginal_rewards():
    assert marginal_rewards([10, 9]) == [10, 8]
    with pytest.raises(ValueError):
        marginal_rewards([1, 2])


def test_regularity_report():
    a = Arc(State(0, 0), State(1, 1))
    inst = Instance(2, 2, 1, drivers={State(0, 0): 2},
                    orders=[LatentOrder(a, 10), LatentOrder(a, 2), LatentOrder(a, 2)])
    rep = check_regularity(inst)
    assert not rep.regular and rep.violations == [(a, 3)]
    with pytest.raises(RegularityError):
        solve_deterministic(inst)
    ironed = solve_deterministic(inst, mode="ironed")
    assert ironed.upper_bound is not None and ironed.upper_bound >= ironed.revenue


def test_envelope_known_values():
    assert concave_envelope([5, 6, 12]) == pytest.approx([5, 8.5, 12])
    assert concave_envelope([3, 5, 6]) == [3, 5, 6]
    assert first_differences([3, 5, 6]) == [3, 2, 1]


def test_envelope_matches_lp():
    rng = np.random.default_rng(5)
    for _ in range(40):
        r = rng.integers(-10, 30, int(rng.integers(1, 9))).astype(float).tolist()
        assert concave_envelope(r) == pytest.approx(envelope_lp(r), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=12))
def test_envelope_is_least_concave_majorant(r):
    env = concave_envelope(r)
    assert all(e >= x - 1e-9 for e, x in zip(env, r))
    d = first_differences(env)
    assert all(b <= a + 1e-7 for a, b in zip(d, d[1:]))
    assert env[-1] == pytest.approx(max(r[-1], env[-1]))
    assert concave_envelope(env) == pytest.approx(env, abs=1e-7)


def test_is_concave_in_money_units():
    assert is_concave([1.0, 2.0, 3.0])
    assert not is_concave([1.0, 2.5])


def test_network_shape(river_instance):
    net = build_nlwc(river_instance)
    kinds = [e.kind for e in net.edges]
    assert kinds.count(RIDER) == 2
    assert kinds.count(EMPTY) == len(river_instance.arcs())
    seqs = deterministic_reward_seqs(river_instance)
    assert seqs[Arc(State(0, 0), State(1, 1))] == (10.0,)


def test_matches_exhaustive_route_search():
    rng = np.random.default_rng(17)
    done = 0
    while done < 40:
        inst = random_small_instance(rng)
        if not is_regular(inst):
            continue
        expected = dispatch_brute_force(inst)
        assert brute_force_optimal(inst) == pytest.approx(expected, abs=1e-9)
        assert solve_deterministic(inst).revenue == pytest.approx(expected, abs=1e-9)
        done += 1


def test_brute_force_size_guard():
    with pytest.raises(ValueError):
        brute_force_optimal(Instance(3, 4, 1))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_plans_conserve_and_decompose(seed):
    inst = random_small_instance(np.random.default_rng(seed))
    plan = solve_deterministic(inst, mode="ironed")
    assert check_conservation(plan) == {}
    routes = decompose_routes(plan, inst)
    assert len(routes) == inst.total_drivers
    used = {}
    for r in routes:
        cur = r.start
        for arc, role in r.legs:
            assert arc.src == cur
            cur = arc.dst
            used[(arc, role)] = used.get((arc, role), 0) + 1
    for arc, ap in plan.arcs.items():
        assert used.get((arc, RIDER), 0) == ap.f_with
        assert used.get((arc, EMPTY), 0) == ap.f_empty
    for arc, ap in plan.arcs.items():
        assert ap.f_with <= len(inst.orders_by_arc().get(arc, []))


def test_plan_json_roundtrip(river_instance):
    plan = solve_deterministic(river_instance)
    back = DispatchPlan.from_json(json.loads(json.dumps(plan.to_json())))
    assert back.to_json() == plan.to_json()


def test_exact_mode_rejects_convexity():
    a = Arc(State(0, 0), State(1, 1))
    inst = Instance(2, 2, 1, drivers={State(0, 0): 2}, orders=[LatentOrder(a, 10), LatentOrder(a, 2),
                                                               LatentOrder(a, 2)])
    net = build_nlwc(inst)
    with pytest.raises(RegularityError):
        edge_decompose_solve(net, "exact")


def test_route_enumeration_counts():
    inst = Instance(1, 3, 1)
    # 0->1, 0->2, 1->2 : routes {}, {01}, {01,12}, {02}
    assert len(route_enumeration(inst, State(0, 0))) == 4
