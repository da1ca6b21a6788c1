import json
from datetime import date, datetime, timedelta

import numpy as np
import pytest

from fairflow.model import (Arc, CostModel, GaussianPoissonParams, Geometry, GridSpec, Instance,
                            LatentOrder, State, TripRecord, admissible, discretize_trips,
                            fit_gaussian_poisson, read_trip_csv, travel_time_table, write_trip_csv)


def test_admissible_respects_travel_time():
    inst = Instance(2, 4, 2)
    assert admissible(State(0, 0), State(1, 2), inst)
    assert not admissible(State(0, 0), State(1, 1), inst)
    assert not admissible(State(0, 2), State(0, 1), inst)


def test_admissible_rejects_out_of_range_states():
    inst = Instance(2, 3, 1)
    with pytest.raises(IndexError):
        admissible(State(0, 0), State(5, 1), inst)


def test_arcs_sorted_and_slack_limited():
    full = Instance(2, 4, 1)
    tight = Instance(2, 4, 1, arc_slack=0)
    assert len(tight.arcs()) < len(full.arcs())
    for a in tight.arcs():
        assert a.dst.time == a.src.time + 1
    keys = [(full.sid(a.src), full.sid(a.dst)) for a in full.arcs()]
    assert keys == sorted(keys)


def test_slack_keeps_demand_arcs():
    far = Arc(State(0, 0), State(1, 3))
    inst = Instance(2, 4, 1, orders=[LatentOrder(far, 5.0)], arc_slack=0)
    assert far in inst.arcs()


def test_cost_model_distance_and_override():
    geo = Geometry(cols=2, cell_km=2.0)
    a = Arc(State(0, 0), State(3, 2))
    inst = Instance(4, 3, 1, CostModel(per_km=1.0, per_slot=0.5), geometry=geo)
    assert inst.cost(a) == pytest.approx(2.0 * np.sqrt(2) + 1.0)
    over = Instance(4, 3, 1, CostModel(per_km=1.0, overrides={tuple(a): 7.0}), geometry=geo)
    assert over.cost(a) == 7.0


def test_validation():
    with pytest.raises(ValueError):
        Instance(2, 2, 0)
    with pytest.raises(ValueError):
        Instance(2, 2, 1, orders=[LatentOrder(Arc(State(0, 1), State(1, 1)), 3.0)])
    with pytest.raises(ValueError):
        LatentOrder(Arc(State(0, 0), State(1, 1)), -1.0)
    with pytest.raises(ValueError):
        GaussianPoissonParams(1.0, 0.0, 1.0)


def test_zero_driver_instance_is_allowed():
    assert Instance(2, 2, 1).total_drivers == 0


@pytest.mark.parametrize("delta", [1, "table", "distance"])
def test_instance_json_roundtrip(delta, river_instance):
    if delta == 1:
        inst = river_instance
    elif delta == "table":
        tab = np.ones((3, 3, 2), dtype=int)
        tab[0, 1, 0] = 1
        inst = Instance(3, 2, tab, drivers={State(0, 0): 1})
    else:
        geo = Geometry(cols=3)
        inst = Instance(3, 4, travel_time_table(3, 4, geo, 1, 0.5), drivers={State(1, 0): 2},
                        geometry=geo, delta_spec={"kind": "distance", "base": 1, "per_cell": 0.5},
                        distributions={Arc(State(0, 0), State(2, 2)): GaussianPoissonParams(3.0, 1.0, 2.0)})
    blob = json.dumps(inst.to_json(), sort_keys=True)
    back = Instance.from_json(json.loads(blob))
    assert json.dumps(back.to_json(), sort_keys=True) == blob
    assert back.arcs() == inst.arcs()
    assert (back.delta == inst.delta).all()


GRID = GridSpec(lat0=30.0, lon0=114.0, rows=2, cols=2, cell_km=1.0)


def trip(day, minute, dmin, lat, lon, dlat, dlon, reward=10.0):
    t0 = datetime(2020, 1, day, 8, 0) + timedelta(minutes=minute)
    return TripRecord(t0, lat, lon, t0 + timedelta(minutes=dmin), dlat, dlon, reward)


def test_discretize_maps_and_drops():
    recs = [
        trip(1, 0, 20, 30.001, 114.001, 30.0095, 114.001),      # cell 0 -> cell 2, slot 0 -> 1
        trip(1, 5, 3, 30.001, 114.001, 30.0095, 114.001),        # drop slot bumped to 1
        trip(1, 0, 5, 30.001, 114.001, 30.002, 114.002),        # same state
        trip(2, 0, 20, 31.0, 114.001, 30.001, 114.001),          # off grid
        trip(2, 600, 20, 30.001, 114.001, 30.0095, 114.001),     # after the window
    ]
    d = discretize_trips(recs, GRID)
    assert d.dropped == {"same_state": 1, "outside_grid": 1, "outside_horizon": 1}
    orders = d.orders_by_day[date(2020, 1, 1)]
    assert [o.arc for o in orders] == [Arc(State(0, 0), State(2, 1))] * 2
    assert d.n_states == 4 * 20


def test_discretize_empty_rejected():
    with pytest.raises(ValueError):
        discretize_trips([], GRID)


def test_fit_gaussian_poisson():
    a = Arc(State(0, 0), State(1, 1))
    b = Arc(State(1, 0), State(0, 1))
    days = [[LatentOrder(a, 10.0), LatentOrder(a, 12.0)], [LatentOrder(a, 14.0), LatentOrder(b, 5.0)]]
    fit = fit_gaussian_poisson(days)
    assert fit[a].lam == 1.5 and fit[a].mu == 12.0 and fit[a].sigma == pytest.approx(2.0)
    assert fit[b].lam == 0.5 and fit[b].sigma == pytest.approx(0.05)


def test_trip_csv_roundtrip(tmp_path):
    recs = [trip(1, 0, 20, 30.001, 114.001, 30.0095, 114.001, 12.5)]
    path = tmp_path / "trips.csv"
    write_trip_csv(path, recs)
    assert read_trip_csv(path) == recs
