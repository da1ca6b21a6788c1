"""Spatiotemporal world model: states, arcs, orders, instances and trip ingestion."""

from __future__ import annotations

import csv
import math
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime, time
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

SCHEMA_VERSION = 1
KM_PER_DEG_LAT = 111.32


class State(NamedTuple):
    location: int
    time: int


class Arc(NamedTuple):
    src: State
    dst: State


@dataclass(frozen=True)
class LatentOrder:
    arc: Arc
    valuation: float

    def __post_init__(self):
        if self.valuation < 0:
            raise ValueError(f"negative valuation {self.valuation}")


@dataclass(frozen=True)
class GaussianPoissonParams:
    mu: float
    sigma: float
    lam: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")


@dataclass(frozen=True)
class TripRecord:
    pickup_time: datetime
    pickup_lat: float
    pickup_lon: float
    dropoff_time: datetime
    dropoff_lat: float
    dropoff_lon: float
    reward: float

    def __post_init__(self):
        if not self.dropoff_time > self.pickup_time:
            raise ValueError("dropoff must come after pickup")


@dataclass(frozen=True)
class Geometry:
    """Locations laid out row-major on a grid of square cells."""

    cols: int = 1
    cell_km: float = 1.0
    metric: str = "euclidean"

    def cell_distance(self, l1: int, l2: int) -> float:
        r1, c1 = divmod(l1, self.cols)
        r2, c2 = divmod(l2, self.cols)
        if self.metric == "manhattan":
            return float(abs(r1 - r2) + abs(c1 - c2))
        return math.hypot(r1 - r2, c1 - c2)

    def distance_km(self, l1: int, l2: int) -> float:
        return self.cell_km * self.cell_distance(l1, l2)

    def to_json(self) -> dict:
        return {"cols": self.cols, "cell_km": self.cell_km, "metric": self.metric}


@dataclass(frozen=True)
class CostModel:
    """c(s, s') = per_km * distance + per_slot * elapsed slots, unless overridden."""

    per_km: float = 0.0
    per_slot: float = 0.0
    overrides: Mapping[tuple[State, State], float] = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"per_km": self.per_km, "per_slot": self.per_slot}
        if self.overrides:
            out["table"] = [
                {"from": list(s), "to": list(d), "c": c}
                for (s, d), c in sorted(self.overrides.items())
            ]
        return out


def travel_time_table(n_locations: int, n_times: int, geometry: Geometry,
                      base: int = 1, per_cell: float = 0.0) -> np.ndarray:
    """Dense delta[l, l', t] = base + ceil(per_cell * cell distance)."""
    out = np.empty((n_locations, n_locations, n_times), dtype=np.int64)
    for a in range(n_locations):
        for b in range(n_locations):
            out[a, b, :] = base + math.ceil(per_cell * geometry.cell_distance(a, b) - 1e-12)
    return out


class Instance:
    """The world: grid, travel times, costs, initial drivers and demand.

    Demand is either a deterministic list of latent orders or per-arc
    Gaussian-Poisson parameters.  Instances are treated as immutable.

    ``arc_slack`` limits the admissible arcs materialised in the network to
    those arriving at most that many slots after the earliest possible arrival;
    arcs carrying demand are always kept.  ``None`` keeps every admissible arc.
    """

    def __init__(self, n_locations: int, n_times: int, delta, cost: CostModel | None = None,
                 drivers: Mapping[State, int] | None = None,
                 orders: Sequence[LatentOrder] | None = None,
                 distributions: Mapping[Arc, GaussianPoissonParams] | None = None,
                 geometry: Geometry | None = None, arc_slack: int | None = None,
                 delta_spec: dict | None = None):
        if n_locations < 1 or n_times < 1:
            raise ValueError("grid must have at least one location and one slot")
        self.n_locations = int(n_locations)
        self.n_times = int(n_times)
        self.geometry = geometry or Geometry(cols=n_locations)
        if np.isscalar(delta):
            self.delta_spec = delta_spec or {"kind": "constant", "value": int(delta)}
            delta = np.full((n_locations, n_locations, n_times), int(delta), dtype=np.int64)
        else:
            delta = np.asarray(delta, dtype=np.int64)
            self.delta_spec = delta_spec or {"kind": "table", "values": delta.tolist()}
        if delta.shape != (n_locations, n_locations, n_times):
            raise ValueError(f"delta table has shape {delta.shape}")
        if (delta < 1).any():
            raise ValueError("travel times must be positive")
        self.delta = delta
        self.delta.setflags(write=False)
        self.cost_model = cost or CostModel()
        if any(c < 0 for c in self.cost_model.overrides.values()):
            raise ValueError("costs must be non-negative")
        if self.cost_model.per_km < 0 or self.cost_model.per_slot < 0:
            raise ValueError("cost rates must be non-negative")
        self.drivers = {State(*s): int(n) for s, n in (drivers or {}).items() if int(n) != 0}
        for s, n in self.drivers.items():
            self._check_state(s)
            if n < 0:
                raise ValueError(f"negative driver count at {s}")
        if orders is not None and distributions is not None:
            raise ValueError("give either orders or distributions, not both")
        self.orders = tuple(orders) if orders is not None else None
        self.distributions = dict(distributions) if distributions is not None else None
        self.arc_slack = arc_slack
        for o in self.orders or ():
            if not self.admissible(*o.arc):
                raise ValueError(f"order on inadmissible arc {o.arc}")
        for a in self.distributions or {}:
            if not self.admissible(*a):
                raise ValueError(f"distribution on inadmissible arc {a}")
        self._arcs = None

    # -- states -------------------------------------------------------
    @property
    def n_states(self) -> int:
        return self.n_locations * self.n_times

    @property
    def total_drivers(self) -> int:
        return sum(self.drivers.values())

    @property
    def stochastic(self) -> bool:
        return self.distributions is not None

    def sid(self, s: State) -> int:
        return s.time * self.n_locations + s.location

    def state(self, sid: int) -> State:
        t, l = divmod(sid, self.n_locations)
        return State(l, t)

    def states(self) -> list[State]:
        return [self.state(i) for i in range(self.n_states)]

    def _check_state(self, s: State):
        if not (0 <= s.location < self.n_locations and 0 <= s.time < self.n_times):
            raise IndexError(f"state {s} outside {self.n_locations}x{self.n_times} grid")

    # -- arcs ---------------------------------------------------------
    def admissible(self, src: State, dst: State) -> bool:
        self._check_state(src)
        self._check_state(dst)
        return dst.time >= src.time + int(self.delta[src.location, dst.location, src.time])

    def cost(self, arc: Arc) -> float:
        over = self.cost_model.overrides.get((arc.src, arc.dst))
        if over is not None:
            return float(over)
        cm = self.cost_model
        return (cm.per_km * self.geometry.distance_km(arc.src.location, arc.dst.location)
                + cm.per_slot * (arc.dst.time - arc.src.time))

    def demand_arcs(self) -> list[Arc]:
        if self.distributions is not None:
            return sorted(self.distributions)
        return sorted({o.arc for o in self.orders or ()})

    def arcs(self) -> list[Arc]:
        """Admissible arcs of the dispatch network, sorted by (src, dst) state id."""
        if self._arcs is None:
            keep = set(self.demand_arcs())
            L, T = self.n_locations, self.n_times
            for t in range(T):
                for l in range(L):
                    src = State(l, t)
                    for l2 in range(L):
                        earliest = t + int(self.delta[l, l2, t])
                        last = T - 1 if self.arc_slack is None else min(T - 1, earliest + self.arc_slack)
                        for t2 in range(earliest, last + 1):
                            keep.add(Arc(src, State(l2, t2)))
            self._arcs = sorted(keep, key=lambda a: (self.sid(a.src), self.sid(a.dst)))
        return list(self._arcs)

    def orders_by_arc(self) -> dict[Arc, list[float]]:
        """Valuations per arc, sorted descending."""
        out: dict[Arc, list[float]] = defaultdict(list)
        for o in self.orders or ():
            out[o.arc].append(float(o.valuation))
        return {a: sorted(v, reverse=True) for a, v in out.items()}

    def with_distributions(self, distributions: Mapping[Arc, GaussianPoissonParams]) -> "Instance":
        return Instance(self.n_locations, self.n_times, self.delta, self.cost_model,
                        self.drivers, None, distributions, self.geometry, self.arc_slack,
                        self.delta_spec)

    def with_orders(self, orders: Sequence[LatentOrder]) -> "Instance":
        return Instance(self.n_locations, self.n_times, self.delta, self.cost_model,
                        self.drivers, orders, None, self.geometry, self.arc_slack,
                        self.delta_spec)

    # -- serialization ------------------------------------------------
    def to_json(self) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "L": self.n_locations,
            "T": self.n_times,
            "geometry": self.geometry.to_json(),
            "delta": self.delta_spec,
            "cost": self.cost_model.to_json(),
            "arc_slack": self.arc_slack,
            "drivers": [{"state": list(s), "count": n} for s, n in sorted(self.drivers.items())],
        }
        if self.orders is not None:
            out["orders"] = [
                {"from": list(o.arc.src), "to": list(o.arc.dst), "valuation": o.valuation}
                for o in self.orders
            ]
        if self.distributions is not None:
            out["distributions"] = [
                {"from": list(a.src), "to": list(a.dst), "mu": p.mu, "sigma": p.sigma, "lambda": p.lam}
                for a, p in sorted(self.distributions.items())
            ]
        return out

    @classmethod
    def from_json(cls, data: dict) -> "Instance":
        L, T = int(data["L"]), int(data["T"])
        geometry = Geometry(**data.get("geometry", {"cols": L}))
        spec = data.get("delta", {"kind": "constant", "value": 1})
        if isinstance(spec, int):
            spec = {"kind": "constant", "value": spec}
        kind = spec.get("kind")
        if kind == "constant":
            delta = np.full((L, L, T), int(spec["value"]), dtype=np.int64)
        elif kind == "table":
            delta = np.asarray(spec["values"], dtype=np.int64)
        elif kind == "distance":
            delta = travel_time_table(L, T, geometry, int(spec.get("base", 1)),
                                      float(spec.get("per_cell", 0.0)))
        else:
            raise ValueError(f"unknown delta kind {kind!r}")
        c = data.get("cost", {})
        overrides = {
            (State(*row["from"]), State(*row["to"])): float(row["c"]) for row in c.get("table", [])
        }
        cost = CostModel(float(c.get("per_km", 0.0)), float(c.get("per_slot", 0.0)), overrides)
        drivers = {State(*d["state"]): int(d["count"]) for d in data.get("drivers", [])}
        orders = distributions = None
        if "orders" in data:
            orders = [LatentOrder(Arc(State(*o["from"]), State(*o["to"])), float(o["valuation"]))
                      for o in data["orders"]]
        if "distributions" in data:
            distributions = {
                Arc(State(*d["from"]), State(*d["to"])):
                    GaussianPoissonParams(float(d["mu"]), float(d["sigma"]), float(d["lambda"]))
                for d in data["distributions"]
            }
        return cls(L, T, delta, cost, drivers, orders, distributions, geometry,
                   data.get("arc_slack"), spec)


def admissible(src: State, dst: State, instance: Instance) -> bool:
    return instance.admissible(src, dst)


# -- trip ingestion ----------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Bounding box anchored at (lat0, lon0), ``rows`` x ``cols`` square cells
    of side ``cell_km``; the day window starts at ``start`` and is cut into
    ``n_slots`` slots of ``slot_minutes``."""

    lat0: float
    lon0: float
    rows: int
    cols: int
    cell_km: float
    start: time = time(8, 0)
    slot_minutes: int = 15
    n_slots: int = 20

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.cell_km <= 0 or self.slot_minutes <= 0 or self.n_slots < 1:
            raise ValueError("degenerate grid")

    @property
    def n_locations(self) -> int:
        return self.rows * self.cols

    def cell(self, lat: float, lon: float) -> int | None:
        y = (lat - self.lat0) * KM_PER_DEG_LAT
        lat_mid = self.lat0 + 0.5 * self.rows * self.cell_km / KM_PER_DEG_LAT
        x = (lon - self.lon0) * KM_PER_DEG_LAT * math.cos(math.radians(lat_mid))
        r, c = math.floor(y / self.cell_km), math.floor(x / self.cell_km)
        if 0 <= r < self.rows and 0 <= c < self.cols:
            return r * self.cols + c
        return None

    def slot(self, when: datetime) -> int | None:
        day_start = datetime.combine(when.date(), self.start, tzinfo=when.tzinfo)
        minutes = (when - day_start).total_seconds() / 60.0
        k = math.floor(minutes / self.slot_minutes)
        return k if 0 <= k < self.n_slots else None


@dataclass
class Discretization:
    orders_by_day: dict[date, list[LatentOrder]]
    n_locations: int
    n_times: int
    geometry: Geometry
    dropped: Counter

    @property
    def n_states(self) -> int:
        return self.n_locations * self.n_times


def discretize_trips(records: Iterable[TripRecord], grid: GridSpec,
                     delta: np.ndarray | None = None) -> Discretization:
    """Map raw trips to latent orders on admissible arcs, keyed by pickup day.

    Drop-off slots earlier than pickup slot + delta are pushed to the earliest
    admissible slot.  Trips off the grid, outside the window, or collapsing
    onto a single state are dropped and counted by reason.
    """
    records = list(records)
    if not records:
        raise ValueError("no trip records")
    L, T = grid.n_locations, grid.n_slots
    geometry = Geometry(cols=grid.cols, cell_km=grid.cell_km)
    if delta is None:
        delta = np.ones((L, L, T), dtype=np.int64)
    by_day: dict[date, list[LatentOrder]] = defaultdict(list)
    dropped: Counter = Counter()
    for rec in records:
        l1 = grid.cell(rec.pickup_lat, rec.pickup_lon)
        l2 = grid.cell(rec.dropoff_lat, rec.dropoff_lon)
        if l1 is None or l2 is None:
            dropped["outside_grid"] += 1
            continue
        t1 = grid.slot(rec.pickup_time)
        if t1 is None:
            dropped["outside_horizon"] += 1
            continue
        day_start = datetime.combine(rec.pickup_time.date(), grid.start, tzinfo=rec.pickup_time.tzinfo)
        t2 = math.floor((rec.dropoff_time - day_start).total_seconds() / 60.0 / grid.slot_minutes)
        if t1 == t2 and l1 == l2:
            dropped["same_state"] += 1
            continue
        t2 = max(t2, t1 + int(delta[l1, l2, t1]))
        if t2 >= T:
            dropped["outside_horizon"] += 1
            continue
        arc = Arc(State(l1, t1), State(l2, t2))
        by_day[rec.pickup_time.date()].append(LatentOrder(arc, float(rec.reward)))
    return Discretization(dict(sorted(by_day.items())), L, T, geometry, dropped)


def fit_gaussian_poisson(daily_orders: Sequence[Sequence[LatentOrder]] | Mapping[object, Sequence[LatentOrder]],
                         sigma_floor: float = 0.01) -> dict[Arc, GaussianPoissonParams]:
    """Per-arc Gaussian-Poisson fit from daily order multisets.

    lambda is the mean daily count over all supplied days; mu and sigma are the
    sample mean and (n-1) standard deviation of the pooled valuations.  sigma
    never drops below ``sigma_floor * |mu|``.
    """
    days = list(daily_orders.values()) if isinstance(daily_orders, Mapping) else list(daily_orders)
    if not days:
        return {}
    n_days = len(days)
    vals: dict[Arc, list[float]] = defaultdict(list)
    for day in days:
        for o in day:
            vals[o.arc].append(float(o.valuation))
    out = {}
    for arc in sorted(vals):
        v = sorted(vals[arc])
        mu = math.fsum(v) / len(v)
        floor = sigma_floor * abs(mu) if mu != 0 else 1e-6
        sd = statistics.stdev(v) if len(v) >= 2 else 0.0
        out[arc] = GaussianPoissonParams(mu, max(sd, floor), len(v) / n_days)
    return out


TRIP_COLUMNS = ("pickup_time", "pickup_lat", "pickup_lon",
                "dropoff_time", "dropoff_lat", "dropoff_lon", "reward")


def read_trip_csv(path) -> list[TripRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRIP_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"trip CSV missing columns: {sorted(missing)}")
        return [
            TripRecord(
                datetime.fromisoformat(row["pickup_time"]),
                float(row["pickup_lat"]), float(row["pickup_lon"]),
                datetime.fromisoformat(row["dropoff_time"]),
                float(row["dropoff_lat"]), float(row["dropoff_lon"]),
                float(row["reward"]),
            )
            for row in reader
        ]


def write_trip_csv(path, records: Iterable[TripRecord]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRIP_COLUMNS)
        for r in records:
            w.writerow([r.pickup_time.isoformat(), r.pickup_lat, r.pickup_lon,
                        r.dropoff_time.isoformat(), r.dropoff_lat, r.dropoff_lon, r.reward])
