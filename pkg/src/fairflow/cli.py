"""Command-line entry point: ``fairflow <command> ...``.

Every JSON artifact carries a ``meta`` block (library version, schema version,
config hash); CSV artifacts start with a ``#`` comment line holding the same.
Exit codes: 0 success, 2 infeasible input or failed precondition, 3 I/O
error, 4 internal invariant breach.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from datetime import time as dtime
from pathlib import Path

from . import __version__
from .circulation import InfeasibleCirculation
from .dispatch import (DispatchPlan, RegularityError, check_conservation, check_regularity,
                       decompose_routes, solve_deterministic)
from .fairalloc import FairnessInfeasible, check_fairness, constructive_allocation, qp_allocation
from .learn import ee_run, fare_model_priors, known_optimum, ts_run, write_curve_csv
from .model import (SCHEMA_VERSION, GridSpec, Instance, State, discretize_trips,
                    fit_gaussian_poisson, read_trip_csv)
from .simharness import (execute_plan, fixed_price_baseline, planned_utilities, sample_day,
                         toy_world, unfairness, average_regret, write_outcomes_csv)
from .stochastic import reward_tables, solve_stochastic_dispatch

EXIT_OK, EXIT_PRECONDITION, EXIT_IO, EXIT_INTERNAL = 0, 2, 3, 4


class PreconditionError(Exception):
    pass


# -- helpers ---------------------------------------------------------------------


def config_hash(args: argparse.Namespace) -> str:
    """Hash of the command, its options (minus the output path) and input file bytes."""
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "func")}
    for key in ("instance", "plan", "trips", "scheme", "curve", "utilities"):
        path = cfg.get(key)
        if path:
            cfg[key] = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def meta(args) -> dict:
    return {"library": "fairflow", "version": __version__, "schema_version": SCHEMA_VERSION,
            "command": args.command, "config_hash": args.config_hash}


def write_json(path: Path, payload: dict, args):
    path.parent.mkdir(parents=True, exist_ok=True)
    body = _finite({"meta": meta(args), **payload})
    path.write_text(json.dumps(body, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _finite(x):
    """Replace non-finite floats by null so the output is strict JSON."""
    if isinstance(x, float):
        return x if math.isfinite(x) else None
    if isinstance(x, dict):
        return {k: _finite(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_finite(v) for v in x]
    return x


def csv_banner(path: Path, args):
    m = meta(args)
    text = path.read_text()
    path.write_text(f"# fairflow {m['version']} schema {m['schema_version']} "
                    f"command {m['command']} config {m['config_hash']}\n" + text)


def read_json(path) -> dict:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise PreconditionError(f"{path}: expected a JSON object")
    return data


def load_instance(path) -> Instance:
    data = read_json(path)
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise PreconditionError(f"{path}: schema version {version}, expected {SCHEMA_VERSION}")
    try:
        return Instance.from_json(data)
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise PreconditionError(f"{path}: invalid instance ({exc})") from exc


def load_plan(path) -> DispatchPlan:
    try:
        plan = DispatchPlan.from_json(read_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise PreconditionError(f"{path}: invalid plan ({exc})") from exc
    if check_conservation(plan):
        raise PreconditionError(f"{path}: plan does not conserve drivers")
    return plan


def solve_any(inst: Instance, mode: str) -> DispatchPlan:
    if inst.stochastic:
        return solve_stochastic_dispatch(inst).plan
    return solve_deterministic(inst, mode)


def out_dir(args) -> Path:
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


# -- commands --------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    records = read_trip_csv(args.trips)
    if not records:
        raise PreconditionError(f"{args.trips}: no trip records")
    hh, mm = (int(x) for x in args.start.split(":"))
    grid = GridSpec(args.lat0, args.lon0, args.rows, args.cols, args.cell_km, dtime(hh, mm),
                    args.slot_minutes, args.n_slots)
    disc = discretize_trips(records, grid)
    drivers = {}
    if args.drivers_per_cell:
        drivers = {State(l, 0): args.drivers_per_cell for l in range(grid.n_locations)}
    if args.day:
        picked = [d for d in disc.orders_by_day if d.isoformat() == args.day]
        if not picked:
            raise PreconditionError(f"no trips on {args.day}")
        inst = Instance(disc.n_locations, disc.n_times, 1, None, drivers,
                        disc.orders_by_day[picked[0]], geometry=disc.geometry)
    else:
        inst = Instance(disc.n_locations, disc.n_times, 1, None, drivers,
                        distributions=fit_gaussian_poisson(disc.orders_by_day), geometry=disc.geometry)
    d = out_dir(args)
    write_json(d / "instance.json", inst.to_json(), args)
    write_json(d / "ingest_summary.json", {
        "records": len(records), "days": len(disc.orders_by_day), "states": disc.n_states,
        "orders": sum(len(v) for v in disc.orders_by_day.values()),
        "dropped": dict(sorted(disc.dropped.items())),
    }, args)
    return EXIT_OK


def cmd_toy(args) -> int:
    inst = toy_world(args.seed)
    write_json(out_dir(args) / "instance.json", inst.to_json(), args)
    return EXIT_OK


def cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    plan = solve_any(inst, args.mode)
    routes = decompose_routes(plan)
    payload = plan.to_json()
    payload["routes"] = [
        {"start": list(r.start), "legs": [{"from": list(a.src), "to": list(a.dst), "role": role}
                                          for a, role in r.legs]}
        for r in routes
    ]
    d = out_dir(args)
    write_json(d / "plan.json", payload, args)
    if args.debug_tables and inst.stochastic:
        write_json(d / "reward_tables.json",
                   {"tables": [t.to_json() for _, t in sorted(reward_tables(inst).items())]}, args)
    return EXIT_OK


def cmd_reallocate(args) -> int:
    inst = load_instance(args.instance)
    plan = load_plan(args.plan)
    alloc = qp_allocation if args.method == "qp" else constructive_allocation
    scheme = alloc(plan, inst, args.income)
    report = check_fairness(plan, scheme, args.income, inst)
    if not report.passed:
        raise AssertionError("allocation failed its own fairness check")
    write_json(out_dir(args) / "scheme.json", scheme.to_json(report), args)
    return EXIT_OK


def cmd_simulate(args) -> int:
    inst = load_instance(args.instance)
    if not inst.stochastic:
        raise PreconditionError("simulate needs an instance with demand distributions")
    if args.regime == "FP":
        plan = fixed_price_baseline(inst).plan
        regimes = ("P1",)
    else:
        plan = solve_stochastic_dispatch(inst).plan
        regimes = ("2P", "P1") if args.regime == "2P" else ("P1",)
    routes = decompose_routes(plan)
    scheme = qp_allocation(plan, inst) if "2P" in regimes else None
    key = "P1" if args.regime == "FP" else args.regime
    rows = []
    for day in range(1, args.days + 1):
        orders = sample_day(inst.distributions, [args.seed, day])
        out = execute_plan(plan, routes, orders, inst, scheme, regimes)
        m = unfairness(out.utilities[key], out.starts) if routes else None
        rows.append({"day": day, "revenue": out.revenue, "income": out.income, "cost": out.cost,
                     f"Xi_{args.regime}": m.Xi if m else 0.0,
                     f"xi_{args.regime}": m.xi if m else float("nan")})
    d = out_dir(args)
    write_outcomes_csv(d / "outcomes.csv", rows)
    csv_banner(d / "outcomes.csv", args)
    planned = planned_utilities(plan, routes, inst, "2P" if args.regime == "2P" else "P1", scheme)
    pm = unfairness(planned, [r.start for r in routes]) if routes else None
    write_json(d / "simulate_summary.json", {
        "regime": args.regime, "days": args.days, "planned_revenue": plan.revenue,
        "mean_revenue": math.fsum(r["revenue"] for r in rows) / len(rows) if rows else 0.0,
        "planned_Xi": pm.Xi if pm else 0.0, "planned_xi": pm.xi if pm else None,
    }, args)
    return EXIT_OK


def cmd_learn(args) -> int:
    inst = load_instance(args.instance)
    if not inst.stochastic:
        raise PreconditionError("learn needs an instance with demand distributions")
    priors = fare_model_priors(inst)
    ov = known_optimum(inst)
    if args.mode == "ts":
        curve = ts_run(inst, args.horizon, priors, args.seed, optimum=ov,
                       snapshot_days=[args.horizon])
    else:
        curve = ee_run(inst, args.horizon, priors, args.seed, args.explore_days, optimum=ov)
    d = out_dir(args)
    write_curve_csv(d / "curve.csv", curve)
    csv_banner(d / "curve.csv", args)
    write_json(d / "learn_summary.json", {
        "algorithm": curve.algorithm, "horizon": args.horizon, "seed": args.seed,
        "optimum": ov, "regret": curve.regret, "final_revenue": curve.days[-1].revenue,
        "posterior": curve.snapshots.get(args.horizon),
    }, args)
    return EXIT_OK


def cmd_check_regularity(args) -> int:
    inst = load_instance(args.instance)
    if inst.stochastic:
        tables = reward_tables(inst)
        bad = {a: t.concavity_violations() for a, t in tables.items() if not t.concave}
        payload = {"regular": not bad, "kind": "stochastic", "arcs_checked": len(tables),
                   "violations": [{"from": list(a.src), "to": list(a.dst), "n": v}
                                  for a, v in sorted(bad.items())]}
    else:
        rep = check_regularity(inst)
        payload = {"regular": rep.regular, "kind": "deterministic",
                   "violations": [{"from": list(a.src), "to": list(a.dst), "k": k}
                                  for a, k in rep.violations]}
    write_json(out_dir(args) / "regularity.json", payload, args)
    return EXIT_OK


def cmd_metrics(args) -> int:
    payload = {}
    if args.utilities:
        incomes, starts = [], []
        with open(args.utilities, newline="") as fh:
            for row in csv.DictReader(r for r in fh if not r.startswith("#")):
                incomes.append(float(row["income"]))
                starts.append(State(int(row["location"]), int(row["time"])))
        m = unfairness(incomes, starts)
        payload["unfairness"] = {"Xi": m.Xi, "xi": m.xi if m.defined else None, "drivers": len(incomes)}
    if args.curve:
        with open(args.curve, newline="") as fh:
            rows = list(csv.DictReader(r for r in fh if not r.startswith("#")))
        if not rows:
            raise PreconditionError(f"{args.curve}: empty curve")
        revenues = [float(r["revenue"]) for r in rows]
        payload["regret"] = average_regret(revenues, float(rows[0]["OV"]))
    if not payload:
        raise PreconditionError("metrics needs --utilities and/or --curve")
    write_json(out_dir(args) / "metrics.json", payload, args)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fairflow", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"fairflow {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--out", required=True, help="output directory")
        return p

    p = add("ingest", cmd_ingest, "discretise a trip CSV into an instance")
    p.add_argument("trips")
    p.add_argument("--lat0", type=float, required=True)
    p.add_argument("--lon0", type=float, required=True)
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--cell-km", type=float, default=1.0)
    p.add_argument("--start", default="08:00")
    p.add_argument("--slot-minutes", type=int, default=15)
    p.add_argument("--n-slots", type=int, default=20)
    p.add_argument("--drivers-per-cell", type=int, default=0)
    p.add_argument("--day", help="emit that day's orders instead of fitted distributions")

    p = add("toy", cmd_toy, "write the synthetic toy world")
    p.add_argument("--seed", type=int, default=7)

    p = add("solve", cmd_solve, "phase-1 dispatch plan")
    p.add_argument("instance")
    p.add_argument("--mode", choices=("exact", "ironed"), default="exact")
    p.add_argument("--debug-tables", action="store_true", help="also dump stochastic reward tables")

    p = add("reallocate", cmd_reallocate, "fair driver payments for a plan")
    p.add_argument("instance")
    p.add_argument("plan")
    p.add_argument("--method", choices=("qp", "constructive"), default="qp")
    p.add_argument("--income", type=float, default=None, help="override collected income")

    p = add("simulate", cmd_simulate, "simulate days under a payment regime")
    p.add_argument("instance")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--days", type=int, default=30)
    p.add_argument("--regime", choices=("2P", "P1", "FP"), default="2P")

    p = add("learn", cmd_learn, "online learning run")
    p.add_argument("instance")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--horizon", type=int, default=50)
    p.add_argument("--mode", choices=("ts", "ee"), default="ts")
    p.add_argument("--explore-days", type=int, default=19)

    p = add("check-regularity", cmd_check_regularity, "regularity / concavity report")
    p.add_argument("instance")

    p = add("metrics", cmd_metrics, "unfairness and regret from CSV files")
    p.add_argument("--utilities", help="CSV with columns location,time,income")
    p.add_argument("--curve", help="learning-curve CSV")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.config_hash = config_hash(args)
        return args.func(args)
    except (PreconditionError, RegularityError, FairnessInfeasible) as exc:
        print(f"fairflow: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except (OSError, json.JSONDecodeError, csv.Error, UnicodeDecodeError) as exc:
        print(f"fairflow: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"fairflow: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except InfeasibleCirculation as exc:
        # the dispatch network is feasible by construction
        print(f"fairflow: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort internal error code
        print(f"fairflow: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
