"""Fair driver-side reward re-allocation through state potentials.

A scheme is a non-negative potential ``P`` over states.  Drivers on an arc are
paid ``y = P(src) - P(dst) + c``, so a driver's utility telescopes to the
potential of its start state and every route out of a state is worth the same.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy.optimize import lsq_linear

from .circulation import money_scale
from .dispatch import DispatchPlan, DriverRoute
from .model import Arc, Instance, State


class FairnessInfeasible(ValueError):
    """No fair allocation is guaranteed for this plan and income."""


@dataclass
class PaymentScheme:
    potential: dict[State, float]
    payments: dict[Arc, float]
    objective: float = 0.0
    kkt_residual: float | None = None
    method: str = ""

    def P(self, s: State) -> float:
        return self.potential.get(s, 0.0)

    def payment(self, arc: Arc, instance: Instance) -> float:
        """Planned payment on used arcs, otherwise the offered bound P(s) - P(s') + c."""
        y = self.payments.get(arc)
        if y is None:
            y = self.P(arc.src) - self.P(arc.dst) + instance.cost(arc)
        return y

    def to_json(self, report: "FairnessReport | None" = None) -> dict:
        out = {
            "potential": [{"state": list(s), "P": p} for s, p in sorted(self.potential.items())],
            "payments": [{"from": list(a.src), "to": list(a.dst), "y": y}
                         for a, y in sorted(self.payments.items())],
            "objective": self.objective,
            "kkt_residual": self.kkt_residual,
            "method": self.method,
        }
        if report is not None:
            out["report"] = report.to_json()
        return out

    @classmethod
    def from_json(cls, data: dict) -> "PaymentScheme":
        return cls(
            {State(*r["state"]): float(r["P"]) for r in data["potential"]},
            {Arc(State(*r["from"]), State(*r["to"])): float(r["y"]) for r in data["payments"]},
            float(data.get("objective", 0.0)), data.get("kkt_residual"), data.get("method", ""),
        )


@dataclass
class FairnessReport:
    budget_residual: float
    terminal_violations: list[tuple[State, float]] = field(default_factory=list)
    ir_violations: list[tuple[object, float]] = field(default_factory=list)
    subgame_violations: list[tuple[Arc, float]] = field(default_factory=list)
    equality_violations: list[tuple[Arc, float]] = field(default_factory=list)
    envy_deviation: float = 0.0
    tol: float = 1e-8

    @property
    def passed(self) -> bool:
        return (abs(self.budget_residual) <= self.tol and self.envy_deviation <= self.tol
                and not (self.terminal_violations or self.ir_violations
                         or self.subgame_violations or self.equality_violations))

    @property
    def max_residual(self) -> float:
        worst = [abs(self.budget_residual), self.envy_deviation]
        for group in (self.terminal_violations, self.ir_violations,
                      self.subgame_violations, self.equality_violations):
            worst.extend(abs(v) for _, v in group)
        return max(worst)

    def to_json(self) -> dict:
        def rows(group):
            return [{"where": [list(x) for x in k] if isinstance(k, Arc) else list(k), "amount": v}
                    for k, v in group]
        return {
            "passed": self.passed,
            "tol": self.tol,
            "budget_residual": self.budget_residual,
            "terminal_violations": rows(self.terminal_violations),
            "ir_violations": rows(self.ir_violations),
            "subgame_violations": rows(self.subgame_violations),
            "equality_violations": rows(self.equality_violations),
            "envy_deviation": self.envy_deviation,
        }


def payments_from_potential(potential: Mapping[State, float], plan: DispatchPlan,
                            instance: Instance) -> dict[Arc, float]:
    return {a: potential.get(a.src, 0.0) - potential.get(a.dst, 0.0) + instance.cost(a)
            for a in sorted(plan.arcs) if plan.arcs[a].total > 0}


def surplus(plan: DispatchPlan, income: float | None = None) -> float:
    return (plan.income if income is None else income) - plan.total_cost


def check_fairness(plan: DispatchPlan, scheme: PaymentScheme, income: float | None,
                   instance: Instance, tol: float = 1e-8) -> FairnessReport:
    """Evaluate the four potential conditions: terminal zeros, no profitable
    single-arc deviation, tight non-negative payments on used arcs, budget."""
    P = scheme.P
    income = plan.income if income is None else income
    budget = math.fsum(P(s) * n for s, n in plan.enter.items()) - math.fsum(
        P(s) * n for s, n in plan.leave.items())
    rep = FairnessReport(budget - surplus(plan, income), tol=tol)
    for s in sorted(plan.terminal_states):
        if abs(P(s)) > tol:
            rep.terminal_violations.append((s, P(s)))
    for s, p in sorted(scheme.potential.items()):
        if p < -tol:
            rep.ir_violations.append((s, p))
    for arc in instance.arcs():
        gap = scheme.payment(arc, instance) - instance.cost(arc) - (P(arc.src) - P(arc.dst))
        if gap > tol:
            rep.subgame_violations.append((arc, gap))
    for arc, ap in sorted(plan.arcs.items()):
        if ap.total == 0:
            continue
        if arc not in scheme.payments:
            rep.equality_violations.append((arc, math.nan))
            continue
        margin = scheme.payments[arc] - instance.cost(arc)
        gap = margin - (P(arc.src) - P(arc.dst))
        rep.envy_deviation = max(rep.envy_deviation, abs(gap))
        if abs(gap) > tol:
            rep.equality_violations.append((arc, gap))
        if margin < -tol:
            rep.ir_violations.append((arc, margin))
    return rep


def zero_closure(plan: DispatchPlan) -> set[State]:
    """States whose potential is forced to zero: terminal states and every state
    reached from one through a used arc (payments on used arcs cannot be negative)."""
    out: dict[State, list[State]] = {}
    for arc, ap in plan.arcs.items():
        if ap.total > 0:
            out.setdefault(arc.src, []).append(arc.dst)
    zero = set(plan.terminal_states)
    stack = list(zero)
    while stack:
        for nxt in out.get(stack.pop(), ()):
            if nxt not in zero:
                zero.add(nxt)
                stack.append(nxt)
    return zero


def longest_to_zero(plan: DispatchPlan, instance: Instance, zero: set[State]) -> dict[State, int]:
    """Longest path (order arcs length 1, any admissible arc length 0) from each
    state into the contracted zero set; states that cannot reach it get 0."""
    order_arcs = {a for a, ap in plan.arcs.items() if ap.f_with > 0}
    dist: dict[State, int] = {}
    by_src: dict[State, list[Arc]] = {}
    for arc in instance.arcs():
        by_src.setdefault(arc.src, []).append(arc)
    for sid in reversed(range(instance.n_states)):
        s = instance.state(sid)
        if s in zero:
            dist[s] = 0
            continue
        best = None
        for arc in by_src.get(s, ()):
            d = dist.get(arc.dst)
            if d is None:
                continue
            cand = d + (1 if arc in order_arcs else 0)
            best = cand if best is None else max(best, cand)
        dist[s] = best
    return {s: (d if d is not None else 0) for s, d in dist.items()}


def qp_objective(plan: DispatchPlan, potential: Mapping[State, float], instance: Instance) -> float:
    """Sum over used arcs of F * (per-driver income - payment)^2."""
    total = []
    for arc, ap in plan.arcs.items():
        if ap.total == 0:
            continue
        y = potential.get(arc.src, 0.0) - potential.get(arc.dst, 0.0) + instance.cost(arc)
        total.append(ap.total * (ap.income / ap.total - y) ** 2)
    return math.fsum(total)


def _scheme(plan, instance, potential, method, kkt=None) -> PaymentScheme:
    return PaymentScheme(potential, payments_from_potential(potential, plan, instance),
                         qp_objective(plan, potential, instance), kkt, method)


def constructive_allocation(plan: DispatchPlan, instance: Instance, income: float | None = None,
                            tol: float = 1e-9) -> PaymentScheme:
    """Longest-path potentials scaled to exhaust the surplus."""
    extra = surplus(plan, income)
    if extra < -tol:
        raise FairnessInfeasible(f"income falls short of driving cost by {-extra:g}")
    extra = max(extra, 0.0)
    zero = zero_closure(plan)
    ptil = longest_to_zero(plan, instance, zero)
    denom = sum(ap.total * (ptil[a.src] - ptil[a.dst]) for a, ap in plan.arcs.items() if ap.total > 0)
    if denom == 0:
        if extra <= tol:
            return _scheme(plan, instance, {s: 0.0 for s in ptil}, "constructive")
        raise FairnessInfeasible("no used arc can carry a positive payment margin")
    ratio = extra / denom
    potential = {s: d * ratio for s, d in ptil.items()}
    scheme = _scheme(plan, instance, potential, "constructive")
    rep = check_fairness(plan, scheme, income, instance, tol=max(tol, 1e-9 * max(1.0, abs(extra))))
    if not rep.passed:
        raise FairnessInfeasible(f"constructed potential fails fairness check: {rep.to_json()}")
    return scheme


# -- squared-distortion QP ---------------------------------------------------


@dataclass
class _QP:
    states: list[State]
    H: np.ndarray
    g: np.ndarray
    const: float
    eq: np.ndarray
    rhs: float
    ineq: np.ndarray

    def value(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.g @ x + self.const)


def _build_qp(plan: DispatchPlan, instance: Instance, income: float | None, zero: set[State]) -> _QP:
    used = [(a, ap) for a, ap in sorted(plan.arcs.items()) if ap.total > 0]
    states = sorted({s for a, _ in used for s in a if s not in zero}
                    | {s for s in plan.enter if s not in zero}, key=instance.sid)
    idx = {s: i for i, s in enumerate(states)}
    n = len(states)
    rows, w, d = [], [], []
    ineq = []
    for arc, ap in used:
        row = np.zeros(n)
        if arc.src in idx:
            row[idx[arc.src]] += 1.0
        if arc.dst in idx:
            row[idx[arc.dst]] -= 1.0
        rows.append(row)
        w.append(float(ap.total))
        d.append(ap.income / ap.total - instance.cost(arc))
        if arc.src in idx and arc.dst in idx:
            ineq.append(row)
    A = np.array(rows).reshape(len(rows), n)
    W = np.array(w)
    dv = np.array(d)
    H = 2.0 * A.T @ (W[:, None] * A)
    g = -2.0 * A.T @ (W * dv)
    const = float(np.sum(W * dv * dv))
    ineq.extend(np.eye(n))
    eq = np.zeros(n)
    for s, k in plan.enter.items():
        if s in idx:
            eq[idx[s]] = k
    return _QP(states, H, g, const, eq, surplus(plan, income), np.array(ineq).reshape(len(ineq), n))


def _kkt_residual(qp: _QP, x: np.ndarray, active_tol: float = 1e-9) -> float:
    grad = qp.H @ x + qp.g
    slack = qp.ineq @ x
    act = qp.ineq[slack <= active_tol]
    M = np.column_stack([qp.eq[:, None], act.T]) if len(act) else qp.eq[:, None]
    lb = np.r_[-np.inf, np.zeros(len(act))]
    ub = np.full(M.shape[1], np.inf)
    sol = lsq_linear(M, grad, bounds=(lb, ub), method="bvls", tol=1e-14)
    return float(np.linalg.norm(M @ sol.x - grad, np.inf))


def _active_set(qp: _QP, x: np.ndarray, max_iter: int = 1000, tol: float = 1e-11) -> np.ndarray:
    """Primal active-set method for the convex QP, starting from a feasible point."""
    n = len(x)
    A = qp.ineq
    work = [i for i in range(len(A)) if A[i] @ x <= tol]
    work = _independent(qp.eq, A, work)
    for _ in range(max_iter):
        C = np.vstack([qp.eq[None, :], A[work]]) if work else qp.eq[None, :]
        k = C.shape[0]
        K = np.block([[qp.H, C.T], [C, np.zeros((k, k))]])
        rhs = np.r_[-(qp.H @ x + qp.g), np.zeros(k)]
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        step, lam = sol[:n], -sol[n:]
        if np.max(np.abs(step), initial=0.0) <= 1e-12 * max(1.0, np.max(np.abs(x), initial=0.0)):
            mults = lam[1:]
            if not work or mults.min() >= -1e-12:
                return x
            work.pop(int(np.argmin(mults)))
            continue
        alpha, block = 1.0, None
        for i in range(len(A)):
            if i in work:
                continue
            rate = A[i] @ step
            if rate < -1e-15:
                a = -(A[i] @ x) / rate
                if a < alpha:
                    alpha, block = max(a, 0.0), i
        x = x + alpha * step
        if block is not None:
            work.append(block)
            work = _independent(qp.eq, A, work)
    return x


def _independent(eq: np.ndarray, A: np.ndarray, work: list[int]) -> list[int]:
    kept: list[int] = []
    base = eq[None, :]
    for i in work:
        trial = np.vstack([base, A[i][None, :]])
        if np.linalg.matrix_rank(trial, tol=1e-10) == trial.shape[0]:
            kept.append(i)
            base = trial
    return kept


def qp_allocation(plan: DispatchPlan, instance: Instance, income: float | None = None,
                  tol: float = 1e-8) -> PaymentScheme:
    """Fair potential minimising the F-weighted squared gap between per-driver
    income and payment on every used arc.

    Solved exactly by a primal active-set method warm-started at the
    constructive allocation, so the objective never exceeds the constructive one.
    """
    start = constructive_allocation(plan, instance, income)
    zero = zero_closure(plan)
    qp = _build_qp(plan, instance, income, zero)
    if not qp.states:
        return PaymentScheme(start.potential, start.payments, start.objective, 0.0, "qp")
    x0 = np.array([start.potential[s] for s in qp.states])
    x = _active_set(qp, x0)
    x = np.maximum(x, 0.0)
    potential = dict(start.potential)
    for s, v in zip(qp.states, x):
        potential[s] = float(v)
    scheme = _scheme(plan, instance, potential, "qp", _kkt_residual(qp, x))
    rep = check_fairness(plan, scheme, income, instance, tol)
    if not rep.passed or scheme.objective > start.objective + 1e-9:
        # numerically unlucky solve; fall back to the certified warm start
        return PaymentScheme(start.potential, start.payments, start.objective,
                             _kkt_residual(qp, x0), "qp-fallback")
    return scheme


def driver_utilities(routes: Iterable[DriverRoute], scheme: PaymentScheme, instance: Instance,
                     scale: int | None = None) -> list[float]:
    """Net income per driver, summing y - c over its route.

    Sums are taken in integer money units (potentials rounded once per state)
    so utilities of drivers sharing a start state agree exactly whenever the
    payments are potential-derived.
    """
    scale = scale or money_scale()
    arcs = set(instance.arcs())
    units: dict[State, int] = {}

    def pu(s: State) -> int:
        if s not in units:
            units[s] = int(round(scheme.P(s) * scale))
        return units[s]

    out = []
    for route in routes:
        total = 0
        for arc, _role in route.legs:
            if arc not in scheme.payments and arc not in arcs:
                raise KeyError(f"no payment defined on {arc}")
            tele = pu(arc.src) - pu(arc.dst)
            margin = int(round((scheme.payment(arc, instance) - instance.cost(arc)) * scale))
            # rounding noise resolves to the telescoping value; real gaps are kept
            total += tele if abs(margin - tele) <= 1 else margin
        out.append(total / scale)
    return out


__all__ = [
    "FairnessInfeasible", "PaymentScheme", "FairnessReport", "payments_from_potential",
    "surplus", "check_fairness", "zero_closure", "longest_to_zero", "qp_objective",
    "constructive_allocation", "qp_allocation", "driver_utilities",
]
