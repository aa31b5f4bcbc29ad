"""Time-indexed integer program for joint core-count and schedule optimization.

The instance mirrors the textbook formulation: binary ``y[v, t]`` marks the
start slot of ``v``; integer ``x[c]`` counts cores of type ``c``.  Constraint
families are (1) one start per op, (2) sliding-window capacity per slot and
core type, (3) start-time precedence.  A zero-length sink ``v*`` follows every
op and objective one minimizes its start; objective two minimizes normalized
area plus power among makespan-optimal solutions.

:func:`solve` is an in-repo exact branch and bound.  It enumerates core counts
up to the ASAP parallelism bound in increasing cost and, for each, searches
serial schedule-generation orders restricted to non-decreasing (start, id)
keys.  That restriction still reaches every active schedule, and an active
schedule is always makespan-optimal among some.  :class:`HighsBackend` solves
the same instance with HiGHS through :func:`scipy.optimize.milp`.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import reduce
from typing import Mapping

import numpy as np

from .arch import CoreDims, unit_area, unit_power
from .config import SystemConfig
from .errors import HorizonTooSmall
from .graph import Core
from .schedule import CORE_TYPES, Schedule, TaskGraph, as_tasks, compute_asap_alap, core_types, parallelism_bound

SINK = "__sink__"
MAX_SLOTS = 10_000


class Status(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class SolveLimits:
    node_budget: int = 2_000_000


def slot_size(latencies, cap: int = MAX_SLOTS) -> int:
    """Cycles per slot: gcd of latencies, coarsened so the serial sum fits ``cap`` slots."""
    lat = [int(x) for x in latencies]
    if not lat:
        return 1
    g = reduce(math.gcd, lat)
    total = sum(lat)
    if math.ceil(total / g) > cap:
        g = math.ceil(total / cap)
    return g


@dataclass(frozen=True)
class IlpInstance:
    ops: tuple[str, ...]
    dur: Mapping[str, int]
    edges: tuple[tuple[str, str], ...]
    mapping: Mapping[str, Core]
    unit_area: Mapping[Core, float]
    unit_power: Mapping[Core, float]
    area_limit: float
    power_limit: float
    horizon: int
    slot_cycles: int = 1
    x_bound: Mapping[Core, int] = field(default_factory=dict)

    @property
    def core_types(self) -> tuple[Core, ...]:
        return tuple(c for c in CORE_TYPES if any(a.uses(c) for a in self.mapping.values()))

    def tasks(self) -> TaskGraph:
        return TaskGraph.build(self.dur, self.mapping, self.edges)

    def start_range(self, v: str) -> range:
        return range(0, self.horizon - self.dur[v] + 1)

    @property
    def variables(self) -> list[tuple[str, int]]:
        """All ``y[v, t]`` of real ops (the sink's are separate)."""
        return [(v, t) for v in self.ops for t in self.start_range(v)]

    @property
    def sink_variables(self) -> list[tuple[str, int]]:
        return [(SINK, t) for t in range(self.horizon + 1)]

    def cost(self, x: Mapping[Core, int]) -> float:
        """Objective two: area and power, each normalized by its budget."""
        a = sum(x.get(c, 0) * self.unit_area[c] for c in CORE_TYPES)
        p = sum(x.get(c, 0) * self.unit_power[c] for c in CORE_TYPES)
        return a / self.area_limit + p / self.power_limit

    def fits(self, x: Mapping[Core, int]) -> bool:
        a = sum(x.get(c, 0) * self.unit_area[c] for c in CORE_TYPES)
        p = sum(x.get(c, 0) * self.unit_power[c] for c in CORE_TYPES)
        return a <= self.area_limit and p <= self.power_limit

    def count_candidates(self) -> list[dict[Core, int]]:
        """Budget-feasible core counts, cheapest first."""
        used = self.core_types
        ranges = [range(1, self.x_bound[c] + 1) if c in used else range(0, 1) for c in CORE_TYPES]
        out = []
        for combo in itertools.product(*ranges):
            x = dict(zip(CORE_TYPES, combo))
            if sum(combo) >= 1 and self.fits(x):
                out.append(x)
        out.sort(key=lambda x: (self.cost(x), tuple(x[c] for c in CORE_TYPES)))
        return out

    def to_lp_text(self) -> str:
        """CPLEX-LP dump of objective one and constraints (1)-(3) plus budgets."""
        idx = {v: i for i, v in enumerate(self.ops)}

        def y(v, t):
            return "ys_%d" % t if v == SINK else "y_%d_%d" % (idx[v], t)

        xname = {Core.TENSOR: "x_tc", Core.VECTOR: "x_vc"}
        lines = ["\\ time-indexed core/schedule program; y_i_t: op i starts at slot t"]
        for v in self.ops:
            lines.append(f"\\ op {idx[v]} = {v} (dur {self.dur[v]}, {self.mapping[v].value})")
        lines.append("\\ secondary objective: minimize area/A + power/P at the optimal makespan")
        lines.append("Minimize")
        terms = " + ".join(f"{t} {y(SINK, t)}" for t in range(1, self.horizon + 1)) or f"0 {y(SINK, 0)}"
        lines.append(f" makespan: {terms}")
        lines.append("Subject To")
        for v in self.ops:
            lines.append(f" once_{idx[v]}: " + " + ".join(y(v, t) for t in self.start_range(v)) + " = 1")
        lines.append(" once_sink: " + " + ".join(y(SINK, t) for t in range(self.horizon + 1)) + " = 1")
        for c in self.core_types:
            for t in range(self.horizon):
                terms = [
                    y(v, tp)
                    for v in self.ops if self.mapping[v].uses(c)
                    for tp in range(max(0, t - self.dur[v] + 1), t + 1)
                    if tp in self.start_range(v)
                ]
                if terms:
                    lines.append(f" cap_{c.value}_{t}: " + " + ".join(terms) + f" - {xname[c]} <= 0")

        def weighted(v):
            rng = range(self.horizon + 1) if v == SINK else self.start_range(v)
            return [(t, y(v, t)) for t in rng if t > 0]

        prec = list(self.edges) + [(v, SINK) for v in self.ops]
        for n, (u, v) in enumerate(prec):
            parts = [f"+ {t} {name}" for t, name in weighted(v)] + [f"- {t} {name}" for t, name in weighted(u)]
            body = " ".join(parts) if parts else f"0 {y(v, 0)}"
            lines.append(f" prec_{n}: {body} >= {self.dur[u]}")
        used = self.core_types
        if used:
            lines.append(" area: " + " + ".join(f"{self.unit_area[c]:.12g} {xname[c]}" for c in used)
                         + f" <= {self.area_limit:.12g}")
            lines.append(" power: " + " + ".join(f"{self.unit_power[c]:.12g} {xname[c]}" for c in used)
                         + f" <= {self.power_limit:.12g}")
        lines.append("Bounds")
        for c in used:
            lines.append(f" 1 <= {xname[c]} <= {self.x_bound[c]}")
        lines.append("Binary")
        names = [y(v, t) for v, t in self.variables] + [y(SINK, t) for t in range(self.horizon + 1)]
        for i in range(0, len(names), 10):
            lines.append(" " + " ".join(names[i:i + 10]))
        if used:
            lines.append("General")
            lines.append(" " + " ".join(xname[c] for c in used))
        lines.append("End")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class IlpSolution:
    x: Mapping[Core, int]
    starts: Mapping[str, int]
    objective_makespan: int
    status: Status
    cost: float = math.inf
    nodes: int = 0
    slot_cycles: int = 1

    @property
    def y(self) -> dict[tuple[str, int], int]:
        """Non-zero entries of the start-slot indicator."""
        out = {(v, t): 1 for v, t in self.starts.items()}
        if self.status is Status.OPTIMAL:
            out[(SINK, self.objective_makespan)] = 1
        return out

    @property
    def makespan_cycles(self) -> int:
        return self.objective_makespan * self.slot_cycles

    def counts(self) -> tuple[int, int]:
        return self.x.get(Core.TENSOR, 0), self.x.get(Core.VECTOR, 0)


def _from_tasks(t: TaskGraph, dims: CoreDims, cfg: SystemConfig, horizon: int | None,
                slot_cycles: int | None = None) -> IlpInstance:
    g = slot_cycles or slot_size(t.dur.values())
    dur = {v: math.ceil(t.dur[v] / g) for v in t.ids}
    slotted = TaskGraph.build(dur, t.core, t.edges)
    info = compute_asap_alap(slotted)
    if horizon is None:
        horizon = slotted.serial_sum()
    if horizon < info.best_latency:
        raise HorizonTooSmall(f"horizon {horizon} slots < critical path {info.best_latency} slots")
    cm = cfg.cost_model
    bound = parallelism_bound(slotted, info)
    return IlpInstance(
        ops=slotted.ids,
        dur=dur,
        edges=tuple(slotted.edges),
        mapping=dict(slotted.core),
        unit_area={c: unit_area(c, dims, cfg) for c in CORE_TYPES},
        unit_power={c: unit_power(c, dims, cfg) for c in CORE_TYPES},
        area_limit=cfg.area_budget_mm2 - cm.a_fixed,
        power_limit=cfg.power_budget_w - cm.p_fixed,
        horizon=horizon,
        slot_cycles=g,
        x_bound=bound,
    )


def build_instance(ag, cfg: SystemConfig, T: int | None = None, *, dims: CoreDims | None = None,
                   slot_cycles: int | None = None) -> IlpInstance:
    """Instance for an annotated graph (or a TaskGraph plus ``dims``).

    ``T`` is the horizon in slots and defaults to the serial sum.  The slot
    size defaults to :func:`slot_size` of the latencies.
    """
    dims = dims or ag.dims
    return _from_tasks(as_tasks(ag), dims, cfg, T, slot_cycles)


class _Timeout(Exception):
    pass


class _Search:
    """Branch and bound for the minimum makespan at fixed core counts."""

    def __init__(self, inst: IlpInstance, budget: int):
        self.inst = inst
        t = inst.tasks()
        self.t = t
        info = compute_asap_alap(t)
        self.asap = info.asap
        self.slack = info.slack
        self.best_latency = info.best_latency
        tail = {}
        for v in reversed(t.ids):
            tail[v] = t.dur[v] + max((tail[w] for w in t.succs[v]), default=0)
        self.tail = tail
        self.need = {v: core_types(t.core[v]) for v in t.ids}
        self.budget = budget
        self.nodes = 0

    def lower_bound(self, x: Mapping[Core, int]) -> int:
        lb = self.best_latency
        for c in CORE_TYPES:
            work = sum(self.t.dur[v] for v in self.t.ids if c in self.need[v])
            if work:
                lb = max(lb, math.ceil(work / x[c]))
        return lb

    def run(self, x: Mapping[Core, int], ub: int):
        """Best schedule with makespan <= ub, or None."""
        t = self.t
        n = len(t.ids)
        if n == 0:
            return 0, {}
        if self.lower_bound(x) > ub:
            return None
        horizon = ub + max(t.dur.values()) + 1
        usage = {c: [0] * horizon for c in CORE_TYPES}
        cap = {c: x[c] for c in CORE_TYPES}
        start: dict[str, int] = {}
        finish: dict[str, int] = {}
        npred = {v: len(t.preds[v]) for v in t.ids}
        best = [None, ub]

        def earliest(v, lo):
            d = t.dur[v]
            need = self.need[v]
            s = lo
            while s + d <= best[1]:
                clash = -1
                for c in need:
                    row = usage[c]
                    for tt in range(s, s + d):
                        if row[tt] >= cap[c]:
                            clash = max(clash, tt)
                            break
                if clash < 0:
                    return s
                s = clash + 1
            return None

        def dfs(last_key, cur_max):
            self.nodes += 1
            if self.nodes > self.budget:
                raise _Timeout
            if len(start) == n:
                if cur_max <= best[1]:
                    best[0] = dict(start)
                    best[1] = cur_max - 1
                return
            unplaced = [v for v in t.ids if v not in start]
            lb = cur_max
            elig = []
            est = {}
            for v in unplaced:
                e = max((finish[u] for u in t.preds[v] if u in finish), default=0)
                e = est[v] = max(e, self.asap[v])
                lb = max(lb, e + self.tail[v])
                if npred[v] == 0:
                    elig.append((e, v))
            if lb > best[1]:
                return
            for c in CORE_TYPES:
                mine = [v for v in unplaced if c in self.need[v]]
                if mine:
                    # capacity already taken after the earliest start only raises this bound
                    lo = min(est[v] for v in mine)
                    if lo + math.ceil(sum(t.dur[v] for v in mine) / cap[c]) > best[1]:
                        return
            options = []
            for est, v in elig:
                s = earliest(v, est)
                if s is None or (s, v) <= last_key or s + self.tail[v] > best[1]:
                    continue
                options.append((s, self.slack[v], v))
            options.sort()
            for s, _, v in options:
                if s + self.tail[v] > best[1]:
                    continue
                d = t.dur[v]
                for c in self.need[v]:
                    row = usage[c]
                    for tt in range(s, s + d):
                        row[tt] += 1
                start[v] = s
                finish[v] = s + d
                for w in t.succs[v]:
                    npred[w] -= 1
                dfs((s, v), max(cur_max, s + d))
                for w in t.succs[v]:
                    npred[w] += 1
                del start[v], finish[v]
                for c in self.need[v]:
                    row = usage[c]
                    for tt in range(s, s + d):
                        row[tt] -= 1

        dfs((-1, ""), 0)
        if best[0] is None:
            return None
        ms = max(best[0][v] + t.dur[v] for v in t.ids)
        return ms, best[0]


def solve(inst: IlpInstance, limits: SolveLimits = SolveLimits()) -> IlpSolution:
    """Lexicographic optimum: minimum makespan, then minimum normalized area+power."""
    if not inst.ops:
        return IlpSolution({c: 0 for c in CORE_TYPES}, {}, 0, Status.OPTIMAL, 0.0, 0, inst.slot_cycles)
    search = _Search(inst, limits.node_budget)
    best = None
    try:
        for x in inst.count_candidates():
            ub = inst.horizon if best is None else best[0] - 1
            if best is not None and best[0] == search.best_latency:
                break
            found = search.run(x, ub)
            if found is not None:
                best = (found[0], x, found[1])
    except _Timeout:
        if best is None:
            return IlpSolution({}, {}, -1, Status.TIMEOUT, math.inf, search.nodes, inst.slot_cycles)
        ms, x, starts = best
        return IlpSolution(x, starts, ms, Status.TIMEOUT, inst.cost(x), search.nodes, inst.slot_cycles)
    if best is None:
        return IlpSolution({}, {}, -1, Status.INFEASIBLE, math.inf, search.nodes, inst.slot_cycles)
    ms, x, starts = best
    return IlpSolution(x, starts, ms, Status.OPTIMAL, inst.cost(x), search.nodes, inst.slot_cycles)


def solution_schedule(inst: IlpInstance, sol: IlpSolution, durations: Mapping[str, int]) -> Schedule:
    """Cycle-level :class:`Schedule` from slot starts, cores assigned greedily.

    ``durations`` are the unslotted cycle latencies; each fits inside its
    slotted window, so precedence and capacity carry over.
    """
    g = inst.slot_cycles
    start = {v: t * g for v, t in sol.starts.items()}
    counts = sol.counts()
    free = {Core.TENSOR: list(range(counts[0])), Core.VECTOR: list(range(counts[1]))}
    busy: list[tuple[int, str]] = []
    where: dict[str, tuple[tuple[Core, int], ...]] = {}
    for v in sorted(start, key=lambda v: (start[v], v)):
        while busy and busy[0][0] <= start[v]:
            _, u = heapq.heappop(busy)
            for c, i in where[u]:
                heapq.heappush(free[c], i)
        where[v] = tuple((c, heapq.heappop(free[c])) for c in core_types(inst.mapping[v]))
        heapq.heappush(busy, (start[v] + durations[v], v))
    makespan = max((start[v] + durations[v] for v in start), default=0)
    return Schedule(start, where, makespan, counts, dict(durations), {})


def budget_maximal_counts(inst: IlpInstance) -> list[dict[Core, int]]:
    cands = inst.count_candidates()
    keys = [tuple(x[c] for c in CORE_TYPES) for x in cands]
    out = []
    for x, k in zip(cands, keys):
        dominated = any(o != k and all(a >= b for a, b in zip(o, k)) for o in keys)
        if not dominated:
            out.append(x)
    return out


def min_horizon(ag, cfg: SystemConfig, *, dims: CoreDims | None = None,
                slot_cycles: int | None = None, limits: SolveLimits = SolveLimits()) -> int:
    """Smallest feasible horizon (slots) by binary search between the critical
    path and the serial sum, using budget-maximal core counts."""
    inst = build_instance(ag, cfg, dims=dims, slot_cycles=slot_cycles)
    if not inst.ops:
        return 0
    search = _Search(inst, limits.node_budget)
    maximal = budget_maximal_counts(inst)
    if not maximal:
        raise HorizonTooSmall("no core counts fit the budget; no horizon is feasible")

    def feasible(T):
        return any(search.run(x, T) is not None for x in maximal)

    lo, hi = search.best_latency, inst.tasks().serial_sum()
    while lo < hi:
        mid = (lo + hi) // 2
        if feasible(mid):
            hi = mid
        else:
            lo = mid + 1
    return lo


class HighsBackend:
    """Solve an :class:`IlpInstance` with HiGHS via ``scipy.optimize.milp``.

    Two passes implement the lexicographic objectives: the first minimizes the
    sink start; the second fixes it and minimizes normalized area + power.
    """

    def __init__(self, time_limit: float = 60.0):
        self.time_limit = time_limit

    def _matrices(self, inst: IlpInstance):
        from scipy.optimize import Bounds, LinearConstraint

        cols = inst.variables + inst.sink_variables
        used = inst.core_types
        col = {key: i for i, key in enumerate(cols)}
        xcol = {c: len(cols) + i for i, c in enumerate(used)}
        nvar = len(cols) + len(used)
        rows, lo, hi = [], [], []

        def add(coeffs, l, h):
            r = np.zeros(nvar)
            for j, a in coeffs:
                r[j] += a
            rows.append(r)
            lo.append(l)
            hi.append(h)

        for v in list(inst.ops) + [SINK]:
            rng = range(inst.horizon + 1) if v == SINK else inst.start_range(v)
            add([(col[(v, t)], 1.0) for t in rng], 1, 1)
        for c in used:
            for t in range(inst.horizon):
                coeffs = [
                    (col[(v, tp)], 1.0)
                    for v in inst.ops if inst.mapping[v].uses(c)
                    for tp in range(max(0, t - inst.dur[v] + 1), t + 1)
                    if (v, tp) in col
                ]
                if coeffs:
                    add(coeffs + [(xcol[c], -1.0)], -np.inf, 0)
        prec = list(inst.edges) + [(v, SINK) for v in inst.ops]
        for u, v in prec:
            rv = range(inst.horizon + 1) if v == SINK else inst.start_range(v)
            coeffs = [(col[(v, t)], float(t)) for t in rv] + [(col[(u, t)], -float(t)) for t in inst.start_range(u)]
            add(coeffs, inst.dur[u], np.inf)
        if used:
            add([(xcol[c], inst.unit_area[c]) for c in used], -np.inf, inst.area_limit)
            add([(xcol[c], inst.unit_power[c]) for c in used], -np.inf, inst.power_limit)
        A = np.array(rows) if rows else np.zeros((0, nvar))
        lower = np.zeros(nvar)
        upper = np.ones(nvar)
        for c in used:
            lower[xcol[c]] = 1
            upper[xcol[c]] = inst.x_bound[c]
        makespan = np.zeros(nvar)
        for t in range(inst.horizon + 1):
            makespan[col[(SINK, t)]] = t
        cost = np.zeros(nvar)
        for c in used:
            cost[xcol[c]] = inst.unit_area[c] / inst.area_limit + inst.unit_power[c] / inst.power_limit
        return cols, xcol, A, np.array(lo), np.array(hi), Bounds(lower, upper), makespan, cost, LinearConstraint

    def solve(self, inst: IlpInstance) -> IlpSolution:
        from scipy.optimize import milp

        if not inst.ops:
            return IlpSolution({c: 0 for c in CORE_TYPES}, {}, 0, Status.OPTIMAL, 0.0)
        cols, xcol, A, lo, hi, bounds, makespan, cost, LC = self._matrices(inst)
        integ = np.ones(len(makespan))
        opts = {"time_limit": self.time_limit}
        first = milp(makespan, constraints=[LC(A, lo, hi)], integrality=integ, bounds=bounds, options=opts)
        if first.status == 2:
            return IlpSolution({}, {}, -1, Status.INFEASIBLE)
        if first.x is None:
            return IlpSolution({}, {}, -1, Status.TIMEOUT)
        ms = int(round(first.fun))
        A2 = np.vstack([A, makespan])
        second = milp(cost, constraints=[LC(A2, np.append(lo, -np.inf), np.append(hi, ms))],
                      integrality=integ, bounds=bounds, options=opts)
        sol = second.x if second.x is not None else first.x
        starts = {v: t for (v, t), j in zip(cols, range(len(cols))) if v != SINK and sol[j] > 0.5}
        x = {c: 0 for c in CORE_TYPES}
        for c, j in xcol.items():
            x[c] = int(round(sol[j]))
        return IlpSolution(x, starts, ms, Status.OPTIMAL, inst.cost(x), 0, inst.slot_cycles)
