"""Critical-path analysis, list scheduling and the conflict-driven core search."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .arch import CoreDims, DesignPoint, counts_fit, make_design
from .config import MetricSpec, SystemConfig
from .errors import CycleError, InfeasibleBudget, NoCoreForAffinity, UnknownNodeError
from .graph import Core

CORE_TYPES = (Core.TENSOR, Core.VECTOR)


def core_types(aff: Core) -> tuple[Core, ...]:
    return CORE_TYPES if aff is Core.BOTH else (aff,)


@dataclass(frozen=True)
class TaskGraph:
    """Scheduling view of a graph: integer durations, affinities, adjacency.

    ``ids`` is a topological order with lexicographic tie-breaking.
    """

    ids: tuple[str, ...]
    dur: Mapping[str, int]
    core: Mapping[str, Core]
    preds: Mapping[str, tuple[str, ...]]
    succs: Mapping[str, tuple[str, ...]]

    @classmethod
    def build(cls, durations: Mapping[str, int], affinities: Mapping[str, Core],
              edges: Iterable[tuple[str, str]]) -> "TaskGraph":
        names = sorted(durations)
        if set(names) != set(affinities):
            raise ValueError("durations and affinities must cover the same ops")
        for k, d in durations.items():
            if int(d) != d or d < 1:
                raise ValueError(f"duration of {k!r} must be a positive integer, got {d!r}")
        preds = {k: [] for k in names}
        succs = {k: [] for k in names}
        for s, d in sorted(set(edges)):
            if s not in preds or d not in preds:
                raise UnknownNodeError(f"edge ({s!r}, {d!r}) names an unknown op")
            succs[s].append(d)
            preds[d].append(s)
        indeg = {k: len(v) for k, v in preds.items()}
        heap = [k for k in names if indeg[k] == 0]
        heapq.heapify(heap)
        order = []
        while heap:
            u = heapq.heappop(heap)
            order.append(u)
            for v in succs[u]:
                indeg[v] -= 1
                if indeg[v] == 0:
                    heapq.heappush(heap, v)
        if len(order) != len(names):
            raise CycleError("task graph has a cycle")
        return cls(
            ids=tuple(order),
            dur={k: int(durations[k]) for k in names},
            core={k: Core(affinities[k]) for k in names},
            preds={k: tuple(v) for k, v in preds.items()},
            succs={k: tuple(v) for k, v in succs.items()},
        )

    @classmethod
    def from_annotated(cls, ag) -> "TaskGraph":
        g = ag.graph.graph
        return cls.build(
            {k: c.latency_cycles for k, c in ag.costs.items()},
            {k: op.affinity for k, op in g.ops.items()},
            g.edges,
        )

    @property
    def edges(self) -> list[tuple[str, str]]:
        return [(u, v) for u in self.ids for v in self.succs[u]]

    def __len__(self) -> int:
        return len(self.ids)

    def uses(self, core: Core) -> bool:
        return any(a.uses(core) for a in self.core.values())

    def serial_sum(self) -> int:
        return sum(self.dur.values())


def as_tasks(x) -> TaskGraph:
    if isinstance(x, TaskGraph):
        return x
    return x.tasks()


@dataclass(frozen=True)
class CriticalInfo:
    asap: Mapping[str, int]
    alap: Mapping[str, int]
    best_latency: int
    critical_ops: frozenset[str]
    slack: Mapping[str, int]


def compute_asap_alap(graph) -> CriticalInfo:
    """Earliest/latest starts with unlimited cores of every type."""
    t = as_tasks(graph)
    asap: dict[str, int] = {}
    for v in t.ids:
        asap[v] = max((asap[u] + t.dur[u] for u in t.preds[v]), default=0)
    best = max((asap[v] + t.dur[v] for v in t.ids), default=0)
    alap: dict[str, int] = {}
    for v in reversed(t.ids):
        alap[v] = min((alap[w] for w in t.succs[v]), default=best) - t.dur[v]
    slack = {v: alap[v] - asap[v] for v in t.ids}
    return CriticalInfo(
        asap=asap,
        alap=alap,
        best_latency=best,
        critical_ops=frozenset(v for v, s in slack.items() if s == 0),
        slack=slack,
    )


def parallelism_bound(graph, info: CriticalInfo | None = None) -> dict[Core, int]:
    """Peak number of simultaneously running ops per core type in the ASAP schedule."""
    t = as_tasks(graph)
    info = info or compute_asap_alap(t)
    bound = {}
    for c in CORE_TYPES:
        events = []
        for v in t.ids:
            if t.core[v].uses(c):
                events.append((info.asap[v], 1))
                events.append((info.asap[v] + t.dur[v], -1))
        events.sort()  # ends (-1) sort before starts at the same instant
        live = peak = 0
        for _, delta in events:
            live += delta
            peak = max(peak, live)
        bound[c] = peak
    return bound


@dataclass(frozen=True)
class Schedule:
    start: Mapping[str, int]
    core_index: Mapping[str, tuple[tuple[Core, int], ...]]
    makespan: int
    core_counts: tuple[int, int]
    durations: Mapping[str, int] = field(default_factory=dict)
    ready: Mapping[str, int] = field(default_factory=dict)

    def finish(self, op: str) -> int:
        return self.start[op] + self.durations[op]

    def to_dict(self) -> dict:
        return {
            "makespan": self.makespan,
            "core_counts": list(self.core_counts),
            "start": dict(sorted(self.start.items())),
            "latency": dict(sorted(self.durations.items())),
            "core_index": {
                k: [[c.value, i] for c, i in v] for k, v in sorted(self.core_index.items())
            },
        }


def count_for(counts: tuple[int, int], core: Core) -> int:
    return counts[0] if core is Core.TENSOR else counts[1]


def list_schedule(graph, counts: tuple[int, int], info: CriticalInfo | None = None) -> Schedule:
    """Event-driven list scheduling, critical ops first.

    Ready ops are ranked by (slack, asap, id); at each event every ready op
    that finds a free core of each type it needs starts immediately.
    """
    t = as_tasks(graph)
    info = info or compute_asap_alap(t)
    num_tc, num_vc = counts
    for v in t.ids:
        for c in core_types(t.core[v]):
            if count_for(counts, c) < 1:
                raise NoCoreForAffinity(f"op {v!r} needs a {c.value} core but the design has none")

    free = {Core.TENSOR: list(range(num_tc)), Core.VECTOR: list(range(num_vc))}
    remaining = {v: len(t.preds[v]) for v in t.ids}
    ready_at = {v: 0 for v in t.ids if remaining[v] == 0}
    ready = sorted((info.slack[v], info.asap[v], v) for v in ready_at)
    running: list[tuple[int, str]] = []
    start: dict[str, int] = {}
    where: dict[str, tuple[tuple[Core, int], ...]] = {}
    now = 0
    while len(start) < len(t.ids):
        waiting = []
        for item in ready:
            v = item[2]
            need = core_types(t.core[v])
            if all(free[c] for c in need):
                slots = tuple((c, heapq.heappop(free[c])) for c in need)
                start[v] = now
                where[v] = slots
                heapq.heappush(running, (now + t.dur[v], v))
            else:
                waiting.append(item)
        ready = waiting
        if not running:
            break
        now = running[0][0]
        while running and running[0][0] == now:
            _, u = heapq.heappop(running)
            for c, i in where[u]:
                heapq.heappush(free[c], i)
            for w in t.succs[u]:
                remaining[w] -= 1
                if remaining[w] == 0:
                    ready_at[w] = now
                    ready.append((info.slack[w], info.asap[w], w))
        ready.sort()
    makespan = max((start[v] + t.dur[v] for v in t.ids), default=0)
    return Schedule(
        start=start,
        core_index=where,
        makespan=makespan,
        core_counts=(num_tc, num_vc),
        durations=dict(t.dur),
        ready=ready_at,
    )


def conflict_waits(graph, sched: Schedule, info: CriticalInfo) -> dict[Core, int]:
    """Cycles that ops lost waiting for a core while pushed past their ALAP start.

    Any such op stretches the makespan beyond the unlimited-core latency, so
    the blamed core types are those the op needed.
    """
    t = as_tasks(graph)
    waits = {c: 0 for c in CORE_TYPES}
    for v in t.ids:
        wait = sched.start[v] - sched.ready[v]
        if wait > 0 and sched.start[v] > info.alap[v]:
            for c in core_types(t.core[v]):
                waits[c] += wait
    return waits


@dataclass(frozen=True)
class CoreSearch:
    visited: list[tuple[tuple[int, int], Schedule]]
    stop_reason: str
    bound: Mapping[Core, int]
    info: CriticalInfo


def search_core_counts(graph, dims: CoreDims, cfg: SystemConfig) -> CoreSearch:
    """Grow core counts from one of each needed type, one core per iteration."""
    t = as_tasks(graph)
    info = compute_asap_alap(t)
    bound = parallelism_bound(t, info)
    counts = tuple(1 if t.uses(c) else 0 for c in CORE_TYPES)
    if counts == (0, 0):
        counts = (1, 0)
    if not counts_fit(counts[0], counts[1], dims, cfg):
        raise InfeasibleBudget(f"even {counts} cores at {dims} exceed the area/power budget")
    visited = []
    while True:
        sched = list_schedule(t, counts, info)
        visited.append((counts, sched))
        if sched.makespan <= info.best_latency:
            return CoreSearch(visited, "best_latency", bound, info)
        waits = conflict_waits(t, sched, info)
        blamed = sorted((c for c in CORE_TYPES if waits[c] > 0),
                        key=lambda c: (-waits[c], CORE_TYPES.index(c)))
        if not blamed:
            return CoreSearch(visited, "no_conflict", bound, info)
        nxt = None
        reasons = []
        for c in blamed:
            cand = (counts[0] + 1, counts[1]) if c is Core.TENSOR else (counts[0], counts[1] + 1)
            if count_for(cand, c) > bound[c]:
                reasons.append("bound")
                continue
            if not counts_fit(cand[0], cand[1], dims, cfg):
                reasons.append("budget")
                continue
            nxt = cand
            break
        if nxt is None:
            return CoreSearch(visited, reasons[0], bound, info)
        counts = nxt


def heuristic_core_search(ag, cfg: SystemConfig, metric: MetricSpec, *,
                          samples_per_iteration: float | None = None,
                          dims: CoreDims | None = None) -> list[tuple[DesignPoint, Schedule]]:
    """Visited designs at fixed dims, best first under ``metric``."""
    from .metrics import design_metric, rank_key

    dims = dims or ag.dims
    if samples_per_iteration is None:
        samples_per_iteration = getattr(getattr(ag, "graph", None), "batch_size", 1)
    res = search_core_counts(ag, dims, cfg)
    scored = []
    for (ntc, nvc), sched in res.visited:
        d = make_design(ntc, dims, nvc, cfg)
        value = design_metric(metric, d, sched.makespan, samples_per_iteration, cfg)
        scored.append((rank_key(value, d), d, sched))
    scored.sort(key=lambda x: x[0])
    return [(d, s) for _, d, s in scored]
