"""Per-accelerator search: core dimensions largest-first, subtree pruning, top-k.

The tensor-core tree starts at the largest array and halves rows (left child)
or columns (right child) per level; the vector-core sweep is a chain halving
the lane count.  Each dims node is scored by the best design the core-count
search finds there.  A node's children are kept or dropped by comparing them
with the node:

* exactly some children better: keep those, prune the rest;
* all children better: keep all;
* no child better: look ``hysteresis_levels`` further down; prune everything
  unless some node in that band beats the original parent, in which case the
  walk resumes from the first such node.

Because halving rows then columns reaches the same dims as the reverse, the
"tree" is really a lattice; a node is evaluated once and expanded at most once.
"""

from __future__ import annotations

import math
from collections import deque
from concurrent.futures import Executor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Mapping, Sequence

from .arch import CoreDims, DesignPoint, counts_fit, make_design
from .config import MetricSpec, SearchSpace, SystemConfig
from .cost import AnnotatedGraph, annotate
from .errors import InfeasibleBudget, NoCoreForAffinity
from .graph import TrainingGraph
from .ilp import SolveLimits, Status, build_instance, solution_schedule, solve
from .metrics import rank_key, score, throughput
from .schedule import CORE_TYPES, Schedule, TaskGraph, list_schedule, search_core_counts


class Engine(str, Enum):
    HEURISTIC = "heuristic"
    ILP = "ilp"


class NodeState(str, Enum):
    UNEVALUATED = "unevaluated"
    EVALUATED = "evaluated"
    PRUNED = "pruned"


@dataclass(frozen=True)
class Candidate:
    """One scored design.  ``per_workload`` is filled by common searches."""

    design: DesignPoint
    value: float
    makespan: int
    throughput: float
    schedule: Schedule | None = None
    per_workload: Mapping[str, float] = field(default_factory=dict)

    def summary(self) -> dict:
        out = {
            "design": self.design.to_dict(),
            "label": self.design.label,
            "metric": _finite(self.value),
            "makespan_cycles": self.makespan,
            "throughput": _finite(self.throughput),
        }
        if self.per_workload:
            out["per_workload"] = {k: _finite(v) for k, v in sorted(self.per_workload.items())}
        return out


def _finite(v: float):
    return v if math.isfinite(v) else None


@dataclass(frozen=True)
class DimEval:
    dims: CoreDims
    best: Candidate | None
    visited: tuple[Candidate, ...]
    status: str = "ok"

    @property
    def value(self) -> float:
        return self.best.value if self.best is not None else -math.inf


def _better(c: Candidate, d: Candidate) -> bool:
    return rank_key(c.value, c.design) < rank_key(d.value, d.design)


def _best_of(cands: Iterable[Candidate]) -> Candidate | None:
    best = None
    for c in cands:
        if best is None or _better(c, best):
            best = c
    return best


def _start_counts(t: TaskGraph) -> tuple[int, int]:
    counts = tuple(1 if t.uses(c) else 0 for c in CORE_TYPES)
    return counts if counts != (0, 0) else (1, 0)


def _candidate(metric: MetricSpec, counts, dims, sched: Schedule, samples, cfg) -> Candidate:
    d = make_design(counts[0], dims, counts[1], cfg)
    thr = throughput(samples, cfg.clock_hz, sched.makespan)
    return Candidate(d, score(metric, thr, d.tdp_watts), sched.makespan, thr, sched)


def evaluate_dims(dims: CoreDims, g: TrainingGraph, cfg: SystemConfig, metric: MetricSpec,
                  engine: Engine = Engine.HEURISTIC, *, samples: float | None = None,
                  limits: SolveLimits = SolveLimits(node_budget=200_000),
                  annotated: AnnotatedGraph | None = None) -> DimEval:
    """Best design at ``dims`` plus every design the core-count search visited.

    The ILP engine falls back to the heuristic when the exact search runs out
    of nodes; the returned status says so.
    """
    engine = Engine(engine)
    samples = g.batch_size if samples is None else samples
    ag = annotated or annotate(g, dims, cfg)
    t = ag.tasks()
    start = _start_counts(t)
    if not counts_fit(start[0], start[1], dims, cfg):
        raise InfeasibleBudget(f"a single core of each needed type at {dims} exceeds the budget")
    status = "ok"
    if engine is Engine.ILP:
        inst = build_instance(t, cfg, dims=dims)
        sol = solve(inst, limits)
        if sol.status is Status.OPTIMAL:
            sched = solution_schedule(inst, sol, t.dur)
            c = _candidate(metric, sol.counts(), dims, sched, samples, cfg)
            return DimEval(dims, c, (c,), status)
        status = f"{sol.status.value}-fallback"
    res = search_core_counts(t, dims, cfg)
    visited = tuple(_candidate(metric, counts, dims, s, samples, cfg) for counts, s in res.visited)
    return DimEval(dims, _best_of(visited), visited, status)


def evaluate_common_dims(dims: CoreDims, graphs: Mapping[str, TrainingGraph], cfg: SystemConfig,
                         metric: MetricSpec, engine: Engine = Engine.HEURISTIC, *,
                         limits: SolveLimits = SolveLimits(node_budget=200_000)) -> DimEval:
    """One design shared by several workloads, ranked by the weighted metric.

    Every core count visited for any workload is scored on all of them; a
    workload that cannot run on a count (missing core type) scores ``-inf``.
    """
    weights = metric.weights_for(graphs)
    per = {name: evaluate_dims(dims, g, cfg, metric, engine, limits=limits) for name, g in graphs.items()}
    tasks = {name: annotate(g, dims, cfg).tasks() for name, g in graphs.items()}
    counts = sorted({c.design.counts() for ev in per.values() for c in ev.visited})
    cands = []
    for cnt in counts:
        d = make_design(cnt[0], dims, cnt[1], cfg)
        values = {}
        makespans = {}
        for name, g in graphs.items():
            try:
                sched = list_schedule(tasks[name], cnt)
            except NoCoreForAffinity:
                values[name] = -math.inf
                continue
            makespans[name] = sched.makespan
            thr = throughput(g.batch_size, cfg.clock_hz, sched.makespan)
            values[name] = score(metric, thr, d.tdp_watts)
        avg = weighted_average(values, weights)
        cands.append(Candidate(d, avg, max(makespans.values(), default=0), math.nan, None, values))
    status = "ok" if all(ev.status == "ok" for ev in per.values()) else "fallback"
    return DimEval(dims, _best_of(cands), tuple(cands), status)


def weighted_average(values: Mapping[str, float], weights: Mapping[str, float]) -> float:
    if any(values[k] == -math.inf for k in weights):
        return -math.inf
    return sum(weights[k] * values[k] for k in weights)


@dataclass
class TopK:
    k: int
    entries: list[Candidate] = field(default_factory=list)

    @classmethod
    def from_candidates(cls, k: int, cands: Iterable[Candidate]) -> "TopK":
        if k < 1:
            raise ValueError("k must be >= 1")
        best: dict[tuple, Candidate] = {}
        for c in cands:
            key = c.design.key
            if key not in best or _better(c, best[key]):
                best[key] = c
        ranked = sorted(best.values(), key=lambda c: rank_key(c.value, c.design))
        return cls(k, ranked[:k])

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def top(self) -> Candidate:
        return self.entries[0]

    def to_list(self) -> list[dict]:
        return [dict(rank=i + 1, **c.summary()) for i, c in enumerate(self.entries)]


class DimTree:
    """Dimension lattice for one core type; the other core's dims stay fixed."""

    def __init__(self, phase: str, fixed: CoreDims, space: SearchSpace):
        if phase not in ("tc", "vc"):
            raise ValueError(f"unknown phase {phase!r}")
        self.phase = phase
        self.fixed = fixed
        self.space = space
        self.state: dict[CoreDims, NodeState] = {}
        self.value: dict[CoreDims, float] = {}

    @property
    def root(self) -> CoreDims:
        s = self.space
        if self.phase == "tc":
            return CoreDims(s.max_rows, s.max_cols, self.fixed.vc_width)
        return CoreDims(self.fixed.tc_rows, self.fixed.tc_cols, s.max_width)

    def _half(self, v: int) -> int | None:
        b = self.space.step_base
        if v % b or v // b < self.space.min_dim:
            return None
        return v // b

    def children(self, d: CoreDims) -> list[CoreDims]:
        out = []
        if self.phase == "tc":
            r = self._half(d.tc_rows)
            if r is not None:
                out.append(CoreDims(r, d.tc_cols, d.vc_width))
            c = self._half(d.tc_cols)
            if c is not None:
                out.append(CoreDims(d.tc_rows, c, d.vc_width))
        else:
            w = self._half(d.vc_width)
            if w is not None:
                out.append(CoreDims(d.tc_rows, d.tc_cols, w))
        return out

    def band(self, nodes: Sequence[CoreDims], levels: int) -> list[CoreDims]:
        """Descendants of ``nodes`` up to ``levels`` below them, breadth-first."""
        out, seen, frontier = [], set(nodes), list(nodes)
        for _ in range(levels):
            nxt = []
            for n in frontier:
                for c in self.children(n):
                    if c not in seen:
                        seen.add(c)
                        nxt.append(c)
                        out.append(c)
            frontier = nxt
        return out


@dataclass(frozen=True)
class PruneDecision:
    explore: tuple[int, ...]
    prune: tuple[int, ...]
    hysteresis: bool


def prune_step(parent_value: float, child_values: Sequence[float]) -> PruneDecision:
    """Which children to descend into; ``hysteresis`` when none beats the parent."""
    better = tuple(i for i, v in enumerate(child_values) if v > parent_value)
    worse = tuple(i for i in range(len(child_values)) if i not in better)
    if not child_values:
        return PruneDecision((), (), False)
    if not better:
        return PruneDecision((), (), True)
    return PruneDecision(better, worse, False)


def resolve_band(parent_value: float, band: Sequence[tuple[CoreDims, float]]) -> CoreDims | None:
    """First node in the hysteresis band that beats the original parent."""
    for node, v in band:
        if v > parent_value:
            return node
    return None


@dataclass
class SearchResult:
    topk: TopK
    trace: list[dict]
    evaluations: dict[CoreDims, DimEval]
    best_dims: CoreDims | None

    @property
    def visited(self) -> int:
        return len(self.evaluations)

    @property
    def statuses(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for ev in self.evaluations.values():
            out[ev.status] = out.get(ev.status, 0) + 1
        return out


class _Walker:
    def __init__(self, evaluate: Callable[[CoreDims], DimEval], space: SearchSpace,
                 executor: Executor | None = None):
        self.evaluate = evaluate
        self.space = space
        self.executor = executor
        self.evals: dict[CoreDims, DimEval] = {}
        self.trace: list[dict] = []

    def _record(self, phase, d: CoreDims, decision: str):
        ev = self.evals.get(d)
        best = ev.best if ev else None
        self.trace.append({
            "phase": phase,
            "node": str(d),
            "dims": [d.tc_rows, d.tc_cols, d.vc_width],
            "counts": list(best.design.counts()) if best else None,
            "metric": _finite(best.value) if best else None,
            "decision": decision,
        })

    def _one(self, d: CoreDims) -> DimEval:
        try:
            return self.evaluate(d)
        except InfeasibleBudget:
            return DimEval(d, None, (), "infeasible")

    def values(self, phase, nodes: Sequence[CoreDims]) -> list[float]:
        todo = [d for d in dict.fromkeys(nodes) if d not in self.evals]
        if self.executor is not None and len(todo) > 1:
            results = list(self.executor.map(self._one, todo))
        else:
            results = [self._one(d) for d in todo]
        for d, ev in zip(todo, results):
            self.evals[d] = ev
            self._record(phase, d, "evaluated" if ev.status != "infeasible" else "infeasible")
        return [self.evals[d].value for d in nodes]

    def walk(self, tree: DimTree) -> CoreDims:
        phase = tree.phase
        root = tree.root
        self.values(phase, [root])
        queue = deque([root])
        expanded = set()
        while queue:
            node = queue.popleft()
            if node in expanded:
                continue
            expanded.add(node)
            kids = tree.children(node)
            if not kids:
                self._record(phase, node, "leaf")
                continue
            pv = self.evals[node].value
            vals = self.values(phase, kids)
            dec = prune_step(pv, vals)
            if not dec.hysteresis:
                for i in dec.prune:
                    tree.state[kids[i]] = NodeState.PRUNED
                    self._record(phase, kids[i], "pruned")
                for i in dec.explore:
                    queue.append(kids[i])
                    self._record(phase, kids[i], "explore")
                continue
            band = tree.band(kids, self.space.hysteresis_levels)
            bvals = self.values(phase, band)
            resume = resolve_band(pv, list(zip(band, bvals)))
            if resume is None:
                for d in kids:
                    tree.state[d] = NodeState.PRUNED
                    self._record(phase, d, "pruned-subtree")
            else:
                queue.append(resume)
                self._record(phase, resume, "resume")
        phase_nodes = [d for d in self.evals if _in_phase(tree, d)]
        return _best_dims(self.evals, phase_nodes)


def _in_phase(tree: DimTree, d: CoreDims) -> bool:
    if tree.phase == "tc":
        return d.vc_width == tree.fixed.vc_width
    return (d.tc_rows, d.tc_cols) == (tree.fixed.tc_rows, tree.fixed.tc_cols)


def _best_dims(evals: Mapping[CoreDims, DimEval], nodes: Iterable[CoreDims]) -> CoreDims | None:
    best = None
    for d in nodes:
        c = evals[d].best
        if c is None:
            continue
        if best is None or _better(c, evals[best].best):
            best = d
    return best


def _drive(evaluate, k: int, space: SearchSpace, executor: Executor | None, max_rounds: int) -> SearchResult:
    w = _Walker(evaluate, space, executor)
    fixed = CoreDims(space.max_rows, space.max_cols, space.max_width)
    best = None
    for _ in range(max_rounds):
        tc_best = w.walk(DimTree("tc", fixed, space)) or fixed
        w.walk(DimTree("vc", tc_best, space))
        best = _best_dims(w.evals, w.evals)
        if best is None or best == fixed:
            break
        fixed = best
    cands = [c for ev in w.evals.values() for c in ev.visited]
    if not cands:
        raise InfeasibleBudget("no dimension in the search space admits a design within budget")
    return SearchResult(TopK.from_candidates(k, cands), w.trace, w.evals, best)


def local_search(g: TrainingGraph, cfg: SystemConfig, metric: MetricSpec, k: int = 10,
                 engine: Engine = Engine.HEURISTIC, *, space: SearchSpace = SearchSpace(),
                 executor: Executor | None = None, max_rounds: int = 4,
                 limits: SolveLimits = SolveLimits(node_budget=200_000)) -> SearchResult:
    """Pruned dimension search for one workload.

    Tensor dims are searched with the vector width fixed, then the width with
    the tensor dims fixed at the best found; the two sweeps alternate until
    the best dims stop moving (at most ``max_rounds`` times).
    """
    return _drive(lambda d: evaluate_dims(d, g, cfg, metric, engine, limits=limits),
                  k, space, executor, max_rounds)


def common_local_search(graphs: Mapping[str, TrainingGraph], cfg: SystemConfig, metric: MetricSpec,
                        k: int = 10, engine: Engine = Engine.HEURISTIC, *,
                        space: SearchSpace = SearchSpace(), executor: Executor | None = None,
                        max_rounds: int = 4,
                        limits: SolveLimits = SolveLimits(node_budget=200_000)) -> SearchResult:
    """Pruned search for one design shared by all workloads (weighted metric)."""
    return _drive(lambda d: evaluate_common_dims(d, graphs, cfg, metric, engine, limits=limits),
                  k, space, executor, max_rounds)


def full_grid(space: SearchSpace) -> list[CoreDims]:
    return [CoreDims(r, c, w)
            for r in space.steps(space.max_rows)
            for c in space.steps(space.max_cols)
            for w in space.steps(space.max_width)]


def exhaustive_sweep(g: TrainingGraph | Mapping[str, TrainingGraph], cfg: SystemConfig,
                     metric: MetricSpec, k: int = 10, engine: Engine = Engine.HEURISTIC, *,
                     space: SearchSpace = SearchSpace(), executor: Executor | None = None,
                     limits: SolveLimits = SolveLimits(node_budget=200_000)) -> SearchResult:
    """Every dims in the grid, no pruning.  A mapping of graphs runs the common metric."""
    if isinstance(g, TrainingGraph):
        evaluate = lambda d: evaluate_dims(d, g, cfg, metric, engine, limits=limits)  # noqa: E731
    else:
        evaluate = lambda d: evaluate_common_dims(d, g, cfg, metric, engine, limits=limits)  # noqa: E731
    w = _Walker(evaluate, space, executor)
    w.values("grid", full_grid(space))
    cands = [c for ev in w.evals.values() for c in ev.visited]
    if not cands:
        raise InfeasibleBudget("no dimension in the search space admits a design within budget")
    return SearchResult(TopK.from_candidates(k, cands), w.trace, w.evals, _best_dims(w.evals, w.evals))
