"""Multi-accelerator search: per-stage top-k designs composed into pipelines.

Every model is split into pipeline stages and each stage gets its own local
search.  The union of all stages' top-k designs forms the candidate pool.

* MOSAIC runs each stage on its own top-1 design.
* INDIVIDUAL picks, per model, the best single design used on every stage.
* COMMON picks one design for every stage of every model, ranked by the
  weighted-average metric.

INDIVIDUAL and COMMON walk a tree whose levels group the pool by area,
smallest first.  A level whose designs are all worse than the previous level
in every view (each model, plus the weighted average) opens a hysteresis
band; if nothing in the band beats that reference either, the larger levels
are pruned.
"""

from __future__ import annotations

import math
from concurrent.futures import Executor
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

from .arch import DesignPoint
from .config import MetricSpec, PipelineParams, SearchSpace, SystemConfig
from .cost import annotate
from .errors import NoCoreForAffinity
from .graph import TrainingGraph
from .metrics import rank_key, score
from .pipeline import StagePartition, apply_tmp, bottleneck_time, partition_model, pipeline_iteration_time
from .pruner import Engine, SearchResult, TopK, local_search, weighted_average
from .schedule import list_schedule


class Mode(str, Enum):
    COMMON = "common"
    INDIVIDUAL = "individual"
    MOSAIC = "mosaic"


COMMON_VIEW = "__common__"
# Area levels interleave very different shapes, so the metric is not unimodal
# along them; two levels of hysteresis keep the walk from stopping in a dip.
TOP_LEVEL_HYSTERESIS = 2


@dataclass(frozen=True)
class PipelinePlan:
    model: str
    mode: Mode
    partition: StagePartition
    designs: tuple[DesignPoint, ...]
    stage_times_s: tuple[float, ...]
    comm_s: tuple[float, ...]
    bottleneck_s: float
    iteration_time_s: float
    throughput_samples_per_s: float
    total_tdp_w: float
    perf_per_tdp: float
    metric_value: float

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.iteration_time_s)

    def to_dict(self) -> dict:
        fin = lambda v: v if math.isfinite(v) else None  # noqa: E731
        return {
            "model": self.model,
            "mode": self.mode.value,
            "designs": [d.label for d in self.designs],
            "design_details": [d.to_dict() for d in self.designs],
            "stage_times_s": [fin(t) for t in self.stage_times_s],
            "comm_s": list(self.comm_s),
            "bottleneck_s": fin(self.bottleneck_s),
            "iteration_time_s": fin(self.iteration_time_s),
            "throughput_samples_per_s": fin(self.throughput_samples_per_s),
            "total_tdp_w": self.total_tdp_w,
            "perf_per_tdp": fin(self.perf_per_tdp),
            "metric": fin(self.metric_value),
            "partition": self.partition.to_dict(),
        }


def evaluate_plan(model: str, partition: StagePartition, designs: Sequence[DesignPoint],
                  pp: PipelineParams, cfg: SystemConfig, metric: MetricSpec, mode: Mode,
                  _cache: dict | None = None) -> PipelinePlan:
    """Iteration time, throughput and Perf/TDP of one stage-to-design assignment."""
    if len(designs) != partition.depth:
        raise ValueError(f"{partition.depth} stages need {partition.depth} designs, got {len(designs)}")
    cache = _cache if _cache is not None else {}
    times = []
    for i, (sg, d) in enumerate(zip(partition.stage_graphs, designs)):
        key = (model, i, d.key)
        if key not in cache:
            tasks = annotate(sg, d.dims, cfg).tasks()
            try:
                cache[key] = list_schedule(tasks, d.counts()).makespan / cfg.clock_hz
            except NoCoreForAffinity:
                cache[key] = math.inf
        times.append(cache[key])
    comm = partition.comm_times(cfg)
    tb = bottleneck_time(times, comm)
    it = pipeline_iteration_time(times, comm, pp)
    samples = pp.num_microbatches * pp.microbatch_size
    thr = samples / it if it > 0 else math.inf
    tdp = sum(d.tdp_watts for d in designs)
    ppt = thr / tdp
    return PipelinePlan(model, Mode(mode), partition, tuple(designs), tuple(times), tuple(comm),
                        tb, it, thr, tdp, ppt, score(metric, thr, tdp))


@dataclass
class GlobalInputs:
    """Partitions and per-stage local-search results for every model."""

    partitions: dict[str, StagePartition]
    stage_results: dict[str, list[SearchResult]]
    k: int

    def pool(self) -> list[DesignPoint]:
        seen = {}
        for results in self.stage_results.values():
            for r in results:
                for c in r.topk:
                    seen.setdefault(c.design.key, c.design)
        return [seen[k] for k in sorted(seen)]


def prepare(models: Mapping[str, TrainingGraph], pp: PipelineParams, cfg: SystemConfig,
            metric: MetricSpec, k: int = 10, engine: Engine = Engine.HEURISTIC, *,
            space: SearchSpace = SearchSpace(), executor: Executor | None = None) -> GlobalInputs:
    """Split each (unfused) model and run the local search on every stage."""
    if k < 1:
        raise ValueError("k must be >= 1")
    partitions = {}
    jobs = []
    for name in sorted(models):
        g = apply_tmp(models[name], pp.tmp_width)
        part = partition_model(g, pp, cfg)
        partitions[name] = part
        jobs += [(name, i, sg) for i, sg in enumerate(part.stage_graphs)]

    def run(job):
        return local_search(job[2], cfg, metric, k, engine, space=space)

    if executor is not None and len(jobs) > 1:
        results = list(executor.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    stage_results: dict[str, list[SearchResult]] = {name: [] for name in partitions}
    for (name, _, _), r in zip(jobs, results):
        stage_results[name].append(r)
    return GlobalInputs(partitions, stage_results, k)


@dataclass(frozen=True)
class CommonPlan:
    design: DesignPoint
    plans: Mapping[str, PipelinePlan]
    weighted_metric: float

    def to_dict(self) -> dict:
        return {
            "design": self.design.label,
            "design_details": self.design.to_dict(),
            "weighted_metric": self.weighted_metric if math.isfinite(self.weighted_metric) else None,
            "plans": {m: p.to_dict() for m, p in sorted(self.plans.items())},
        }


@dataclass
class GlobalResult:
    individual: dict[str, PipelinePlan]
    mosaic: dict[str, PipelinePlan]
    common: CommonPlan | None
    stats: dict
    trace: list[dict] = field(default_factory=list)
    stage_topk: dict[str, list[TopK]] = field(default_factory=dict)
    stage_results: dict[str, list[SearchResult]] = field(default_factory=dict)


def _levels(pool: Sequence[DesignPoint]) -> list[list[DesignPoint]]:
    by_area: dict[float, list[DesignPoint]] = {}
    for d in pool:
        by_area.setdefault(round(d.area_mm2, 9), []).append(d)
    return [sorted(by_area[a], key=lambda d: d.key) for a in sorted(by_area)]


def _pick(designs, value_of) -> DesignPoint | None:
    best = None
    for d in designs:
        if best is None or rank_key(value_of(d), d) < rank_key(value_of(best), best):
            best = d
    return best


def select(inputs: GlobalInputs, pp: PipelineParams, cfg: SystemConfig, metric: MetricSpec, *,
           prune: bool = True, hysteresis_levels: int = TOP_LEVEL_HYSTERESIS) -> GlobalResult:
    """INDIVIDUAL, COMMON and MOSAIC plans from prepared per-stage results."""
    names = sorted(inputs.partitions)
    weights = metric.weights_for(names)
    cache: dict = {}
    plans: dict[tuple[str, tuple], PipelinePlan] = {}

    def homog(name, d):
        key = (name, d.key)
        if key not in plans:
            part = inputs.partitions[name]
            plans[key] = evaluate_plan(name, part, [d] * part.depth, pp, cfg, metric,
                                       Mode.INDIVIDUAL, cache)
        return plans[key]

    def views(d) -> dict[str, float]:
        vals = {n: homog(n, d).metric_value for n in names}
        vals[COMMON_VIEW] = weighted_average(vals, weights)
        return vals

    pool = inputs.pool()
    levels = _levels(pool)
    trace = []
    evaluated: list[DesignPoint] = []
    ref: dict[str, float] | None = None
    band_left = None
    band_ref = None
    stopped_at = len(levels)
    for li, level in enumerate(levels):
        vals = {d.key: views(d) for d in level}
        evaluated += level
        best_here = {v: max(x[v] for x in vals.values()) for v in names + [COMMON_VIEW]}
        if ref is None:
            decision = "root"
            ref = best_here
        else:
            compare = band_ref if band_ref is not None else ref
            improved = any(best_here[v] > compare[v] for v in compare)
            if improved:
                decision = "improved" if band_ref is None else "resume"
                band_ref = None
                band_left = None
                ref = best_here
            elif band_ref is None:
                band_ref = ref
                band_left = hysteresis_levels
                decision = "worse"
                ref = best_here
            else:
                band_left -= 1
                decision = "worse-in-band"
                ref = best_here
            if band_ref is not None and band_left is not None and band_left <= 0 and prune:
                trace.append(_level_record(li, level, vals, decision + "; prune larger levels"))
                stopped_at = li + 1
                break
        trace.append(_level_record(li, level, vals, decision))

    individual = {}
    for n in names:
        d = _pick(evaluated, lambda d: homog(n, d).metric_value)
        individual[n] = homog(n, d)
    common = None
    if evaluated:
        cd = _pick(evaluated, lambda d: views(d)[COMMON_VIEW])
        common = CommonPlan(cd, {n: _as_mode(homog(n, cd), Mode.COMMON) for n in names},
                            views(cd)[COMMON_VIEW])

    mosaic = {}
    for n in names:
        part = inputs.partitions[n]
        tops = [r.topk.top.design for r in inputs.stage_results[n]]
        mosaic[n] = evaluate_plan(n, part, tops, pp, cfg, metric, Mode.MOSAIC, cache)

    stats = {
        "pool_size": len(pool),
        "candidates_k_s_m": inputs.k * pp.depth * len(names),
        "levels": len(levels),
        "levels_evaluated": min(stopped_at, len(levels)),
        "designs_evaluated": len(evaluated),
        "designs_pruned": len(pool) - len(evaluated),
        "stage_dims_visited": {n: [r.visited for r in inputs.stage_results[n]] for n in names},
        "pruning": prune,
    }
    stage_topk = {n: [r.topk for r in inputs.stage_results[n]] for n in names}
    return GlobalResult(individual, mosaic, common, stats, trace, stage_topk, inputs.stage_results)


def _as_mode(plan: PipelinePlan, mode: Mode) -> PipelinePlan:
    from dataclasses import replace

    return replace(plan, mode=mode)


def _level_record(li, level, vals, decision) -> dict:
    fin = lambda v: v if math.isfinite(v) else None  # noqa: E731
    return {
        "level": li,
        "area_mm2": level[0].area_mm2,
        "designs": [
            {"design": d.label, "views": {k: fin(v) for k, v in sorted(vals[d.key].items())}}
            for d in level
        ],
        "decision": decision,
    }


def global_search(models: Mapping[str, TrainingGraph], pp: PipelineParams, cfg: SystemConfig,
                  metric: MetricSpec, k: int = 10, engine: Engine = Engine.HEURISTIC, *,
                  space: SearchSpace = SearchSpace(), executor: Executor | None = None,
                  prune: bool = True, hysteresis_levels: int | None = None) -> GlobalResult:
    """Partition, search every stage, and compose MOSAIC/INDIVIDUAL/COMMON plans.

    ``models`` maps names to unfused training graphs.  ``hysteresis_levels``
    applies to the top-level tree; the per-stage dimension search uses the
    one in ``space``.
    """
    inputs = prepare(models, pp, cfg, metric, k, engine, space=space, executor=executor)
    h = TOP_LEVEL_HYSTERESIS if hysteresis_levels is None else hysteresis_levels
    return select(inputs, pp, cfg, metric, prune=prune, hysteresis_levels=h)
