"""Command-line entry point.

Exit codes: 0 success, 1 bad input (missing/invalid files or flags),
2 infeasible problem (nothing fits the budget or HBM), 3 schedule rejected
by ``validate``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import asdict
from pathlib import Path

from . import __version__
from . import report as rpt
from .arch import CoreDims, make_design
from .config import MetricSpec, PipelineParams, SearchSpace, SystemConfig, load_system_config
from .cost import annotate, training_memory_footprint
from .errors import AccelMineError, HorizonTooSmall, InfeasibleBudget, NoCoreForAffinity, UnpartitionableModel
from .global_search import global_search
from .graph import Core, TrainingGraph, apply_fusion, build_training_graph
from .ilp import SolveLimits, Status, build_instance, solution_schedule, solve
from .metrics import throughput
from .pruner import Engine, common_local_search, full_grid, local_search
from .schedule import heuristic_core_search, list_schedule
from .validate import schedule_violations
from .workloads import read_workload

THREADS_ENV = "WHAM_THREADS"

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_INVALID = 0, 1, 2, 3
INFEASIBLE = (InfeasibleBudget, UnpartitionableModel, NoCoreForAffinity, HorizonTooSmall)


class InputError(Exception):
    """Bad command-line input; reported with exit code 1."""


# ---------------------------------------------------------------- inputs


def _workloads(paths: list[str]) -> dict[str, tuple[Path, object, int]]:
    if not paths:
        raise InputError("at least one --graph is required")
    out = {}
    for p in paths:
        path = Path(p)
        if not path.is_file():
            raise InputError(f"{p}: no such file")
        try:
            fwd, batch = read_workload(path)
        except AccelMineError as exc:
            raise InputError(f"{p}: {exc}") from None
        name = fwd.name or path.stem
        if name in out:
            raise InputError(f"{p}: workload name {name!r} is used twice")
        out[name] = (path, fwd, batch)
    return out


def _system(path: str | None) -> SystemConfig:
    if path is None:
        return SystemConfig()
    if not Path(path).is_file():
        raise InputError(f"{path}: no such file")
    try:
        return load_system_config(path)
    except (AccelMineError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _metric(args) -> MetricSpec:
    weights = None
    if getattr(args, "weight", None):
        weights = {}
        for item in args.weight:
            name, _, val = item.partition("=")
            try:
                weights[name] = float(val)
            except ValueError:
                raise InputError(f"--weight {item!r}: expected NAME=FLOAT") from None
    if args.metric == "perf-tdp" and args.min_throughput is None:
        raise InputError("--metric perf-tdp needs --min-throughput")
    return MetricSpec(args.metric, args.min_throughput, weights)


def _training(fwd, batch: int, cfg: SystemConfig, fuse: bool) -> TrainingGraph:
    tg = build_training_graph(fwd, element_bytes=cfg.element_bytes, batch_size=batch)
    return apply_fusion(tg) if fuse else tg


def _threads(flag: int | None, default: int) -> int:
    if flag is not None:
        n = flag
    elif os.environ.get(THREADS_ENV):
        try:
            n = int(os.environ[THREADS_ENV])
        except ValueError:
            raise InputError(f"{THREADS_ENV}={os.environ[THREADS_ENV]!r} is not an integer") from None
    else:
        n = default
    if n < 1:
        raise InputError(f"thread count must be >= 1, got {n}")
    return n


def _pool(n: int):
    return ThreadPoolExecutor(max_workers=n) if n > 1 else nullcontext(None)


def _inputs_digest(workloads) -> dict:
    return {name: {"file": path.name, "sha256": rpt.file_digest(path)}
            for name, (path, _, _) in sorted(workloads.items())}


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands


def cmd_local(args) -> int:
    cfg = _system(args.system)
    metric = _metric(args)
    wl = _workloads(args.graph)
    if args.k < 1:
        raise InputError("--k must be >= 1")
    graphs = {}
    for name, (path, fwd, batch) in wl.items():
        raw = build_training_graph(fwd, element_bytes=cfg.element_bytes, batch_size=batch)
        need = training_memory_footprint(raw, PipelineParams(),
                                         optimizer_state_multiplier=cfg.cost_model.optimizer_state_multiplier)
        if need > cfg.hbm_bytes:
            raise UnpartitionableModel(
                f"{path}: training footprint {need:.0f} bytes exceeds HBM {cfg.hbm_bytes:.0f}; "
                "use global-search with a deeper pipeline")
        graphs[name] = apply_fusion(raw) if not args.no_fusion else raw
    space = SearchSpace()
    limits = SolveLimits(node_budget=args.node_budget)
    engine = Engine(args.engine)
    with _pool(_threads(args.threads, 1)) as ex:
        if len(graphs) == 1:
            (g,) = graphs.values()
            res = local_search(g, cfg, metric, args.k, engine, space=space, executor=ex, limits=limits)
        else:
            res = common_local_search(graphs, cfg, metric, args.k, engine, space=space, executor=ex,
                                      limits=limits)
    parts = {
        "command": "local-search", "system": cfg.to_dict(), "metric": _metric_dict(metric),
        "engine": engine.value, "k": args.k, "fusion": not args.no_fusion, "space": asdict(space),
        "node_budget": args.node_budget, "workloads": _inputs_digest(wl),
    }
    statuses = res.statuses
    data = {
        **rpt.header(parts),
        "command": "local-search",
        "workloads": _inputs_digest(wl),
        "metric": _metric_dict(metric),
        "engine": engine.value,
        "k": args.k,
        "search": {
            "visited_dims": res.visited,
            "exhaustive_dims": len(full_grid(space)),
            "best_dims": str(res.best_dims) if res.best_dims else None,
            "statuses": statuses,
            "heuristic_fallback": any(s != "ok" for s in statuses),
        },
        "topk": res.topk.to_list(),
    }
    out = _out_dir(args.out)
    rpt.write_json(out / "topk.json", data)
    rpt.write_jsonl(out / "trace.jsonl", res.trace)
    rpt.write_csv(out / "summary.csv", rpt.TOPK_COLUMNS, rpt.topk_rows(res.topk))
    top = res.topk.top
    print(f"top-1 {top.design.label} metric={top.value:.6g} throughput={top.throughput:.6g} "
          f"(visited {res.visited}/{len(full_grid(space))} dims) -> {out}")
    return EXIT_OK


def _pipeline_params(args, wl) -> PipelineParams:
    mbs = args.microbatch_size
    if mbs is None:
        sizes = {b for _, _, b in wl.values()}
        if len(sizes) != 1:
            raise InputError("workloads declare different batch sizes; pass --microbatch-size")
        (mbs,) = sizes
    return PipelineParams(depth=args.depth, scheme=args.scheme, num_microbatches=args.microbatches,
                          microbatch_size=mbs, tmp_width=args.tmp_width)


def cmd_global(args) -> int:
    cfg = _system(args.system)
    metric = _metric(args)
    wl = _workloads(args.graph)
    if args.k < 1:
        raise InputError("--k must be >= 1")
    pp = _pipeline_params(args, wl)
    models = {name: build_training_graph(fwd, element_bytes=cfg.element_bytes, batch_size=pp.microbatch_size)
              for name, (_, fwd, _) in wl.items()}
    space = SearchSpace()
    engine = Engine(args.engine)
    with _pool(_threads(args.threads, pp.depth)) as ex:
        res = global_search(models, pp, cfg, metric, args.k, engine, space=space, executor=ex,
                            prune=not args.no_prune)
    parts = {
        "command": "global-search", "system": cfg.to_dict(), "metric": _metric_dict(metric),
        "engine": engine.value, "k": args.k, "pipeline": _pp_dict(pp), "space": asdict(space),
        "prune": not args.no_prune, "workloads": _inputs_digest(wl),
    }
    stage_status = {}
    fallback = []
    for name in sorted(models):
        stage_status[name] = [dict(sorted(r.statuses.items())) for r in res.stage_results[name]]
        for i, st in enumerate(stage_status[name]):
            if any(s != "ok" for s in st):
                fallback.append({"model": name, "stage": i, "statuses": st})
    modes = {
        "individual": {n: p.to_dict() for n, p in sorted(res.individual.items())},
        "mosaic": {n: p.to_dict() for n, p in sorted(res.mosaic.items())},
        "common": res.common.to_dict() if res.common else None,
    }
    data = {
        **rpt.header(parts),
        "command": "global-search",
        "workloads": _inputs_digest(wl),
        "metric": _metric_dict(metric),
        "engine": engine.value,
        "k": args.k,
        "pipeline": _pp_dict(pp),
        "modes": modes,
        "stats": res.stats,
        "stage_status": stage_status,
        "heuristic_fallback": fallback,
        "stage_topk": {n: [t.to_list() for t in tks] for n, tks in sorted(res.stage_topk.items())},
    }
    out = _out_dir(args.out)
    rpt.write_json(out / "report.json", data)
    rows = [rpt.plan_row("individual", p) for _, p in sorted(res.individual.items())]
    rows += [rpt.plan_row("mosaic", p) for _, p in sorted(res.mosaic.items())]
    if res.common:
        rows += [rpt.plan_row("common", p) for _, p in sorted(res.common.plans.items())]
    rpt.write_csv(out / "summary.csv", rpt.PLAN_COLUMNS, rows)
    trace = [{"scope": "top-level", **r} for r in res.trace]
    for name in sorted(models):
        for i, r in enumerate(res.stage_results[name]):
            trace += [{"scope": "stage", "model": name, "stage": i, **rec} for rec in r.trace]
    rpt.write_jsonl(out / "trace.jsonl", trace)
    for n, p in sorted(res.individual.items()):
        print(f"{n}: individual {p.designs[0].label} throughput={p.throughput_samples_per_s:.6g} "
              f"perf/tdp={p.perf_per_tdp:.6g}")
    if res.common:
        print(f"common: {res.common.design.label} weighted metric={res.common.weighted_metric:.6g}")
    print(f"evaluated {res.stats['designs_evaluated']}/{res.stats['pool_size']} pooled designs -> {out}")
    return EXIT_OK


def _dims(args) -> CoreDims:
    try:
        return CoreDims(*args.dims)
    except (TypeError, ValueError) as exc:
        raise InputError(f"--dims: {exc}") from None


def cmd_estimate(args) -> int:
    cfg = _system(args.system)
    wl = _workloads(args.graph)
    dims = _dims(args)
    out = {"tool": "accelmine", "version": __version__, "dims": str(dims), "workloads": {}}
    for name, (path, fwd, batch) in sorted(wl.items()):
        g = _training(fwd, batch, cfg, not args.no_fusion)
        ag = annotate(g, dims, cfg)
        entry = {
            "ops": {k: {"latency_cycles": c.latency_cycles, "energy_j": c.energy_j,
                        "compute_cycles": c.compute_cycles, "memory_cycles": c.memory_cycles,
                        "moved_bytes": c.moved_bytes, "core": c.core.value}
                    for k, c in sorted(ag.costs.items())},
            "serial_cycles": sum(c.latency_cycles for c in ag.costs.values()),
            "energy_j": ag.total_energy(),
        }
        if args.cores:
            d = make_design(args.cores[0], dims, args.cores[1], cfg)
            sched = list_schedule(ag.tasks(), d.counts())
            entry["design"] = d.to_dict()
            entry["makespan_cycles"] = sched.makespan
            entry["throughput"] = throughput(batch, cfg.clock_hz, sched.makespan)
        out["workloads"][name] = entry
    text = rpt.dumps(out)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_schedule(args) -> int:
    cfg = _system(args.system)
    wl = _workloads(args.graph)
    if len(wl) != 1:
        raise InputError("schedule takes exactly one --graph")
    (name, (path, fwd, batch)), = wl.items()
    dims = _dims(args)
    fused = not args.no_fusion
    g = _training(fwd, batch, cfg, fused)
    ag = annotate(g, dims, cfg)
    t = ag.tasks()
    status = "ok"
    if args.cores:
        sched = list_schedule(t, tuple(args.cores))
    elif args.engine == "ilp":
        inst = build_instance(t, cfg, dims=dims)
        sol = solve(inst, SolveLimits(node_budget=args.node_budget))
        if sol.status is Status.OPTIMAL:
            sched = solution_schedule(inst, sol, t.dur)
        else:
            status = f"{sol.status.value}-fallback"
            sched = None
    else:
        sched = None
    if sched is None:
        metric = _metric(args)
        ranked = heuristic_core_search(ag, cfg, metric, samples_per_iteration=batch, dims=dims)
        sched = ranked[0][1]
    data = {
        "tool": "accelmine",
        "version": __version__,
        "graph": {"file": path.name, "sha256": rpt.file_digest(path)},
        "training": True,
        "fused": fused,
        "batch_size": batch,
        "element_bytes": cfg.element_bytes,
        "dims": [dims.tc_rows, dims.tc_cols, dims.vc_width],
        "engine": "given-counts" if args.cores else args.engine,
        "status": status,
        **sched.to_dict(),
    }
    text = rpt.dumps(data)
    if args.out:
        Path(args.out).write_text(text)
        print(f"makespan {sched.makespan} cycles on {list(sched.core_counts)} cores -> {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_validate(args) -> int:
    sp = Path(args.schedule)
    if not sp.is_file():
        raise InputError(f"{args.schedule}: no such file")
    try:
        data = json.loads(sp.read_text())
        start = {k: int(v) for k, v in data["start"].items()}
        latency = {k: int(v) for k, v in data["latency"].items()}
        counts = tuple(int(x) for x in data["core_counts"])
        makespan = int(data["makespan"])
        core_index = {k: [(Core(c), int(i)) for c, i in v] for k, v in data.get("core_index", {}).items()}
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{args.schedule}: malformed schedule file ({exc})") from None
    if len(counts) != 2:
        raise InputError(f"{args.schedule}: core_counts must have two entries")
    wl = _workloads(args.graph)
    if len(wl) != 1:
        raise InputError("validate takes exactly one --graph")
    (_, (_, fwd, batch)), = wl.items()
    g = fwd
    if data.get("training", False):
        tg = build_training_graph(fwd, element_bytes=int(data.get("element_bytes", 2)),
                                  batch_size=int(data.get("batch_size", batch)))
        g = (apply_fusion(tg) if data.get("fused", False) else tg).graph
    problems = []
    ops = set(g.ops)
    if set(latency) != ops:
        missing = sorted(ops - set(latency))
        extra = sorted(set(latency) - ops)
        if missing:
            problems.append(f"no latency for graph ops: {missing}")
        if extra:
            problems.append(f"latency given for unknown ops: {extra}")
    for k, v in latency.items():
        if v < 1:
            problems.append(f"{k}: latency must be >= 1, got {v}")
    durations = {k: latency.get(k, 1) for k in ops}
    affinities = {k: op.affinity for k, op in g.ops.items()}
    problems += schedule_violations(durations, affinities, g.edges, start, counts, makespan,
                                    core_index or None)
    if problems:
        for p in problems:
            print(p)
        print(f"INVALID: {len(problems)} problem(s)")
        return EXIT_INVALID
    print(f"valid: {len(start)} ops, makespan {makespan}")
    return EXIT_OK


def _metric_dict(m: MetricSpec) -> dict:
    return {"objective": m.objective.value, "min_throughput": m.min_throughput,
            "weights": dict(sorted(m.weights.items())) if m.weights else None}


def _pp_dict(pp: PipelineParams) -> dict:
    return {"depth": pp.depth, "scheme": pp.scheme.value, "num_microbatches": pp.num_microbatches,
            "microbatch_size": pp.microbatch_size, "tmp_width": pp.tmp_width}


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="accelmine", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"accelmine {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, *, search=True):
        p.add_argument("--graph", action="append", default=[], metavar="FILE",
                       help="workload graph file (JSON); repeat for several workloads")
        p.add_argument("--system", metavar="FILE", help="system config (JSON or TOML)")
        p.add_argument("--no-fusion", action="store_true", help="schedule the unfused training graph")
        if search:
            p.add_argument("--metric", choices=["throughput", "perf-tdp"], default="throughput")
            p.add_argument("--min-throughput", type=float, metavar="SAMPLES_PER_S")
            p.add_argument("--weight", action="append", metavar="NAME=W",
                           help="workload weight for the common metric (weights sum to 1)")
            p.add_argument("--engine", choices=["heuristic", "ilp"], default="heuristic")
            p.add_argument("--node-budget", type=int, default=200_000,
                           help="ILP branch-and-bound node budget before falling back")

    p = sub.add_parser("local-search", help="search one accelerator for one or more workloads")
    common(p)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", default=".", metavar="DIR")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_local)

    p = sub.add_parser("global-search", help="pipelined multi-accelerator search")
    common(p)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--depth", type=int, default=1, help="pipeline stages")
    p.add_argument("--scheme", choices=["gpipe", "pipedream"], default="gpipe")
    p.add_argument("--microbatches", type=int, default=1)
    p.add_argument("--microbatch-size", type=int, help="defaults to the graphs' batch size")
    p.add_argument("--tmp-width", type=int, default=1, help="tensor-model-parallel width")
    p.add_argument("--no-prune", action="store_true", help="evaluate the whole candidate pool")
    p.add_argument("--out", default=".", metavar="DIR")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_global)

    p = sub.add_parser("estimate", help="per-op latency and energy at fixed core dims")
    common(p, search=False)
    p.add_argument("--dims", type=int, nargs=3, required=True, metavar=("ROWS", "COLS", "WIDTH"))
    p.add_argument("--cores", type=int, nargs=2, metavar=("TC", "VC"), help="also schedule on this many cores")
    p.add_argument("--out", metavar="FILE")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("schedule", help="write a schedule file for one design")
    common(p)
    p.add_argument("--dims", type=int, nargs=3, required=True, metavar=("ROWS", "COLS", "WIDTH"))
    p.add_argument("--cores", type=int, nargs=2, metavar=("TC", "VC"),
                   help="fixed core counts; otherwise the core-count search picks them")
    p.add_argument("--out", metavar="FILE")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("validate", help="check a schedule file against its graph")
    p.add_argument("--schedule", required=True, metavar="FILE")
    p.add_argument("--graph", action="append", default=[], metavar="FILE")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except INFEASIBLE as exc:
        print(f"infeasible: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InputError, AccelMineError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
