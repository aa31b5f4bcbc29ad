import math

import pytest

from accelmine import pruner
from accelmine.arch import CoreDims, make_design
from accelmine.config import MetricSpec, SearchSpace
from accelmine.cost import annotate
from accelmine.graph import build_training_graph
from accelmine.ilp import SolveLimits
from accelmine.pruner import (
    Candidate,
    DimEval,
    DimTree,
    Engine,
    TopK,
    common_local_search,
    evaluate_dims,
    exhaustive_sweep,
    full_grid,
    local_search,
    prune_step,
    resolve_band,
)
from accelmine.schedule import list_schedule
from accelmine.validate import validate
from accelmine.workloads import load
from helpers import DIAMOND_EDGES, gemm, graph, vec

SPACE = SearchSpace()


# ---- pruning rule


def test_one_better_child_prunes_the_other():
    d = prune_step(10, (12, 8))
    assert d.explore == (0,) and d.prune == (1,) and not d.hysteresis


def test_both_better_children_explored():
    d = prune_step(10, (12, 11))
    assert d.explore == (0, 1) and d.prune == ()


def test_all_worse_triggers_hysteresis():
    d = prune_step(10, (7, 6))
    assert d.hysteresis and d.explore == ()
    assert prune_step(10, ()).explore == ()


def test_band_resolution():
    a, b, c = CoreDims(64, 256, 256), CoreDims(128, 128, 256), CoreDims(256, 64, 256)
    assert resolve_band(10, [(a, 9), (b, 8), (c, 9.5)]) is None
    assert resolve_band(10, [(a, 9), (b, 11), (c, 12)]) == b


# ---- dimension tree


def test_tree_shape():
    t = DimTree("tc", CoreDims(256, 256, 64), SPACE)
    assert t.root == CoreDims(256, 256, 64)
    assert t.children(t.root) == [CoreDims(128, 256, 64), CoreDims(256, 128, 64)]
    assert t.children(CoreDims(8, 8, 64)) == []
    v = DimTree("vc", CoreDims(32, 64, 8), SPACE)
    assert v.root == CoreDims(32, 64, 256)
    assert v.children(v.root) == [CoreDims(32, 64, 128)]
    assert len(full_grid(SPACE)) == 6 ** 3


def test_every_child_is_smaller_in_one_dimension():
    t = DimTree("tc", CoreDims(256, 256, 256), SPACE)
    for d in full_grid(SPACE):
        for c in t.children(d):
            diffs = [a != b for a, b in zip((d.tc_rows, d.tc_cols, d.vc_width), (c.tc_rows, c.tc_cols, c.vc_width))]
            assert sum(diffs) == 1


def _landscape(values, cfg):
    """Replace dims evaluation by a lookup table keyed on (rows, cols)."""

    def fake(dims, g, cfg_, metric, engine, **kw):
        v = values.get((dims.tc_rows, dims.tc_cols), 0.0) - (0 if dims.vc_width == 256 else 1)
        d = make_design(1, dims, 1, cfg)
        c = Candidate(d, v, 1, v)
        return DimEval(dims, c, (c,))

    return fake


def test_hysteresis_prunes_when_band_is_worse(monkeypatch, cfg):
    values = {(256, 256): 10, (128, 256): 7, (256, 128): 6, (64, 256): 5, (128, 128): 9, (256, 64): 4}
    monkeypatch.setattr(pruner, "evaluate_dims", _landscape(values, cfg))
    res = local_search(None, cfg, MetricSpec(), k=3)
    assert res.best_dims == CoreDims(256, 256, 256)
    tc = {tuple(r["dims"][:2]) for r in res.trace if r["phase"] == "tc" and r["decision"] == "evaluated"}
    assert tc == set(values)
    assert any(r["decision"] == "pruned-subtree" for r in res.trace)


def test_hysteresis_resumes_from_better_grandchild(monkeypatch, cfg):
    values = {(256, 256): 10, (128, 256): 7, (256, 128): 6, (128, 128): 11}
    monkeypatch.setattr(pruner, "evaluate_dims", _landscape(values, cfg))
    res = local_search(None, cfg, MetricSpec(), k=3)
    assert res.best_dims == CoreDims(128, 128, 256)
    assert res.topk.top.value == 11
    assert {"node": "128x128,256", "decision": "resume"}.items() <= next(
        r for r in res.trace if r["decision"] == "resume").items()


# ---- evaluation


def test_pure_chain_needs_one_core(cfg):
    # without weights the backward pass is a chain too, so the whole
    # training graph has no parallelism
    g = build_training_graph(graph([vec(f"v{i}") for i in range(4)], [(f"v{i}", f"v{i + 1}") for i in range(3)]))
    for dims in (CoreDims(256, 256, 256), CoreDims(32, 64, 16)):
        ev = evaluate_dims(dims, g, cfg, MetricSpec())
        assert ev.best.design.counts() == (0, 1)


def test_bundled_chain_uses_backward_parallelism(cfg):
    # a layer's input and weight gradients can run side by side
    ev = evaluate_dims(CoreDims(256, 256, 256), load("chain"), cfg, MetricSpec())
    assert ev.best.design.num_tc == 2


def test_unreachable_throughput_floor(cfg):
    g = load("diamond")
    ev = evaluate_dims(CoreDims(64, 64, 64), g, cfg, MetricSpec("perf-tdp", min_throughput=1e30))
    assert ev.value == -math.inf
    assert all(c.value == -math.inf for c in ev.visited)


def test_smaller_array_wins_on_square_diamond(cfg):
    ops = [gemm(x, m=128, n=128, k=128) for x in "ABCD"]
    g = build_training_graph(graph(ops, DIAMOND_EDGES))
    m = MetricSpec("perf-tdp", min_throughput=0.0)
    small = evaluate_dims(CoreDims(128, 128, 128), g, cfg, m)
    big = evaluate_dims(CoreDims(256, 256, 128), g, cfg, m)
    assert small.value > big.value
    assert small.best.makespan <= big.best.makespan
    assert small.best.design.tdp_watts < big.best.design.tdp_watts


def test_topk_order_and_uniqueness(cfg):
    res = local_search(load("diamond"), cfg, MetricSpec(), k=1000)
    keys = [c.design.key for c in res.topk]
    assert len(keys) == len(set(keys))
    unique = {c.design.key for ev in res.evaluations.values() for c in ev.visited}
    assert len(res.topk) == len(unique)
    vals = [c.value for c in res.topk]
    assert vals == sorted(vals, reverse=True)
    with pytest.raises(ValueError):
        TopK.from_candidates(0, [])


def test_topk_entries_feasible_and_valid(cfg):
    g = load("transformer")
    res = local_search(g, cfg, MetricSpec(), k=5)
    for c in res.topk:
        assert c.design.area_mm2 <= cfg.area_budget_mm2 and c.design.tdp_watts <= cfg.power_budget_w
        tasks = annotate(g, c.design.dims, cfg).tasks()
        assert validate(tasks, c.schedule) == []


def test_chain_k1_matches_exhaustive(cfg):
    g = load("chain")
    for m in (MetricSpec(), MetricSpec("perf-tdp", min_throughput=0.0)):
        pruned = local_search(g, cfg, m, k=1)
        full = exhaustive_sweep(g, cfg, m, k=1)
        assert len(pruned.topk) == 1
        assert pruned.topk.top.design.key == full.topk.top.design.key
        assert pruned.visited <= full.visited


def test_common_search_ranks_by_weighted_average(cfg):
    graphs = {"chain": load("chain"), "diamond": load("diamond")}
    res = common_local_search(graphs, cfg, MetricSpec(), k=5)
    for c in res.topk:
        assert set(c.per_workload) == {"chain", "diamond"}
        assert c.value == pytest.approx(0.5 * c.per_workload["chain"] + 0.5 * c.per_workload["diamond"])
        for name, g in graphs.items():
            s = list_schedule(annotate(g, c.design.dims, cfg).tasks(), c.design.counts())
            assert c.per_workload[name] == pytest.approx(g.batch_size * cfg.clock_hz / s.makespan)
    skewed = common_local_search(graphs, cfg, MetricSpec(weights={"chain": 0.9, "diamond": 0.1}), k=1)
    top = skewed.topk.top
    assert top.value == pytest.approx(0.9 * top.per_workload["chain"] + 0.1 * top.per_workload["diamond"])


def test_ilp_engine_falls_back_on_timeout(cfg):
    g = load("transformer")
    res = local_search(g, cfg, MetricSpec(), k=3, engine=Engine.ILP, limits=SolveLimits(node_budget=10))
    assert "timeout-fallback" in res.statuses
    assert len(res.topk) == 3


def test_ilp_engine_on_small_graph(cfg):
    g = build_training_graph(graph([gemm("a", m=64, n=64, k=64)]))
    ev = evaluate_dims(CoreDims(64, 64, 64), g, cfg, MetricSpec(), Engine.ILP)
    heur = evaluate_dims(CoreDims(64, 64, 64), g, cfg, MetricSpec())
    assert ev.status == "ok"
    assert ev.best.makespan <= heur.best.makespan


def test_trace_records(cfg):
    res = local_search(load("diamond"), cfg, MetricSpec(), k=3)
    assert res.trace
    for r in res.trace:
        assert set(r) == {"phase", "node", "dims", "counts", "metric", "decision"}
    evaluated = [r for r in res.trace if r["decision"] == "evaluated"]
    assert len(evaluated) == res.visited


def test_parallel_search_is_identical(cfg):
    from concurrent.futures import ThreadPoolExecutor

    g = load("cnn")
    serial = local_search(g, cfg, MetricSpec(), k=5)
    with ThreadPoolExecutor(4) as ex:
        par = local_search(g, cfg, MetricSpec(), k=5, executor=ex)
    assert serial.trace == par.trace
    assert [c.summary() for c in serial.topk] == [c.summary() for c in par.topk]
