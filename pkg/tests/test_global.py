import itertools

import pytest

from accelmine.config import MetricSpec, PipelineParams
from accelmine.global_search import Mode, evaluate_plan, global_search, prepare, select
from accelmine.pruner import local_search
from accelmine.workloads import load
from helpers import bottleneck_model, gemm, graph


def test_single_stage_single_k_modes_coincide(cfg):
    g = load("diamond", fused=False)
    res = global_search({"diamond": g}, PipelineParams(), cfg, MetricSpec(), k=1)
    local = local_search(load("diamond"), cfg, MetricSpec(), k=1).topk.top.design
    assert res.mosaic["diamond"].designs == (local,)
    assert res.individual["diamond"].designs == (local,)
    assert res.common.design == local
    a, b = res.mosaic["diamond"], res.individual["diamond"]
    assert a.throughput_samples_per_s == b.throughput_samples_per_s


def test_two_models_one_common_plan(cfg):
    models = {"chain": load("chain", fused=False), "cnn": load("cnn", fused=False)}
    res = global_search(models, PipelineParams(depth=2, num_microbatches=4), cfg, MetricSpec(), k=2)
    assert set(res.common.plans) == {"chain", "cnn"}
    for plan in res.common.plans.values():
        assert plan.mode is Mode.COMMON
        assert set(plan.designs) == {res.common.design}
    assert set(res.individual) == set(res.mosaic) == {"chain", "cnn"}
    vals = [res.common.plans[n].metric_value for n in ("chain", "cnn")]
    assert res.common.weighted_metric == pytest.approx(sum(vals) / 2)


def test_deep_pipeline_with_large_k(cfg):
    ops = [gemm(f"l{i:02d}", m=32, n=64, k=64) for i in range(32)]
    from accelmine.graph import build_training_graph

    g = build_training_graph(graph(ops, [(a.id, b.id) for a, b in zip(ops, ops[1:])]))
    pp = PipelineParams(depth=32, num_microbatches=32)
    res = global_search({"deep": g}, pp, cfg, MetricSpec(), k=10)
    assert len(res.mosaic["deep"].designs) == 32
    assert res.stats["candidates_k_s_m"] == 320


def test_plan_invariants(cfg):
    pp = PipelineParams(depth=3, scheme="pipedream", num_microbatches=6, microbatch_size=2)
    res = global_search({"cnn": load("cnn", fused=False)}, pp, cfg, MetricSpec(), k=3)
    for plan in (res.mosaic["cnn"], res.individual["cnn"], res.common.plans["cnn"]):
        assert plan.throughput_samples_per_s == pytest.approx(12 / plan.iteration_time_s)
        assert plan.perf_per_tdp == pytest.approx(plan.throughput_samples_per_s / plan.total_tdp_w)
        assert plan.total_tdp_w == pytest.approx(sum(d.tdp_watts for d in plan.designs))
    assert len(set(res.individual["cnn"].designs)) == 1


def test_mosaic_beats_homogeneous_top1_plans(cfg):
    for name, s in itertools.product(("transformer", "cnn"), (2, 3)):
        pp = PipelineParams(depth=s, num_microbatches=4)
        inputs = prepare({name: load(name, fused=False)}, pp, cfg, MetricSpec(), k=2)
        mosaic = select(inputs, pp, cfg, MetricSpec()).mosaic[name]
        for r in inputs.stage_results[name]:
            d = r.topk.top.design
            homog = evaluate_plan(name, inputs.partitions[name], [d] * s, pp, cfg, MetricSpec(), Mode.INDIVIDUAL)
            assert homog.throughput_samples_per_s <= mosaic.throughput_samples_per_s * (1 + 1e-12)


def test_common_is_best_in_pool(cfg):
    models = {"diamond": load("diamond", fused=False), "transformer": load("transformer", fused=False)}
    pp = PipelineParams(depth=2, num_microbatches=4)
    metric = MetricSpec()
    inputs = prepare(models, pp, cfg, metric, k=3)
    res = select(inputs, pp, cfg, metric)
    for d in inputs.pool():
        vals = []
        for n, part in inputs.partitions.items():
            vals.append(evaluate_plan(n, part, [d] * part.depth, pp, cfg, metric, Mode.COMMON).metric_value)
        assert sum(vals) / 2 <= res.common.weighted_metric * (1 + 1e-12)


def test_pruned_selection_matches_exhaustive(cfg):
    names = ["chain", "diamond", "transformer", "cnn"]
    for (a, b), s in itertools.product(itertools.combinations(names, 2), (1, 3)):
        models = {a: load(a, fused=False), b: load(b, fused=False)}
        pp = PipelineParams(depth=s, num_microbatches=4)
        inputs = prepare(models, pp, cfg, MetricSpec(), k=3)
        full = select(inputs, pp, cfg, MetricSpec(), prune=False)
        pruned = select(inputs, pp, cfg, MetricSpec(), prune=True)
        assert pruned.common.design == full.common.design
        for n in models:
            assert pruned.individual[n].designs == full.individual[n].designs
        assert pruned.stats["designs_evaluated"] <= full.stats["designs_evaluated"]


def test_bottleneck_stage_makes_mosaic_wasteful(cfg):
    pp = PipelineParams(depth=2, num_microbatches=4)
    res = global_search({"b": bottleneck_model()}, pp, cfg, MetricSpec(), k=3)
    mosaic, individual = res.mosaic["b"], res.individual["b"]
    assert mosaic.stage_times_s[0] > mosaic.stage_times_s[1]
    assert mosaic.designs[1].tdp_watts > mosaic.designs[0].tdp_watts
    assert mosaic.throughput_samples_per_s == pytest.approx(individual.throughput_samples_per_s, rel=1e-12)
    assert mosaic.perf_per_tdp < individual.perf_per_tdp


def test_missing_core_type_makes_plan_infeasible(cfg):
    from accelmine.arch import CoreDims, make_design

    pp = PipelineParams(depth=1)
    inputs = prepare({"chain": load("chain", fused=False)}, pp, cfg, MetricSpec(), k=1)
    vc_only = make_design(0, CoreDims(64, 64, 64), 1, cfg)
    plan = evaluate_plan("chain", inputs.partitions["chain"], [vc_only], pp, cfg, MetricSpec(), Mode.INDIVIDUAL)
    assert not plan.feasible
    assert plan.throughput_samples_per_s == 0.0 and plan.metric_value <= 0.0
    assert plan.to_dict()["iteration_time_s"] is None


def test_tensor_parallel_width_adds_collectives(cfg):
    pp = PipelineParams(depth=1, tmp_width=2)
    inputs = prepare({"transformer": load("transformer", fused=False)}, pp, cfg, MetricSpec(), k=1)
    sg = inputs.partitions["transformer"].stage_graphs[0]
    assert any(op.collective_width == 2 for op in sg.graph.ops.values())
