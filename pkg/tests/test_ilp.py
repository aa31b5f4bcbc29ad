import random
from dataclasses import replace

import pytest

from accelmine.arch import CoreDims
from accelmine.errors import HorizonTooSmall
from accelmine.graph import Core
from accelmine.ilp import (
    SINK,
    HighsBackend,
    SolveLimits,
    Status,
    budget_maximal_counts,
    build_instance,
    min_horizon,
    slot_size,
    solution_schedule,
    solve,
)
from accelmine.schedule import TaskGraph, compute_asap_alap, search_core_counts
from accelmine.validate import validate
from helpers import chain_tasks, unit_diamond
from oracles import exhaustive_lex_optimum, random_dag

DIMS = CoreDims(128, 128, 128)


def _inst(t, cfg, T=None):
    return build_instance(t, cfg, T, dims=DIMS, slot_cycles=1)


def _one_tc_only(inst):
    return replace(inst, area_limit=1.5 * inst.unit_area[Core.TENSOR])


# ---- instance construction


def test_three_op_chain_variable_count(cfg):
    inst = _inst(chain_tasks(3), cfg, T=3)
    assert len(inst.variables) == 9
    assert all(inst.start_range(v) == range(3) for v in inst.ops)
    assert len(inst.sink_variables) == 4


def test_window_clips_long_ops(cfg):
    t = TaskGraph.build({"a": 3, "b": 1}, {"a": "tensor", "b": "tensor"}, [])
    inst = _inst(t, cfg, T=4)
    assert inst.start_range("a") == range(2) and inst.start_range("b") == range(4)


def test_horizon_below_chain_length(cfg):
    with pytest.raises(HorizonTooSmall):
        _inst(chain_tasks(3), cfg, T=2)


def test_empty_graph_is_optimal_at_zero(cfg):
    inst = _inst(TaskGraph.build({}, {}, []), cfg, T=0)
    sol = solve(inst)
    assert sol.status is Status.OPTIMAL and sol.objective_makespan == 0 and sol.starts == {}


def test_slot_size_uses_gcd_and_cap():
    assert slot_size([4, 8, 12]) == 4
    assert slot_size([3, 5]) == 1
    assert slot_size([10_000] * 3, cap=100) == 10_000
    assert slot_size([3, 10_000, 10_001], cap=100) == 201
    assert slot_size([]) == 1


def test_slotted_latencies_round_up(cfg):
    t = TaskGraph.build({"a": 4, "b": 6}, {"a": "tensor", "b": "vector"}, [("a", "b")])
    inst = build_instance(t, cfg, dims=DIMS)
    assert inst.slot_cycles == 2 and dict(inst.dur) == {"a": 2, "b": 3}
    coarse = build_instance(t, cfg, dims=DIMS, slot_cycles=4)
    assert dict(coarse.dur) == {"a": 1, "b": 2}


def test_lp_text_lists_every_family(cfg):
    inst = _inst(unit_diamond(), cfg)
    text = inst.to_lp_text()
    assert text.startswith("\\") and text.rstrip().endswith("End")
    assert text.count(" once_") == len(inst.ops) + 1
    assert text.count(" prec_") == len(inst.edges) + len(inst.ops)
    assert text.count(" cap_tensor_") == inst.horizon
    assert "General\n x_tc" in text and "x_vc" not in text
    for v, t in inst.variables:
        assert f"y_{inst.ops.index(v)}_{t}" in text


# ---- exact solver


def test_diamond_two_tc_optimal(cfg):
    inst = _inst(unit_diamond(), cfg)
    assert inst.x_bound[Core.TENSOR] == 2
    sol = solve(inst)
    assert sol.status is Status.OPTIMAL
    assert sol.x[Core.TENSOR] == 2 and sol.objective_makespan == 3


def test_diamond_forced_single_tc(cfg):
    sol = solve(_one_tc_only(_inst(unit_diamond(), cfg)))
    assert sol.status is Status.OPTIMAL
    assert sol.x[Core.TENSOR] == 1 and sol.objective_makespan == 4


def test_chain_prefers_one_core(cfg):
    sol = solve(_inst(chain_tasks(5, dur=3), cfg))
    assert sol.counts() == (1, 0) and sol.objective_makespan == 15


def test_solution_fields(cfg):
    inst = _inst(unit_diamond(), cfg)
    sol = solve(inst)
    assert sum(1 for (v, _) in sol.y if v != SINK) == len(inst.ops)
    assert sol.y[(SINK, 3)] == 1
    assert sol.cost == pytest.approx(inst.cost(sol.x))
    sched = solution_schedule(inst, sol, inst.dur)
    assert validate(inst.tasks(), sched) == []


def test_node_budget_gives_timeout(cfg):
    rng = random.Random(2)
    dur, aff, edges = random_dag(rng, n_max=10)
    while len(dur) < 9:
        dur, aff, edges = random_dag(rng, n_max=10)
    inst = _inst(TaskGraph.build(dur, aff, edges), cfg)
    sol = solve(inst, SolveLimits(node_budget=1))
    assert sol.status is Status.TIMEOUT


def test_infeasible_budget(cfg):
    inst = _inst(unit_diamond(), cfg)
    inst = replace(inst, area_limit=0.5 * inst.unit_area[Core.TENSOR])
    assert solve(inst).status is Status.INFEASIBLE


def test_solver_deterministic(cfg):
    rng = random.Random(4)
    t = TaskGraph.build(*random_dag(rng))
    a, b = solve(_inst(t, cfg)), solve(_inst(t, cfg))
    assert a == b


def test_matches_exhaustive_oracle(cfg):
    rng = random.Random(9)
    for _ in range(40):
        dur, aff, edges = random_dag(rng, n_max=8)
        t = TaskGraph.build(dur, aff, edges)
        inst = replace(_inst(t, cfg), area_limit=rng.uniform(13, 60), power_limit=rng.uniform(22, 120))
        sol = solve(inst)
        ex = exhaustive_lex_optimum(dur, aff, edges, inst.unit_area, inst.unit_power,
                                    inst.area_limit, inst.power_limit)
        if ex is None:
            assert sol.status is Status.INFEASIBLE
            continue
        assert (sol.objective_makespan, sol.counts()) == (ex[0], ex[2])
        assert sol.cost == pytest.approx(ex[1], rel=1e-12)
        assert sol.objective_makespan >= compute_asap_alap(t).best_latency
        assert validate(t, solution_schedule(inst, sol, t.dur)) == []


def test_ilp_never_worse_than_heuristic(cfg):
    rng = random.Random(13)
    for _ in range(60):
        t = TaskGraph.build(*random_dag(rng, n_max=12))
        sol = solve(_inst(t, cfg), SolveLimits(node_budget=500_000))
        heur = search_core_counts(t, DIMS, cfg)
        if sol.status is Status.OPTIMAL:
            assert sol.objective_makespan <= min(s.makespan for _, s in heur.visited)


# ---- horizon search


def test_min_horizon_chain(cfg):
    t = chain_tasks(4, dur=2)
    assert min_horizon(t, cfg, dims=DIMS, slot_cycles=1) == 8 == compute_asap_alap(t).best_latency


def test_min_horizon_diamond(cfg):
    assert min_horizon(unit_diamond(), cfg, dims=DIMS, slot_cycles=1) == 3
    tc_area = _inst(unit_diamond(), cfg).unit_area[Core.TENSOR]
    small = replace(cfg, area_budget_mm2=cfg.cost_model.a_fixed + 1.5 * tc_area)
    assert min_horizon(unit_diamond(), small, dims=DIMS, slot_cycles=1) == 4


def test_budget_maximal_counts(cfg):
    inst = _one_tc_only(_inst(unit_diamond(), cfg))
    assert budget_maximal_counts(inst) == [{Core.TENSOR: 1, Core.VECTOR: 0}]


# ---- external backend cross-check


def test_highs_agrees_with_branch_and_bound(cfg):
    pytest.importorskip("scipy")
    rng = random.Random(6)
    backend = HighsBackend(time_limit=30)
    for _ in range(12):
        dur, aff, edges = random_dag(rng, n_max=6, d_max=3)
        t = TaskGraph.build(dur, aff, edges)
        inst = replace(_inst(t, cfg), area_limit=rng.uniform(13, 60), power_limit=rng.uniform(22, 120))
        ours, theirs = solve(inst), backend.solve(inst)
        assert ours.status == theirs.status
        if ours.status is Status.OPTIMAL:
            assert ours.objective_makespan == theirs.objective_makespan
            assert ours.cost == pytest.approx(theirs.cost, rel=1e-6)
            assert validate(t, solution_schedule(inst, theirs, t.dur)) == []
