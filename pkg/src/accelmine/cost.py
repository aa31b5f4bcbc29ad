"""Analytical per-operator latency/energy model and training memory footprint.

Tensor ops run on an output-stationary systolic array; each ``rows x cols``
output tile pays ``K`` MAC steps plus the skew fill and drain.  Vector ops
stream ``width`` elements per cycle.  Latency is the roofline max of compute
and HBM traffic.  Edges in the graph remove the intermediate tensor's HBM
round trip unless the producer's output is stashed for the backward pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

from .arch import CoreDims
from .config import PipelineParams, SystemConfig
from .graph import Core, Operator, TrainingGraph


@dataclass(frozen=True)
class OpCost:
    latency_cycles: int
    energy_j: float
    core: Core
    compute_cycles: int = 0
    memory_cycles: int = 0
    moved_bytes: int = 0


def tensor_cycles(m: int, n: int, k: int, rows: int, cols: int) -> int:
    return math.ceil(m / rows) * math.ceil(n / cols) * (k + rows + cols - 1)


def vector_cycles(elements: int, width: int) -> int:
    return math.ceil(elements / width)


def input_bytes(op: Operator, element_bytes: int) -> int:
    """HBM bytes read as activations (weights are counted separately)."""
    if op.is_tensor:
        b = op.m * op.k * element_bytes
        if op.param_bytes == 0:
            b += op.k * op.n * element_bytes
        return b
    return op.elements * element_bytes


def estimate_op(op: Operator, dims: CoreDims, cfg: SystemConfig, *,
                input_discount: int = 0, output_discount: int = 0) -> OpCost:
    """Latency and energy of one operator on cores of the given dims.

    The discounts are bytes of inputs/outputs that stay on chip.
    """
    cm = cfg.cost_model
    eb = cfg.element_bytes
    if op.is_collective:
        w = op.collective_width
        wire = 2 * (w - 1) / w * op.activation_bytes
        cycles = max(1, math.ceil(wire * cfg.clock_hz / cfg.interconnect_bw_bytes_per_s))
        energy = cm.e_hbm * 2 * op.activation_bytes + cm.e_vec * op.vector_elements
        return OpCost(cycles, max(energy, cm.e_vec), op.affinity, cycles, 0, 2 * op.activation_bytes)

    compute = 0
    if op.is_tensor:
        compute = tensor_cycles(op.m, op.n, op.k, dims.tc_rows, dims.tc_cols)
    if op.elements:
        compute = max(compute, vector_cycles(op.elements, dims.vc_width))

    ins = max(0, input_bytes(op, eb) - input_discount)
    outs = max(0, op.activation_bytes - output_discount)
    moved = ins + outs + op.param_bytes
    memory = math.ceil(moved * cfg.clock_hz / cfg.hbm_bw_bytes_per_s)
    latency = max(compute, memory, 1)
    energy = (cm.e_mac * op.macs + cm.e_vec * op.vector_elements
              + cm.e_hbm * moved + cm.e_sram * 2 * moved)
    return OpCost(latency, energy, op.affinity, compute, memory, moved)


@dataclass(frozen=True)
class AnnotatedGraph:
    graph: TrainingGraph
    dims: CoreDims
    costs: Mapping[str, OpCost]

    @property
    def ops(self):
        return self.graph.graph.ops

    def latency(self, op_id: str) -> int:
        return self.costs[op_id].latency_cycles

    def total_energy(self) -> float:
        return sum(c.energy_j for c in self.costs.values())

    def tasks(self):
        from .schedule import TaskGraph

        return TaskGraph.from_annotated(self)


def reuse_discounts(tg: TrainingGraph) -> tuple[dict[str, int], dict[str, int]]:
    """Bytes per op that never leave the chip thanks to graph adjacency."""
    g = tg.graph
    ins = {k: 0 for k in g.ops}
    outs = {k: 0 for k in g.ops}
    for u, v in g.edges:
        if g[u].is_collective or g[v].is_collective:
            continue
        ins[v] += g[u].activation_bytes
    for u in g.ops:
        if g[u].is_collective or not g.succs(u) or u in tg.stash_consumers:
            continue
        if any(g[v].is_collective for v in g.succs(u)):
            continue
        outs[u] = g[u].activation_bytes
    return ins, outs


def annotate(g: TrainingGraph, dims: CoreDims, cfg: SystemConfig) -> AnnotatedGraph:
    ins, outs = reuse_discounts(g)
    costs = {
        k: estimate_op(op, dims, cfg, input_discount=ins[k], output_discount=outs[k])
        for k, op in g.graph.ops.items()
    }
    return AnnotatedGraph(g, dims, costs)


def training_memory_footprint(g: TrainingGraph, pipeline: PipelineParams, *, stage: int = 0,
                              optimizer_state_multiplier: float = 2.0) -> float:
    """HBM bytes: weights, optimizer state, gradients and in-flight stash."""
    params = g.param_bytes()
    return (params + optimizer_state_multiplier * params + params
            + g.stash_bytes * pipeline.in_flight(stage))

