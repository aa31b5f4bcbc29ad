"""Pipeline partitioning, tensor-model-parallel splits and the bubble algebra.

A pipeline of depth ``s`` running ``m`` micro-batches is modeled by its
bottleneck stage: ``t_b`` is the largest per-micro-batch time of any stage,
counting the stage's compute and the traffic on its adjacent links, and an
iteration takes ``(m + s - 1) * t_b`` under both schedules.  GPipe and
PipeDream then differ only in how many micro-batches of activations each
stage keeps in flight.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

from .config import PipelineParams, SystemConfig
from .cost import training_memory_footprint
from .errors import IndivisibleShape, UnpartitionableModel
from .graph import (
    LOSS_ID,
    TENSOR_KINDS,
    Operator,
    OperatorGraph,
    OpKind,
    Pass,
    TrainingGraph,
    apply_fusion,
    build_training_graph,
)


@dataclass(frozen=True)
class StagePartition:
    """``s`` contiguous stages; boundary ``i`` sits between stage ``i`` and ``i+1``."""

    stage_graphs: tuple[TrainingGraph, ...]
    stage_ops: tuple[tuple[str, ...], ...]
    boundary_activation_bytes: tuple[int, ...]
    footprints: tuple[float, ...]
    cut_edges: tuple[tuple[str, str], ...] = ()

    @property
    def depth(self) -> int:
        return len(self.stage_graphs)

    def comm_times(self, cfg: SystemConfig) -> list[float]:
        """Seconds per micro-batch on each link: activations out, gradients back."""
        return [2 * b / cfg.interconnect_bw_bytes_per_s for b in self.boundary_activation_bytes]

    def to_dict(self) -> dict:
        return {
            "stages": [list(ops) for ops in self.stage_ops],
            "boundary_activation_bytes": list(self.boundary_activation_bytes),
            "footprint_bytes": list(self.footprints),
        }


def _stage_graph(g: TrainingGraph, fwd_ids: set[str], last: bool, pp: PipelineParams) -> TrainingGraph:
    ids = set(fwd_ids) | {x for x, o in g.owner.items() if o in fwd_ids}
    if last:
        ids.add(LOSS_ID)
    sub = g.graph.subgraph(ids)
    consumers = {u: r for u, r in g.stash_consumers.items() if u in fwd_ids}
    return TrainingGraph(
        graph=sub,
        mirror_map={u: b for u, b in g.mirror_map.items() if u in fwd_ids},
        stash_bytes=sum(g.graph[u].activation_bytes for u in consumers),
        stash_consumers=consumers,
        owner={x: o for x, o in g.owner.items() if x in ids},
        element_bytes=g.element_bytes,
        batch_size=pp.microbatch_size,
    )


def partition_model(g: TrainingGraph, pp: PipelineParams, cfg: SystemConfig, *,
                    fuse: bool = True) -> StagePartition:
    """Split the forward layer order into ``pp.depth`` contiguous stages.

    Each forward op carries its backward mirror and update.  Among all
    contiguous splits, the one minimizing the largest stage footprint is kept
    (earliest cuts win ties); every stage must fit in HBM.  Operator fusion,
    when requested, is applied per stage after the split.
    """
    if g.is_fused():
        raise ValueError("partition the unfused training graph; fusion is applied per stage")
    s = pp.depth
    fwd = g.forward()
    order = fwd.topological_order()
    n = len(order)
    if n < s:
        raise UnpartitionableModel(f"{n} forward ops cannot fill {s} pipeline stages")
    mult = cfg.cost_model.optimizer_state_multiplier
    pb = [fwd[u].param_bytes for u in order]
    sb = [fwd[u].activation_bytes if u in g.stash_consumers else 0 for u in order]
    pre_p = [0]
    pre_s = [0]
    for a, b in zip(pb, sb):
        pre_p.append(pre_p[-1] + a)
        pre_s.append(pre_s[-1] + b)

    def cost(stage, lo, hi):
        p = pre_p[hi] - pre_p[lo]
        return (2 + mult) * p + (pre_s[hi] - pre_s[lo]) * pp.in_flight(stage)

    for idx, u in enumerate(order):
        lo_stage = max(0, idx - (n - s))
        hi_stage = min(idx, s - 1)
        least = min(cost(st, idx, idx + 1) for st in range(lo_stage, hi_stage + 1))
        if least > cfg.hbm_bytes:
            raise UnpartitionableModel(
                f"op {u!r} alone needs {least:.0f} bytes of HBM, more than {cfg.hbm_bytes:.0f}")

    inf = float("inf")
    best = [[inf] * (n + 1) for _ in range(s + 1)]
    cut = [[0] * (n + 1) for _ in range(s + 1)]
    best[0][0] = 0.0
    for i in range(1, s + 1):
        for k in range(i, n - (s - i) + 1):
            for j in range(i - 1, k):
                if best[i - 1][j] == inf:
                    continue
                v = max(best[i - 1][j], cost(i - 1, j, k))
                if v < best[i][k]:
                    best[i][k] = v
                    cut[i][k] = j
    if best[s][n] > cfg.hbm_bytes:
        raise UnpartitionableModel(
            f"best {s}-stage split still needs {best[s][n]:.0f} bytes on one device (HBM {cfg.hbm_bytes:.0f})")
    bounds = [n]
    for i in range(s, 0, -1):
        bounds.append(cut[i][bounds[-1]])
    bounds.reverse()

    stage_of = {}
    stage_ops = []
    for i in range(s):
        ops = tuple(order[bounds[i]:bounds[i + 1]])
        stage_ops.append(ops)
        for u in ops:
            stage_of[u] = i
    graphs = []
    feet = []
    for i, ops in enumerate(stage_ops):
        sg = _stage_graph(g, set(ops), i == s - 1, pp)
        feet.append(training_memory_footprint(sg, pp, stage=i, optimizer_state_multiplier=mult))
        graphs.append(apply_fusion(sg) if fuse else sg)
    boundary = []
    for i in range(s - 1):
        producers = {u for u, v in fwd.edges if stage_of[u] <= i < stage_of[v]}
        boundary.append(sum(fwd[u].activation_bytes for u in producers))
    home = dict(stage_of)
    for x, o in g.owner.items():
        home[x] = stage_of[o]
    home[LOSS_ID] = s - 1
    cuts = tuple(e for e in g.graph.edges if home[e[0]] != home[e[1]])
    return StagePartition(tuple(graphs), tuple(stage_ops), tuple(boundary), tuple(feet), cuts)


def allreduce_seconds(nbytes: float, width: int, cfg: SystemConfig) -> float:
    """Ring allreduce: each device sends and receives ``2 (w-1)/w`` of the buffer."""
    if width <= 1:
        return 0.0
    return 2 * (width - 1) / width * nbytes / cfg.interconnect_bw_bytes_per_s


def _allreduce_op(op: Operator, width: int, eb: int) -> Operator:
    return Operator(
        id=f"{op.id}~allreduce",
        kind=OpKind.VECTOR,
        pass_=Pass.FORWARD,
        elements=op.m * op.n,
        activation_bytes=op.m * op.n * eb,
        collective_width=width,
    )


def apply_tmp(g: TrainingGraph, tmp_width: int) -> TrainingGraph:
    """Megatron-style tensor-model-parallel split of one device's share.

    Weight-bearing tensor ops alternate column splits (N divided) and row
    splits (K divided) in layer order.  The partial sums of each row split,
    and the sharded output of a trailing unpaired column split, are combined
    by a forward allreduce; the synthesized backward mirror of that op is the
    matching backward allreduce.  Param-free tensor ops are left whole.
    """
    if tmp_width == 1:
        return g
    if tmp_width < 1 or tmp_width & (tmp_width - 1):
        raise IndivisibleShape(f"tmp_width must be a power of two, got {tmp_width}")
    if g.is_fused():
        raise ValueError("apply tensor parallelism before fusion")
    w = tmp_width
    eb = g.element_bytes
    fwd = g.forward()
    ops = dict(fwd.ops)
    split = [u for u in fwd.topological_order() if ops[u].kind in TENSOR_KINDS and ops[u].param_bytes > 0]
    reduce_after = []
    for i, u in enumerate(split):
        op = ops[u]
        if i % 2 == 0:
            if op.n % w:
                raise IndivisibleShape(f"op {u!r}: N={op.n} is not divisible by tensor-parallel width {w}")
            ops[u] = replace(op, n=op.n // w, param_bytes=op.param_bytes // w,
                             activation_bytes=op.activation_bytes // w)
            if i == len(split) - 1:
                reduce_after.append((u, op))
        else:
            if op.k % w:
                raise IndivisibleShape(f"op {u!r}: K={op.k} is not divisible by tensor-parallel width {w}")
            ops[u] = replace(op, k=op.k // w, param_bytes=op.param_bytes // w)
            reduce_after.append((u, op))
    edges = list(fwd.edges)
    for u, whole in reduce_after:
        ar = _allreduce_op(whole, w, eb)
        ops[ar.id] = ar
        edges = [(ar.id, v) if s == u else (s, v) for s, v in edges]
        edges.append((u, ar.id))
    new_fwd = OperatorGraph(ops.values(), edges, name=fwd.name)
    return build_training_graph(new_fwd, element_bytes=eb, batch_size=g.batch_size)


def bottleneck_time(per_stage_time: Sequence[float], comm: Sequence[float]) -> float:
    """``t_b``: worst stage time plus the traffic on the links next to it."""
    s = len(per_stage_time)
    if s < 1:
        raise ValueError("a pipeline needs at least one stage")
    if len(comm) != s - 1:
        raise ValueError(f"{s} stages need {s - 1} link times, got {len(comm)}")
    return max(
        per_stage_time[i] + (comm[i - 1] if i > 0 else 0) + (comm[i] if i < s - 1 else 0)
        for i in range(s)
    )


def pipeline_iteration_time(per_stage_time: Sequence[float], comm: Sequence[float],
                            pp: PipelineParams) -> float:
    """One training iteration: ``(m + s - 1) * t_b`` for GPipe and PipeDream alike."""
    s = len(per_stage_time)
    return (pp.num_microbatches + s - 1) * bottleneck_time(per_stage_time, comm)
