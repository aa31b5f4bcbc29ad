"""Compare the three pipelined deployment modes on a two-stage pipeline.

The model has one long GEMM followed by a fan of small parallel GEMMs. The
stage holding the long GEMM sets the pipeline's pace, so giving the other
stage its own larger accelerator (MOSAIC) buys nothing but power.

    python3 demos/pipeline_modes.py
"""

from accelmine.config import MetricSpec, PipelineParams, SystemConfig
from accelmine.graph import Operator, OperatorGraph, OpKind, build_training_graph
from accelmine.global_search import global_search


def gemm(op_id, m, n, k):
    return Operator(op_id, OpKind.GEMM, m=m, n=n, k=k, param_bytes=k * n * 2, activation_bytes=m * n * 2)


def vec(op_id, elements):
    return Operator(op_id, OpKind.VECTOR, elements=elements, activation_bytes=elements * 2)


def bottleneck_model(fan=8):
    ops = [gemm("h0", 256, 256, 32768), vec("split", 256 * 256)]
    ops += [gemm(f"l{j}", 16, 1024, 1024) for j in range(fan)]
    ops.append(vec("join", 16 * 1024))
    edges = [("h0", "split")] + [("split", f"l{j}") for j in range(fan)]
    edges += [(f"l{j}", "join") for j in range(fan)]
    return build_training_graph(OperatorGraph(ops, edges, name="bottleneck"))


def main():
    cfg = SystemConfig()
    pp = PipelineParams(depth=2, num_microbatches=4)
    res = global_search({"bottleneck": bottleneck_model()}, pp, cfg, MetricSpec(), k=3)
    for mode, plan in (("mosaic", res.mosaic["bottleneck"]), ("individual", res.individual["bottleneck"]),
                       ("common", res.common.plans["bottleneck"])):
        print(f"{mode:>10}: {' | '.join(d.label for d in plan.designs)}")
        times = ", ".join(f"{t * 1e6:.1f}" for t in plan.stage_times_s)
        print(f"{'':>12}stage times [{times}] us, throughput {plan.throughput_samples_per_s:.1f} samples/s, "
              f"{plan.total_tdp_w:.1f} W, perf/TDP {plan.perf_per_tdp:.2f}")
    print(f"\ntop-level search evaluated {res.stats['designs_evaluated']}/{res.stats['pool_size']} pooled designs")


if __name__ == "__main__":
    main()
