"""Search one training accelerator for the bundled transformer.

Prints the pruned dims tree walk, the top designs and how much of the
216-point dims grid the pruner had to evaluate.

    python3 demos/local_search.py
"""

from accelmine import workloads
from accelmine.arch import tpuv2_like
from accelmine.config import MetricSpec, SearchSpace, SystemConfig
from accelmine.cost import annotate
from accelmine.metrics import throughput
from accelmine.pruner import full_grid, local_search
from accelmine.schedule import list_schedule


def main():
    cfg = SystemConfig()
    g = workloads.load("transformer")
    print(f"transformer: {len(g.graph)} ops after fusion, batch {g.batch_size}")

    # a fixed TPUv2-like design sets the throughput floor for perf/TDP
    tpu = tpuv2_like(cfg)
    sched = list_schedule(annotate(g, tpu.dims, cfg).tasks(), tpu.counts())
    floor = throughput(g.batch_size, cfg.clock_hz, sched.makespan)
    print(f"baseline {tpu.label}: {floor:.1f} samples/s at {tpu.tdp_watts:.1f} W")

    for metric in (MetricSpec(), MetricSpec("perf-tdp", min_throughput=floor)):
        res = local_search(g, cfg, metric, k=3)
        print(f"\n{metric.objective.value}: visited {res.visited}/{len(full_grid(SearchSpace()))} dims")
        for r in res.trace:
            if r["decision"] != "evaluated":
                print(f"  {r['phase']:>3} {r['node']:<14} {r['decision']}")
        for c in res.topk:
            print(f"  {c.design.label:<28} metric={c.value:10.4g} throughput={c.throughput:9.1f} "
                  f"area={c.design.area_mm2:6.1f} mm2 tdp={c.design.tdp_watts:6.1f} W")


if __name__ == "__main__":
    main()
