"""Exact core-count ILP versus the conflict-driven heuristic on random DAGs.

    python3 demos/ilp_vs_heuristic.py [n_graphs]
"""

import random
import sys
from dataclasses import replace

from accelmine.arch import CoreDims
from accelmine.config import SystemConfig
from accelmine.graph import Core
from accelmine.ilp import Status, build_instance, solve
from accelmine.schedule import TaskGraph, search_core_counts


def random_dag(rng, n_max=10):
    n = rng.randint(2, n_max)
    names = [f"v{i}" for i in range(n)]
    dur = {v: rng.randint(1, 4) for v in names}
    aff = {v: rng.choice([Core.TENSOR, Core.TENSOR, Core.VECTOR]) for v in names}
    edges = [(a, b) for i, a in enumerate(names) for b in names[i + 1:] if rng.random() < 0.3]
    return TaskGraph.build(dur, aff, edges)


def main(n=20):
    rng = random.Random(0)
    base = SystemConfig()
    dims = CoreDims(128, 128, 128)
    print(f"{'ops':>3} {'serial':>6} {'ilp':>4} {'heur':>4}  ilp cores  heur cores")
    for _ in range(n):
        t = random_dag(rng)
        cfg = replace(base, area_budget_mm2=base.cost_model.a_fixed + rng.uniform(13, 60))
        sol = solve(build_instance(t, cfg, dims=dims, slot_cycles=1))
        if sol.status is not Status.OPTIMAL:
            print(f"{len(t.dur):>3} {sol.status.value}")
            continue
        heur = search_core_counts(t, dims, cfg)
        counts, sched = min(heur.visited, key=lambda cs: cs[1].makespan)
        print(f"{len(t.dur):>3} {t.serial_sum():>6} {sol.objective_makespan:>4} {sched.makespan:>4}"
              f"  {str(sol.counts()):>9}  {str(counts):>10}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 20)
