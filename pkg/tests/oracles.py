"""Brute-force oracles.  None of these share code with the package's search paths."""

from __future__ import annotations

import itertools
import math
import random

from accelmine.graph import Core

TYPES = (Core.TENSOR, Core.VECTOR)


def random_dag(rng: random.Random, n_max: int = 10, d_max: int = 4, p_edge: float = 0.3):
    n = rng.randint(1, n_max)
    names = [f"v{i:02d}" for i in range(n)]
    dur = {v: rng.randint(1, d_max) for v in names}
    aff = {v: rng.choices((Core.TENSOR, Core.VECTOR, Core.BOTH), weights=(5, 4, 1))[0] for v in names}
    edges = [(names[i], names[j]) for i in range(n) for j in range(i + 1, n) if rng.random() < p_edge]
    return dur, aff, edges


def all_paths_longest(dur, edges):
    """ASAP/ALAP by enumerating every path explicitly."""
    succ = {v: [] for v in dur}
    pred = {v: [] for v in dur}
    for u, v in edges:
        succ[u].append(v)
        pred[v].append(u)

    def paths_to(v):
        if not pred[v]:
            return [[v]]
        return [p + [v] for u in pred[v] for p in paths_to(u)]

    def paths_from(v):
        if not succ[v]:
            return [[v]]
        return [[v] + p for w in succ[v] for p in paths_from(w)]

    asap = {v: max(sum(dur[x] for x in p[:-1]) for p in paths_to(v)) for v in dur}
    best = max((sum(dur[x] for x in p) for v in dur for p in paths_to(v)), default=0)
    alap = {v: best - max(sum(dur[x] for x in p) for p in paths_from(v)) for v in dur}
    return asap, alap, best


def uses(aff, c):
    return aff is c or aff is Core.BOTH


def exhaustive_min_makespan(dur, aff, edges, counts, horizon=None):
    """Minimum makespan over *all* integer-time non-preemptive schedules.

    Breadth-first over time; a state is (finished ops, running ops with
    remaining time).  Every subset of ready ops may start at every step,
    including none, so no schedule is excluded.
    """
    cap = dict(zip(TYPES, counts))
    pred = {v: set() for v in dur}
    for u, v in edges:
        pred[v].add(u)
    ops = frozenset(dur)
    if not ops:
        return 0
    for v in ops:
        for c in TYPES:
            if uses(aff[v], c) and cap[c] < 1:
                return None
    horizon = horizon if horizon is not None else sum(dur.values())
    states = {(frozenset(), ())}
    for t in range(horizon + 1):
        nxt = set()
        for done, running in states:
            if done == ops:
                return t
            busy = {c: sum(1 for v, _ in running if uses(aff[v], c)) for c in TYPES}
            started = {v for v, _ in running}
            ready = [v for v in ops - done - started if pred[v] <= done]
            for r in range(len(ready) + 1):
                for subset in itertools.combinations(ready, r):
                    load = dict(busy)
                    ok = True
                    for v in subset:
                        for c in TYPES:
                            if uses(aff[v], c):
                                load[c] += 1
                                if load[c] > cap[c]:
                                    ok = False
                    if not ok:
                        continue
                    run = [(v, rem) for v, rem in running] + [(v, dur[v]) for v in subset]
                    new_done = set(done)
                    new_run = []
                    for v, rem in run:
                        if rem - 1 == 0:
                            new_done.add(v)
                        else:
                            new_run.append((v, rem - 1))
                    nxt.add((frozenset(new_done), tuple(sorted(new_run))))
        states = nxt
    return None


def asap_peak(dur, aff, edges):
    asap, _, _ = all_paths_longest(dur, edges)
    peak = {}
    for c in TYPES:
        best = 0
        for t in range(max((asap[v] + dur[v] for v in dur), default=0)):
            best = max(best, sum(1 for v in dur if uses(aff[v], c) and asap[v] <= t < asap[v] + dur[v]))
        peak[c] = best
    return peak


def exhaustive_lex_optimum(dur, aff, edges, unit_area, unit_power, area_limit, power_limit):
    """Enumerate every core-count vector up to the ASAP peak, every schedule for each.

    Returns (makespan, cost, counts) minimizing makespan, then normalized
    area+power, then the count tuple; None if no counts fit the budget.
    """
    peak = asap_peak(dur, aff, edges)
    used = [c for c in TYPES if any(uses(a, c) for a in aff.values())]
    ranges = [range(1, peak[c] + 1) if c in used else range(0, 1) for c in TYPES]
    best = None
    for combo in itertools.product(*ranges):
        if sum(combo) < 1:
            continue
        area = sum(n * unit_area[c] for n, c in zip(combo, TYPES))
        power = sum(n * unit_power[c] for n, c in zip(combo, TYPES))
        if area > area_limit or power > power_limit:
            continue
        ms = exhaustive_min_makespan(dur, aff, edges, combo)
        if ms is None:
            continue
        cost = area / area_limit + power / power_limit
        key = (ms, cost, combo)
        if best is None or key < best:
            best = key
    return best


def systolic_tile_cycles(m, n, k, rows, cols):
    """Per-cycle simulation of an output-stationary array.

    PE (i, j) performs its ``s``-th MAC at cycle ``i + j + s`` of a tile (the
    skewed wavefront); the tile's outputs are written back the cycle after
    the last MAC.  Tiles run back to back.
    """
    total = 0
    for _ in range(math.ceil(m / rows) * math.ceil(n / cols)):
        cycle = 0
        pending = rows * cols * k
        while pending:
            active = 0
            for i in range(rows):
                for j in range(cols):
                    s = cycle - i - j
                    if 0 <= s < k:
                        active += 1
            pending -= active
            cycle += 1
        total += cycle + 1
    return total


def simulate_pipeline(fwd, bwd, comm, m, scheme):
    """Discrete-event simulation of one training iteration.

    ``fwd[i]``/``bwd[i]`` are per-micro-batch compute times of stage ``i``.
    ``comm[i]`` is the per-micro-batch occupancy of the link between stage
    ``i`` and ``i+1``: half for the activation going right, half for the
    gradient coming back.  Both endpoints are busy for each transfer.  GPipe
    runs all forwards then all backwards; PipeDream uses one-forward-one-
    backward with ``s - i`` warm-up forwards at stage ``i``, flushing at the end.
    """
    s = len(fwd)
    half = [c / 2 for c in comm]
    order = []
    for i in range(s):
        if scheme == "gpipe":
            seq = [("F", j) for j in range(m)] + [("B", j) for j in range(m)]
        else:
            warm = min(m, s - i)
            seq = [("F", j) for j in range(warm)]
            nf, nb = warm, 0
            while nb < m:
                seq.append(("B", nb))
                nb += 1
                if nf < m:
                    seq.append(("F", nf))
                    nf += 1
        order.append(seq)
    done = {}
    free_at = [0.0] * s
    pos = [0] * s
    remaining = sum(len(o) for o in order)
    while remaining:
        progressed = False
        for i in range(s):
            if pos[i] >= len(order[i]):
                continue
            kind, j = order[i][pos[i]]
            link = (half[i - 1] if i > 0 else 0) + (half[i] if i < s - 1 else 0)
            if kind == "F":
                deps = [("F", i - 1, j)] if i > 0 else []
                dur = fwd[i] + link
            else:
                deps = [("F", i, j)] + ([("B", i + 1, j)] if i < s - 1 else [])
                dur = bwd[i] + link
            if all(d in done for d in deps):
                t0 = max([free_at[i]] + [done[d] for d in deps])
                done[(kind, i, j)] = t0 + dur
                free_at[i] = t0 + dur
                pos[i] += 1
                remaining -= 1
                progressed = True
        if not progressed:
            raise RuntimeError("pipeline schedule deadlocked")
    return max(done.values())
