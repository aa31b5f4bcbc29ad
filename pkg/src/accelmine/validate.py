"""Schedule validator, written independently of the schedulers it checks."""

from __future__ import annotations

from collections import defaultdict
from typing import Iterable, Mapping

from .graph import Core


def schedule_violations(
    durations: Mapping[str, int],
    affinities: Mapping[str, Core],
    edges: Iterable[tuple[str, str]],
    start: Mapping[str, int],
    core_counts: tuple[int, int],
    makespan: int | None = None,
    core_index: Mapping[str, Iterable] | None = None,
) -> list[str]:
    """Human-readable list of precedence, capacity and bookkeeping errors.

    An empty list means the schedule is valid.
    """
    problems = []
    ops = set(durations)
    missing = sorted(ops - set(start))
    extra = sorted(set(start) - ops)
    if missing:
        problems.append(f"ops without a start time: {missing}")
    if extra:
        problems.append(f"start times for unknown ops: {extra}")
    for v in sorted(ops & set(start)):
        if start[v] < 0:
            problems.append(f"{v}: negative start {start[v]}")

    for u, v in edges:
        if u in start and v in start and start[v] < start[u] + durations[u]:
            problems.append(
                f"edge {u}->{v}: {v} starts at {start[v]} before {u} finishes at {start[u] + durations[u]}"
            )

    limit = {Core.TENSOR: core_counts[0], Core.VECTOR: core_counts[1]}
    for kind in (Core.TENSOR, Core.VECTOR):
        deltas = defaultdict(int)
        for v in ops & set(start):
            aff = Core(affinities[v])
            if aff is kind or aff is Core.BOTH:
                deltas[start[v]] += 1
                deltas[start[v] + durations[v]] -= 1
        live = 0
        for t in sorted(deltas):
            live += deltas[t]
            if live > limit[kind]:
                problems.append(f"{kind.value} cores oversubscribed at cycle {t}: {live} > {limit[kind]}")
                break

    if core_index is not None:
        busy = defaultdict(list)
        for v, slots in core_index.items():
            if v not in start:
                continue
            for kind, idx in slots:
                kind = Core(kind)
                if not 0 <= idx < limit[kind]:
                    problems.append(f"{v}: {kind.value} core index {idx} outside 0..{limit[kind] - 1}")
                busy[(kind, idx)].append((start[v], start[v] + durations[v], v))
            kinds = {Core(k) for k, _ in slots}
            aff = Core(affinities[v])
            need = {Core.TENSOR, Core.VECTOR} if aff is Core.BOTH else {aff}
            if kinds != need:
                problems.append(f"{v}: assigned to {sorted(k.value for k in kinds)}, needs {sorted(k.value for k in need)}")
        for key, spans in busy.items():
            spans.sort()
            for (s0, e0, a), (s1, e1, b) in zip(spans, spans[1:]):
                if s1 < e0:
                    problems.append(f"{a} and {b} overlap on {key[0].value} core {key[1]}")

    if makespan is not None and start:
        real = max(start[v] + durations[v] for v in ops & set(start)) if ops & set(start) else 0
        if real != makespan:
            problems.append(f"reported makespan {makespan} != actual {real}")
    elif makespan not in (None, 0) and not start:
        problems.append(f"reported makespan {makespan} for an empty schedule")
    return problems


def validate(tasks, sched) -> list[str]:
    """Check a :class:`~accelmine.schedule.Schedule` against its task graph."""
    return schedule_violations(
        tasks.dur, tasks.core, tasks.edges, sched.start, sched.core_counts,
        sched.makespan, sched.core_index,
    )
