"""Training metrics and the ranking order shared by every search stage."""

from __future__ import annotations

import math

from .arch import DesignPoint
from .config import MetricSpec, Objective, SystemConfig


def throughput(samples: float, clock_hz: float, makespan_cycles: int) -> float:
    """Samples per second for one iteration of ``makespan_cycles``."""
    if makespan_cycles <= 0:
        return math.inf
    return samples * clock_hz / makespan_cycles


def score(metric: MetricSpec, thr: float, tdp_watts: float) -> float:
    """Metric value given throughput and TDP; ``-inf`` if the floor is missed."""
    if metric.objective is Objective.THROUGHPUT:
        if metric.min_throughput is not None and thr < metric.min_throughput:
            return -math.inf
        return thr
    if thr < metric.min_throughput:
        return -math.inf
    return thr / tdp_watts


def design_metric(metric: MetricSpec, design: DesignPoint, makespan_cycles: int,
                  samples: float, cfg: SystemConfig) -> float:
    return score(metric, throughput(samples, cfg.clock_hz, makespan_cycles), design.tdp_watts)


def rank_key(value: float, design: DesignPoint) -> tuple:
    """Sort ascending for best-first: higher metric, then smaller area, then tuple."""
    return (-value, design.area_mm2, design.key)
