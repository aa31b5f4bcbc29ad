"""Configuration records: system, cost-model coefficients, search and pipeline knobs.

Everything numeric in the search is reproducible from these values.  System
files are JSON or TOML with the field names below and a ``cost_model`` table.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Mapping

from .errors import ConfigError

MIB = 1 << 20
GIB = 1 << 30


@dataclass(frozen=True)
class CostModel:
    """Area, power and energy coefficients.

    SRAM coefficients are per MiB.  Energies are joules per event.
    """

    a_pe: float = 0.0006        # mm^2 per systolic PE
    a_lane: float = 0.002       # mm^2 per vector lane
    a_sram: float = 0.4         # mm^2 per MiB
    a_fixed: float = 10.0       # mm^2
    p_pe: float = 1.2e-3        # W per PE
    p_lane: float = 4e-3        # W per lane
    p_sram: float = 0.3         # W per MiB
    p_fixed: float = 20.0       # W
    tile_depth_factor: float = 64
    vc_l2_factor: float = 1024
    e_mac: float = 1e-12
    e_vec: float = 2e-12
    e_hbm: float = 7e-12
    e_sram: float = 1e-12
    optimizer_state_multiplier: float = 2.0


@dataclass(frozen=True)
class SystemConfig:
    hbm_bytes: float = 16 * GIB
    hbm_bw_bytes_per_s: float = 900e9
    clock_hz: float = 940e6
    area_budget_mm2: float = 400.0
    power_budget_w: float = 250.0
    interconnect_bw_bytes_per_s: float = 100e9
    element_bytes: int = 2
    cost_model: CostModel = field(default_factory=CostModel)

    def __post_init__(self):
        for f in fields(self):
            if f.name == "cost_model":
                continue
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0 or math.isinf(v):
                raise ConfigError(f"{f.name} must be strictly positive, got {v!r}")
        for f in fields(self.cost_model):
            v = getattr(self.cost_model, f.name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or v < 0:
                raise ConfigError(f"cost_model.{f.name} must be a non-negative number, got {v!r}")
        for name in ("tile_depth_factor", "vc_l2_factor"):
            if getattr(self.cost_model, name) <= 0:
                raise ConfigError(f"cost_model.{name} must be strictly positive")

    def with_costs(self, **kw) -> "SystemConfig":
        return replace(self, cost_model=replace(self.cost_model, **kw))

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def system_from_dict(data: Mapping) -> SystemConfig:
    if not isinstance(data, Mapping):
        raise ConfigError("system config must be a mapping")
    top = {f.name for f in fields(SystemConfig)} - {"cost_model"}
    cm_names = {f.name for f in fields(CostModel)}
    unknown = set(data) - top - {"cost_model"}
    if unknown:
        raise ConfigError(f"unknown system config keys: {sorted(unknown)}")
    cm = data.get("cost_model", {}) or {}
    if not isinstance(cm, Mapping):
        raise ConfigError("cost_model must be a table")
    bad = set(cm) - cm_names
    if bad:
        raise ConfigError(f"unknown cost_model keys: {sorted(bad)}")
    return SystemConfig(**{k: data[k] for k in top if k in data}, cost_model=CostModel(**cm))


def load_system_config(path) -> SystemConfig:
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        try:
            data = tomllib.loads(raw.decode())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: invalid TOML: {exc}") from None
    else:
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return system_from_dict(data)


class Objective(str, Enum):
    THROUGHPUT = "throughput"
    PERF_PER_TDP = "perf-tdp"


@dataclass(frozen=True)
class MetricSpec:
    """What the search maximizes.

    ``PERF_PER_TDP`` requires ``min_throughput`` (samples/s); designs below it
    score ``-inf``.  ``weights`` apply to common (multi-workload) searches.
    """

    objective: Objective = Objective.THROUGHPUT
    min_throughput: float | None = None
    weights: Mapping[str, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "objective", Objective(self.objective))
        if self.objective is Objective.PERF_PER_TDP and self.min_throughput is None:
            raise ConfigError("perf-tdp objective needs min_throughput")
        if self.min_throughput is not None and self.min_throughput < 0:
            raise ConfigError("min_throughput must be >= 0")
        if self.weights is not None:
            if any(w < 0 for w in self.weights.values()):
                raise ConfigError("workload weights must be non-negative")
            if not math.isclose(sum(self.weights.values()), 1.0, rel_tol=1e-9, abs_tol=1e-12):
                raise ConfigError(f"workload weights must sum to 1, got {sum(self.weights.values())}")

    def weights_for(self, names) -> dict[str, float]:
        names = list(names)
        if self.weights is None:
            return {n: 1.0 / len(names) for n in names}
        missing = set(names) - set(self.weights)
        if missing:
            raise ConfigError(f"no weight for workloads {sorted(missing)}")
        return {n: float(self.weights[n]) for n in names}


class Scheme(str, Enum):
    GPIPE = "gpipe"
    PIPEDREAM = "pipedream"


@dataclass(frozen=True)
class PipelineParams:
    depth: int = 1
    scheme: Scheme = Scheme.GPIPE
    num_microbatches: int = 1
    microbatch_size: int = 1
    tmp_width: int = 1

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        for name in ("depth", "num_microbatches", "microbatch_size", "tmp_width"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {v!r}")
        if self.tmp_width & (self.tmp_width - 1):
            raise ConfigError(f"tmp_width must be a power of two, got {self.tmp_width}")

    def in_flight(self, stage: int) -> int:
        """Micro-batches whose activations a stage holds at peak."""
        if not 0 <= stage < self.depth:
            raise ValueError(f"stage {stage} outside pipeline of depth {self.depth}")
        if self.scheme is Scheme.GPIPE:
            return self.num_microbatches
        return min(self.num_microbatches, self.depth - stage)


@dataclass(frozen=True)
class SearchSpace:
    """Dimension-tree bounds for the per-accelerator search."""

    max_rows: int = 256
    max_cols: int = 256
    max_width: int = 256
    min_dim: int = 8
    step_base: int = 2
    hysteresis_levels: int = 1

    def __post_init__(self):
        if self.step_base < 2:
            raise ConfigError("step_base must be >= 2")
        if self.min_dim < 1:
            raise ConfigError("min_dim must be >= 1")
        if min(self.max_rows, self.max_cols, self.max_width) < self.min_dim:
            raise ConfigError("largest dimensions must be >= min_dim")
        if self.hysteresis_levels < 0:
            raise ConfigError("hysteresis_levels must be >= 0")

    def steps(self, top: int) -> list[int]:
        out = []
        v = top
        while v >= self.min_dim:
            out.append(v)
            if v % self.step_base:
                break
            v //= self.step_base
        return out
