"""Architectural template: core dimensions, buffers, area and TDP."""

from __future__ import annotations

from dataclasses import dataclass

from .config import MIB, SystemConfig
from .errors import InvalidDesign
from .graph import Core

TC_L1_BYTES = 512


@dataclass(frozen=True, order=True)
class CoreDims:
    tc_rows: int
    tc_cols: int
    vc_width: int

    def __post_init__(self):
        for name in ("tc_rows", "tc_cols", "vc_width"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise InvalidDesign(f"{name} must be an integer >= 1, got {v!r}")

    def __str__(self) -> str:
        return f"{self.tc_rows}x{self.tc_cols},{self.vc_width}"


def derive_buffers(dims: CoreDims, cfg: SystemConfig) -> tuple[int, int]:
    """(tensor-core L2 bytes, vector-core L2 bytes) for the given dims."""
    cm = cfg.cost_model
    eb = cfg.element_bytes
    tc_l2 = round(3 * dims.tc_rows * dims.tc_cols * eb * cm.tile_depth_factor)
    vc_l2 = round(cm.vc_l2_factor * dims.vc_width * eb)
    return tc_l2, vc_l2


def unit_area(core: Core, dims: CoreDims, cfg: SystemConfig) -> float:
    """Area of one core of the given type, SRAM included."""
    cm = cfg.cost_model
    tc_l2, vc_l2 = derive_buffers(dims, cfg)
    if core is Core.TENSOR:
        return cm.a_pe * dims.tc_rows * dims.tc_cols + cm.a_sram * tc_l2 / MIB
    if core is Core.VECTOR:
        return cm.a_lane * dims.vc_width + cm.a_sram * vc_l2 / MIB
    raise ValueError(f"no unit area for {core}")


def unit_power(core: Core, dims: CoreDims, cfg: SystemConfig) -> float:
    cm = cfg.cost_model
    tc_l2, vc_l2 = derive_buffers(dims, cfg)
    if core is Core.TENSOR:
        return cm.p_pe * dims.tc_rows * dims.tc_cols + cm.p_sram * tc_l2 / MIB
    if core is Core.VECTOR:
        return cm.p_lane * dims.vc_width + cm.p_sram * vc_l2 / MIB
    raise ValueError(f"no unit power for {core}")


def _check_counts(num_tc, num_vc):
    for name, v in (("num_tc", num_tc), ("num_vc", num_vc)):
        if not isinstance(v, int) or isinstance(v, bool) or v < 0:
            raise InvalidDesign(f"{name} must be a non-negative integer, got {v!r}")
    if num_tc + num_vc < 1:
        raise InvalidDesign("a design needs at least one core")


def _area(num_tc: int, dims: CoreDims, num_vc: int, cfg: SystemConfig) -> float:
    return (num_tc * unit_area(Core.TENSOR, dims, cfg)
            + num_vc * unit_area(Core.VECTOR, dims, cfg)
            + cfg.cost_model.a_fixed)


def _tdp(num_tc: int, dims: CoreDims, num_vc: int, cfg: SystemConfig) -> float:
    return (num_tc * unit_power(Core.TENSOR, dims, cfg)
            + num_vc * unit_power(Core.VECTOR, dims, cfg)
            + cfg.cost_model.p_fixed)


@dataclass(frozen=True)
class DesignPoint:
    """One ``<#TC, TC-Dim, #VC, VC-Width>`` candidate with derived quantities.

    Build these with :func:`make_design`; the stored area and TDP are always
    the closed-form model evaluated on the other fields.
    """

    num_tc: int
    dims: CoreDims
    num_vc: int
    tc_l1_bytes: int
    tc_l2_bytes: int
    vc_l2_bytes: int
    area_mm2: float
    tdp_watts: float

    @property
    def key(self) -> tuple[int, int, int, int, int]:
        return (self.num_tc, self.dims.tc_rows, self.dims.tc_cols, self.num_vc, self.dims.vc_width)

    @property
    def label(self) -> str:
        d = self.dims
        return f"<{self.num_tc}, {d.tc_rows}x{d.tc_cols}, {self.num_vc}, {d.vc_width}>"

    def counts(self) -> tuple[int, int]:
        return self.num_tc, self.num_vc

    def to_dict(self) -> dict:
        return {
            "num_tc": self.num_tc,
            "tc_rows": self.dims.tc_rows,
            "tc_cols": self.dims.tc_cols,
            "num_vc": self.num_vc,
            "vc_width": self.dims.vc_width,
            "tc_l1_bytes": self.tc_l1_bytes,
            "tc_l2_bytes": self.tc_l2_bytes,
            "vc_l2_bytes": self.vc_l2_bytes,
            "area_mm2": self.area_mm2,
            "tdp_watts": self.tdp_watts,
        }


def make_design(num_tc: int, dims: CoreDims, num_vc: int, cfg: SystemConfig) -> DesignPoint:
    _check_counts(num_tc, num_vc)
    tc_l2, vc_l2 = derive_buffers(dims, cfg)
    return DesignPoint(
        num_tc=num_tc,
        dims=dims,
        num_vc=num_vc,
        tc_l1_bytes=TC_L1_BYTES,
        tc_l2_bytes=tc_l2,
        vc_l2_bytes=vc_l2,
        area_mm2=_area(num_tc, dims, num_vc, cfg),
        tdp_watts=_tdp(num_tc, dims, num_vc, cfg),
    )


def area_of(d: DesignPoint, cfg: SystemConfig) -> float:
    _check_counts(d.num_tc, d.num_vc)
    return _area(d.num_tc, d.dims, d.num_vc, cfg)


def tdp_of(d: DesignPoint, cfg: SystemConfig) -> float:
    _check_counts(d.num_tc, d.num_vc)
    return _tdp(d.num_tc, d.dims, d.num_vc, cfg)


def within_budget(d: DesignPoint, cfg: SystemConfig) -> bool:
    return area_of(d, cfg) <= cfg.area_budget_mm2 and tdp_of(d, cfg) <= cfg.power_budget_w


def counts_fit(num_tc: int, num_vc: int, dims: CoreDims, cfg: SystemConfig) -> bool:
    """Budget check without building a DesignPoint."""
    if num_tc + num_vc < 1:
        return False
    return (_area(num_tc, dims, num_vc, cfg) <= cfg.area_budget_mm2
            and _tdp(num_tc, dims, num_vc, cfg) <= cfg.power_budget_w)


def tpuv2_like(cfg: SystemConfig) -> DesignPoint:
    return make_design(2, CoreDims(128, 128, 128), 2, cfg)


def nvdla_like(cfg: SystemConfig) -> DesignPoint:
    return make_design(1, CoreDims(256, 256, 256), 1, cfg)
