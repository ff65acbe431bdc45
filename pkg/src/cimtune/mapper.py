"""Mapping-strategy space and tiling plans."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, replace
from enum import Enum

from .hwmodel import AcceleratorConfig, Tiling, ceil_div, resident_shape
from .workload import GemmOp


class Spatial(str, Enum):
    NR = "NR"  # weights resident in CIM, activations stream from Input SRAM
    R = "R"  # activations resident in CIM, weights stream


class Temporal(str, Enum):
    IP = "IP"  # input-priority: Input SRAM refreshed in the inner loop
    WP = "WP"  # weight-priority: CIM contents refreshed in the inner loop


class InfeasiblePlan(ValueError):
    """The configuration cannot execute this op under this strategy."""


@dataclass(frozen=True, order=True)
class MappingStrategy:
    spatial: Spatial
    temporal: Temporal
    tiling: Tiling

    def __post_init__(self):
        object.__setattr__(self, "spatial", Spatial(self.spatial))
        object.__setattr__(self, "temporal", Temporal(self.temporal))
        object.__setattr__(self, "tiling", Tiling(self.tiling))

    def __str__(self):
        return f"{self.spatial.value}-{self.temporal.value}-{self.tiling.value}"

    @classmethod
    def parse(cls, text: str) -> "MappingStrategy":
        parts = text.replace("_", "-").upper().split("-")
        if len(parts) != 3:
            raise ValueError(f"strategy must look like NR-IP-AF, got {text!r}")
        try:
            return cls(*parts)
        except ValueError as exc:
            raise ValueError(f"invalid strategy {text!r}") from exc


def enumerate_strategies() -> list[MappingStrategy]:
    """All 8 strategies, NR before R, IP before WP, AF before PF."""
    return [
        MappingStrategy(s, t, f)
        for s, t, f in itertools.product(Spatial, Temporal, Tiling)
    ]


def spatial_only_strategies() -> list[MappingStrategy]:
    """The baseline subset: spatial scheduling only, IP temporal order, AF tiling."""
    return [MappingStrategy(s, Temporal.IP, Tiling.AF) for s in Spatial]


def canonicalize_spatial(op: GemmOp, spatial: Spatial | str) -> GemmOp:
    """Under R the activation is the CIM-resident operand: swap m/n and the input widths."""
    if Spatial(spatial) is Spatial.NR:
        return op
    return replace(op, m=op.n, n=op.m, dw_in=op.dw_w, dw_w=op.dw_in)


@dataclass(frozen=True)
class TilingPlan:
    op: GemmOp  # canonicalized
    strategy: MappingStrategy
    k_res: int
    n_res: int
    m_tile: int
    n_outer: int
    k_outer: int
    m_outer: int
    loop_order: tuple[str, ...]
    psum_spill: bool
    footprint_is_bits: int
    footprint_os_bits: int
    k_strip: int  # K elements per Input SRAM load; < min(K, k_res) when strip-streaming
    os_row_stride: int  # psum row pitch in Output SRAM, elements
    os_absolute: bool  # Output SRAM indexed by absolute row (psums of all rows persist)

    @property
    def strip_streaming(self) -> bool:
        return self.k_strip < min(self.op.k, self.k_res)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategy"] = str(self.strategy)
        d["loop_order"] = list(self.loop_order)
        d["strip_streaming"] = self.strip_streaming
        return d


def plan_tiling(op: GemmOp, cfg: AcceleratorConfig, s: MappingStrategy) -> TilingPlan:
    """Elaborate a strategy into tile sizes for an already canonicalized op.

    Rows per Input SRAM fill are maximized greedily. A psum granule of
    ``m_tile`` rows must also fit the Output SRAM, which caps ``m_tile``.
    """
    M, K, N = op.m, op.k, op.n
    macro = cfg.macro
    k_res, n_res = resident_shape(cfg, s.tiling)
    chunk = cfg.mc * macro.al  # input elements consumed by one array step
    slab = min(K, k_res)
    n_eff = min(N, n_res)

    if slab * op.dw_in <= cfg.is_size:
        k_strip = slab
        m_is = cfg.is_size // (slab * op.dw_in)
    else:
        per_row = min(K, chunk) * op.dw_in
        if per_row > cfg.is_size:
            raise InfeasiblePlan(
                f"Input SRAM ({cfg.is_size} b) cannot hold one input vector ({per_row} b)"
            )
        k_strip = (cfg.is_size // (chunk * op.dw_in)) * chunk
        m_is = 1
    row_psum = n_eff * op.dw_psum
    if row_psum > cfg.os_size:
        raise InfeasiblePlan(f"Output SRAM ({cfg.os_size} b) cannot hold one psum row ({row_psum} b)")
    m_os = cfg.os_size // row_psum
    m_tile = max(1, min(m_is, m_os, M))

    n_outer = ceil_div(N, n_res)
    k_outer = ceil_div(K, k_res)
    m_outer = ceil_div(M, m_tile)

    if s.temporal is Temporal.IP:
        loop_order = ("n_outer", "k_outer", "m_outer")
        os_absolute = k_outer > 1
    else:
        loop_order = ("m_outer", "n_outer", "k_outer")
        os_absolute = False
    fp_os = (M if os_absolute else m_tile) * n_eff * op.dw_psum
    psum_spill = fp_os > cfg.os_size
    if psum_spill:
        os_absolute = False  # spilled granules reuse the same Output SRAM rows
    return TilingPlan(
        op=op,
        strategy=s,
        k_res=k_res,
        n_res=n_res,
        m_tile=m_tile,
        n_outer=n_outer,
        k_outer=k_outer,
        m_outer=m_outer,
        loop_order=loop_order,
        psum_spill=psum_spill,
        footprint_is_bits=m_tile * k_strip * op.dw_in,
        footprint_os_bits=fp_os,
        k_strip=k_strip,
        os_row_stride=n_eff,
        os_absolute=os_absolute,
    )


def plan_for(op: GemmOp, cfg: AcceleratorConfig, s: MappingStrategy) -> TilingPlan:
    """Canonicalize for the spatial choice, then plan."""
    return plan_tiling(canonicalize_spatial(op, s.spatial), cfg, s)
