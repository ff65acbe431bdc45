"""Instruction-driven latency/energy simulation and functional execution."""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels as K
from .compiler import InstructionFlow, kernel_params
from .hwmodel import AcceleratorConfig, CostCoefficients
from .mapper import Spatial, TilingPlan
from .workload import GemmOp

BREAKDOWN_KEYS = ("CIM compute", "CIM update", "Input SRAM", "Output SRAM", "EMA")
TRAFFIC_KEYS = ("EXT RD", "EXT WR", "IS RD", "IS WR", "OS RD", "OS WR", "CIM WR", "EXT PSUM")


class SimulationError(RuntimeError):
    """Flow and configuration do not belong together."""


class FlowExecutionError(RuntimeError):
    """Functional execution hit an invalid access (a compiler bug)."""

    def __init__(self, message: str, index: int):
        super().__init__(f"instruction {index}: {message}")
        self.index = index
        self.reason = message


_EXEC_ERRORS = {
    K.ERR_EXT_OOB: "external address out of bounds",
    K.ERR_CIM_UNINIT: "read of uninitialized CIM cell",
    K.ERR_IS_UNINIT: "read of uninitialized Input SRAM",
    K.ERR_OS_UNINIT: "read of uninitialized Output SRAM",
    K.ERR_SRAM_OOB: "SRAM address out of bounds",
    K.ERR_CIM_COORD: "macro/plane coordinates out of range",
    K.ERR_NO_LATCH: "input reuse without latched vectors",
    K.ERR_OPCODE: "unknown opcode",
}


@dataclass
class SimReport:
    cycles: int
    wall_time_us: float
    energy_pj: float
    energy_breakdown: dict[str, float]
    traffic_bits: dict[str, int]
    macs: int
    cim_utilization: float
    stall_cycles: dict[str, int]
    compute_floor: int = 0
    bandwidth_floor: int = 0
    instructions: int = 0
    peak_macs_per_cycle: float = 0.0
    freq_mhz: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def ops(self) -> int:
        return 2 * self.macs

    @property
    def pj_per_op(self) -> float:
        return self.energy_pj / self.ops if self.ops else math.inf

    @property
    def tops_per_w(self) -> float:
        return self.ops / self.energy_pj if self.energy_pj > 0 else math.inf

    @property
    def gops(self) -> float:
        return self.ops / (self.wall_time_us * 1e3) if self.wall_time_us > 0 else math.inf

    def scaled(self, k: int) -> "SimReport":
        """Report for ``k`` back-to-back repetitions."""
        return SimReport(
            cycles=self.cycles * k,
            wall_time_us=self.wall_time_us * k,
            energy_pj=self.energy_pj * k,
            energy_breakdown={n: v * k for n, v in self.energy_breakdown.items()},
            traffic_bits={n: v * k for n, v in self.traffic_bits.items()},
            macs=self.macs * k,
            cim_utilization=self.cim_utilization,
            stall_cycles={n: v * k for n, v in self.stall_cycles.items()},
            compute_floor=self.compute_floor * k,
            bandwidth_floor=self.bandwidth_floor * k,
            instructions=self.instructions * k,
            peak_macs_per_cycle=self.peak_macs_per_cycle,
            freq_mhz=self.freq_mhz,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("extra")
        d["tops_per_w"] = self.tops_per_w
        d["gops"] = self.gops
        d["pj_per_op"] = self.pj_per_op
        return d


def combine(reports, weights=None) -> SimReport:
    """Sequential composition of per-op reports (multiplicity-weighted).

    Float fields are summed exactly as rationals and rounded once, so the
    result does not depend on whether repeats were merged beforehand.
    """
    reports = list(reports)
    weights = [1] * len(reports) if weights is None else [int(w) for w in weights]
    if not reports:
        raise ValueError("nothing to combine")

    def total(get):
        return sum(Fraction(get(r)) * w for r, w in zip(reports, weights))

    cycles = int(total(lambda r: r.cycles))
    macs = int(total(lambda r: r.macs))
    # peak per cycle can differ per op (input width); weight by cycles
    peak_work = total(lambda r: Fraction(r.peak_macs_per_cycle) * r.cycles)
    return SimReport(
        cycles=cycles,
        wall_time_us=float(total(lambda r: r.wall_time_us)),
        energy_pj=float(total(lambda r: r.energy_pj)),
        energy_breakdown={k: float(total(lambda r: r.energy_breakdown[k])) for k in BREAKDOWN_KEYS},
        traffic_bits={k: int(total(lambda r: r.traffic_bits[k])) for k in TRAFFIC_KEYS},
        macs=macs,
        cim_utilization=float(macs / peak_work) if peak_work else 0.0,
        stall_cycles={k: int(total(lambda r: r.stall_cycles[k])) for k in ("bandwidth-bound", "hazard-bound")},
        compute_floor=int(total(lambda r: r.compute_floor)),
        bandwidth_floor=int(total(lambda r: r.bandwidth_floor)),
        instructions=int(total(lambda r: r.instructions)),
        peak_macs_per_cycle=float(peak_work / cycles) if cycles else 0.0,
        freq_mhz=reports[0].freq_mhz,
    )


def energy_params(c: CostCoefficients, cfg: AcceleratorConfig) -> np.ndarray:
    ep = np.zeros(K.NE)
    ep[K.E_MAC] = cfg.macro.e_mac_pj
    ep[K.E_UPD] = c.e_cim_update
    ep[K.E_IS_RD] = c.e_is_rd
    ep[K.E_IS_WR] = c.e_is_wr
    ep[K.E_OS_RD] = c.e_os_rd
    ep[K.E_OS_WR] = c.e_os_wr
    ep[K.E_EMA] = c.e_ema
    ep[K.E_ACC] = c.e_acc
    return ep


def _report(st: np.ndarray, en: np.ndarray, cfg: AcceleratorConfig, dw_in: int) -> SimReport:
    cycles = int(max(st[K.S_TX], st[K.S_TC]))
    peak = cfg.peak_macs_per_cycle(dw_in)
    macs = int(st[K.S_MACS])
    ext_bits = int(st[K.S_EXT_RD] + st[K.S_EXT_WR])
    breakdown = {k: float(en[i]) for i, k in enumerate(BREAKDOWN_KEYS)}
    traffic = {
        "EXT RD": int(st[K.S_EXT_RD]),
        "EXT WR": int(st[K.S_EXT_WR]),
        "IS RD": int(st[K.S_IS_RD]),
        "IS WR": int(st[K.S_IS_WR]),
        "OS RD": int(st[K.S_OS_RD]),
        "OS WR": int(st[K.S_OS_WR]),
        "CIM WR": int(st[K.S_CIM_WR]),
        "EXT PSUM": int(st[K.S_EXT_PSUM]),
    }
    return SimReport(
        cycles=cycles,
        wall_time_us=cycles / cfg.macro.freq_mhz,
        energy_pj=float(sum(breakdown.values())),
        energy_breakdown=breakdown,
        traffic_bits=traffic,
        macs=macs,
        cim_utilization=macs / (peak * cycles) if cycles else 0.0,
        stall_cycles={"bandwidth-bound": int(st[K.S_STALL_BW]), "hazard-bound": int(st[K.S_STALL_HZ])},
        compute_floor=int(st[K.S_CMP_CYC]),
        bandwidth_floor=-(-ext_bits // cfg.bw),
        instructions=int(st[K.S_NINSTR]),
        peak_macs_per_cycle=peak,
        freq_mhz=cfg.macro.freq_mhz,
    )


def simulate(flow: InstructionFlow, cfg: AcceleratorConfig, c: CostCoefficients) -> SimReport:
    """Run a materialized flow through the two-engine cost model."""
    if flow.header.fingerprint != cfg.fingerprint():
        raise SimulationError(
            f"flow compiled for config {flow.header.fingerprint}, got {cfg.fingerprint()}"
        )
    st = np.zeros(K.NS, dtype=np.int64)
    en = np.zeros(K.NA)
    K.simulate_rows(flow.body, flow.params, energy_params(c, cfg), st, en)
    return _report(st, en, cfg, flow.header.canonical.dw_in)


def simulate_plan(plan: TilingPlan, cfg: AcceleratorConfig, c: CostCoefficients, op: GemmOp | None = None) -> SimReport:
    """Same result as ``simulate(lower(plan))`` without materializing the flow."""
    op = plan.op if op is None else op
    ip = kernel_params(plan, cfg, op)
    st = np.zeros(K.NS, dtype=np.int64)
    en = np.zeros(K.NA)
    dummy = np.zeros((1, K.NF), dtype=np.int64)
    K.emit(K.MODE_SIM, dummy, ip, energy_params(c, cfg), st, en)
    return _report(st, en, cfg, plan.op.dw_in)


def functional_execute(flow: InstructionFlow, inputs, weights) -> np.ndarray:
    """Execute ``flow`` on concrete integer matrices; returns the M x N output.

    ``inputs`` is M x K and ``weights`` K x N in the op's original orientation.
    """
    h = flow.header
    op = h.op
    I = np.asarray(inputs, dtype=np.int64)
    W = np.asarray(weights, dtype=np.int64)
    if I.shape != (op.m, op.k) or W.shape != (op.k, op.n):
        raise ValueError(f"expected {op.m}x{op.k} and {op.k}x{op.n} operands, got {I.shape} and {W.shape}")
    for name, arr, bits in (("inputs", I, op.dw_in), ("weights", W, op.dw_w)):
        if arr.size and (arr.min() < -(1 << (bits - 1)) or arr.max() >= (1 << bits)):
            raise ValueError(f"{name} do not fit in {bits} bits")
    ext_i = np.ascontiguousarray(I).ravel()  # row-major M x K
    ext_w = np.ascontiguousarray(W.T).ravel()  # column-major K x N
    if h.strategy.spatial is Spatial.NR:
        ext_a, ext_b = ext_i, ext_w
    else:
        ext_a, ext_b = ext_w, ext_i
    ext_out = np.zeros(op.m * op.n, dtype=np.int64)
    written = np.zeros(op.m * op.n, dtype=np.int64)
    ext_ps = np.zeros(h.canonical.m * h.canonical.n, dtype=np.int64)
    code, idx = K.execute(flow.body, flow.params, ext_a, ext_b, ext_out, ext_ps, written)
    if code != K.ERR_OK:
        raise FlowExecutionError(_EXEC_ERRORS.get(int(code), f"error {code}"), int(idx))
    out = ext_out.reshape(op.m, op.n)
    out.flags.writeable = True
    return out
