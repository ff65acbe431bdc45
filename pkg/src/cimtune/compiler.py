"""Lower tiling plans to engine-tagged instruction flows and address traces."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .hwmodel import AcceleratorConfig, Tiling, ceil_div, compute_cycles, resident_shape
from .mapper import (
    InfeasiblePlan,
    MappingStrategy,
    Spatial,
    Temporal,
    TilingPlan,
    canonicalize_spatial,
    plan_for,
)
from .workload import GemmOp

OPCODES = ("LD_IN", "UPD_W", "CMP", "ACC", "LD_PSUM", "ST_PSUM", "ST_OUT", "BAR")
ENGINES = {K.XFER: "XFER", K.COMPUTE: "COMPUTE", K.NO_ENGINE: "-"}
FIELD_NAMES = (
    "op", "eng", "row", "col", "plane", "m0", "mcnt", "k0", "kcnt",
    "n0", "ncnt", "ext", "sram", "stride", "bits", "tag",
)

SPACES = ("EXT", "IS", "OS", "CIM")
DIRS = ("RD", "WR")
EXT, IS, OS, CIM = range(4)
RD, WR = range(2)

_ALIGN = 64  # bytes between external regions


class CompileError(RuntimeError):
    """Plan and configuration disagree."""


def _elem_bytes(bits: int) -> int:
    return ceil_div(bits, 8)


def _align(x: int) -> int:
    return ceil_div(x, _ALIGN) * _ALIGN


@dataclass(frozen=True)
class ExternalLayout:
    """Byte layout of the original tensors in external memory.

    Input M x K row-major, weights K x N column-major, output M x N row-major,
    then a canonical-orientation psum scratch area.
    """

    in_base: int
    w_base: int
    out_base: int
    psum_base: int
    end: int

    @classmethod
    def for_op(cls, op: GemmOp, canon: GemmOp) -> "ExternalLayout":
        in_base = 0
        w_base = _align(in_base + op.m * op.k * _elem_bytes(op.dw_in))
        out_base = _align(w_base + op.k * op.n * _elem_bytes(op.dw_w))
        psum_base = _align(out_base + op.m * op.n * _elem_bytes(op.dw_out))
        end = psum_base + canon.m * canon.n * _elem_bytes(op.dw_psum)
        return cls(in_base, w_base, out_base, psum_base, end)


@dataclass(frozen=True)
class FlowHeader:
    op_id: str
    fingerprint: str
    strategy: MappingStrategy
    op: GemmOp  # as given
    canonical: GemmOp
    layout: ExternalLayout

    @property
    def transposed(self) -> bool:
        return self.strategy.spatial is Spatial.R


@dataclass
class InstructionFlow:
    header: FlowHeader
    body: np.ndarray  # (n, NF) int64
    params: np.ndarray = field(repr=False)  # kernel parameter vector
    plan: TilingPlan = field(repr=False)

    def __len__(self):
        return self.body.shape[0]

    def opcode_counts(self) -> dict[str, int]:
        ops, counts = np.unique(self.body[:, K.F_OP], return_counts=True)
        return {OPCODES[o]: int(c) for o, c in zip(ops, counts)}

    def copy(self) -> "InstructionFlow":
        return InstructionFlow(self.header, self.body.copy(), self.params.copy(), self.plan)


def kernel_params(plan: TilingPlan, cfg: AcceleratorConfig, op: GemmOp) -> np.ndarray:
    """Integer parameter vector for the emission/simulation/execution kernels."""
    canon = plan.op
    m = cfg.macro
    lay = ExternalLayout.for_op(op, canon)
    ip = np.zeros(K.NP, dtype=np.int64)
    ip[K.P_M], ip[K.P_K], ip[K.P_N] = canon.m, canon.k, canon.n
    ip[K.P_KRES], ip[K.P_NRES] = plan.k_res, plan.n_res
    ip[K.P_MTILE], ip[K.P_KSTRIP] = plan.m_tile, plan.k_strip
    ip[K.P_NOUT], ip[K.P_KOUT], ip[K.P_MOUT] = plan.n_outer, plan.k_outer, plan.m_outer
    ip[K.P_TEMPORAL] = 0 if plan.strategy.temporal is Temporal.IP else 1
    ip[K.P_TILING] = 0 if plan.strategy.tiling is Tiling.AF else 1
    ip[K.P_SPILL] = int(plan.psum_spill)
    ip[K.P_OSABS] = int(plan.os_absolute)
    ip[K.P_OSSTRIDE] = plan.os_row_stride
    ip[K.P_MR], ip[K.P_MC], ip[K.P_SCR] = cfg.mr, cfg.mc, m.scr
    ip[K.P_AL], ip[K.P_PC] = m.al, m.pc
    ip[K.P_DWIN], ip[K.P_DWW] = canon.dw_in, canon.dw_w
    ip[K.P_DWOUT], ip[K.P_DWPS] = canon.dw_out, canon.dw_psum
    ip[K.P_SIMUL] = int(m.simultaneous_compute_update)
    b_in, b_w = _elem_bytes(op.dw_in), _elem_bytes(op.dw_w)
    b_out, b_ps = _elem_bytes(op.dw_out), _elem_bytes(op.dw_psum)
    if plan.strategy.spatial is Spatial.NR:
        # canonical input = I (row-major), canonical weight = W (col-major)
        ip[K.P_IN_BASE:K.P_IN_B + 1] = (lay.in_base, op.k, 1, b_in)
        ip[K.P_W_BASE:K.P_W_B + 1] = (lay.w_base, 1, op.k, b_w)
        ip[K.P_OUT_BASE:K.P_OUT_B + 1] = (lay.out_base, op.n, 1, b_out)
    else:
        # canonical input row n = column n of W; canonical weight column m = row m of I
        ip[K.P_IN_BASE:K.P_IN_B + 1] = (lay.w_base, op.k, 1, b_w)
        ip[K.P_W_BASE:K.P_W_B + 1] = (lay.in_base, 1, op.k, b_in)
        ip[K.P_OUT_BASE:K.P_OUT_B + 1] = (lay.out_base, 1, op.n, b_out)
    ip[K.P_PS_BASE:K.P_PS_B + 1] = (lay.psum_base, canon.n, 1, b_ps)
    ip[K.P_BW] = cfg.bw
    ip[K.P_CC] = compute_cycles(m, canon.dw_in)
    ip[K.P_WUW] = m.wuw
    ip[K.P_IS_SIZE], ip[K.P_OS_SIZE] = cfg.is_size, cfg.os_size
    return ip


def _check_plan(plan: TilingPlan, cfg: AcceleratorConfig):
    if plan.footprint_is_bits > cfg.is_size:
        raise CompileError("plan Input SRAM footprint exceeds is_size")
    if plan.m_tile * plan.os_row_stride * plan.op.dw_psum > cfg.os_size:
        raise CompileError("plan psum granule exceeds os_size")
    if (plan.k_res, plan.n_res) != resident_shape(cfg, plan.strategy.tiling):
        raise CompileError("plan resident shape does not match the configuration")


def lower_plan(plan: TilingPlan, cfg: AcceleratorConfig, op: GemmOp) -> InstructionFlow:
    """Materialize the flow for a plan of ``op`` (``op`` in its original orientation)."""
    _check_plan(plan, cfg)
    ip = kernel_params(plan, cfg, op)
    ep = np.zeros(K.NE)
    st = np.zeros(K.NS, dtype=np.int64)
    en = np.zeros(K.NA)
    dummy = np.zeros((1, K.NF), dtype=np.int64)
    n = K.emit(K.MODE_COUNT, dummy, ip, ep, st, en)
    body = np.zeros((n, K.NF), dtype=np.int64)
    K.emit(K.MODE_WRITE, body, ip, ep, st, en)
    header = FlowHeader(
        op_id=op.id,
        fingerprint=cfg.fingerprint(),
        strategy=plan.strategy,
        op=op,
        canonical=plan.op,
        layout=ExternalLayout.for_op(op, plan.op),
    )
    return InstructionFlow(header, body, ip, plan)


def lower(plan: TilingPlan, cfg: AcceleratorConfig, op: GemmOp | None = None) -> InstructionFlow:
    """Lower ``plan``; ``op`` is the pre-canonicalization op (derived if omitted)."""
    if op is None:
        op = canonicalize_spatial(plan.op, plan.strategy.spatial)  # involution
    return lower_plan(plan, cfg, op)


def compile_op(op: GemmOp, cfg: AcceleratorConfig, s: MappingStrategy) -> InstructionFlow:
    return lower_plan(plan_for(op, cfg, s), cfg, op)


# ------------------------------------------------------------------ trace


@dataclass
class AddressTrace:
    """Columns: instruction index, space, direction, address, size in bits."""

    idx: np.ndarray
    space: np.ndarray
    dir: np.ndarray
    addr: np.ndarray
    bits: np.ndarray

    def __len__(self):
        return self.idx.shape[0]

    def totals(self) -> dict[str, int]:
        """Bits per ``SPACE DIR`` pair, e.g. ``{"EXT RD": ...}``."""
        out = {}
        for s in range(4):
            for d in range(2):
                m = (self.space == s) & (self.dir == d)
                out[f"{SPACES[s]} {DIRS[d]}"] = int(self.bits[m].sum())
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["idx", "space", "dir", "addr", "bits"])
        for i, s, d, a, b in zip(self.idx, self.space, self.dir, self.addr, self.bits):
            w.writerow([int(i), SPACES[s], DIRS[d], int(a), int(b)])
        return buf.getvalue()


def emit_trace(flow: InstructionFlow) -> AddressTrace:
    b = flow.body
    ip = flow.params
    op = b[:, K.F_OP]
    idx = np.arange(b.shape[0], dtype=np.int64)
    rows, kc, nc = b[:, K.F_MCNT], b[:, K.F_KCNT], b[:, K.F_NCNT]
    plane_bits = ip[K.P_AL] * ip[K.P_PC] * ip[K.P_DWW]
    psum_bits = rows * nc * ip[K.P_DWPS]
    recs = []  # (mask, space, dir, addr, bits)

    def add(mask, space, d, addr, bits):
        recs.append((idx[mask], np.full(mask.sum(), space), np.full(mask.sum(), d), addr[mask], bits[mask]))

    ext, sram, bits = b[:, K.F_EXT], b[:, K.F_SRAM], b[:, K.F_BITS]
    m = op == K.LD_IN
    add(m, EXT, RD, ext, bits)
    add(m, IS, WR, sram, bits)
    m = op == K.UPD_W
    add(m, EXT, RD, ext, bits)
    add(m, CIM, WR, sram, bits)
    cmp_ = op == K.CMP
    fresh = cmp_ & ((b[:, K.F_TAG] & K.TAG_REUSE) == 0)
    add(fresh, IS, RD, sram, rows * kc * ip[K.P_DWIN])
    add(cmp_, CIM, RD, b[:, K.F_PLANE] * plane_bits, kc * nc * ip[K.P_DWW])
    acc = op == K.ACC
    add(acc & ((b[:, K.F_TAG] & K.TAG_ACCUM) != 0), OS, RD, sram, psum_bits)
    add(acc, OS, WR, sram, psum_bits)
    m = op == K.LD_PSUM
    add(m, EXT, RD, ext, bits)
    add(m, OS, WR, sram, bits)
    m = op == K.ST_PSUM
    add(m, OS, RD, sram, bits)
    add(m, EXT, WR, ext, bits)
    m = op == K.ST_OUT
    add(m, OS, RD, sram, psum_bits)
    add(m, EXT, WR, ext, bits)

    cols = [np.concatenate([r[i] for r in recs]).astype(np.int64) for i in range(5)]
    # stable order: by instruction, then by emission order within the instruction
    seq = np.concatenate([np.full(len(r[0]), k) for k, r in enumerate(recs)])
    order = np.lexsort((seq, cols[0]))
    return AddressTrace(*(c[order] for c in cols))


# ------------------------------------------------------------------- dumps


def format_instruction(row) -> str:
    o = int(row[K.F_OP])
    name = OPCODES[o]
    if o == K.BAR:
        return "BAR -"
    eng = ENGINES[int(row[K.F_ENG])]
    r = {n: int(row[i]) for i, n in enumerate(FIELD_NAMES)}
    if o == K.LD_IN:
        args = f"m={r['m0']}+{r['mcnt']} k={r['k0']}+{r['kcnt']} ext={r['ext']} is={r['sram']} stride={r['stride']}"
    elif o == K.UPD_W:
        args = (f"macro=({r['row']},{r['col']}) plane={r['plane']} k={r['k0']}+{r['kcnt']} "
                f"n={r['n0']}+{r['ncnt']} ext={r['ext']} cim={r['sram']}")
    elif o == K.CMP:
        args = (f"plane={r['plane']} m={r['m0']}+{r['mcnt']} k={r['k0']}+{r['kcnt']} "
                f"n={r['n0']}+{r['ncnt']} is={r['sram']} stride={r['stride']} tag={r['tag']}")
    elif o == K.ACC:
        args = f"m={r['m0']}+{r['mcnt']} n={r['n0']}+{r['ncnt']} os={r['sram']} stride={r['stride']} tag={r['tag']}"
    else:
        args = (f"m={r['m0']}+{r['mcnt']} n={r['n0']}+{r['ncnt']} os={r['sram']} "
                f"stride={r['stride']} ext={r['ext']}")
    return f"{name} {eng} {args} bits={r['bits']}"


def dump_flow(flow: InstructionFlow) -> str:
    h = flow.header
    c = h.canonical
    lines = [
        f"# op={h.op_id} config={h.fingerprint} strategy={h.strategy}",
        f"# canonical M={c.m} K={c.k} N={c.n} transposed={int(h.transposed)}",
        f"# ext in={h.layout.in_base} w={h.layout.w_base} out={h.layout.out_base} psum={h.layout.psum_base}",
    ]
    lines.extend(format_instruction(row) for row in flow.body)
    return "\n".join(lines) + "\n"


__all__ = [
    "AddressTrace", "CompileError", "ExternalLayout", "FlowHeader", "InfeasiblePlan",
    "InstructionFlow", "compile_op", "dump_flow", "emit_trace", "kernel_params", "lower",
    "lower_plan",
]
