"""Independent correctness checks for compiled flows.

Nothing here reuses the simulator or the functional executor: coverage is
rebuilt by replaying the address trace with element provenance, so a bug in
the execution kernel cannot hide a bug in the compiler.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .compiler import CIM, EXT, IS, OS, InstructionFlow, emit_trace
from .hwmodel import ceil_div
from .mapper import Spatial
from .simulator import FlowExecutionError, functional_execute
from .workload import GemmOp


def reference_gemm(I, W) -> np.ndarray:
    """Plain triple loop over Python integers."""
    I = [[int(v) for v in row] for row in np.asarray(I)]
    W = [[int(v) for v in row] for row in np.asarray(W)]
    m, k = len(I), len(I[0]) if I else 0
    if len(W) != k:
        raise ValueError("inner dimensions differ")
    n = len(W[0]) if W else 0
    out = [[0] * n for _ in range(m)]
    for i in range(m):
        Ii = I[i]
        oi = out[i]
        for p in range(k):
            a = Ii[p]
            if a == 0:
                continue
            Wp = W[p]
            for j in range(n):
                oi[j] += a * Wp[j]
    return np.array(out, dtype=object).astype(np.int64) if m and n else np.zeros((m, n), dtype=np.int64)


@dataclass
class VerificationReport:
    numeric_match: bool
    coverage_ok: bool
    address_safety_ok: bool
    first_divergence: tuple[str, int] | None = None
    missing: list[tuple[int, int, int]] = field(default_factory=list)
    duplicated: list[tuple[int, int, int]] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.numeric_match and self.coverage_ok and self.address_safety_ok

    def summary(self) -> str:
        lines = [
            f"numeric_match     {self.numeric_match}",
            f"coverage_ok       {self.coverage_ok}",
            f"address_safety_ok {self.address_safety_ok}",
        ]
        if self.first_divergence:
            lines.append(f"first_divergence  {self.first_divergence[0]} (instruction {self.first_divergence[1]})")
        if self.missing:
            lines.append(f"missing triples   {len(self.missing)} e.g. {self.missing[:3]}")
        if self.duplicated:
            lines.append(f"repeated triples  {len(self.duplicated)} e.g. {self.duplicated[:3]}")
        for v in self.violations[:5]:
            lines.append(f"violation         {v}")
        lines.append(f"verdict           {'PASS' if self.ok else 'FAIL'}")
        return "\n".join(lines)


class _Geometry:
    """Everything the replay needs, derived from the header and config fields."""

    def __init__(self, flow: InstructionFlow):
        h = flow.header
        op, can, lay = h.op, h.canonical, h.layout
        p = flow.params
        self.M, self.K, self.N = can.m, can.k, can.n
        self.mr, self.mc, self.scr = int(p[K.P_MR]), int(p[K.P_MC]), int(p[K.P_SCR])
        self.al, self.pc = int(p[K.P_AL]), int(p[K.P_PC])
        self.is_size, self.os_size = int(p[K.P_IS_SIZE]), int(p[K.P_OS_SIZE])
        self.dw_in, self.dw_w, self.dw_ps = can.dw_in, can.dw_w, can.dw_psum
        self.plane_bits = self.al * self.pc * self.dw_w
        b_i, b_w = ceil_div(op.dw_in, 8), ceil_div(op.dw_w, 8)
        b_o, b_p = ceil_div(op.dw_out, 8), ceil_div(op.dw_psum, 8)
        self.regions = {
            "I": (lay.in_base, op.m * op.k * b_i, b_i),
            "W": (lay.w_base, op.k * op.n * b_w, b_w),
            "O": (lay.out_base, op.m * op.n * b_o, b_o),
            "P": (lay.psum_base, can.m * can.n * b_p, b_p),
        }
        self.reversed = h.strategy.spatial is Spatial.R
        self.orig = op

    def region_of(self, addr: int) -> str | None:
        for name, (base, size, _) in self.regions.items():
            if base <= addr < base + size:
                return name
        return None

    def elem(self, name: str, addr: int) -> int:
        base, _, b = self.regions[name]
        return (addr - base) // b

    def input_index(self, addr: int, rows: int, cols: int):
        """Canonical (a, k) of each element of a rows x cols input block."""
        name = "W" if self.reversed else "I"
        e0 = self.elem(name, addr)
        a0, k0 = divmod(e0, self.K)  # both layouts put K contiguous
        a = a0 + np.arange(rows)[:, None]
        k = k0 + np.arange(cols)[None, :]
        return a, k

    def weight_index(self, addr: int, kc: int, nc: int):
        name = "I" if self.reversed else "W"
        e0 = self.elem(name, addr)
        n0, k0 = divmod(e0, self.K)
        return k0 + np.arange(kc)[:, None], n0 + np.arange(nc)[None, :]


def _check_block(g: _Geometry, sram: int, rows: int, cols: int, stride: int, width: int, cap: int) -> bool:
    if rows == 0 or cols == 0:
        return True
    if sram < 0 or sram % width:
        return False
    last = sram // width + (rows - 1) * stride + cols
    return last * width <= cap


def check_trace(flow: InstructionFlow, trace=None):
    """Replay the trace with provenance; returns (counts, violations, mismatches)."""
    g = _Geometry(flow)
    trace = emit_trace(flow) if trace is None else trace
    body = flow.body
    M, Kd, N = g.M, g.K, g.N
    counts = np.zeros(M * Kd * N, dtype=np.int64)
    is_tag = np.full(g.is_size // g.dw_in, -1, dtype=np.int64)
    cim_tag = np.full((g.mr * g.mc * g.scr, g.al, g.pc), -1, dtype=np.int64)
    violations: list[str] = []
    mismatch: list[int] = []
    latched = None

    by_instr: dict[int, list[tuple[int, int, int, int]]] = {}
    for i, s, d, a, b in zip(trace.idx, trace.space, trace.dir, trace.addr, trace.bits):
        by_instr.setdefault(int(i), []).append((int(s), int(d), int(a), int(b)))

    for idx in range(body.shape[0]):
        row = body[idx]
        op = int(row[K.F_OP])
        recs = by_instr.get(idx, [])
        rows, kc, nc = int(row[K.F_MCNT]), int(row[K.F_KCNT]), int(row[K.F_NCNT])
        stride = int(row[K.F_STRIDE])
        for s, d, a, b in recs:
            if s == EXT:
                reg = g.region_of(a)
                if reg is None:
                    violations.append(f"[{idx}] EXT address {a} outside every tensor")
            elif s == CIM and not 0 <= a // g.plane_bits < g.mr * g.mc * g.scr:
                violations.append(f"[{idx}] CIM address {a} out of range")
        if op == K.LD_IN:
            ext = next(a for s, d, a, b in recs if s == EXT)
            dst = next(a for s, d, a, b in recs if s == IS)
            if not _check_block(g, dst, rows, kc, stride, g.dw_in, g.is_size):
                violations.append(f"[{idx}] LD_IN writes past Input SRAM")
                continue
            am, kk = g.input_index(ext, rows, kc)
            slots = dst // g.dw_in + np.arange(rows)[:, None] * stride + np.arange(kc)[None, :]
            is_tag[slots] = am * Kd + kk
        elif op == K.UPD_W:
            ext = next(a for s, d, a, b in recs if s == EXT)
            cim = next(a for s, d, a, b in recs if s == CIM)
            pidx = cim // g.plane_bits
            if not 0 <= pidx < cim_tag.shape[0] or kc > g.al or nc > g.pc:
                violations.append(f"[{idx}] UPD_W targets a nonexistent plane")
                continue
            kk, nn = g.weight_index(ext, kc, nc)
            cim_tag[pidx] = -1
            cim_tag[pidx, :kc, :nc] = kk * N + nn
        elif op == K.CMP:
            p = int(row[K.F_PLANE])
            if not 0 <= p < g.scr:
                violations.append(f"[{idx}] CMP plane {p} out of range")
                continue
            src = [a for s, d, a, b in recs if s == IS]
            if src:
                if not _check_block(g, src[0], rows, kc, stride, g.dw_in, g.is_size):
                    violations.append(f"[{idx}] CMP reads past Input SRAM")
                    continue
                slots = src[0] // g.dw_in + np.arange(rows)[:, None] * stride + np.arange(kc)[None, :]
                latched = is_tag[slots]
            elif latched is None or latched.shape != (rows, kc):
                violations.append(f"[{idx}] CMP reuses vectors that were never latched")
                continue
            for r in range(g.mr):
                nlo = r * g.pc
                if nlo >= nc:
                    break
                nn_ = min(g.pc, nc - nlo)
                for c in range(g.mc):
                    klo = c * g.al
                    if klo >= kc:
                        break
                    kk_ = min(g.al, kc - klo)
                    itag = latched[:, klo:klo + kk_]  # rows x kk
                    wtag = cim_tag[(r * g.mc + c) * g.scr + p, :kk_, :nn_]  # kk x nn
                    if (itag < 0).any() or (wtag < 0).any():
                        mismatch.append(idx)
                        continue
                    m_i, k_i = np.divmod(itag, Kd)
                    k_w, n_w = np.divmod(wtag, N)
                    if not (k_i[:, :, None] == k_w[None, :, :]).all():
                        mismatch.append(idx)
                        continue
                    ids = (m_i[:, :, None] * Kd + k_i[:, :, None]) * N + n_w[None, :, :]
                    np.add.at(counts, ids.ravel(), 1)
        elif op in (K.ACC, K.LD_PSUM, K.ST_PSUM, K.ST_OUT):
            for s, d, a, b in recs:
                if s == OS and not _check_block(g, a, rows, nc, stride, g.dw_ps, g.os_size):
                    violations.append(f"[{idx}] {('ACC', 'LD_PSUM', 'ST_PSUM', 'ST_OUT')[op - K.ACC]} touches Output SRAM out of bounds")
            if op == K.ST_OUT:
                ext = next(a for s, d, a, b in recs if s == EXT)
                if g.region_of(ext) != "O":
                    violations.append(f"[{idx}] ST_OUT outside the output tensor")
    return counts, violations, mismatch


def check_phases(flow: InstructionFlow) -> list[str]:
    """Conflicting accesses from the two engines between the same BAR pair."""
    g = _Geometry(flow)
    simul = bool(flow.params[K.P_SIMUL])
    out = []
    phase: list[tuple[int, int, str, int, int, bool]] = []  # (idx, engine, space, lo, hi, write)

    def flush():
        for a in range(len(phase)):
            ia, ea, sa, la, ha, wa = phase[a]
            for b in range(a + 1, len(phase)):
                ib, eb, sb, lb, hb, wb = phase[b]
                if ea == eb or sa != sb or not (wa or wb):
                    continue
                if la < hb and lb < ha:
                    out.append(f"[{ia}/{ib}] cross-engine hazard on {sa}")
                    return

    for idx, row in enumerate(flow.body):
        op = int(row[K.F_OP])
        if op == K.BAR:
            flush()
            phase = []
            continue
        eng = int(row[K.F_ENG])
        rows, kc, nc, stride = int(row[K.F_MCNT]), int(row[K.F_KCNT]), int(row[K.F_NCNT]), int(row[K.F_STRIDE])
        sram = int(row[K.F_SRAM])

        def span(width, cols):
            lo = sram // width
            return lo, lo + (rows - 1) * stride + cols

        if op == K.LD_IN:
            phase.append((idx, eng, "IS", *span(g.dw_in, kc), True))
        elif op == K.UPD_W:
            p = int(row[K.F_PLANE])
            phase.append((idx, eng, "CIM", p, p + 1, True))
            if not simul:
                phase.append((idx, eng, "PORT", 0, 1, True))
        elif op == K.CMP:
            p = int(row[K.F_PLANE])
            phase.append((idx, eng, "CIM", p, p + 1, False))
            if not simul:
                phase.append((idx, eng, "PORT", 0, 1, True))
            if not row[K.F_TAG] & K.TAG_REUSE:
                phase.append((idx, eng, "IS", *span(g.dw_in, kc), False))
        elif op in (K.ACC, K.LD_PSUM):
            phase.append((idx, eng, "OS", *span(g.dw_ps, nc), True))
        elif op in (K.ST_PSUM, K.ST_OUT):
            phase.append((idx, eng, "OS", *span(g.dw_ps, nc), False))
    flush()
    return out


def random_operands(op: GemmOp, seed: int):
    rng = np.random.default_rng(seed)
    lo_i, hi_i = -(1 << (op.dw_in - 1)), 1 << (op.dw_in - 1)
    lo_w, hi_w = -(1 << (op.dw_w - 1)), 1 << (op.dw_w - 1)
    I = rng.integers(lo_i, hi_i, size=(op.m, op.k), dtype=np.int64)
    W = rng.integers(lo_w, hi_w, size=(op.k, op.n), dtype=np.int64)
    return I, W


def _store_index(flow: InstructionFlow, m: int, n: int) -> int:
    """Instruction that should have written output element (m, n)."""
    if flow.header.transposed:
        m, n = n, m
    b = flow.body
    sel = (b[:, K.F_OP] == K.ST_OUT) & (b[:, K.F_M0] <= m) & (m < b[:, K.F_M0] + b[:, K.F_MCNT]) \
        & (b[:, K.F_N0] <= n) & (n < b[:, K.F_N0] + b[:, K.F_NCNT])
    hits = np.flatnonzero(sel)
    return int(hits[0]) if hits.size else -1


def verify_flow(flow: InstructionFlow, op: GemmOp | None = None, seed: int = 0) -> VerificationReport:
    op = flow.header.op if op is None else op
    if op.shape_key() != flow.header.op.shape_key():
        return VerificationReport(False, False, False, ("flow was compiled for a different op", -1))
    I, W = random_operands(op, seed)
    expected = reference_gemm(I, W)
    divergence = None
    try:
        got = functional_execute(flow, I, W)
        numeric = bool(np.array_equal(got, expected))
        if not numeric:
            bad = np.argwhere(got != expected)[0]
            m, n = int(bad[0]), int(bad[1])
            divergence = (f"output[{m},{n}] = {got[m, n]}, expected {expected[m, n]}", _store_index(flow, m, n))
    except FlowExecutionError as exc:
        numeric = False
        divergence = (exc.reason, exc.index)

    counts, violations, mismatch = check_trace(flow)
    violations += check_phases(flow)
    coverage = not mismatch and bool((counts == 1).all())
    can = flow.header.canonical
    missing, dup = [], []
    if not coverage:
        for ids, dst in ((np.flatnonzero(counts == 0), missing), (np.flatnonzero(counts > 1), dup)):
            for t in ids[:16]:
                mk, n = divmod(int(t), can.n)
                m, k = divmod(mk, can.k)
                dst.append((m, k, n))
        if divergence is None:
            if mismatch:
                divergence = ("CMP pairs inputs and weights from different k", mismatch[0])
            elif missing:
                divergence = (f"MAC triple {missing[0]} never performed", -1)
            else:
                divergence = (f"MAC triple {dup[0]} performed more than once", -1)
    safety = not violations
    if not safety and divergence is None:
        divergence = (violations[0], int(violations[0][1:].split("]")[0].split("/")[0]))
    return VerificationReport(numeric, coverage, safety, divergence, missing, dup, violations)


MUTATIONS = ("drop-cmp", "corrupt-store", "store-oob")


def mutate_flow(flow: InstructionFlow, kind: str) -> InstructionFlow:
    """Deliberately broken copy of ``flow`` (test hook for the validator)."""
    g = flow.copy()
    ops = g.body[:, K.F_OP]
    if kind == "drop-cmp":
        hits = np.flatnonzero(ops == K.CMP)
        if hits.size:
            g.body = np.delete(g.body, hits[hits.size // 2], axis=0)
    elif kind == "corrupt-store":
        hits = np.flatnonzero(ops == K.ST_OUT)
        if hits.size:
            g.body[hits[0], K.F_SRAM] += flow.header.canonical.dw_psum
    elif kind == "store-oob":
        hits = np.flatnonzero(ops == K.ST_OUT)
        if hits.size:
            g.body[hits[-1], K.F_SRAM] = flow.params[K.P_OS_SIZE]
    else:
        raise ValueError(f"unknown mutation {kind!r}; choose from {MUTATIONS}")
    return g
