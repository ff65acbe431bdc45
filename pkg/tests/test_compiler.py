import numpy as np
import pytest
from hypothesis import given, strategies as st

from cimtune import kernels as K
from cimtune.compiler import CompileError, compile_op, dump_flow, emit_trace, lower, lower_plan
from cimtune.hwmodel import KB, AcceleratorConfig, CostCoefficients
from cimtune.mapper import InfeasiblePlan, MappingStrategy, enumerate_strategies, plan_for
from cimtune.oracle import check_phases
from cimtune.simulator import simulate
from cimtune.workload import GemmOp

NR = [s for s in enumerate_strategies() if s.spatial.value == "NR"]


@pytest.fixture
def one_macro(proto):
    return AcceleratorConfig(proto, 1, 1, 512, 64 * 8, 64 * 8).with_params(scr=1)


def ops_of(flow):
    return [int(o) for o in flow.body[:, K.F_OP]]


@pytest.mark.parametrize("s", NR, ids=str)
def test_minimal_flow(one_macro, s):
    # one 64x8 plane: a single plane update covering all 8 columns, then one step each
    flow = compile_op(GemmOp("t", 1, 64, 8), one_macro, s)
    assert ops_of(flow) == [K.UPD_W, K.LD_IN, K.BAR, K.CMP, K.ACC, K.BAR, K.ST_OUT, K.BAR]
    upd = flow.body[0]
    assert upd[K.F_NCNT] == 8 and upd[K.F_KCNT] == 64 and upd[K.F_BITS] == 64 * 8 * 8


@pytest.mark.parametrize("s", [s for s in enumerate_strategies() if s.spatial.value == "R"], ids=str)
def test_minimal_flow_reversed(one_macro, s):
    # canonical op is 8 x 64 x 1; give the SRAMs room for all 8 rows
    roomy = one_macro.with_params(is_size=8 * 64 * 8, os_size=8 * 24)
    flow = compile_op(GemmOp("t", 1, 64, 8), roomy, s)
    counts = flow.opcode_counts()
    assert counts["UPD_W"] == counts["LD_IN"] == counts["CMP"] == counts["ACC"] == counts["ST_OUT"] == 1
    assert ops_of(flow)[-1] == K.BAR


def test_minimal_dump_and_trace(one_macro):
    flow = compile_op(GemmOp("t", 1, 64, 8), one_macro, NR[0])
    text = dump_flow(flow).splitlines()
    assert text[0].startswith("# op=t config=") and text[0].endswith("strategy=NR-IP-AF")
    assert text[1] == "# canonical M=1 K=64 N=8 transposed=0"
    assert text[2] == "# ext in=0 w=64 out=576 psum=640"
    assert text[3] == "UPD_W XFER macro=(0,0) plane=0 k=0+64 n=0+8 ext=64 cim=0 bits=4096"
    assert text[-1] == "BAR -"
    assert emit_trace(flow).to_csv().splitlines() == [
        "idx,space,dir,addr,bits",
        "0,EXT,RD,64,4096",
        "0,CIM,WR,0,4096",
        "1,EXT,RD,0,512",
        "1,IS,WR,0,512",
        "3,IS,RD,0,512",
        "3,CIM,RD,0,4096",
        "4,OS,WR,0,192",
        "6,OS,RD,0,192",
        "6,EXT,WR,576,64",
    ]


def test_plan_config_mismatch(small_cfg, proto):
    plan = plan_for(GemmOp("a", 8, 8, 8), small_cfg, NR[0])
    other = AcceleratorConfig(proto, 1, 1, 128, 16 * KB, 16 * KB)
    with pytest.raises(CompileError):
        lower_plan(plan, other, GemmOp("a", 8, 8, 8))


def test_lower_derives_original_op(small_cfg):
    op = GemmOp("a", 5, 70, 9)
    s = MappingStrategy("R", "WP", "PF")
    a = lower(plan_for(op, small_cfg, s), small_cfg)
    b = compile_op(op, small_cfg, s)
    assert np.array_equal(a.body, b.body)


def test_interchange_toy(proto):
    # 2 N tiles x 2 M tiles with one K tile: IP loads each weight tile once and
    # re-reads inputs per N tile; WP keeps inputs and reloads weights per M tile.
    cfg = AcceleratorConfig(proto, 1, 1, 128, 64 * 8 * 2, 64 * KB).with_params(scr=1)
    op = GemmOp("a", 4, 64, 16)
    ip = compile_op(op, cfg, MappingStrategy("NR", "IP", "AF")).opcode_counts()
    wp = compile_op(op, cfg, MappingStrategy("NR", "WP", "AF")).opcode_counts()
    assert ip["CMP"] == wp["CMP"] == 4
    assert (ip["UPD_W"], ip["LD_IN"]) == (2, 4)
    assert (wp["UPD_W"], wp["LD_IN"]) == (4, 2)


def test_spill_pairs(tradeoff_cfg):
    op = GemmOp("q", 512, 1024, 1024)
    plan = plan_for(op, tradeoff_cfg, MappingStrategy("NR", "IP", "PF"))
    assert plan.psum_spill and plan.k_outer == 8
    b = lower_plan(plan, tradeoff_cfg, op).body
    st_bits = b[b[:, K.F_OP] == K.ST_PSUM, K.F_BITS].sum()
    ld_bits = b[b[:, K.F_OP] == K.LD_PSUM, K.F_BITS].sum()
    assert st_bits == ld_bits == (plan.k_outer - 1) * op.m * op.n * op.dw_psum


small = st.integers(1, 48)
geo = st.tuples(st.integers(1, 3), st.integers(1, 3), st.sampled_from([1, 2, 4, 8]),
                st.sampled_from([KB // 2, 2 * KB, 8 * KB]), st.sampled_from([KB // 2, 2 * KB, 16 * KB]),
                st.sampled_from([32, 128, 512]))


@given(small, small, small, geo, st.sampled_from(enumerate_strategies()), st.booleans())
def test_flow_invariants(proto, m, k, n, g, s, simul):
    mr, mc, scr, is_size, os_size, bw = g
    macro = proto.__class__(**{**proto.__dict__, "scr": scr, "simultaneous_compute_update": simul})
    cfg = AcceleratorConfig(macro, mr, mc, bw, is_size, os_size)
    op = GemmOp("a", m, k, n)
    try:
        flow = compile_op(op, cfg, s)
    except InfeasiblePlan:
        return
    b = flow.body
    code = b[:, K.F_OP]
    assert code[-1] == K.BAR
    xfer = np.isin(code, [K.LD_IN, K.UPD_W, K.LD_PSUM, K.ST_PSUM, K.ST_OUT])
    assert (b[xfer, K.F_ENG] == K.XFER).all()
    assert (b[np.isin(code, [K.CMP, K.ACC]), K.F_ENG] == K.COMPUTE).all()
    assert (b[code == K.BAR, 1:] == np.where(np.arange(1, K.NF) == K.F_ENG, K.NO_ENGINE, 0)).all()
    cmp_ = b[code == K.CMP]
    assert (cmp_[:, K.F_MCNT] * cmp_[:, K.F_KCNT] * cmp_[:, K.F_NCNT]).sum() == m * k * n
    assert (cmp_[:, K.F_PLANE] < scr).all() and (cmp_[:, K.F_ROW] < mr).all() and (cmp_[:, K.F_COL] < mc).all()
    assert b[code == K.ST_OUT, K.F_BITS].sum() == m * n * op.dw_out
    c = flow.header.canonical  # under R the CIM-resident operand is the activation
    upd = b[code == K.UPD_W, K.F_BITS].sum()
    assert upd >= c.k * c.n * c.dw_w
    if s.temporal.value == "IP":
        assert upd == c.k * c.n * c.dw_w  # full reuse of the resident operand
    tr = emit_trace(flow)
    assert (tr.addr[tr.space == 1] + tr.bits[tr.space == 1] <= is_size).all()
    assert (tr.addr[tr.space == 2] + tr.bits[tr.space == 2] <= os_size).all()
    tot = tr.totals()
    rep = simulate(flow, cfg, CostCoefficients())
    for key in ("EXT RD", "EXT WR", "IS RD", "IS WR", "OS RD", "OS WR", "CIM WR"):
        assert tot[key] == rep.traffic_bits[key], key
    assert check_phases(flow) == []


def test_deterministic(small_cfg):
    op = GemmOp("a", 33, 150, 20)
    for s in enumerate_strategies():
        a, b = compile_op(op, small_cfg, s), compile_op(op, small_cfg, s)
        assert dump_flow(a) == dump_flow(b)
        assert emit_trace(a).to_csv() == emit_trace(b).to_csv()
