import numpy as np
import pytest
from hypothesis import given, strategies as st

from cimtune import kernels as K
from cimtune.compiler import compile_op
from cimtune.hwmodel import KB, AcceleratorConfig
from cimtune.mapper import InfeasiblePlan, enumerate_strategies
from cimtune.oracle import MUTATIONS, check_trace, mutate_flow, reference_gemm, verify_flow
from cimtune.workload import GemmOp


def test_reference_examples():
    assert reference_gemm([[3]], [[4]]).tolist() == [[12]]
    W = np.arange(12).reshape(3, 4)
    assert np.array_equal(reference_gemm(np.eye(3, dtype=np.int64), W), W)
    assert reference_gemm([[1, 2], [3, 4]], [[5, 6], [7, 8]]).tolist() == [[19, 22], [43, 50]]
    with pytest.raises(ValueError):
        reference_gemm([[1, 2]], [[1, 2]])


def test_reference_no_overflow():
    big = np.full((1, 4), 2 ** 31, dtype=np.int64)
    assert reference_gemm(big, np.full((4, 1), 2, dtype=np.int64))[0, 0] == 4 * 2 ** 32


@pytest.fixture(scope="module")
def mid_cfg(proto):
    return AcceleratorConfig(proto, 2, 2, 128, 4 * KB, 4 * KB)


MID = GemmOp("t", 20, 300, 40)


@pytest.mark.parametrize("s", enumerate_strategies(), ids=str)
def test_valid_flows_pass(mid_cfg, s):
    rep = verify_flow(compile_op(MID, mid_cfg, s), MID, seed=1)
    assert rep.ok, rep.summary()
    assert rep.first_divergence is None


@pytest.mark.parametrize("s", enumerate_strategies(), ids=str)
def test_drop_cmp_detected(mid_cfg, s):
    flow = compile_op(MID, mid_cfg, s)
    rep = verify_flow(mutate_flow(flow, "drop-cmp"), MID)
    assert not rep.ok and not rep.coverage_ok and not rep.numeric_match
    assert rep.missing, "the lost triples should be named"
    b = flow.body
    dropped = b[np.flatnonzero(b[:, K.F_OP] == K.CMP)[(b[:, K.F_OP] == K.CMP).sum() // 2]]
    m, k, n = rep.missing[0]
    assert dropped[K.F_M0] <= m < dropped[K.F_M0] + dropped[K.F_MCNT]
    assert dropped[K.F_K0] <= k < dropped[K.F_K0] + dropped[K.F_KCNT]
    assert dropped[K.F_N0] <= n < dropped[K.F_N0] + dropped[K.F_NCNT]


@pytest.mark.parametrize("s", enumerate_strategies(), ids=str)
def test_store_out_of_bounds_detected(mid_cfg, s):
    rep = verify_flow(mutate_flow(compile_op(MID, mid_cfg, s), "store-oob"), MID)
    assert not rep.address_safety_ok and not rep.ok
    assert rep.first_divergence is not None


@pytest.mark.parametrize("s", enumerate_strategies(), ids=str)
def test_corrupt_store_detected(mid_cfg, s):
    rep = verify_flow(mutate_flow(compile_op(MID, mid_cfg, s), "corrupt-store"), MID)
    assert not rep.numeric_match and not rep.ok
    assert rep.first_divergence[1] >= 0


def test_unknown_mutation(mid_cfg):
    with pytest.raises(ValueError):
        mutate_flow(compile_op(MID, mid_cfg, enumerate_strategies()[0]), "flip")
    assert set(MUTATIONS) == {"drop-cmp", "corrupt-store", "store-oob"}


def test_wrong_op(mid_cfg):
    rep = verify_flow(compile_op(MID, mid_cfg, enumerate_strategies()[0]), GemmOp("x", 2, 2, 2))
    assert not rep.ok


def test_summary_text(mid_cfg):
    rep = verify_flow(mutate_flow(compile_op(MID, mid_cfg, enumerate_strategies()[0]), "drop-cmp"), MID)
    text = rep.summary()
    assert "coverage_ok       False" in text and text.endswith("verdict           FAIL")


@given(st.integers(1, 64), st.integers(1, 64), st.integers(1, 64), st.integers(1, 4), st.integers(1, 4),
       st.sampled_from([1, 2, 4, 8]), st.sampled_from(enumerate_strategies()), st.integers(0, 9))
def test_random_flows_verify(proto, m, k, n, mr, mc, scr, s, seed):
    cfg = AcceleratorConfig(proto, mr, mc, 128, 2 * KB, 2 * KB).with_params(scr=scr)
    op = GemmOp("p", m, k, n)
    try:
        flow = compile_op(op, cfg, s)
    except InfeasiblePlan:
        return
    rep = verify_flow(flow, op, seed)
    assert rep.ok, rep.summary()
    counts, violations, mismatch = check_trace(flow)
    assert counts.shape == (m * k * n,) and (counts == 1).all()
