import json

import pytest
from hypothesis import given, strategies as st

from cimtune.presets import bert_large, resnet18
from cimtune.workload import (
    GemmOp,
    Workload,
    WorkloadError,
    default_psum_width,
    load_workload,
    merge_operators,
    parse_workload,
    unroll,
    workload_to_dict,
)

from conftest import example


def doc(*ops, **top):
    return {"name": "t", "ops": list(ops), **top}


def test_single_gemm_entry():
    w = parse_workload(doc({"id": "a", "m": 512, "k": 1024, "n": 1024,
                            "widths": {"in": 8, "w": 8, "out": 8, "psum": 24}}))
    assert len(w.ops) == 1
    op = w.ops[0]
    assert (op.m, op.k, op.n, op.dw_psum, op.multiplicity) == (512, 1024, 1024, 24, 1)


def test_conv_im2col():
    w = parse_workload(doc({"id": "c", "type": "conv", "c_in": 3, "k_h": 3, "k_w": 3,
                            "c_out": 64, "h_out": 112, "w_out": 112}))
    op = w.ops[0]
    assert (op.m, op.k, op.n) == (12544, 27, 64)


def test_conv_one_by_one_matches_gemm():
    # a 1x1 kernel on a 1x1 map is a plain c_in -> c_out product
    w = parse_workload(doc({"id": "c", "type": "conv", "c_in": 5, "k_h": 1, "k_w": 1,
                            "c_out": 7, "h_out": 1, "w_out": 1}))
    assert (w.ops[0].m, w.ops[0].k, w.ops[0].n) == (1, 5, 7)


def test_batch_folds_into_m():
    w = parse_workload(doc({"id": "a", "m": 4, "k": 8, "n": 2, "batch": 3}))
    assert w.ops[0].m == 12


def test_repeat_sets_multiplicity():
    w = parse_workload(doc({"id": "a", "m": 4, "k": 8, "n": 2, "repeat": 5}))
    assert w.ops[0].multiplicity == 5
    assert w.total_macs == 5 * 4 * 8 * 2


def test_default_psum_width():
    assert default_psum_width(8, 8, 1024) == 26
    assert default_psum_width(8, 8, 1) == 16
    assert default_psum_width(16, 16, 1 << 20) == 32  # clamped
    w = parse_workload(doc({"id": "a", "m": 1, "k": 3, "n": 1, "widths": {"in": 2, "w": 2, "out": 8}}))
    assert w.ops[0].dw_psum == 8  # never below dw_out


@pytest.mark.parametrize("bad, needle", [
    ({"id": "a", "m": 1, "k": 0, "n": 1}, "'k'"),
    ({"id": "a", "m": 1, "k": 2}, "'n'"),
    ({"id": "a", "m": 1, "k": 2, "n": 1, "depth": 3}, "depth"),
    ({"id": "a", "m": 1.5, "k": 2, "n": 1}, "'m'"),
    ({"id": "a", "type": "pool", "m": 1, "k": 1, "n": 1}, "type"),
    ({"m": 1, "k": 1, "n": 1}, "id"),
    ({"id": "a", "m": 1, "k": 1, "n": 1, "widths": {"acc": 3}}, "acc"),
])
def test_schema_errors_name_the_field(bad, needle):
    with pytest.raises(WorkloadError, match=needle):
        parse_workload(doc(bad))


def test_top_level_errors():
    with pytest.raises(WorkloadError):
        parse_workload("{not json")
    with pytest.raises(WorkloadError, match="ops"):
        parse_workload({"name": "x", "ops": []})
    with pytest.raises(WorkloadError, match="extra"):
        parse_workload({"name": "x", "ops": [{"id": "a", "m": 1, "k": 1, "n": 1}], "extra": 1})
    with pytest.raises(WorkloadError, match="duplicate"):
        parse_workload(doc({"id": "a", "m": 1, "k": 1, "n": 1}, {"id": "a", "m": 2, "k": 1, "n": 1}))


def test_psum_narrower_than_output_rejected():
    with pytest.raises(WorkloadError):
        GemmOp("x", 1, 1, 1, dw_out=16, dw_psum=8)


def test_example_file_parses():
    w = load_workload(example("workload_minimal.json"))
    assert [o.id for o in w.ops] == ["fc", "conv"]
    assert (w.ops[1].m, w.ops[1].k, w.ops[1].n) == (64, 72, 16)


def test_round_trip():
    w = load_workload(example("workload_minimal.json"))
    assert parse_workload(json.dumps(workload_to_dict(w))) == w


def test_merge_bert_attention():
    w = bert_large()
    merged = merge_operators(w)
    qk = [o for o in merged.ops if o.id == "L0.qk"]
    assert qk[0].multiplicity == 24 * 16
    # q, k, v and o share one shape in every layer
    assert [o.id for o in merged.ops] == ["L0.q", "L0.qk", "L0.sv", "L0.ffn1", "L0.ffn2"]
    assert merged.ops[0].multiplicity == 96
    assert merged.total_macs == w.total_macs


def test_merge_cases():
    a = GemmOp("a", 2, 3, 4)
    b = GemmOp("b", 5, 3, 4)
    distinct = Workload("d", (a, b))
    assert merge_operators(distinct) == distinct
    inter = Workload("i", (a, b, GemmOp("a2", 2, 3, 4, multiplicity=2), GemmOp("b2", 5, 3, 4)))
    m = merge_operators(inter)
    assert [(o.id, o.multiplicity) for o in m.ops] == [("a", 3), ("b", 2)]


def test_width_difference_blocks_merge():
    w = Workload("w", (GemmOp("a", 2, 3, 4), GemmOp("b", 2, 3, 4, dw_in=4)))
    assert len(merge_operators(w).ops) == 2


ops_st = st.lists(
    st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.sampled_from([4, 8]),
              st.integers(1, 5)),
    min_size=1, max_size=12,
)


@given(ops_st)
def test_merge_properties(specs):
    w = Workload("p", tuple(GemmOp(f"o{i}", m, k, n, dw_in=d, multiplicity=r)
                            for i, (m, k, n, d, r) in enumerate(specs)))
    m = merge_operators(w)
    assert m.total_macs == sum(r * a * b * c for a, b, c, _, r in specs)
    assert merge_operators(m) == m
    assert len({o.shape_key() for o in m.ops}) == len(m.ops)
    assert sum(o.multiplicity for o in unroll(w).ops) == sum(o.multiplicity for o in w.ops)
    assert all(o.multiplicity == 1 for o in unroll(w).ops)
    assert merge_operators(unroll(m)).total_macs == m.total_macs


def test_resnet_presets():
    w = resnet18()
    assert len(w.ops) == 20
    first = w.ops[0]
    assert (first.m, first.k, first.n) == (112 * 112, 3 * 7 * 7, 64)
    assert len(merge_operators(w).ops) < len(w.ops)
