"""Built-in workloads used by the examples and the acceptance suite."""

from __future__ import annotations

from .workload import GemmOp, Workload, conv_to_gemm_dims, default_psum_width


def _op(id, m, k, n, repeat=1, dw=8):
    return GemmOp(id, m, k, n, dw, dw, dw, default_psum_width(dw, dw, k), repeat)


def bert_large_layer(layer: int = 0, seq: int = 512, hidden: int = 1024, heads: int = 16, ffn: int = 4096) -> list[GemmOp]:
    d = hidden // heads
    p = f"L{layer}."
    return [
        _op(p + "q", seq, hidden, hidden),
        _op(p + "k", seq, hidden, hidden),
        _op(p + "v", seq, hidden, hidden),
        _op(p + "qk", seq, d, seq, heads),
        _op(p + "sv", seq, seq, d, heads),
        _op(p + "o", seq, hidden, hidden),
        _op(p + "ffn1", seq, hidden, ffn),
        _op(p + "ffn2", seq, ffn, hidden),
    ]


def bert_large(layers: int = 24, seq: int = 512) -> Workload:
    """Encoder stack, one entry per GEMM per layer (unmerged)."""
    ops = []
    for i in range(layers):
        ops += bert_large_layer(i, seq)
    return Workload(f"bert-large-s{seq}", tuple(ops))


def bert_attention_qk(seq: int = 512, d: int = 64) -> GemmOp:
    return _op("attn.qk", seq, d, seq)


# (c_in, c_out, kernel, stride, h_in) per convolution of ResNet-18 at 224x224
_RESNET18 = [("conv1", 3, 64, 7, 2, 224)]
for stage, (cin, cout, hin) in enumerate([(64, 64, 56), (64, 128, 56), (128, 256, 28), (256, 512, 14)], start=2):
    for blk in range(2):
        first = blk == 0
        stride = 2 if first and stage > 2 else 1
        c0 = cin if first else cout
        h0 = hin if first else hin // (2 if stage > 2 else 1)
        _RESNET18.append((f"s{stage}b{blk}c1", c0, cout, 3, stride, h0))
        _RESNET18.append((f"s{stage}b{blk}c2", cout, cout, 3, 1, h0 // stride))
        if first and stride == 2:
            _RESNET18.append((f"s{stage}b{blk}ds", c0, cout, 1, stride, h0))


def resnet18(batch: int = 1) -> Workload:
    """Convolutions lowered to GEMMs via im2col (pooling and FC omitted)."""
    ops = []
    for name, cin, cout, k, stride, hin in _RESNET18:
        pad = k // 2
        hout = (hin + 2 * pad - k) // stride + 1
        m, kk, n = conv_to_gemm_dims(cin, k, k, cout, hout, hout, batch)
        ops.append(_op(name, m, kk, n))
    return Workload("resnet18", tuple(ops))


def square_net(sizes=(256, 512, 1024)) -> Workload:
    return Workload("square", tuple(_op(f"sq{s}", s, s, s) for s in sizes))


PRESETS = {"bert-large": bert_large, "resnet18": resnet18, "square": square_net}
