"""GEMM workloads: parsing, convolution lowering and same-size merging."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any

DEFAULT_PSUM_MAX = 32


class WorkloadError(ValueError):
    """Raised for malformed or invalid workload documents."""


@dataclass(frozen=True)
class GemmOp:
    """One M x K x N matrix multiply, possibly repeated ``multiplicity`` times."""

    id: str
    m: int
    k: int
    n: int
    dw_in: int = 8
    dw_w: int = 8
    dw_out: int = 8
    dw_psum: int = 24
    multiplicity: int = 1

    def __post_init__(self):
        for name in ("m", "k", "n"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise WorkloadError(f"op {self.id!r}: {name} must be a positive integer, got {v!r}")
        for name in ("dw_in", "dw_w", "dw_out", "dw_psum"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise WorkloadError(f"op {self.id!r}: {name} must be >= 1, got {v!r}")
        if self.dw_psum < self.dw_out:
            raise WorkloadError(f"op {self.id!r}: dw_psum ({self.dw_psum}) < dw_out ({self.dw_out})")
        if not isinstance(self.multiplicity, int) or self.multiplicity < 1:
            raise WorkloadError(f"op {self.id!r}: multiplicity must be >= 1")

    @property
    def macs(self) -> int:
        return self.m * self.k * self.n

    @property
    def total_macs(self) -> int:
        return self.multiplicity * self.macs

    def shape_key(self) -> tuple:
        """Everything that affects cost; id and multiplicity excluded."""
        return (self.m, self.k, self.n, self.dw_in, self.dw_w, self.dw_out, self.dw_psum)


@dataclass(frozen=True)
class Workload:
    name: str
    ops: tuple[GemmOp, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        if not self.ops:
            raise WorkloadError(f"workload {self.name!r} has no ops")
        ids = [op.id for op in self.ops]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise WorkloadError(f"duplicate op ids: {dup}")

    @property
    def total_macs(self) -> int:
        return sum(op.total_macs for op in self.ops)


def default_psum_width(dw_in: int, dw_w: int, k: int, psum_max: int = DEFAULT_PSUM_MAX) -> int:
    """Lossless accumulator width, clamped to ``psum_max``."""
    width = dw_in + dw_w + math.ceil(math.log2(k)) if k > 1 else dw_in + dw_w
    return min(width, psum_max)


def conv_to_gemm_dims(c_in, k_h, k_w, c_out, h_out, w_out, batch=1) -> tuple[int, int, int]:
    """im2col dimension arithmetic: (M, K, N) = (B*H_out*W_out, C_in*k_h*k_w, C_out)."""
    return batch * h_out * w_out, c_in * k_h * k_w, c_out


_COMMON = {"id", "type", "repeat", "widths"}
_GEMM_FIELDS = _COMMON | {"m", "k", "n", "batch"}
_CONV_FIELDS = _COMMON | {"c_in", "k_h", "k_w", "c_out", "h_out", "w_out", "batch"}
_WIDTH_FIELDS = {"in", "w", "out", "psum"}
_TOP_FIELDS = {"name", "ops", "psum_max"}


def _req_int(entry: dict, key: str, where: str) -> int:
    if key not in entry:
        raise WorkloadError(f"{where}: missing field {key!r}")
    v = entry[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise WorkloadError(f"{where}: field {key!r} must be an integer, got {v!r}")
    if v < 1:
        raise WorkloadError(f"{where}: field {key!r} must be positive, got {v}")
    return v


def _parse_op(entry: Any, idx: int, psum_max: int) -> GemmOp:
    where = f"ops[{idx}]"
    if not isinstance(entry, dict):
        raise WorkloadError(f"{where}: expected an object")
    kind = entry.get("type", "gemm")
    if kind not in ("gemm", "conv"):
        raise WorkloadError(f"{where}: field 'type' must be 'gemm' or 'conv', got {kind!r}")
    allowed = _GEMM_FIELDS if kind == "gemm" else _CONV_FIELDS
    unknown = sorted(set(entry) - allowed)
    if unknown:
        raise WorkloadError(f"{where}: unknown field(s) {unknown}")
    if "id" not in entry or not isinstance(entry["id"], str) or not entry["id"]:
        raise WorkloadError(f"{where}: field 'id' must be a non-empty string")
    where = f"ops[{idx}] ({entry['id']})"

    batch = _req_int(entry, "batch", where) if "batch" in entry else 1
    if kind == "gemm":
        m = batch * _req_int(entry, "m", where)
        k = _req_int(entry, "k", where)
        n = _req_int(entry, "n", where)
    else:
        m, k, n = conv_to_gemm_dims(
            *(_req_int(entry, f, where) for f in ("c_in", "k_h", "k_w", "c_out", "h_out", "w_out")),
            batch=batch,
        )
    repeat = _req_int(entry, "repeat", where) if "repeat" in entry else 1

    widths = entry.get("widths", {})
    if not isinstance(widths, dict):
        raise WorkloadError(f"{where}: field 'widths' must be an object")
    unknown = sorted(set(widths) - _WIDTH_FIELDS)
    if unknown:
        raise WorkloadError(f"{where}: unknown field(s) in widths: {unknown}")
    dw_in = _req_int(widths, "in", where + ".widths") if "in" in widths else 8
    dw_w = _req_int(widths, "w", where + ".widths") if "w" in widths else 8
    dw_out = _req_int(widths, "out", where + ".widths") if "out" in widths else 8
    if "psum" in widths:
        dw_psum = _req_int(widths, "psum", where + ".widths")
    else:
        dw_psum = max(default_psum_width(dw_in, dw_w, k, psum_max), dw_out)
    return GemmOp(entry["id"], m, k, n, dw_in, dw_w, dw_out, dw_psum, repeat)


def parse_workload(text: str | dict) -> Workload:
    """Parse a workload JSON document (string or already-decoded dict)."""
    if isinstance(text, (str, bytes)):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise WorkloadError(f"invalid JSON: {exc}") from exc
    else:
        doc = text
    if not isinstance(doc, dict):
        raise WorkloadError("top level must be an object")
    unknown = sorted(set(doc) - _TOP_FIELDS)
    if unknown:
        raise WorkloadError(f"unknown top-level field(s) {unknown}")
    if not isinstance(doc.get("name"), str):
        raise WorkloadError("field 'name' must be a string")
    ops = doc.get("ops")
    if not isinstance(ops, list) or not ops:
        raise WorkloadError("field 'ops' must be a non-empty list")
    psum_max = _req_int(doc, "psum_max", "top level") if "psum_max" in doc else DEFAULT_PSUM_MAX
    return Workload(doc["name"], tuple(_parse_op(e, i, psum_max) for i, e in enumerate(ops)))


def load_workload(path) -> Workload:
    with open(path) as fh:
        return parse_workload(fh.read())


def workload_to_dict(w: Workload) -> dict:
    return {
        "name": w.name,
        "ops": [
            {
                "id": op.id,
                "type": "gemm",
                "m": op.m,
                "k": op.k,
                "n": op.n,
                "repeat": op.multiplicity,
                "widths": {"in": op.dw_in, "w": op.dw_w, "out": op.dw_out, "psum": op.dw_psum},
            }
            for op in w.ops
        ],
    }


def merge_operators(w: Workload) -> Workload:
    """Collapse same-sized operators into one op each, summing multiplicities.

    Order of first occurrence is kept, and so is the id of the first member.
    """
    groups: dict[tuple, GemmOp] = {}
    for op in w.ops:
        key = op.shape_key()
        if key in groups:
            head = groups[key]
            groups[key] = replace(head, multiplicity=head.multiplicity + op.multiplicity)
        else:
            groups[key] = op
    return Workload(w.name, tuple(groups.values()))


def unroll(w: Workload) -> Workload:
    """Expand every op of multiplicity r into r copies of multiplicity 1."""
    ops = []
    for op in w.ops:
        if op.multiplicity == 1:
            ops.append(op)
            continue
        for i in range(op.multiplicity):
            ops.append(replace(op, id=f"{op.id}#{i}", multiplicity=1))
    return Workload(w.name, tuple(ops))
