"""The pure-Python kernels must agree bit for bit with the compiled ones."""

import json
import os
import subprocess
import sys
import textwrap

from cimtune._jit import backend

SCRIPT = textwrap.dedent("""
    import json, sys
    import numpy as np
    from cimtune._jit import backend
    from cimtune.compiler import compile_op, dump_flow
    from cimtune.hwmodel import KB, AcceleratorConfig, load_coeffs, load_macro
    from cimtune.mapper import enumerate_strategies, plan_for
    from cimtune.oracle import random_operands
    from cimtune.simulator import functional_execute, simulate_plan
    from cimtune.workload import GemmOp

    ex = sys.argv[1]
    proto = load_macro(ex + "/macro_prototype.json")
    c = load_coeffs(ex + "/coeffs_default.json")
    cfg = AcceleratorConfig(proto, 2, 3, 128, 2 * KB, KB).with_params(scr=4)
    out = {"backend": backend(), "cases": []}
    for op in (GemmOp("a", 7, 300, 45), GemmOp("b", 33, 20, 9, dw_in=4)):
        I, W = random_operands(op, 0)
        for s in enumerate_strategies():
            flow = compile_op(op, cfg, s)
            out["cases"].append({
                "flow": dump_flow(flow),
                "report": simulate_plan(plan_for(op, cfg, s), cfg, c, op).to_dict(),
                "result": functional_execute(flow, I, W).tolist(),
            })
    print(json.dumps(out))
""")


def _run(no_jit: bool) -> dict:
    env = dict(os.environ)
    env.pop("CIMTUNE_NO_JIT", None)
    if no_jit:
        env["CIMTUNE_NO_JIT"] = "1"
    ex = os.path.join(os.path.dirname(__file__), "..", "docs", "examples")
    proc = subprocess.run([sys.executable, "-c", SCRIPT, ex], env=env, capture_output=True, text=True, timeout=600)
    assert proc.returncode == 0, proc.stderr
    return json.loads(proc.stdout)


def test_python_fallback_matches_jit():
    fast, slow = _run(False), _run(True)
    assert slow["backend"] == "python"
    assert fast["backend"] == backend()
    assert len(fast["cases"]) == len(slow["cases"]) == 16
    for a, b in zip(fast["cases"], slow["cases"]):
        assert a == b
