"""Time the hot kernels with numba and with the pure-Python fallback.

Each backend runs in its own interpreter because the choice is fixed at import.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import json
import os
import subprocess
import sys
import textwrap

CHILD = textwrap.dedent("""
    import json, sys, time
    from cimtune._jit import backend
    from cimtune.compiler import compile_op
    from cimtune.hwmodel import KB, AcceleratorConfig, load_coeffs, load_macro
    from cimtune.mapper import MappingStrategy
    from cimtune.oracle import verify_flow
    from cimtune.simulator import simulate
    from cimtune.workload import GemmOp

    ex, repeat = sys.argv[1], int(sys.argv[2])
    macro = load_macro(ex + "/macro_prototype.json")
    coeffs = load_coeffs(ex + "/coeffs_default.json")
    cfg = AcceleratorConfig(macro, 2, 2, 128, 16 * KB, 8 * KB)
    s = MappingStrategy.parse("NR-IP-AF")
    cases = {
        "emit+simulate 512x1024x1024": GemmOp("big", 512, 1024, 1024),
        "verify 64x256x96": GemmOp("mid", 64, 256, 96),
    }
    # warm-up pays numba compilation (or cache load) outside the timings
    small = GemmOp("w", 8, 64, 8)
    simulate(compile_op(small, cfg, s), cfg, coeffs)
    verify_flow(compile_op(small, cfg, s), small)
    out = {"backend": backend(), "seconds": {}, "instructions": {}}
    for name, op in cases.items():
        best = float("inf")
        for _ in range(repeat):
            t = time.perf_counter()
            flow = compile_op(op, cfg, s)
            if name.startswith("verify"):
                assert verify_flow(flow, op).ok
            else:
                simulate(flow, cfg, coeffs)
            best = min(best, time.perf_counter() - t)
        out["seconds"][name] = best
        out["instructions"][name] = int(flow.body.shape[0])
    print(json.dumps(out))
""")


def run(no_jit: bool, repeat: int) -> dict:
    env = dict(os.environ)
    env.pop("CIMTUNE_NO_JIT", None)
    if no_jit:
        env["CIMTUNE_NO_JIT"] = "1"
    ex = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "docs", "examples")
    proc = subprocess.run([sys.executable, "-c", CHILD, ex, str(repeat)], env=env,
                          capture_output=True, text=True, check=True)
    return json.loads(proc.stdout)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    fast, slow = run(False, args.repeat), run(True, args.repeat)
    print(f"{'kernel':32} {'instr':>9} {fast['backend']:>10} {slow['backend']:>10} {'speedup':>8}")
    for name, t_fast in fast["seconds"].items():
        t_slow = slow["seconds"][name]
        print(f"{name:32} {fast['instructions'][name]:>9} {t_fast:>9.3f}s {t_slow:>9.3f}s {t_slow / t_fast:>7.1f}x")


if __name__ == "__main__":
    main()
