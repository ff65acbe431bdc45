"""Command-line entry point: ``cimtune <subcommand> ...``.

Exit codes: 0 ok, 2 input error, 3 infeasible plan, 4 infeasible budget,
5 validation failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from ._jit import backend
from . import kernels as K
from .compiler import compile_op, dump_flow, emit_trace, kernel_params, lower_plan
from .explorer import (
    OBJECTIVES,
    CandidateInfeasible,
    EmptySpaceError,
    Evaluator,
    InfeasibleBudgetError,
    Schedule,
    SearchSpace,
    anneal,
    bandwidth_ok,
    exhaustive,
    is_pow2,
    prune_space,
    split_points,
)
from .hwmodel import (
    AcceleratorConfig,
    ConfigError,
    area_of,
    config_from_dict,
    config_to_dict,
    load_coeffs,
    load_config,
    load_macro,
    parse_size,
)
from .mapper import InfeasiblePlan, MappingStrategy, enumerate_strategies, plan_for
from .oracle import MUTATIONS, mutate_flow, verify_flow
from .presets import PRESETS
from .simulator import BREAKDOWN_KEYS, SimReport, combine
from .workload import Workload, WorkloadError, load_workload

EXIT_OK, EXIT_INPUT, EXIT_PLAN, EXIT_BUDGET, EXIT_VALIDATION = 0, 2, 3, 4, 5
DUMP_LIMIT = 200_000  # instructions; larger flows get a plan dump only


class UsageError(ValueError):
    pass


# ------------------------------------------------------------------ output


def write_atomic(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, float) and math.isinf(o):
        return "inf"
    if hasattr(o, "item"):
        return o.item()
    return str(o)


def _sha256(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    inputs: dict[str, str]
    seed: int | None
    version: str = __version__
    backend: str = field(default_factory=backend)
    timestamp: str = field(default_factory=lambda: _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"))
    parameters: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return _json(self.__dict__)


def _manifest(args, argv) -> RunManifest:
    inputs = {}
    for name in ("macro", "config", "coeffs", "workload", "space", "baseline", "input"):
        path = getattr(args, name, None)
        if path:
            inputs[path] = _sha256(path)
    params = {k: v for k, v in vars(args).items() if k != "func"}
    return RunManifest(args.command, list(argv), inputs, args.seed, parameters=params)


# ------------------------------------------------------------------ loading


def _workload(args) -> Workload:
    if getattr(args, "preset", None):
        if args.workload:
            raise UsageError("give either --workload or --preset, not both")
        return PRESETS[args.preset]()
    if not args.workload:
        raise UsageError("a workload is required (--workload FILE or --preset NAME)")
    return load_workload(args.workload)


def _strategies(text: str | None, allow_auto: bool = True):
    """None means auto (best of all eight)."""
    if text is None or (allow_auto and text.strip().lower() == "auto"):
        return None
    if text.strip().lower() == "all":
        return enumerate_strategies()
    items = [t for t in (x.strip() for x in text.split(",")) if t]
    if not items:
        raise UsageError("empty strategy set")
    return [MappingStrategy.parse(t) for t in items]


def _report_row(op_id, strategy, mult, r: SimReport) -> dict:
    return {
        "op": op_id,
        "strategy": strategy,
        "multiplicity": mult,
        "cycles": r.cycles,
        "energy_pj": r.energy_pj,
        "pj_per_op": r.pj_per_op,
        "tops_per_w": r.tops_per_w,
        "gops": r.gops,
        "utilization": r.cim_utilization,
    }


def render_table(rows: list[dict]) -> str:
    cols = ["op", "strategy", "multiplicity", "cycles", "energy_pj", "pj_per_op", "tops_per_w", "gops", "utilization"]
    fmt = {
        "energy_pj": "{:.4g}", "pj_per_op": "{:.4f}", "tops_per_w": "{:.3f}", "gops": "{:.2f}", "utilization": "{:.3f}",
    }
    cells = [cols] + [[fmt.get(c, "{}").format(r[c]) for c in cols] for r in rows]
    width = [max(len(row[i]) for row in cells) for i in range(len(cols))]
    lines = []
    for n, row in enumerate(cells):
        lines.append("  ".join(v.rjust(width[i]) if i > 1 else v.ljust(width[i]) for i, v in enumerate(row)).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in width))
    return "\n".join(lines) + "\n"


def breakdown_rows(label_rows) -> str:
    """Per-category energy CSV; the psum share of EMA gets its own line."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["op", "strategy", "category", "energy_pj"])
    for op_id, strategy, bd, psum_ema in label_rows:
        for k in BREAKDOWN_KEYS:
            wr.writerow([op_id, strategy, k, repr(float(bd[k]))])
        wr.writerow([op_id, strategy, "EMA (psum)", repr(float(psum_ema))])
    return buf.getvalue()


# ------------------------------------------------------------------ commands


def cmd_simulate(args) -> int:
    macro = load_macro(args.macro)
    cfg = load_config(args.config, macro)
    coeffs = load_coeffs(args.coeffs)
    w = _workload(args)
    chosen = _strategies(args.strategy)
    runs = {}
    bd_rows = []
    dumps = []
    texts = []
    labels = ["auto"] if chosen is None else [str(s) for s in chosen]
    for label in labels:
        strategies = None if label == "auto" else [MappingStrategy.parse(label)]
        ev = Evaluator(coeffs, args.objective, strategies, jobs=args.jobs)
        rows, reports, picks = [], [], {}
        for op in w.ops:
            s, rep = ev.best_strategy(op, cfg)
            picks[op.id] = s
            reports.append(rep)
            rows.append(_report_row(op.id, str(s), op.multiplicity, rep))
            bd_rows.append((op.id, str(s), rep.scaled(op.multiplicity).energy_breakdown,
                            rep.traffic_bits["EXT PSUM"] * op.multiplicity * coeffs.e_ema))
            if args.dump_plan:
                dumps.append((op, s))
        agg = combine(reports, [o.multiplicity for o in w.ops])
        runs[label] = {
            "aggregate": agg.to_dict(),
            "ops": [dict(r, metrics=rep.to_dict(), psum_ema_pj=rep.traffic_bits["EXT PSUM"] * coeffs.e_ema)
                    for r, rep in zip(rows, reports)],
            "area_mm2": area_of(cfg, coeffs),
        }
        total = _report_row("TOTAL", label, 1, agg)
        text = f"# {w.name} on {cfg.params()} [{label}]\n" + render_table(rows + [total])
        texts.append(text)
        print(text, end="")
    doc = {"workload": w.name, "config": config_to_dict(cfg), "objective": args.objective, "runs": runs}
    write_atomic(os.path.join(args.out_dir, "simulate.json"), _json(doc))
    write_atomic(os.path.join(args.out_dir, "simulate.txt"), "".join(texts))
    if args.breakdown:
        write_atomic(os.path.join(args.out_dir, "breakdown.csv"), breakdown_rows(bd_rows))
    for op, s in dumps:
        _dump(args.out_dir, op, cfg, s)
    return EXIT_OK


def _rep(d: dict) -> SimReport:
    keep = {k: d[k] for k in SimReport.__dataclass_fields__ if k in d}
    return SimReport(**keep)


def _dump(out_dir, op, cfg, s):
    base = os.path.join(out_dir, "plans", f"{op.id}.{s}")
    plan = plan_for(op, cfg, s)
    write_atomic(base + ".plan.json", _json(plan.to_dict()))
    n = K.emit(K.MODE_COUNT, np.zeros((1, K.NF), dtype=np.int64), kernel_params(plan, cfg, op),
               np.zeros(K.NE), np.zeros(K.NS, dtype=np.int64), np.zeros(K.NA))
    if n <= DUMP_LIMIT:
        flow = lower_plan(plan, cfg, op)
        write_atomic(base + ".flow.txt", dump_flow(flow))
        write_atomic(base + ".trace.csv", emit_trace(flow).to_csv())


def _sweep_configs(args, macro, coeffs) -> list[AcceleratorConfig]:
    base = load_config(args.config, macro) if args.config else None
    if args.split_area is not None:
        bw = base.bw if base else args.bw
        pts = split_points(macro, coeffs, args.split_area, bw)
        if not pts:
            raise UsageError(f"no array fits in {args.split_area} mm2")
        return pts
    if not args.axis:
        raise UsageError("sweep needs --axis NAME=V1,V2,... or --split-area MM2")
    if base is None:
        raise UsageError("--axis sweeps need a base --config")
    name, _, vals = args.axis.partition("=")
    name = name.strip()
    if name not in ("mr", "mc", "scr", "is_size", "os_size", "bw") or not vals:
        raise UsageError(f"bad axis {args.axis!r}; use mr|mc|scr|is_size|os_size|bw=V1,V2,...")
    conv = parse_size if name in ("is_size", "os_size") else int
    out = []
    for v in vals.split(","):
        v = conv(v.strip())
        if name in ("scr", "is_size", "os_size") and not is_pow2(v):
            raise UsageError(f"{name}={v} violates the power-of-two rule")
        cfg = base.with_params(**{name: v})
        if not bandwidth_ok(cfg.macro, cfg.bw):
            raise UsageError(f"bw={cfg.bw} exceeds the macro's internal bandwidth")
        out.append(cfg)
    return out


def cmd_sweep(args) -> int:
    macro = load_macro(args.macro)
    coeffs = load_coeffs(args.coeffs)
    w = _workload(args)
    cfgs = _sweep_configs(args, macro, coeffs)
    strategies = _strategies(args.strategy)

    def one(cfg):
        ev = Evaluator(coeffs, args.objective, strategies)
        return ev.evaluate(cfg, w)

    if args.jobs > 1:
        with ThreadPoolExecutor(args.jobs) as ex:
            evals = list(ex.map(one, cfgs))
    else:
        evals = [one(c) for c in cfgs]
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["point", "mr", "mc", "scr", "is_size", "os_size", "bw", "area_mm2", "cycles", "latency_us",
                 "energy_pj", "pj_per_op", "gops", "strategies"])
    for i, e in enumerate(evals):
        c = e.config
        wr.writerow([i, c.mr, c.mc, c.scr, c.is_size, c.os_size, c.bw, repr(e.area_mm2), e.report.cycles,
                     repr(e.report.wall_time_us), repr(e.report.energy_pj), repr(e.report.pj_per_op),
                     repr(e.report.gops), ";".join(f"{k}={v}" for k, v in e.per_op_strategy.items())])
    text = buf.getvalue()
    write_atomic(os.path.join(args.out_dir, "sweep.csv"), text)
    sys.stdout.write(text)
    return EXIT_OK


def _load_explore(path) -> dict:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    extra = set(d) - {"name", "space", "objective", "budget_mm2", "seed", "schedule", "baseline", "method"}
    if extra:
        raise ConfigError(f"{path}: unknown field(s) {sorted(extra)}")
    if "space" not in d:
        raise ConfigError(f"{path}: missing 'space'")
    return d


def cmd_explore(args) -> int:
    macro = load_macro(args.macro)
    coeffs = load_coeffs(args.coeffs)
    w = _workload(args)
    doc = _load_explore(args.space)
    objective = args.objective or doc.get("objective", "energy_eff")
    if objective not in OBJECTIVES:
        raise UsageError(f"objective must be one of {OBJECTIVES}")
    budget = args.budget if args.budget is not None else float(doc.get("budget_mm2", math.inf))
    seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
    args.seed = seed
    schedule = Schedule.from_dict(doc.get("schedule"))
    method = args.method or doc.get("method", "anneal")
    raw = SearchSpace.from_dict(doc["space"], macro)
    space = prune_space(raw)
    baseline = None
    if args.baseline:
        baseline = load_config(args.baseline, macro)
    elif "baseline" in doc:
        baseline = config_from_dict(doc["baseline"], macro)
    ev = Evaluator(coeffs, objective, jobs=args.jobs)
    if method == "exhaustive":
        res = exhaustive(space, w, coeffs, objective, budget, ev)
    elif method == "anneal":
        res = anneal(space, w, coeffs, objective, budget, seed, schedule, baseline, ev)
    else:
        raise UsageError("method must be anneal or exhaustive")
    doc = res.to_dict()
    doc["space"] = space.to_dict()
    doc["budget_mm2"] = budget
    write_atomic(os.path.join(args.out_dir, "explore.json"), _json(doc))
    write_atomic(os.path.join(args.out_dir, "history.csv"), res.history_csv())
    unit = "pJ/OP" if objective == "energy_eff" else "GOPS"
    print(f"space: {space.size} points after pruning ({space.pruned_fraction:.1%} removed)")
    print(f"best {res.best_config.params()} bw={res.best_config.bw}: {res.objective_value:.6g} {unit}, "
          f"area {res.area_mm2:.4f} mm2, {res.evaluations} evaluations")
    if res.baseline is not None:
        print(f"baseline {res.baseline.config.params()}: {res.baseline.value:.6g} {unit}, area {res.baseline.area_mm2:.4f} mm2")
    for k, v in res.per_op_strategy.items():
        print(f"  {k}: {v}")
    return EXIT_OK


def cmd_validate(args) -> int:
    macro = load_macro(args.macro)
    cfg = load_config(args.config, macro)
    w = _workload(args)
    strategies = _strategies(args.strategies if args.strategies is not None else "all", allow_auto=False)
    seed = args.seed or 0
    results = []
    failed = 0
    for op in w.ops:
        for s in strategies:
            try:
                flow = compile_op(op, cfg, s)
            except InfeasiblePlan as exc:
                results.append({"op": op.id, "strategy": str(s), "status": "infeasible", "reason": str(exc)})
                print(f"{op.id:<16} {s}  infeasible")
                continue
            if args.mutate:
                flow = mutate_flow(flow, args.mutate)
            rep = verify_flow(flow, op, seed)
            status = "pass" if rep.ok else "fail"
            failed += not rep.ok
            results.append({
                "op": op.id, "strategy": str(s), "status": status,
                "numeric_match": rep.numeric_match, "coverage_ok": rep.coverage_ok,
                "address_safety_ok": rep.address_safety_ok,
                "first_divergence": list(rep.first_divergence) if rep.first_divergence else None,
            })
            print(f"{op.id:<16} {s}  {status.upper()}")
            if not rep.ok:
                print("    " + rep.summary().replace("\n", "\n    "))
    write_atomic(os.path.join(args.out_dir, "validation.json"), _json({"results": results, "failed": failed}))
    return EXIT_VALIDATION if failed else EXIT_OK


def cmd_report(args) -> int:
    with open(args.input) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.input}: invalid JSON: {exc}") from exc
    if "runs" in doc:
        bd_rows = []
        for label, run in doc["runs"].items():
            rows = [_report_row(o["op"], o["strategy"], o["multiplicity"], _rep(o["metrics"])) for o in run["ops"]]
            rows.append(_report_row("TOTAL", label, 1, _rep(run["aggregate"])))
            print(f"# {doc.get('workload', '')} [{label}]")
            print(render_table(rows), end="")
            for o in run["ops"]:
                m = o["metrics"]
                bd_rows.append((o["op"], o["strategy"],
                                {k: v * o["multiplicity"] for k, v in m["energy_breakdown"].items()},
                                o["psum_ema_pj"] * o["multiplicity"]))
        if args.breakdown:
            write_atomic(os.path.join(args.out_dir, "breakdown.csv"), breakdown_rows(bd_rows))
    elif "best_config" in doc:
        bc = doc["best_config"]
        print(f"method     {doc['method']}")
        print(f"objective  {doc['objective']} = {doc['objective_value']}")
        print(f"config     mr={bc['mr']} mc={bc['mc']} scr={bc['macro']['scr']} is={bc['is_size']} os={bc['os_size']} bw={bc['bw']}")
        print(f"area       {doc['area_mm2']:.4f} mm2")
        for k, v in doc["per_op_strategy"].items():
            print(f"  {k}: {v}")
    else:
        raise UsageError(f"{args.input}: not a simulate or explore result")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cimtune", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"cimtune {__version__}")
    p.add_argument("--seed", type=int, default=None, help="random seed (explore, validate)")
    p.add_argument("--jobs", type=int, default=1, help="worker threads for independent evaluations")
    p.add_argument("--out-dir", default="cimtune-out", help="directory for result files")
    p.add_argument("--dump-plan", action="store_true", help="write tiling plans, flows and traces per op")
    p.add_argument("--breakdown", action="store_true", help="write a per-category energy CSV")
    sub = p.add_subparsers(dest="command", required=True)

    def workload_args(sp):
        sp.add_argument("--workload", help="workload JSON file")
        sp.add_argument("--preset", choices=sorted(PRESETS), help="built-in workload")

    s = sub.add_parser("simulate", help="simulate a workload on one configuration")
    s.add_argument("--macro", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--coeffs", required=True)
    workload_args(s)
    s.add_argument("--strategy", default="auto", help="auto, all, or comma-separated list like NR-IP-AF")
    s.add_argument("--objective", choices=OBJECTIVES, default="energy_eff")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", help="evaluate a family of configurations")
    s.add_argument("--macro", required=True)
    s.add_argument("--coeffs", required=True)
    s.add_argument("--config", help="base configuration for --axis sweeps")
    workload_args(s)
    s.add_argument("--axis", help="NAME=V1,V2,... over mr, mc, scr, is_size, os_size or bw")
    s.add_argument("--split-area", type=float, help="trade macros for SRAM at this modeled area (mm2)")
    s.add_argument("--bw", type=int, default=128, help="external bandwidth for --split-area without --config")
    s.add_argument("--strategy", default="auto")
    s.add_argument("--objective", choices=OBJECTIVES, default="throughput")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("explore", help="search hardware sizing and mappings under an area budget")
    s.add_argument("--macro", required=True)
    s.add_argument("--coeffs", required=True)
    s.add_argument("--space", required=True, help="exploration config JSON")
    workload_args(s)
    s.add_argument("--objective", choices=OBJECTIVES)
    s.add_argument("--budget", type=float, help="area budget in mm2 (overrides the file)")
    s.add_argument("--baseline", help="baseline config JSON; the chain starts there")
    s.add_argument("--method", choices=("anneal", "exhaustive"))
    s.set_defaults(func=cmd_explore)

    s = sub.add_parser("validate", help="check compiled flows against the reference GEMM")
    s.add_argument("--macro", required=True)
    s.add_argument("--config", required=True)
    workload_args(s)
    s.add_argument("--strategies", help="comma-separated list or 'all' (default)")
    s.add_argument("--mutate", choices=MUTATIONS, help="test hook: break each flow before checking")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("report", help="render a result JSON as a table")
    s.add_argument("--input", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        code = args.func(args)
    except (InfeasiblePlan, CandidateInfeasible) as exc:
        print(f"error: infeasible plan: {exc}", file=sys.stderr)
        return EXIT_PLAN
    except InfeasibleBudgetError as exc:
        print(f"error: infeasible budget: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (UsageError, ConfigError, WorkloadError, EmptySpaceError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    write_atomic(os.path.join(args.out_dir, f"manifest.{args.command}.json"), _manifest(args, argv).to_json())
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
