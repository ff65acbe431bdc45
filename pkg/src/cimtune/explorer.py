"""Hardware/mapping co-exploration under an area budget."""

from __future__ import annotations

import csv
import io
import itertools
import math
import random
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

from .hwmodel import (
    AcceleratorConfig,
    ConfigError,
    CostCoefficients,
    MacroSpec,
    area_of,
    parse_size,
)
from .mapper import InfeasiblePlan, MappingStrategy, enumerate_strategies, plan_for
from .simulator import SimReport, combine, simulate_plan
from .workload import Workload, merge_operators

OBJECTIVES = ("energy_eff", "throughput")
PARAMS = ("mr", "mc", "scr", "is_size", "os_size")


class EmptySpaceError(ValueError):
    """Pruning removed every candidate."""


class InfeasibleBudgetError(ValueError):
    """No candidate in the space fits the area budget."""


class CandidateInfeasible(ValueError):
    """Some operator cannot run on the candidate under any strategy."""


def is_pow2(v: int) -> bool:
    return v > 0 and v & (v - 1) == 0


def _values(v, sizes=False) -> tuple[int, ...]:
    """A list of values or an inclusive ``{"min", "max"}`` / ``[lo, hi]`` range."""
    conv = parse_size if sizes else int
    if isinstance(v, dict):
        lo, hi = conv(v["min"]), conv(v["max"])
        if sizes:
            out, x = [], 1
            while x <= hi:
                if x >= lo:
                    out.append(x)
                x *= 2
            return tuple(out)
        return tuple(range(lo, hi + 1))
    if isinstance(v, (int, str)):
        return (conv(v),)
    return tuple(sorted({conv(x) for x in v}))


@dataclass(frozen=True)
class SearchSpace:
    macro: MacroSpec
    mr: tuple[int, ...]
    mc: tuple[int, ...]
    scr: tuple[int, ...]
    is_size: tuple[int, ...]  # bits
    os_size: tuple[int, ...]  # bits
    bw: tuple[int, ...] = (128,)
    pruned_fraction: float = 0.0

    def __post_init__(self):
        for name in PARAMS + ("bw",):
            vals = tuple(sorted(set(int(x) for x in getattr(self, name))))
            if any(x <= 0 for x in vals):
                raise ConfigError(f"search space {name} values must be positive")
            object.__setattr__(self, name, vals)

    @property
    def size(self) -> int:
        return math.prod(len(getattr(self, n)) for n in PARAMS + ("bw",))

    def points(self):
        """All candidates as (mr, mc, scr, is_size, os_size, bw)."""
        return itertools.product(*(getattr(self, n) for n in PARAMS + ("bw",)))

    def config(self, point) -> AcceleratorConfig:
        mr, mc, scr, is_size, os_size, bw = point
        return AcceleratorConfig(self.macro.__class__(**{**asdict(self.macro), "scr": scr}), mr, mc, bw, is_size, os_size)

    def contains(self, cfg: AcceleratorConfig) -> bool:
        return (cfg.mr in self.mr and cfg.mc in self.mc and cfg.scr in self.scr and cfg.is_size in self.is_size
                and cfg.os_size in self.os_size and cfg.bw in self.bw
                and _same_macro(cfg.macro, self.macro))

    @classmethod
    def from_dict(cls, d: dict, macro: MacroSpec) -> "SearchSpace":
        known = set(PARAMS) | {"bw"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown search-space field(s): {sorted(extra)}")
        missing = set(PARAMS) - set(d)
        if missing:
            raise ConfigError(f"search space missing {sorted(missing)}")
        return cls(
            macro=macro,
            mr=_values(d["mr"]),
            mc=_values(d["mc"]),
            scr=_values(d["scr"]),
            is_size=_values(d["is_size"], sizes=True),
            os_size=_values(d["os_size"], sizes=True),
            bw=_values(d.get("bw", 128)),
        )

    def to_dict(self) -> dict:
        return {n: list(getattr(self, n)) for n in PARAMS + ("bw",)} | {"pruned_fraction": self.pruned_fraction}


def _same_macro(a: MacroSpec, b: MacroSpec) -> bool:
    da, db = asdict(a), asdict(b)
    da.pop("scr")
    db.pop("scr")
    return da == db


def bandwidth_ok(macro: MacroSpec, bw: int) -> bool:
    """Per-macro rule: neither internal bandwidth may fall below the external one."""
    return macro.icw >= bw and macro.wuw >= bw


def prune_space(raw: SearchSpace, bw: int | None = None, macro: MacroSpec | None = None) -> SearchSpace:
    """Keep power-of-two SCR/IS/OS values and bandwidths the macro can absorb."""
    macro = raw.macro if macro is None else macro
    bws = raw.bw if bw is None else (int(bw),)
    for name in PARAMS + ("bw",):
        if not getattr(raw, name):
            raise EmptySpaceError(f"raw range for {name} is empty")
    raw_size = raw.size if bw is None else raw.size // len(raw.bw)
    kept = {n: getattr(raw, n) for n in ("mr", "mc")}
    for n in ("scr", "is_size", "os_size"):
        kept[n] = tuple(v for v in getattr(raw, n) if is_pow2(v))
        if not kept[n]:
            raise EmptySpaceError(f"no power-of-two value left for {n} (power-of-two rule)")
    kept["bw"] = tuple(b for b in bws if bandwidth_ok(macro, b))
    if not kept["bw"]:
        raise EmptySpaceError(
            f"bandwidth rule: macro icw={macro.icw} wuw={macro.wuw} is below every BW in {list(bws)}"
        )
    out = SearchSpace(macro=macro, **kept)
    object.__setattr__(out, "pruned_fraction", 1.0 - out.size / raw_size)
    return out


def brute_force_prune(raw: SearchSpace) -> set[tuple]:
    """Point-wise filter by the two rules, for cross-checking ``prune_space``."""
    return {
        p for p in raw.points()
        if is_pow2(p[2]) and is_pow2(p[3]) and is_pow2(p[4]) and bandwidth_ok(raw.macro, p[5])
    }


# ------------------------------------------------------------------ evaluation


def cost_of(report: SimReport, objective: str) -> float:
    """Scalar to minimize: pJ per OP, or ns per OP (the inverse of GOPS)."""
    if objective == "energy_eff":
        return report.pj_per_op
    if objective == "throughput":
        return report.wall_time_us * 1e3 / report.ops if report.ops else math.inf
    raise ValueError(f"objective must be one of {OBJECTIVES}, got {objective!r}")


def objective_value(report: SimReport, objective: str) -> float:
    """Human-facing objective: pJ/OP for energy, GOPS for throughput."""
    return report.pj_per_op if objective == "energy_eff" else report.gops


@dataclass
class Evaluation:
    config: AcceleratorConfig
    objective: str
    cost: float
    value: float
    area_mm2: float
    report: SimReport
    per_op_strategy: dict[str, MappingStrategy]
    per_op_reports: dict[str, SimReport]

    def rank(self) -> tuple:
        return (self.cost, self.area_mm2, self.report.cycles)


class Evaluator:
    """Best-strategy-per-op evaluation with an LRU result cache.

    ``op_evaluations`` counts (op, candidate) requests; ``strategy_runs``
    counts simulations actually performed (cache misses).
    """

    def __init__(self, coeffs: CostCoefficients, objective: str = "energy_eff",
                 strategies=None, cache_size: int = 65536, jobs: int = 1):
        if objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {objective!r}")
        self.coeffs = coeffs
        self.objective = objective
        self.strategies = tuple(enumerate_strategies() if strategies is None else strategies)
        if not self.strategies:
            raise ValueError("empty strategy set")
        self.cache_size = cache_size
        self.jobs = max(1, int(jobs))
        self._cache: OrderedDict = OrderedDict()
        self.op_evaluations = 0
        self.strategy_runs = 0

    def _run(self, op, cfg, s) -> SimReport | None:
        key = (op.shape_key(), cfg, self.coeffs, s)
        if self.cache_size and key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        self.strategy_runs += 1
        try:
            rep = simulate_plan(plan_for(op, cfg, s), cfg, self.coeffs, op)
        except InfeasiblePlan:
            rep = None
        if self.cache_size:
            self._cache[key] = rep
            if len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        return rep

    def best_strategy(self, op, cfg) -> tuple[MappingStrategy, SimReport]:
        self.op_evaluations += 1
        best = None
        for s in self.strategies:  # fixed order: first wins ties
            rep = self._run(op, cfg, s)
            if rep is None:
                continue
            c = cost_of(rep, self.objective)
            if best is None or c < best[0]:
                best = (c, s, rep)
        if best is None:
            raise CandidateInfeasible(f"op {op.id} fits no strategy on {cfg.params()}")
        return best[1], best[2]

    def evaluate(self, cfg: AcceleratorConfig, w: Workload) -> Evaluation:
        ops = list(w.ops)
        if self.jobs > 1 and len(ops) > 1:
            with ThreadPoolExecutor(self.jobs) as ex:
                picks = list(ex.map(lambda o: self.best_strategy(o, cfg), ops))
        else:
            picks = [self.best_strategy(o, cfg) for o in ops]
        agg = combine([p[1] for p in picks], [o.multiplicity for o in ops])
        return Evaluation(
            config=cfg,
            objective=self.objective,
            cost=cost_of(agg, self.objective),
            value=objective_value(agg, self.objective),
            area_mm2=area_of(cfg, self.coeffs),
            report=agg,
            per_op_strategy={o.id: p[0] for o, p in zip(ops, picks)},
            per_op_reports={o.id: p[1] for o, p in zip(ops, picks)},
        )


def evaluate(cfg: AcceleratorConfig, w: Workload, c: CostCoefficients, objective: str = "energy_eff",
             strategies=None, jobs: int = 1) -> Evaluation:
    """One-shot evaluation without a shared cache."""
    return Evaluator(c, objective, strategies, jobs=jobs).evaluate(cfg, w)


# ------------------------------------------------------------------ search


@dataclass(frozen=True)
class Schedule:
    t0_frac: float = 0.10  # initial temperature relative to the starting cost
    alpha: float = 0.95
    moves_per_temp: int = 20
    max_evals: int = 1500
    patience: int = 10  # temperatures without a new best before stopping

    def __post_init__(self):
        if not (0 < self.alpha < 1) or self.t0_frac <= 0 or self.moves_per_temp < 1 or self.max_evals < 1 or self.patience < 1:
            raise ConfigError(f"invalid annealing schedule {self}")

    @classmethod
    def from_dict(cls, d: dict | None) -> "Schedule":
        d = dict(d or {})
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigError(f"unknown schedule field(s): {sorted(extra)}")
        return cls(**d)


# Hotter, longer chain; reaches the exhaustive optimum far more often on
# spaces of a few hundred points than the defaults do.
THOROUGH = Schedule(t0_frac=0.5, alpha=0.97, moves_per_temp=30, max_evals=1500, patience=40)


@dataclass(frozen=True)
class HistoryEntry:
    iteration: int
    point: tuple  # (mr, mc, scr, is_size, os_size, bw)
    cost: float
    area_mm2: float
    accepted: bool
    best_cost: float


@dataclass
class ExploreResult:
    best_config: AcceleratorConfig
    per_op_strategy: dict[str, MappingStrategy]
    objective: str
    objective_value: float
    cost: float
    area_mm2: float
    report: SimReport
    history: list[HistoryEntry] = field(default_factory=list)
    schedule: Schedule | None = None
    seed: int | None = None
    evaluations: int = 0
    method: str = "anneal"
    baseline: Evaluation | None = None

    def to_dict(self) -> dict:
        from .hwmodel import config_to_dict

        d = {
            "method": self.method,
            "objective": self.objective,
            "objective_value": self.objective_value,
            "cost": self.cost,
            "area_mm2": self.area_mm2,
            "best_config": config_to_dict(self.best_config),
            "per_op_strategy": {k: str(v) for k, v in self.per_op_strategy.items()},
            "metrics": self.report.to_dict(),
            "seed": self.seed,
            "evaluations": self.evaluations,
            "schedule": asdict(self.schedule) if self.schedule else None,
        }
        if self.baseline is not None:
            d["baseline"] = {
                "config": config_to_dict(self.baseline.config),
                "objective_value": self.baseline.value,
                "cost": self.baseline.cost,
                "area_mm2": self.baseline.area_mm2,
            }
        return d

    def history_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["iteration", "mr", "mc", "scr", "is_size", "os_size", "bw", "cost", "area_mm2", "accepted", "best_cost"])
        for h in self.history:
            wr.writerow([h.iteration, *h.point, repr(h.cost), repr(h.area_mm2), int(h.accepted), repr(h.best_cost)])
        return buf.getvalue()


def _point(cfg: AcceleratorConfig) -> tuple:
    return (cfg.mr, cfg.mc, cfg.scr, cfg.is_size, cfg.os_size, cfg.bw)


def _min_area(space: SearchSpace, c: CostCoefficients) -> float:
    # area is monotone in every parameter, so the smallest point is the cheapest
    return area_of(space.config(tuple(getattr(space, n)[0] for n in PARAMS + ("bw",))), c)


def _try(ev: Evaluator, cfg, w) -> Evaluation | None:
    try:
        return ev.evaluate(cfg, w)
    except CandidateInfeasible:
        return None


def _result(best: Evaluation, method, history, schedule, seed, evals, baseline) -> ExploreResult:
    return ExploreResult(
        best_config=best.config,
        per_op_strategy=best.per_op_strategy,
        objective=best.objective,
        objective_value=best.value,
        cost=best.cost,
        area_mm2=best.area_mm2,
        report=best.report,
        history=history,
        schedule=schedule,
        seed=seed,
        evaluations=evals,
        method=method,
        baseline=baseline,
    )


def exhaustive(space: SearchSpace, w: Workload, c: CostCoefficients, objective: str = "energy_eff",
               area_budget_mm2: float = math.inf, evaluator: Evaluator | None = None) -> ExploreResult:
    """Evaluate every in-budget point; same ordering rule as ``anneal``."""
    ev = evaluator or Evaluator(c, objective)
    w = merge_operators(w)
    if _min_area(space, c) > area_budget_mm2:
        raise InfeasibleBudgetError(f"smallest candidate exceeds the {area_budget_mm2:g} mm2 budget")
    best, history = None, []
    for p in space.points():
        cfg = space.config(p)
        area = area_of(cfg, c)
        if area > area_budget_mm2:
            continue
        e = _try(ev, cfg, w)
        cost = math.inf if e is None else e.cost
        if e is not None and (best is None or e.rank() < best.rank()):
            best = e
        history.append(HistoryEntry(len(history), p, cost, area, e is not None, best.cost if best else math.inf))
    if best is None:
        raise InfeasibleBudgetError("no in-budget candidate can run the workload")
    return _result(best, "exhaustive", history, None, None, len(history), None)


def anneal(space: SearchSpace, w: Workload, c: CostCoefficients, objective: str = "energy_eff",
           area_budget_mm2: float = math.inf, seed: int = 0, schedule: Schedule | None = None,
           baseline: AcceleratorConfig | None = None, evaluator: Evaluator | None = None) -> ExploreResult:
    """Simulated annealing over ``space``; returns the best feasible candidate seen.

    Over-budget neighbours are discarded before evaluation and never appear in
    the history. The chain starts at ``baseline`` when given, otherwise at a
    random in-budget point.
    """
    schedule = schedule or Schedule()
    if area_budget_mm2 <= 0:
        raise InfeasibleBudgetError("area budget must be positive")
    ev = evaluator or Evaluator(c, objective)
    if ev.objective != objective:
        raise ValueError("evaluator objective differs from the requested one")
    w = merge_operators(w)
    rng = random.Random(seed)
    if _min_area(space, c) > area_budget_mm2:
        raise InfeasibleBudgetError(
            f"smallest candidate needs {_min_area(space, c):.4g} mm2, budget is {area_budget_mm2:.4g} mm2"
        )
    dims = PARAMS + ("bw",)
    values = [getattr(space, n) for n in dims]
    movable = [i for i, v in enumerate(values) if len(v) > 1]
    cache: dict[tuple, Evaluation | None] = {}

    def look(idx):
        p = tuple(values[d][i] for d, i in enumerate(idx))
        if p not in cache:
            cache[p] = _try(ev, space.config(p), w)
        return p, cache[p]

    base_eval = None
    if baseline is not None:
        if not space.contains(baseline):
            raise ConfigError(f"baseline {baseline.params()} is outside the search space")
        if area_of(baseline, c) > area_budget_mm2:
            raise InfeasibleBudgetError("baseline exceeds the area budget")
        cur = [values[d].index(v) for d, v in enumerate(_point(baseline))]
        _, base_eval = look(cur)
        if base_eval is None:
            raise CandidateInfeasible("baseline cannot run the workload")
    else:
        cur = None
        for _ in range(10 * space.size):
            cand = [rng.randrange(len(v)) for v in values]
            p = tuple(values[d][i] for d, i in enumerate(cand))
            if area_of(space.config(p), c) <= area_budget_mm2 and look(cand)[1] is not None:
                cur = cand
                break
        if cur is None:
            raise InfeasibleBudgetError("no in-budget candidate found that can run the workload")

    p, cur_eval = look(cur)
    best = cur_eval
    history = [HistoryEntry(0, p, cur_eval.cost, cur_eval.area_mm2, True, best.cost)]
    temp = schedule.t0_frac * cur_eval.cost
    stale = 0
    it = 1
    while it < schedule.max_evals and movable and stale < schedule.patience:
        improved = False
        for _ in range(schedule.moves_per_temp):
            if it >= schedule.max_evals:
                break
            d = rng.choice(movable)
            cand = list(cur)
            step = rng.choice((-1, 1))
            cand[d] = min(max(cand[d] + step, 0), len(values[d]) - 1)
            if cand == cur:
                continue
            p = tuple(values[k][i] for k, i in enumerate(cand))
            area = area_of(space.config(p), c)
            if area > area_budget_mm2:
                continue
            _, e = look(cand)
            if e is None:
                history.append(HistoryEntry(it, p, math.inf, area, False, best.cost))
                it += 1
                continue
            delta = e.cost - cur_eval.cost
            accept = delta <= 0 or (temp > 0 and rng.random() < math.exp(-delta / temp))
            if accept:
                cur, cur_eval = cand, e
            if e.rank() < best.rank():
                best = e
                improved = True
            history.append(HistoryEntry(it, p, e.cost, area, accept, best.cost))
            it += 1
        stale = 0 if improved else stale + 1
        temp *= schedule.alpha
    return _result(best, "anneal", history, schedule, seed, it, base_eval)


# ------------------------------------------------------------------ sweeps


def split_points(macro: MacroSpec, c: CostCoefficients, area_mm2: float, bw: int,
                 arrays=None, min_kb: int = 1) -> list[AcceleratorConfig]:
    """Configs trading macros for SRAM under one modeled area.

    Each ``mr x mc`` array gets the power-of-two (IS, OS) pair that fills
    most of the leftover area, IS preferred. Arrays whose leftover cannot buy
    ``min_kb`` of each buffer are skipped.
    """
    arrays = arrays or [(1, 1), (1, 2), (2, 2), (2, 3), (3, 3), (3, 4), (4, 4), (4, 5), (5, 5), (5, 6), (6, 6)]
    sizes = [1 << i for i in range(31)]
    out = []
    for mr, mc in arrays:
        probe = AcceleratorConfig(macro, mr, mc, bw, 8192, 8192)
        left = area_mm2 - (area_of(probe, c) - (c.a_is + c.a_os))
        best = None
        for i_kb in sizes:
            if i_kb < min_kb or c.a_is * i_kb > left:
                continue
            for o_kb in sizes:
                if o_kb < min_kb:
                    continue
                spent = c.a_is * i_kb + c.a_os * o_kb
                if spent > left:
                    break
                key = (spent, i_kb)
                if best is None or key > best[0]:
                    best = (key, i_kb, o_kb)
        if best is not None:
            out.append(AcceleratorConfig(macro, mr, mc, bw, best[1] * 8192, best[2] * 8192))
    return out
