"""Experiment orchestration: replications, parameter grids, multi-day runs.

A plan file describes a base scenario, a grid of config overrides, and a
replication count; ``run_grid`` executes every cell x replication and returns
flat result rows ready for CSV. ``day_to_day`` iterates a scenario over
days with drivers learning their income and re-deciding participation.
"""

import copy
import itertools
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from ridesim import kpi
from ridesim.decisions import build_decision_set
from ridesim.engine import DayState, DriverCarry, run_day
from ridesim.errors import ConfigError
from ridesim.netgraph import build_skim
from ridesim.scenario import ScenarioConfig, ScenarioInputs, materialize, parse_config

_SEGMENT = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)((?:\[\d+\])*)\Z")


# ------------------------------------------------------------ grid overrides

def _tokens(path: str) -> list[tuple[str, object]]:
    out: list[tuple[str, object]] = []
    for part in path.split("."):
        m = _SEGMENT.match(part)
        if not m:
            raise ConfigError(f"grid.{path}", "malformed override path")
        out.append(("key", m.group(1)))
        for idx in re.findall(r"\[(\d+)\]", m.group(2)):
            out.append(("idx", int(idx)))
    return out


def apply_override(raw: dict, path: str, value) -> None:
    """Set a dotted/indexed path like ``platforms[1].fare_per_km`` in a raw
    config dict. Containers along the path must already exist; the last key
    may be new."""
    toks = _tokens(path)
    target = raw
    for kind, tok in toks[:-1]:
        if kind == "idx" and isinstance(target, list) and not (0 <= tok < len(target)):
            raise ConfigError(f"grid.{path}", f"index {tok} out of range")
        try:
            target = target[tok]
        except (KeyError, IndexError, TypeError):
            raise ConfigError(
                f"grid.{path}", f"cannot resolve segment {tok!r}"
            ) from None
    kind, tok = toks[-1]
    if kind == "idx":
        if not isinstance(target, list) or not (0 <= tok < len(target)):
            raise ConfigError(f"grid.{path}", f"index {tok} out of range")
        target[tok] = value
    else:
        if not isinstance(target, dict):
            raise ConfigError(f"grid.{path}", f"segment {tok!r} is not an object")
        target[tok] = value


# -------------------------------------------------------------------- plans

@dataclass(frozen=True)
class Plan:
    base: dict
    grid: dict
    replications: int
    base_seed: int
    threads: int = 1
    base_dir: str = "."


_PLAN_KEYS = {"base", "grid", "replications", "base_seed", "threads"}


def load_plan(path) -> Plan:
    p = Path(path)
    if not p.exists():
        raise ConfigError(str(p), "plan file not found")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(str(p), f"invalid JSON: {exc}") from None
    return parse_plan(raw, base_dir=p.parent)


def parse_plan(raw: dict, base_dir=".") -> Plan:
    if not isinstance(raw, dict):
        raise ConfigError("$", "plan must be a JSON object")
    unknown = set(raw) - _PLAN_KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown plan key")
    for key in ("base", "grid", "replications", "base_seed"):
        if key not in raw:
            raise ConfigError(key, "missing required plan key")
    base = raw["base"]
    base_dir = Path(base_dir)
    if isinstance(base, str):
        base_path = base_dir / base
        if not base_path.exists():
            raise ConfigError("base", f"config file {base_path} not found")
        base = json.loads(base_path.read_text(encoding="utf-8"))
        base_dir = base_path.parent
    elif not isinstance(base, dict):
        raise ConfigError("base", "must be a config object or file path")
    grid = raw["grid"]
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("grid", "must be a non-empty object of value lists")
    for key, values in grid.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"grid.{key}", "must be a non-empty list")
    reps = raw["replications"]
    if not isinstance(reps, int) or isinstance(reps, bool) or reps < 1:
        raise ConfigError("replications", "must be an integer >= 1")
    seed = raw["base_seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("base_seed", "must be an integer >= 0")
    threads = raw.get("threads", 1)
    if not isinstance(threads, int) or isinstance(threads, bool) or threads < 1:
        raise ConfigError("threads", "must be an integer >= 1")
    # every override path must resolve against the base before anything runs
    for key, values in grid.items():
        probe = copy.deepcopy(base)
        apply_override(probe, key, values[0])
    return Plan(base=base, grid=dict(grid), replications=reps,
                base_seed=seed, threads=threads, base_dir=str(base_dir))


# ------------------------------------------------------------- replications

def replicate(
    config: ScenarioConfig,
    n: int,
    base_seed: int | None = None,
    threads: int = 1,
    skim_cache: dict | None = None,
) -> list[dict]:
    """Run n single-day replications with seeds base_seed, base_seed+1, ...

    Returns one system-KPI dict per replication, in replication order,
    independent of the thread count.
    """
    first = config.seed if base_seed is None else base_seed
    cache = {} if skim_cache is None else skim_cache
    net = config.graph.build()
    key = net.content_key()
    if key not in cache:
        cache[key] = build_skim(net)

    def one(k: int) -> dict:
        cfg = replace(config, seed=first + k)
        inputs = materialize(cfg, skim_cache=cache)
        dec = build_decision_set(cfg.decisions, cfg.behaviour)
        res = run_day(cfg, inputs, dec)
        kpi.validate_log(res.log)
        trows = kpi.traveller_kpis(res.log)
        drows = kpi.driver_kpis(res.log)
        row = {"seed": first + k}
        row.update(kpi.system_kpis(trows, drows, cfg.platforms, res.log))
        return row

    if threads <= 1:
        return [one(k) for k in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(n)))


def run_grid(plan: Plan, threads: int | None = None) -> list[dict]:
    """Execute every grid cell x replication of a plan.

    Rows are ordered by cell (grid keys in plan order, row-major) then
    replication, and carry the cell's parameter values, the replication
    index and seed, and the system KPIs.
    """
    keys = list(plan.grid)
    cells = [
        dict(zip(keys, combo))
        for combo in itertools.product(*(plan.grid[k] for k in keys))
    ]
    tasks = []
    for cell in cells:
        raw = copy.deepcopy(plan.base)
        for path, value in cell.items():
            apply_override(raw, path, value)
        tasks.append((cell, parse_config(raw, base_dir=plan.base_dir)))
    cache: dict = {}
    nthreads = plan.threads if threads is None else threads

    def run_cell(task):
        cell, cfg = task
        return replicate(cfg, plan.replications, base_seed=plan.base_seed,
                         threads=1, skim_cache=cache)

    if nthreads <= 1:
        per_cell = [run_cell(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            per_cell = list(pool.map(run_cell, tasks))
    rows = []
    for (cell, _), reps in zip(tasks, per_cell):
        for k, rep in enumerate(reps):
            row = dict(cell)
            row["replication"] = k
            row.update(rep)
            rows.append(row)
    return rows


def write_results_csv(path, rows) -> None:
    kpi.write_system_csv(path, rows)


# ------------------------------------------------------------ day-to-day

@dataclass(frozen=True)
class LearningParams:
    """Income learning and participation dynamics across days."""

    alpha: float = 0.2                    # learning rate on realized income
    epsilon: float = 0.05                 # re-entry probability when out
    reservation_wage_per_hour: float = 2.5
    convergence_delta: float = 0.02       # relative fleet change counted stable
    convergence_window: int = 5           # consecutive stable days to stop
    max_days: int = 50


@dataclass(frozen=True)
class DayToDayResult:
    trajectory: tuple
    logs: tuple
    config: ScenarioConfig
    inputs: ScenarioInputs
    converged: bool
    learned_income: dict     # driver_id -> final income belief


def day_to_day(
    config: ScenarioConfig,
    learning: LearningParams = LearningParams(),
    skim_cache: dict | None = None,
) -> DayToDayResult:
    """Iterate a scenario over days until the fleet stabilizes.

    Drivers start with their reservation wage as the income belief, update
    it with an exponential moving average of realized income per scheduled
    hour on days they work, and sit out when the belief drops below the
    wage. Travellers re-decide from yesterday's outcome when the configured
    opt-out hook uses it. Config behaviour values win over LearningParams
    defaults for the wage and re-entry probability.
    """
    behaviour = dict(config.behaviour)
    behaviour.setdefault(
        "reservation_wage_per_hour", learning.reservation_wage_per_hour
    )
    behaviour.setdefault("epsilon", learning.epsilon)
    cfg = replace(config, behaviour=behaviour)
    inputs = materialize(cfg, skim_cache=skim_cache if skim_cache is not None else {})
    dec = build_decision_set(cfg.decisions, cfg.behaviour)
    wage = float(behaviour["reservation_wage_per_hour"])

    learned = {d.driver_id: wage for d in inputs.drivers}
    participated: dict[int, bool | None] = {
        d.driver_id: None for d in inputs.drivers
    }
    outcomes: dict[int, str] = {}
    trajectory = []
    logs = []
    streak = 0
    prev_fleet = None
    for day in range(learning.max_days):
        state = DayState(
            drivers={
                i: DriverCarry(
                    learned_income=None if day == 0 else learned[i],
                    participated_yesterday=participated[i],
                )
                for i in learned
            },
            traveller_outcomes=dict(outcomes),
        )
        res = run_day(cfg, inputs, dec, day=day, day_state=state)
        kpi.validate_log(res.log)
        logs.append(res.log)
        outcomes = res.traveller_outcomes

        incomes = []
        for d_id, summary in res.driver_summaries.items():
            participated[d_id] = summary.participated
            if summary.participated:
                realized = summary.earnings / summary.scheduled_hours
                learned[d_id] = (
                    (1.0 - learning.alpha) * learned[d_id]
                    + learning.alpha * realized
                )
                incomes.append(realized)
        vals = list(res.traveller_outcomes.values())
        trajectory.append({
            "day": day,
            "fleet_participating": res.fleet_participating,
            "mean_income_per_hour":
                sum(incomes) / len(incomes) if incomes else None,
            "mean_wait_s": _mean_wait(res.log),
            "n_served": vals.count("ARRIVED"),
            "n_unserved": vals.count("UNSERVED"),
            "n_rejected": vals.count("REJECTED_OFFER"),
            "n_opted_out": vals.count("OPTED_OUT"),
        })

        fleet = res.fleet_participating
        if prev_fleet is not None:
            if abs(fleet - prev_fleet) / max(prev_fleet, 1) < learning.convergence_delta:
                streak += 1
            else:
                streak = 0
        prev_fleet = fleet
        if streak >= learning.convergence_window:
            break
    return DayToDayResult(
        trajectory=tuple(trajectory), logs=tuple(logs),
        config=cfg, inputs=inputs,
        converged=streak >= learning.convergence_window,
        learned_income=dict(learned),
    )


def _mean_wait(log) -> float | None:
    waits = [
        r.wait_s for r in kpi.traveller_kpis(log) if r.wait_s is not None
    ]
    return sum(waits) / len(waits) if waits else None


def write_day_csv(path, trajectory) -> None:
    kpi.write_system_csv(path, list(trajectory))
