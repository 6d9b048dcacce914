"""Grid runner, replication and day-to-day iteration tests."""

import copy
import json

import pytest

from ridesim.errors import ConfigError
from ridesim.experiments import (
    LearningParams,
    apply_override,
    day_to_day,
    load_plan,
    parse_plan,
    replicate,
    run_grid,
    write_day_csv,
    write_results_csv,
)
from ridesim.scenario import parse_config


def base_raw(**over):
    raw = {
        "horizon_s": 1800,
        "n_travellers": 12,
        "n_drivers": 3,
        "seed": 1,
        "platforms": [{
            "platform_id": 0, "base_fare": 0.0, "fare_per_km": 1.0,
            "commission_rate": 0.0, "matching": "instant",
        }],
        "graph": {"grid": {"rows": 3, "cols": 3, "spacing_m": 200, "speed_mps": 10}},
    }
    raw.update(over)
    return raw


def plan_raw(**over):
    raw = {
        "base": base_raw(),
        "grid": {
            "n_drivers": [2, 4],
            "platforms[0].fare_per_km": [1.0, 2.0],
        },
        "replications": 2,
        "base_seed": 100,
    }
    raw.update(over)
    return raw


# ------------------------------------------------------------- overrides

def test_apply_override_paths():
    raw = {"a": {"b": [10, {"c": 1}]}, "n": 3}
    apply_override(raw, "a.b[1].c", 5)
    assert raw["a"]["b"][1]["c"] == 5
    apply_override(raw, "a.b[0]", 7)
    assert raw["a"]["b"][0] == 7
    apply_override(raw, "n", 9)
    assert raw["n"] == 9
    apply_override(raw, "a.new_key", "x")   # final key may be created
    assert raw["a"]["new_key"] == "x"


def test_apply_override_missing_intermediate():
    with pytest.raises(ConfigError, match="behaviour"):
        apply_override(base_raw(), "behaviour.max_wait_s", 60)


def test_apply_override_index_out_of_range():
    with pytest.raises(ConfigError, match="out of range"):
        apply_override(base_raw(), "platforms[3].fare_per_km", 2.0)


def test_apply_override_malformed_path():
    for bad in ("a..b", "platforms[x]", "", "a.b["):
        with pytest.raises(ConfigError, match="malformed"):
            apply_override({"a": {"b": 1}}, bad, 0)


# ------------------------------------------------------------------ plans

def test_parse_plan_defaults():
    plan = parse_plan(plan_raw())
    assert plan.replications == 2
    assert plan.base_seed == 100
    assert plan.threads == 1
    assert list(plan.grid) == ["n_drivers", "platforms[0].fare_per_km"]


@pytest.mark.parametrize("mutate,needle", [
    (lambda r: r.pop("grid"), "grid"),
    (lambda r: r.pop("base"), "base"),
    (lambda r: r.update(grid={}), "grid"),
    (lambda r: r.update(grid={"n_drivers": []}), "n_drivers"),
    (lambda r: r.update(grid={"n_drivers": 5}), "n_drivers"),
    (lambda r: r.update(replications=0), "replications"),
    (lambda r: r.update(replications=True), "replications"),
    (lambda r: r.update(base_seed=-1), "base_seed"),
    (lambda r: r.update(threads=0), "threads"),
    (lambda r: r.update(surprise=1), "surprise"),
])
def test_parse_plan_rejects(mutate, needle):
    raw = plan_raw()
    mutate(raw)
    with pytest.raises(ConfigError, match=needle):
        parse_plan(raw)


def test_parse_plan_rejects_bad_override_path_up_front():
    raw = plan_raw(grid={"platforms[3].fare_per_km": [1.0]})
    with pytest.raises(ConfigError, match="out of range"):
        parse_plan(raw)


def test_load_plan_with_base_file(tmp_path):
    (tmp_path / "base.json").write_text(json.dumps(base_raw()))
    plan_file = tmp_path / "plan.json"
    plan_file.write_text(json.dumps(plan_raw(base="base.json")))
    plan = load_plan(plan_file)
    assert plan.base["n_travellers"] == 12
    assert plan.base_dir == str(tmp_path)


def test_load_plan_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_plan(tmp_path / "nope.json")


# ----------------------------------------------------------- replications

def test_replicate_seeds_and_order():
    cfg = parse_config(base_raw())
    rows = replicate(cfg, 3, base_seed=50)
    assert [r["seed"] for r in rows] == [50, 51, 52]
    again = replicate(cfg, 3, base_seed=50)
    assert rows == again


def test_replicate_thread_invariance():
    cfg = parse_config(base_raw())
    serial = replicate(cfg, 4, base_seed=9, threads=1)
    parallel = replicate(cfg, 4, base_seed=9, threads=3)
    assert serial == parallel


def test_replications_differ_but_share_structure():
    cfg = parse_config(base_raw())
    rows = replicate(cfg, 2, base_seed=50)
    assert rows[0] != rows[1]               # different seeds, different days
    assert set(rows[0]) == set(rows[1])


# -------------------------------------------------------------------- grid

def test_run_grid_shape_and_order():
    plan = parse_plan(plan_raw())
    rows = run_grid(plan)
    assert len(rows) == 2 * 2 * 2
    cells = [(r["n_drivers"], r["platforms[0].fare_per_km"], r["replication"])
             for r in rows]
    assert cells == [
        (2, 1.0, 0), (2, 1.0, 1), (2, 2.0, 0), (2, 2.0, 1),
        (4, 1.0, 0), (4, 1.0, 1), (4, 2.0, 0), (4, 2.0, 1),
    ]
    assert all(r["seed"] == 100 + r["replication"] for r in rows)


def test_run_grid_thread_invariance():
    plan = parse_plan(plan_raw())
    assert run_grid(plan, threads=1) == run_grid(plan, threads=4)


def test_run_grid_matches_manual_replicate():
    plan = parse_plan(plan_raw())
    rows = [r for r in run_grid(plan)
            if r["n_drivers"] == 4 and r["platforms[0].fare_per_km"] == 2.0]
    raw = base_raw()
    raw["n_drivers"] = 4
    raw["platforms"][0]["fare_per_km"] = 2.0
    manual = replicate(parse_config(raw), 2, base_seed=100)
    for row, rep in zip(rows, manual):
        for key, value in rep.items():
            assert row[key] == value


def test_results_csv_written(tmp_path):
    plan = parse_plan(plan_raw(replications=1))
    rows = run_grid(plan)
    out = tmp_path / "experiment_results.csv"
    write_results_csv(out, rows)
    lines = out.read_text().strip().splitlines()
    assert len(lines) == len(rows) + 1
    header = lines[0].split(",")
    assert header[:4] == ["n_drivers", "platforms[0].fare_per_km",
                          "replication", "seed"]
    assert "wait_mean_s" in header


# -------------------------------------------------------------- day-to-day

def learning(**over):
    kw = dict(alpha=0.2, epsilon=0.0, reservation_wage_per_hour=2.5,
              convergence_delta=0.02, convergence_window=5, max_days=20)
    kw.update(over)
    return LearningParams(**kw)


def test_unreachable_wage_empties_fleet():
    cfg = parse_config(base_raw(decisions={"f_driver_out": "learned_participation"}))
    res = day_to_day(cfg, learning(reservation_wage_per_hour=1e6))
    fleets = [row["fleet_participating"] for row in res.trajectory]
    assert fleets[0] == 3                   # everyone tries the first day
    assert fleets[1:] == [0] * (len(fleets) - 1)
    assert len(fleets) == 7                 # 1 drop day + 5 stable days
    assert res.converged


def test_zero_wage_keeps_everyone_driving():
    cfg = parse_config(base_raw(decisions={"f_driver_out": "learned_participation"}))
    res = day_to_day(cfg, learning(reservation_wage_per_hour=0.0))
    fleets = [row["fleet_participating"] for row in res.trajectory]
    assert all(f == 3 for f in fleets)
    assert len(fleets) == 6                 # converges immediately
    assert res.converged
    assert set(res.learned_income) == {0, 1, 2}


def test_no_reentry_fleet_monotone():
    cfg = parse_config(base_raw(
        n_travellers=6, n_drivers=5,
        decisions={"f_driver_out": "learned_participation"},
    ))
    res = day_to_day(cfg, learning(reservation_wage_per_hour=3.0))
    fleets = [row["fleet_participating"] for row in res.trajectory]
    assert all(b <= a for a, b in zip(fleets, fleets[1:]))


def test_behaviour_config_wins_over_learning_defaults():
    cfg = parse_config(base_raw(
        behaviour={"reservation_wage_per_hour": 1e6},
        decisions={"f_driver_out": "learned_participation"},
    ))
    res = day_to_day(cfg, learning(reservation_wage_per_hour=0.0))
    assert res.trajectory[1]["fleet_participating"] == 0
    assert res.config.behaviour["reservation_wage_per_hour"] == 1e6


def test_traveller_outcome_feedback():
    cfg = parse_config(base_raw(
        horizon_s=300, n_travellers=30, n_drivers=1,
        decisions={"f_trav_out": "opt_out_if_unserved"},
    ))
    res = day_to_day(cfg, learning(max_days=3, reservation_wage_per_hour=0.0))
    day0, day1 = res.trajectory[0], res.trajectory[1]
    assert day0["n_unserved"] > 0
    assert day1["n_opted_out"] == day0["n_unserved"]


def test_day_to_day_deterministic():
    cfg = parse_config(base_raw(decisions={"f_driver_out": "learned_participation"}))
    a = day_to_day(cfg, learning(reservation_wage_per_hour=3.0, epsilon=0.1))
    b = day_to_day(cfg, learning(reservation_wage_per_hour=3.0, epsilon=0.1))
    assert a.trajectory == b.trajectory
    assert a.logs == b.logs


def test_day_csv(tmp_path):
    cfg = parse_config(base_raw(decisions={"f_driver_out": "learned_participation"}))
    res = day_to_day(cfg, learning(max_days=4))
    out = tmp_path / "day_to_day.csv"
    write_day_csv(out, res.trajectory)
    lines = out.read_text().strip().splitlines()
    assert lines[0].startswith("day,fleet_participating,mean_income_per_hour")
    assert len(lines) == len(res.trajectory) + 1
