import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from heies import cases
from heies.cli import run_cli, scale_loads
from heies.dtseries import DriverProfile
from heies.io import (
    ConfigError,
    load_scenario,
    perturb_drivers,
    read_trajectory,
    residual_report,
    sample_times,
)
from heies.residuals import algebraic_residuals
from heies.system import var

SCENARIOS = Path(__file__).resolve().parents[1] / "demos" / "scenarios"
NETWORK = str(SCENARIOS / "four_node_network.json")
RAMP = {"phi[3]": {"kind": "piecewise-linear", "times": [600, 2400], "values": [1.5e6, 2.1e6]}}


def scenario(tmp_path, name="sc.json", **data):
    data.setdefault("network", NETWORK)
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def rows_of(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def summary_of(path):
    return {k: v for k, v in rows_of(path)[1:]}


def test_dt_run_writes_outputs(tmp_path):
    cfg = scenario(tmp_path, drivers=RAMP, horizon=1200, cadence=300)
    assert run_cli(["--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    traj = rows_of(tmp_path / "o" / "trajectory.csv")
    assert traj[0] == ["time_s", "variable", "value"]
    summary = summary_of(tmp_path / "o" / "summary.csv")
    for key in ("windows", "rejections", "factorizations", "max_residual", "wall_time_s"):
        assert key in summary
    assert float(summary["max_residual"]) <= 1e-6
    res = rows_of(tmp_path / "o" / "residuals.csv")
    assert res[0] == ["family", "max_scaled_imbalance"] and res[-1][0] == "max"


def test_missing_network_file(tmp_path, capsys):
    missing = tmp_path / "nowhere" / "net.json"
    cfg = scenario(tmp_path, network=str(missing), horizon=60)
    assert run_cli(["--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert str(missing) in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["--bogus"], ["--solver", "rk4"], []])
def test_bad_arguments(tmp_path, argv):
    cfg = scenario(tmp_path, horizon=60)
    args = argv if argv == [] else ["--config", str(cfg)] + argv
    assert run_cli(args) == 2


def test_schema_violations(tmp_path):
    cases_ = [
        dict(horizon=-1),
        dict(horizon=60, cadence=0),
        dict(horizon=60, solver="iu"),
        dict(horizon=60, drivers={"phi[9]": 1.0}),
        dict(horizon=60, adaptive={"K": 0}),
        dict(horizon=60, adaptive={"order": 3}),
    ]
    for i, data in enumerate(cases_):
        cfg = scenario(tmp_path, f"bad{i}.json", **data)
        assert run_cli(["--config", str(cfg), "--out", str(tmp_path / "o")]) == 2, data


def test_forced_step_underflow_exits_3(tmp_path, capsys):
    step = {"phi[3]": {"kind": "step", "times": [0, 60], "values": [1.5e6, 4.0e6]}}
    cfg = scenario(tmp_path, drivers=step, horizon=600, adaptive={"atol": 0.0, "rtol": 0.0})
    assert run_cli(["--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    assert "dt_min" in capsys.readouterr().err


def test_single_window_gives_two_samples(tmp_path):
    cfg = scenario(tmp_path, horizon=5, cadence=5)
    assert run_cli(["--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    table = read_trajectory(tmp_path / "o" / "trajectory.csv")
    assert sorted(table) == [0.0, 5.0]
    assert summary_of(tmp_path / "o" / "summary.csv")["windows"] == "1"
    assert table[0.0].keys() == table[5.0].keys()


def test_boundaries_between_ticks_get_rows(tmp_path):
    cfg = scenario(tmp_path, drivers=RAMP, horizon=1200, cadence=300)
    run_cli(["--config", str(cfg), "--out", str(tmp_path / "o")])
    times = sorted(read_trajectory(tmp_path / "o" / "trajectory.csv"))
    ticks = set(sample_times(1200, 300))
    extra = [t for t in times if t not in ticks]
    assert ticks <= set(times) and extra
    assert 600.0 in times


def test_every_unknown_is_written(tmp_path):
    cfg = scenario(tmp_path, horizon=60, cadence=60)
    run_cli(["--config", str(cfg), "--out", str(tmp_path / "o")])
    written = set(read_trajectory(tmp_path / "o" / "trajectory.csv")[0.0])
    index = cases.four_node_system().index
    assert set(index.unknowns) <= written
    assert set(index.w) <= written


def test_steady_run_residuals_are_tiny(tmp_path):
    cfg = scenario(tmp_path, horizon=1800, cadence=600)
    run_cli(["--config", str(cfg), "--out", str(tmp_path / "o")])
    for fam, v in rows_of(tmp_path / "o" / "residuals.csv")[1:]:
        assert float(v) <= 1e-10, fam


def test_round_trip_initial_state(tmp_path):
    first = scenario(tmp_path, "a.json", drivers=RAMP, horizon=1200, cadence=300)
    run_cli(["--config", str(first), "--out", str(tmp_path / "a")])
    again = scenario(tmp_path, "b.json", drivers=RAMP, horizon=1200, cadence=300,
                     initial=str(tmp_path / "a" / "trajectory.csv"))
    assert run_cli(["--config", str(again), "--out", str(tmp_path / "b")]) == 0
    a = read_trajectory(tmp_path / "a" / "trajectory.csv")
    b = read_trajectory(tmp_path / "b" / "trajectory.csv")
    assert a.keys() == b.keys()
    for t in a:
        for name, v in a[t].items():
            assert b[t][name] == pytest.approx(v, rel=1e-12, abs=1e-12), (t, name)


def test_round_trip_rejects_wrong_grid(tmp_path):
    first = scenario(tmp_path, "a.json", horizon=60)
    run_cli(["--config", str(first), "--out", str(tmp_path / "a")])
    again = scenario(tmp_path, "b.json", horizon=60, adaptive={"dx": 50},
                     initial=str(tmp_path / "a" / "trajectory.csv"))
    assert run_cli(["--config", str(again), "--out", str(tmp_path / "b")]) == 2


def test_seeded_runs_are_byte_identical(tmp_path):
    cfg = scenario(tmp_path, drivers=RAMP, horizon=1200, cadence=300)
    out = []
    for name, seed in (("x", "7"), ("y", "7"), ("z", "8")):
        assert run_cli(["--config", str(cfg), "--seed", seed, "--out", str(tmp_path / name)]) == 0
        out.append({f: (tmp_path / name / f).read_bytes() for f in ("trajectory.csv", "residuals.csv")})
    assert out[0] == out[1]
    assert out[0]["trajectory.csv"] != out[2]["trajectory.csv"]


def test_noise_only_touches_breakpoint_values():
    rng = np.random.default_rng(0)
    drivers = {"a": DriverProfile.constant(5.0), "b": DriverProfile("step", times=(0.0, 1.0), values=(1.0, 2.0)),
               "c": DriverProfile("sinusoid", amplitude=1.0, period=10.0)}
    out = perturb_drivers(drivers, rng, 0.02)
    assert out["c"] == drivers["c"] and out["b"].times == drivers["b"].times
    ratio = np.array(out["b"].values) / np.array(drivers["b"].values)
    assert np.all(np.abs(ratio - 1) <= 0.02) and np.any(ratio != 1)


def test_corrupted_value_spike_is_localized(tmp_path):
    cfg = scenario(tmp_path, drivers=RAMP, horizon=1200, cadence=600)
    run_cli(["--config", str(cfg), "--out", str(tmp_path / "o")])
    table = read_trajectory(tmp_path / "o" / "trajectory.csv")
    system = load_scenario(cfg).system
    clean = [(t, system, vals) for t, vals in table.items()]
    bad = [(t, system, dict(vals)) for t, vals in table.items()]
    bad[1][2][var("phi", "1")] *= 1.01
    before, after = residual_report(clean), residual_report(bad)
    spiked = {f for f in after if f != "max" and after[f] > 1e3 * max(before[f], 1e-12)}
    assert spiked == {"power", "coupling"}
    # the flagged rows are the ones that contain phi[1]
    r = algebraic_residuals(system, bad[1][2])
    worst = {lab for lab, s in zip(r.labels, np.abs(r.scaled)) if s > 1e-6}
    assert worst == {"power[1]", "coupling[0]"}


def test_reference_solver_on_network(tmp_path):
    cfg = scenario(tmp_path, drivers=RAMP, horizon=120, cadence=60, solver="ref", reference_dt=20)
    assert run_cli(["--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    summary = summary_of(tmp_path / "o" / "summary.csv")
    assert summary["steps"] == "6" and float(summary["max_residual"]) <= 1e-8


@pytest.mark.parametrize("solver", ["dt", "iu", "soe", "exact", "ref"])
def test_pipe_solvers(tmp_path, solver):
    cfg = SCENARIOS / "step_front.json"
    assert run_cli(["--config", str(cfg), "--solver", solver, "--out", str(tmp_path / solver)]) == 0
    table = read_trajectory(tmp_path / solver / "trajectory.csv")
    assert sorted(table) == pytest.approx([0.0, 0.01, 0.02])
    last = table[max(table)]
    assert len(last) == 41 and last["grid_s[p#0]"] == 1.0


def test_load_scale_definition():
    system = cases.four_node_system()
    scaled = scale_loads(system, 1.5)
    assert scaled.driver("phi[3]").at(0.0) == 1.5 * system.driver("phi[3]").at(0.0)
    assert scaled.driver("p[b2]").at(0.0) == 1.5 * system.driver("p[b2]").at(0.0)
    assert scaled.driver("ts[1]").at(0.0) == system.driver("ts[1]").at(0.0)


def test_load_scale_sweep(tmp_path):
    cfg = scenario(tmp_path, horizon=60, cadence=60)
    assert run_cli(["--config", str(cfg), "--load-scale-sweep", "0.9:1.1:0.1", "--out", str(tmp_path / "o")]) == 0
    assert sorted(p.name for p in (tmp_path / "o").iterdir()) == ["scale_0.90", "scale_1.00", "scale_1.10"]
    assert run_cli(["--config", str(cfg), "--load-scale-sweep", "1:0", "--out", str(tmp_path / "o")]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "heies", "--config", str(tmp_path / "none.json")],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "none.json" in proc.stderr


def test_scenario_validation_direct(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(scenario(tmp_path, horizon=60, pipe_test={"mdot": 1.0}))
