"""Scenario files, closed-loop runner, CLI commands, and exit codes."""

import numpy as np
import pytest

from ddpc import harness
from ddpc.harness import (
    ScenarioError,
    build_plant,
    build_reference,
    compare_logs,
    main,
    parse_scenario,
    run_closed_loop,
)
from ddpc.metrics import load_runlog
from ddpc.plant import LtiPlant, PasteurizerSurrogate
from ddpc.qp_core import SolverOptions

BASE = {
    "plant": {
        "kind": "lti",
        "a": "0.8,0.3;-0.2,0.6",
        "b": "1.0;0.5",
        "c": "1.0,0.0",
        "noise_std": "0.0",
    },
    "shared": {
        "n": "5",
        "ts": "1.0",
        "q_diag": "10.0",
        "r_diag": "0.1",
        "u_lo": "-5.0",
        "u_hi": "5.0",
        "y_lo": "-50.0",
        "y_hi": "50.0",
    },
    "deepc": {
        "t_ini": "2",
        "lambda_g": "1.0",
        "lambda_sigma": "100000.0",
        "dataset": "dataset.csv",
    },
    "kmpc": {
        "model": "model.json",
        "n_z": "3",
    },
    "reference": {
        "channel": "1",
        "levels": "1.0,2.0",
        "times": "0,3",
    },
    "run": {
        "t_sim": "5",
        "seed": "0",
        "initial_u": "0.0",
        "excite_t": "120",
        "excite_hold_min": "3",
        "excite_hold_max": "10",
    },
}


def write_scenario(tmp_path, name="scenario.ini", **overrides):
    """BASE with per-section overrides; a value of None drops the key."""
    sections = {s: dict(kv) for s, kv in BASE.items()}
    for sec, kv in overrides.items():
        if kv is None:
            sections.pop(sec, None)
            continue
        for key, value in kv.items():
            if value is None:
                sections[sec].pop(key, None)
            else:
                sections[sec][key] = value
    lines = []
    for sec, kv in sections.items():
        lines.append(f"[{sec}]")
        lines += [f"{k} = {v}" for k, v in kv.items()]
        lines.append("")
    path = tmp_path / name
    path.write_text("\n".join(lines))
    return path


def prepared_scenario(tmp_path, **overrides):
    """Scenario plus dataset and identified model, ready for `run`."""
    path = write_scenario(tmp_path, **overrides)
    assert main(["gen-data", "--config", str(path)]) == 0
    assert main(["identify", "--config", str(path)]) == 0
    return path


class TestParsing:
    def test_round_trip_of_fields(self, tmp_path):
        cfg = parse_scenario(write_scenario(tmp_path))
        assert cfg.plant_kind == "lti"
        assert cfg.shared.N == 5 and cfg.shared.T_ini == 2
        assert cfg.shared.Q[0, 0] == 10.0 and cfg.shared.R[0, 0] == 0.1
        assert np.array_equal(cfg.shared.u_bounds, [[-5.0, 5.0]])
        assert cfg.ref_channel == 0
        assert np.array_equal(cfg.ref_levels, [1.0, 2.0])
        assert cfg.T_sim == 5 and cfg.seed == 0
        assert cfg.dataset_path == (tmp_path / "dataset.csv").resolve()
        assert cfg.excite_T == 120 and cfg.excite_hold == (3, 10)

    def test_missing_section(self, tmp_path):
        path = write_scenario(tmp_path, reference=None)
        with pytest.raises(ScenarioError, match=r"missing \[reference\]"):
            parse_scenario(path)

    def test_missing_required_key(self, tmp_path):
        path = write_scenario(tmp_path, shared={"n": None})
        with pytest.raises(ScenarioError, match="missing required key 'n'"):
            parse_scenario(path)

    def test_shared_key_in_controller_section_rejected(self, tmp_path):
        path = write_scenario(tmp_path, deepc={"q_diag": "1.0"})
        with pytest.raises(ScenarioError, match="redefine shared"):
            parse_scenario(path)
        path = write_scenario(tmp_path, kmpc={"n": "7"})
        with pytest.raises(ScenarioError, match="redefine shared"):
            parse_scenario(path)

    def test_reference_validation(self, tmp_path):
        with pytest.raises(ScenarioError, match="pair up"):
            parse_scenario(write_scenario(tmp_path, reference={"times": "0"}))
        with pytest.raises(ScenarioError, match="start at 0"):
            parse_scenario(write_scenario(tmp_path, reference={"times": "1,3"}))
        with pytest.raises(ScenarioError, match="increase"):
            parse_scenario(write_scenario(tmp_path, reference={"times": "0,0"}))

    def test_unknown_plant_kind(self, tmp_path):
        path = write_scenario(tmp_path, plant={"kind": "windmill"})
        with pytest.raises(ScenarioError, match="windmill"):
            parse_scenario(path)

    def test_disturbance_keys_must_pair(self, tmp_path):
        path = write_scenario(tmp_path, plant={"dist_time": "3"})
        with pytest.raises(ScenarioError, match="together"):
            parse_scenario(path)

    def test_zero_lambda_sigma_means_no_slack(self, tmp_path):
        path = write_scenario(tmp_path, deepc={"lambda_sigma": "0"})
        assert parse_scenario(path).shared.lambda_sigma is None

    def test_seed_override(self, tmp_path):
        path = write_scenario(tmp_path)
        assert parse_scenario(path, seed_override=9).seed == 9

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioError, match="not found"):
            parse_scenario(tmp_path / "nope.ini")


class TestHash:
    def test_stable_across_parses(self, tmp_path):
        path = write_scenario(tmp_path)
        assert parse_scenario(path).hash == parse_scenario(path).hash

    def test_sensitive_to_tuning_and_seed(self, tmp_path):
        h0 = parse_scenario(write_scenario(tmp_path)).hash
        h1 = parse_scenario(write_scenario(tmp_path, name="b.ini",
                                           shared={"q_diag": "20.0"})).hash
        h2 = parse_scenario(write_scenario(tmp_path), seed_override=1).hash
        assert h0 != h1 and h0 != h2

    def test_insensitive_to_run_length(self, tmp_path):
        h0 = parse_scenario(write_scenario(tmp_path)).hash
        h1 = parse_scenario(write_scenario(tmp_path, name="b.ini",
                                           run={"t_sim": "9"})).hash
        assert h0 == h1


class TestBuilders:
    def test_lti_plant_wiring(self, tmp_path):
        cfg = parse_scenario(write_scenario(tmp_path))
        plant = build_plant(cfg)
        assert isinstance(plant, LtiPlant)
        assert np.array_equal(plant.A, [[0.8, 0.3], [-0.2, 0.6]])
        assert np.array_equal(plant.B, [[1.0], [0.5]])

    def test_pasteurizer_rejects_disturbance(self, tmp_path):
        path = write_scenario(tmp_path, plant={
            "kind": "pasteurizer", "a": None, "b": None, "c": None,
            "dist_time": "3", "dist_value": "1.0,0.0,0.0"},
            shared={"q_diag": "20.0,0.0,0.0", "r_diag": "20.0,20.0,20.0",
                    "u_lo": "30.0,20.0,0.0", "u_hi": "100.0,100.0,50.0",
                    "y_lo": "0.0,0.0,0.0", "y_hi": "150.0,150.0,150.0"},
            run={"initial_u": "60.0,60.0,28.44"})
        with pytest.raises(ScenarioError, match="lti-only"):
            build_plant(parse_scenario(path))

    def test_disturbance_offset_shifts_schedule(self, tmp_path):
        path = write_scenario(tmp_path, plant={"dist_time": "2",
                                               "dist_value": "7.0"})
        cfg = parse_scenario(path)
        plant = build_plant(cfg, dist_offset=3)
        for _ in range(5):
            plant.advance([0.0])
        assert plant.measure()[0] == 7.0      # k=5 >= 2+3
        plant.reset()
        for _ in range(4):
            plant.advance([0.0])
        assert plant.measure()[0] == 0.0      # k=4 < 5

    def test_reference_profile(self, tmp_path):
        cfg = parse_scenario(write_scenario(tmp_path))
        r = build_reference(cfg, length=7, fill=np.array([9.0]))
        assert np.array_equal(r[:, 0], [1, 1, 1, 2, 2, 2, 2])

    def test_reference_untracked_channels_hold_fill(self, tmp_path):
        path = write_scenario(tmp_path, shared={"q_diag": "10.0,0.0",
                                                "y_lo": "-50.0,-50.0",
                                                "y_hi": "50.0,50.0"},
                              plant={"c": "1.0,0.0;0.0,1.0"},
                              reference={"channel": "2"})
        cfg = parse_scenario(path)
        r = build_reference(cfg, length=4, fill=np.array([3.0, 4.0]))
        assert np.array_equal(r[:, 0], [3.0, 3.0, 3.0, 3.0])
        assert np.array_equal(r[:, 1], [1.0, 1.0, 1.0, 2.0])


class TestGenDataCli:
    def test_writes_dataset_and_reports_rank(self, tmp_path, capsys):
        path = write_scenario(tmp_path)
        assert main(["gen-data", "--config", str(path)]) == 0
        out = capsys.readouterr().out
        assert "excitation rank at order 2: 2 / 2 (full)" in out
        assert (tmp_path / "dataset.csv").exists()

    def test_short_dataset_warns_but_writes(self, tmp_path, capsys):
        # minimum useful length for these horizons is 17
        path = write_scenario(tmp_path, run={"excite_t": "12"})
        assert main(["gen-data", "--config", str(path)]) == 0
        captured = capsys.readouterr()
        assert "warning" in captured.err
        assert (tmp_path / "dataset.csv").exists()

    def test_deterministic_output(self, tmp_path):
        path = write_scenario(tmp_path)
        main(["gen-data", "--config", str(path), "--out",
              str(tmp_path / "d1.csv")])
        main(["gen-data", "--config", str(path), "--out",
              str(tmp_path / "d2.csv")])
        assert (tmp_path / "d1.csv").read_bytes() == (tmp_path / "d2.csv").read_bytes()


class TestRun:
    def test_closed_loop_log_shape(self, tmp_path):
        prepared_scenario(tmp_path)
        cfg = parse_scenario(tmp_path / "scenario.ini")
        log = run_closed_loop(cfg, "deepc")
        assert log.T_sim == 5
        assert log.status == ["Optimal"] * 5
        assert np.array_equal(log.r[:, 0], [1, 1, 1, 2, 2])
        assert np.all(log.solve_time == 0.0)   # sentinel unless timings asked
        assert log.controller == "deepc" and log.plant == "lti"

    def test_single_step_run(self, tmp_path):
        prepared_scenario(tmp_path, run={"t_sim": "1"})
        cfg = parse_scenario(tmp_path / "scenario.ini")
        for name in ("deepc", "kmpc"):
            log = run_closed_loop(cfg, name)
            assert log.T_sim == 1

    def test_timings_recorded_on_request(self, tmp_path):
        prepared_scenario(tmp_path)
        cfg = parse_scenario(tmp_path / "scenario.ini")
        log = run_closed_loop(cfg, "deepc", record_timings=True)
        assert np.any(log.solve_time > 0.0)

    def test_byte_identical_logs(self, tmp_path):
        prepared_scenario(tmp_path, plant={"noise_std": "0.01"})
        cfg = parse_scenario(tmp_path / "scenario.ini")
        from ddpc.metrics import save_runlog

        save_runlog(run_closed_loop(cfg, "kmpc"), tmp_path / "r1.csv")
        save_runlog(run_closed_loop(cfg, "kmpc"), tmp_path / "r2.csv")
        assert (tmp_path / "r1.csv").read_bytes() == (tmp_path / "r2.csv").read_bytes()

    def test_missing_dataset_is_config_error(self, tmp_path):
        path = write_scenario(tmp_path)
        cfg = parse_scenario(path)
        with pytest.raises(ScenarioError, match="gen-data first"):
            run_closed_loop(cfg, "deepc")

    def test_run_cli_both_controllers(self, tmp_path, capsys):
        path = prepared_scenario(tmp_path)
        capsys.readouterr()
        rc = main(["run", "--config", str(path), "--controller", "both",
                   "--out", str(tmp_path / "log.csv")])
        assert rc == 0
        assert (tmp_path / "log_deepc.csv").exists()
        assert (tmp_path / "log_kmpc.csv").exists()
        out = capsys.readouterr().out
        assert "[deepc] non-optimal steps: 0 (0.0%)" in out
        assert "[kmpc] non-optimal steps: 0 (0.0%)" in out

    def test_parallel_matches_serial(self, tmp_path):
        path = prepared_scenario(tmp_path)
        main(["run", "--config", str(path), "--controller", "both",
              "--out", str(tmp_path / "ser.csv")])
        main(["run", "--config", str(path), "--controller", "both",
              "--parallel", "--out", str(tmp_path / "par.csv")])
        for name in ("deepc", "kmpc"):
            a = (tmp_path / f"ser_{name}.csv").read_bytes()
            b = (tmp_path / f"par_{name}.csv").read_bytes()
            assert a == b

    def test_degraded_run_exits_4(self, tmp_path, monkeypatch):
        path = prepared_scenario(tmp_path)
        real = harness._build_controller

        def crippled(cfg, name, options):
            return real(cfg, name, SolverOptions(max_iterations=1,
                                                 abs_tol=1e-14, rel_tol=1e-14))
        monkeypatch.setattr(harness, "_build_controller", crippled)
        rc = main(["run", "--config", str(path), "--controller", "deepc",
                   "--out", str(tmp_path / "bad.csv")])
        assert rc == 4

    def test_config_error_exits_2(self, tmp_path, capsys):
        rc = main(["run", "--config", str(tmp_path / "nope.ini"),
                   "--controller", "deepc", "--out", str(tmp_path / "x.csv")])
        assert rc == 2
        assert "error:" in capsys.readouterr().err


class TestCompare:
    def make_logs(self, tmp_path):
        path = prepared_scenario(tmp_path)
        main(["run", "--config", str(path), "--controller", "both",
              "--out", str(tmp_path / "log.csv")])
        return tmp_path / "log_deepc.csv", tmp_path / "log_kmpc.csv"

    def test_report_and_csv(self, tmp_path, capsys):
        a, b = self.make_logs(tmp_path)
        capsys.readouterr()
        rc = main(["compare", str(a), str(b), "--out", str(tmp_path / "cmp.csv")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "metric" in out and "percent" in out
        assert "input-bound violations [deepc]: 0" in out
        assert (tmp_path / "cmp.csv").exists()

    def test_base_selects_the_100_percent_run(self, tmp_path):
        a, b = self.make_logs(tmp_path)
        ra = compare_logs(load_runlog(a), load_runlog(b), base="a")
        rb = compare_logs(load_runlog(a), load_runlog(b), base="b")
        assert ra.base_label == "deepc" and rb.base_label == "kmpc"
        assert ra.percent["E"] != rb.percent["E"] or ra.percent["E"] == 100.0

    def test_hash_mismatch_refused(self, tmp_path, capsys):
        a, _ = self.make_logs(tmp_path)
        path = tmp_path / "scenario.ini"
        main(["run", "--config", str(path), "--seed", "1", "--controller",
              "kmpc", "--out", str(tmp_path / "other.csv")])
        capsys.readouterr()
        rc = main(["compare", str(a), str(tmp_path / "other.csv")])
        assert rc == 2
        assert "refusing to compare" in capsys.readouterr().err

    def test_length_mismatch_refused(self, tmp_path):
        a, b = self.make_logs(tmp_path)
        log_a, log_b = load_runlog(a), load_runlog(b)
        log_b.t = log_b.t[:3]
        log_b.u = log_b.u[:3]
        log_b.y = log_b.y[:3]
        log_b.r = log_b.r[:3]
        log_b.status = log_b.status[:3]
        log_b.solve_time = log_b.solve_time[:3]
        log_b.objective = log_b.objective[:3]
        with pytest.raises(ScenarioError, match="length"):
            compare_logs(log_a, log_b)
