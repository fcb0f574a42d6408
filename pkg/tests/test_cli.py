import csv
import math
import os
import stat
import subprocess
import sys

import numpy as np
import pytest
import yaml

from msda_wjdot.cli import EXIT_FAILED, EXIT_INVALID, EXIT_OK, main
from msda_wjdot.data import RotationShiftSpec, generate_rotation_domains, write_dataset
from msda_wjdot.errors import ConfigError
from msda_wjdot.experiment import (
    ALPHA_COLUMNS,
    SUMMARY_COLUMNS,
    ExperimentConfig,
    ExperimentResults,
    emit_results,
    parse_config,
    run_experiment,
    serialize_config,
)

SMALL = {
    "experiment": "rotation-sweep",
    "replications": 2,
    "base_seed": 3,
    "target_parameters": [0.5, 2.0],
    "methods": ["wjdot", "cjdot", "baseline"],
    "data": {"n_sources": 3, "n_source_samples": 30, "n_target_samples": 30},
    "wjdot": {"max_iters": 8},
    "erm": {"steps": 20},
}


def write_config(tmp_path, raw, name="config.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw))
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# --- parsing ----------------------------------------------------------------


def test_minimal_config_gets_defaults(tmp_path):
    cfg = parse_config(write_config(tmp_path, {"experiment": "fig1"}))
    assert cfg.replications == 1 and cfg.base_seed == 0
    assert cfg.data["n_sources"] == 4 and cfg.data["n_source_samples"] == 300
    assert cfg.target_parameters == [0.75 * math.pi]
    assert cfg.wjdot["beta"] == 1.0 and cfg.wjdot["patience"] == 20
    assert cfg.methods == ["wjdot", "cjdot", "mjdot", "baseline", "target", "baseline_target"]


def test_empty_file_is_the_default_rotation_sweep(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    cfg = parse_config(path)
    assert cfg.experiment == "rotation-sweep" and cfg.data["n_sources"] == 30
    assert len(cfg.target_parameters) == 10


def test_unknown_key_is_named(tmp_path):
    with pytest.raises(ConfigError, match="unknown key: repliactions"):
        parse_config(write_config(tmp_path, {"repliactions": 3}))
    with pytest.raises(ConfigError, match="unknown key: wjdot.betaa"):
        parse_config(write_config(tmp_path, {"wjdot": {"betaa": 1.0}}))


@pytest.mark.parametrize("raw,needle", [
    ({"replications": "three"}, "key replications: expected int"),
    ({"replications": 2.0}, "key replications: expected int"),
    ({"wjdot": {"beta": "big"}}, "key wjdot.beta: expected float_or_null"),
    ({"data": {"shared_base": 1}}, "key data.shared_base: expected bool"),
    ({"methods": "wjdot"}, "key methods: expected str_list"),
])
def test_type_mismatch_names_key_and_type(tmp_path, raw, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(write_config(tmp_path, raw))


@pytest.mark.parametrize("raw", [
    {"replications": 0}, {"methods": []}, {"methods": ["svm"]}, {"experiment": "mnist"},
    {"wjdot": {"step_alpha": -1.0}}, {"data": {"sigma": 0.0}}, {"target_parameters": [10.0]},
    {"experiment": "target-shift", "target_parameters": [0.95]},
    {"experiment": "custom", "data": {"sources": ["missing.csv"], "target": "missing.csv"}},
])
def test_invalid_values(tmp_path, raw):
    with pytest.raises(ConfigError):
        parse_config(write_config(tmp_path, raw))


def test_round_trip(tmp_path):
    cfg = parse_config(write_config(tmp_path, SMALL))
    again = tmp_path / "again.yaml"
    again.write_text(serialize_config(cfg))
    assert parse_config(again) == cfg
    ts = parse_config(write_config(tmp_path, {"experiment": "target-shift"}, "ts.yaml"))
    (tmp_path / "ts2.yaml").write_text(serialize_config(ts))
    assert parse_config(tmp_path / "ts2.yaml") == ts


# --- running ----------------------------------------------------------------


def test_experiment_outputs(tmp_path):
    cfg = parse_config(write_config(tmp_path, SMALL))
    results = run_experiment(cfg, tmp_path / "out")
    out = tmp_path / "out"
    summary = read_rows(out / "summary.csv")
    assert summary[0] == SUMMARY_COLUMNS
    assert len(summary) == 1 + 3 * 2
    reps = read_rows(out / "replications.csv")
    header = reps[0]
    for row in summary[1:]:
        accs = [float(r[header.index("accuracy")]) for r in reps[1:]
                if r[header.index("method")] == row[0] and float(r[header.index("target_parameter")]) == float(row[1])]
        assert len(accs) == int(row[4]) == 2
        assert all(0.0 <= a <= 1.0 for a in accs)
        assert abs(float(row[2]) - np.mean(accs)) <= 1e-12
    alpha = read_rows(out / "alpha.csv")
    assert alpha[0] == ALPHA_COLUMNS
    assert len(alpha) - 1 == 2 * 2 * 3  # replications x parameters x J
    seeds = {int(r[header.index("seed")]) for r in reps[1:]}
    assert seeds == {3, 4}
    traj = sorted(os.listdir(out / "trajectories"))
    assert len(traj) == 2 * 2 * 2 and traj[0].startswith("cjdot_rep0")
    assert results.n_failed == 0


def test_experiment_is_byte_identical(tmp_path):
    raw = dict(SMALL, replications=1, target_parameters=[1.0])
    path = write_config(tmp_path, raw)
    for name in ("a", "b"):
        assert main(["experiment", "--config", str(path), "--out", str(tmp_path / name)]) == EXIT_OK
    for fname in ("summary.csv", "replications.csv", "alpha.csv", "config.yaml", "run.log"):
        assert (tmp_path / "a" / fname).read_bytes() == (tmp_path / "b" / fname).read_bytes()
    for fname in os.listdir(tmp_path / "a" / "trajectories"):
        assert (tmp_path / "a" / "trajectories" / fname).read_bytes() == \
            (tmp_path / "b" / "trajectories" / fname).read_bytes()


def test_parallel_jobs_match_serial(tmp_path):
    path = write_config(tmp_path, dict(SMALL, methods=["wjdot"]))
    assert main(["experiment", "--config", str(path), "--out", str(tmp_path / "serial")]) == EXIT_OK
    assert main(["experiment", "--config", str(path), "--out", str(tmp_path / "par"), "--jobs", "2"]) == EXIT_OK
    for fname in ("summary.csv", "replications.csv", "alpha.csv"):
        assert (tmp_path / "serial" / fname).read_bytes() == (tmp_path / "par" / fname).read_bytes()


def test_single_method_section(tmp_path):
    path = write_config(tmp_path, dict(SMALL, methods=["baseline"]))
    assert main(["experiment", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_OK
    summary = read_rows(tmp_path / "o" / "summary.csv")
    assert {r[0] for r in summary[1:]} == {"baseline"}
    assert read_rows(tmp_path / "o" / "alpha.csv") == [ALPHA_COLUMNS]


def test_fig1_records_alpha_per_replication(tmp_path):
    raw = {"experiment": "fig1", "replications": 2, "methods": ["wjdot"],
           "data": {"n_source_samples": 60, "n_target_samples": 60}, "wjdot": {"max_iters": 5}}
    cfg = parse_config(write_config(tmp_path, raw))
    run_experiment(cfg, tmp_path / "o")
    reps = read_rows(tmp_path / "o" / "replications.csv")
    col = reps[0].index("alpha")
    for row in reps[1:]:
        alpha = [float(a) for a in row[col].split()]
        assert len(alpha) == 4 and abs(sum(alpha) - 1) <= 1e-12


def test_seed_override(tmp_path):
    path = write_config(tmp_path, dict(SMALL, replications=1, methods=["baseline"]))
    assert main(["experiment", "--config", str(path), "--out", str(tmp_path / "o"), "--seed", "11"]) == EXIT_OK
    reps = read_rows(tmp_path / "o" / "replications.csv")
    assert {r[1] for r in reps[1:]} == {"11"}


def test_empty_summary_has_header_only(tmp_path):
    cfg = parse_config(write_config(tmp_path, SMALL))
    emit_results(ExperimentResults(cfg, [], [], {}), tmp_path / "o")
    rows = read_rows(tmp_path / "o" / "summary.csv")
    assert rows[0] == SUMMARY_COLUMNS
    assert all(r[4] == "0" for r in rows[1:])
    cfg.methods = []
    emit_results(ExperimentResults(cfg, [], [], {}), tmp_path / "p")
    assert read_rows(tmp_path / "p" / "summary.csv") == [SUMMARY_COLUMNS]


def test_method_failure_is_recorded_and_sweep_continues(tmp_path, monkeypatch):
    import msda_wjdot.experiment as experiment

    original = experiment.run_method

    def flaky(method, config, domains, seed):
        if method == "cjdot" and seed == 3:
            raise RuntimeError("boom")
        return original(method, config, domains, seed)

    monkeypatch.setattr(experiment, "run_method", flaky)
    path = write_config(tmp_path, SMALL)
    assert main(["experiment", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_FAILED
    reps = read_rows(tmp_path / "o" / "replications.csv")
    failed = [r for r in reps[1:] if r[4] == "failed"]
    assert len(failed) == 2 and all("boom" in r[-1] for r in failed)
    assert sum(r[4] == "ok" for r in reps[1:]) == 3 * 2 * 2 - 2
    summary = read_rows(tmp_path / "o" / "summary.csv")
    assert {r[4] for r in summary[1:] if r[0] == "cjdot"} == {"1"}


def test_exit_code_for_invalid_config(tmp_path):
    path = write_config(tmp_path, {"repliactions": 1})
    assert main(["experiment", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_INVALID
    assert main(["experiment", "--config", str(tmp_path / "nope.yaml")]) == EXIT_INVALID


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_unwritable_output_fails_before_running(tmp_path):
    locked = tmp_path / "locked"
    locked.mkdir()
    locked.chmod(stat.S_IREAD | stat.S_IEXEC)
    path = write_config(tmp_path, SMALL)
    assert main(["experiment", "--config", str(path), "--out", str(locked / "o")]) == EXIT_FAILED


def test_output_path_that_is_a_file(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    path = write_config(tmp_path, SMALL)
    assert main(["experiment", "--config", str(path), "--out", str(blocker)]) == EXIT_FAILED


# --- the other subcommands ---------------------------------------------------


def test_generate_then_custom_train(tmp_path):
    path = write_config(tmp_path, dict(SMALL, target_parameters=[1.0]))
    assert main(["generate", "--config", str(path), "--out", str(tmp_path / "data")]) == EXIT_OK
    files = sorted(os.listdir(tmp_path / "data" / "param0"))
    assert files == ["source_0.csv", "source_1.csv", "source_2.csv", "target.csv"]
    custom = {
        "experiment": "custom",
        "methods": ["wjdot"],
        "data": {"sources": [f"data/param0/source_{j}.csv" for j in range(3)], "target": "data/param0/target.csv"},
        "wjdot": {"max_iters": 5},
    }
    cpath = write_config(tmp_path, custom, "custom.yaml")
    assert main(["train", "--config", str(cpath), "--out", str(tmp_path / "model")]) == EXIT_OK
    for name in ("model.txt", "trajectory.csv", "metrics.csv", "run.log"):
        assert (tmp_path / "model" / name).is_file()
    metrics = read_rows(tmp_path / "model" / "metrics.csv")
    assert metrics[0] == ["method", "seed", "accuracy"] and 0 <= float(metrics[1][2]) <= 1


def test_custom_files_match_generated_domains(tmp_path):
    S, T = generate_rotation_domains(RotationShiftSpec(n_sources=2, n_source_samples=30, n_target_samples=30,
                                                       target_angle=1.0, seed=0))
    for j, s in enumerate(S):
        write_dataset(tmp_path / f"s{j}.csv", s)
    write_dataset(tmp_path / "t.csv", T)
    raw = {"experiment": "custom", "methods": ["baseline"], "erm": {"steps": 5},
           "data": {"sources": ["s0.csv", "s1.csv"], "target": "t.csv"}}
    cfg = parse_config(write_config(tmp_path, raw))
    results = run_experiment(cfg, tmp_path / "o")
    assert results.n_failed == 0 and len(results.rows) == 1


def test_diagnose(tmp_path):
    raw = dict(SMALL, replications=1, target_parameters=[2.0])
    path = write_config(tmp_path, raw)
    assert main(["diagnose", "--config", str(path), "--out", str(tmp_path / "d")]) == EXIT_OK
    rows = read_rows(tmp_path / "d" / "diagnostics.csv")
    assert rows[0][:3] == ["replication", "target_parameter", "alpha_kind"]
    assert [r[2] for r in rows[1:]] == ["optimized", "uniform"]
    for r in rows[1:]:
        eps_alpha, eps_T, tv, rhs, lam = map(float, r[3:])
        assert eps_T <= rhs + 1e-12 and lam == pytest.approx(eps_alpha + eps_T)


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "msda_wjdot.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("generate", "train", "experiment", "diagnose"):
        assert cmd in proc.stdout


def test_config_dataclass_defaults_validate():
    cfg = ExperimentConfig.from_dict({"experiment": "target-shift"})
    assert cfg.data["n_sources"] == 20 and cfg.target_parameters[0] == 0.1
    assert cfg.target_parameters[-1] == 0.9
