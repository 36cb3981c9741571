import json

import numpy as np
import pytest

from netlaw import ConfigError, PipelineConfig, StageError, emit_report, load_config, run_pipeline
from netlaw.cli import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, main
from netlaw.pipeline import STAGES, stage_seed

LIB = ["1", "x_i", "x_j", "x_i*x_j"]


def tiny(out, **changes):
    cfg = {"seed": 3, "out": str(out),
           "topology": {"kind": "er", "n": 10, "p": 0.3},
           "dynamics": {"model": "Epi", "dt": 0.01, "T": 1.0, "T_end": 2.0},
           "preprocess": {"s_steps": 60, "select": "full"},
           "decoupler": {"hidden": 8, "epochs": 20, "batch_size": 8},
           "symreg": {"backend": "sparse", "library": LIB, "n_raw": 500, "k": 64, "refine": "terms"},
           "evaluation": {"library": LIB, "true_self": ["-x_i"], "true_inter": ["x_j - x_i*x_j"]},
           "termination": {"max_rounds": 1}}
    for key, val in changes.items():
        cfg[key] = {**cfg[key], **val} if isinstance(val, dict) else val
    return cfg


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def test_config_rejects_unknown_keys_and_bad_values(tmp_path):
    with pytest.raises(ConfigError, match="colour"):
        load_config({"colour": 1})
    with pytest.raises(ConfigError):
        load_config({"topology": {"kind": "lattice"}})
    with pytest.raises(ConfigError):
        load_config({"dynamics": {"model": "LV", "params": {"gamma": 1.0}}})
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.json"))
    assert isinstance(load_config({}), PipelineConfig)


def test_missing_topology_file_fails_before_any_computation(tmp_path):
    cfg = tiny(tmp_path / "run", topology={"kind": "edge_list", "path": str(tmp_path / "nope.txt")})
    with pytest.raises(ConfigError, match="nope.txt"):
        load_config(cfg)
    rc = main(["pipeline", "--config", str(write_cfg(tmp_path, cfg))])
    assert rc == EXIT_CONFIG
    assert not (tmp_path / "run").exists()


def test_config_json_round_trip():
    cfg = load_config(tiny("x"))
    assert load_config(cfg.to_json()) == cfg
    assert load_config(json.dumps(cfg.to_json())) == cfg


def test_stage_seeds_are_distinct_and_stable():
    seeds = {stage_seed(0, s, r) for s in STAGES for r in range(3)}
    assert len(seeds) == 3 * len(STAGES)
    assert stage_seed(5, "train", 1) == stage_seed(5, "train", 1)


def test_zero_rounds_gives_simulation_artifacts_only(tmp_path):
    out = run_pipeline(tiny(tmp_path / "run", termination={"max_rounds": 0}))
    names = {p.name for p in out.iterdir()}
    assert {"trajectory.csv", "topology.json", "config.json", "status.json"} <= names
    assert not names & {"training.csv", "round_0", "discovered.json", "metrics.json"}


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("full")
    return run_pipeline(tiny(base / "run"))


def test_epi_run_recovers_equation_and_reports(full_run):
    rep = json.loads((full_run / "report.json").read_text())
    assert rep["missing"] == []
    metrics = json.loads((full_run / "metrics.json").read_text())
    assert metrics["r2"] > 0.999 and metrics["recall"] == 1.0 and metrics["precision"] == 1.0
    assert metrics["l2_error"] < 1e-3
    text = (full_run / "report.txt").read_text()
    assert "Σ_j A_ij" in text and "x_i*x_j" in text
    assert (full_run / "prediction.csv").read_text().splitlines()[0] == "t,node,dim,truth,pred"
    assert len((full_run / "ned.csv").read_text().splitlines()) == 11


def test_pipeline_is_deterministic(full_run, tmp_path):
    again = run_pipeline(tiny(tmp_path / "run"))
    for name in ("discovered.json", "metrics.json", "training.csv", "trajectory.csv", "ned.csv"):
        assert (again / name).read_bytes() == (full_run / name).read_bytes(), name


def test_resume_after_stage_commands_matches_uninterrupted_run(full_run, tmp_path):
    cfg_path = write_cfg(tmp_path, tiny(tmp_path / "run"))
    for cmd in ("simulate", "preprocess", "train", "regress", "evaluate"):
        assert main([cmd, "--config", str(cfg_path)]) == EXIT_OK, cmd
    for name in ("discovered.json", "metrics.json", "training.csv"):
        assert (tmp_path / "run" / name).read_bytes() == (full_run / name).read_bytes(), name


def test_resume_refuses_changed_config(tmp_path):
    run_pipeline(tiny(tmp_path / "run", termination={"max_rounds": 0}))
    with pytest.raises(ConfigError, match="different config"):
        run_pipeline(tiny(tmp_path / "run", seed=4, termination={"max_rounds": 0}), resume=True)


def test_stage_failure_names_the_stage(tmp_path):
    bad = tmp_path / "adj.csv"
    bad.write_text("0,1\n1,oops\n")
    cfg = tiny(tmp_path / "run", topology={"kind": "adjacency_csv", "path": str(bad)})
    with pytest.raises(StageError) as info:
        run_pipeline(cfg)
    assert info.value.stage == "simulate"
    status = json.loads((tmp_path / "run" / "status.json").read_text())
    assert status["failed"]["stage"] == "simulate"
    assert main(["pipeline", "--config", str(write_cfg(tmp_path, cfg)), "--out", str(tmp_path / "r2")]) == EXIT_STAGE


def test_cli_seed_override_changes_topology(tmp_path):
    cfg_path = write_cfg(tmp_path, tiny(tmp_path / "a", termination={"max_rounds": 0}))
    main(["simulate", "--config", str(cfg_path)])
    main(["simulate", "--config", str(cfg_path), "--seed", "11", "--out", str(tmp_path / "b")])
    ta = json.loads((tmp_path / "a" / "topology.json").read_text())
    tb = json.loads((tmp_path / "b" / "topology.json").read_text())
    assert ta != tb


def test_emit_report_on_empty_directory(tmp_path):
    emit_report(tmp_path / "empty")
    rep = json.loads((tmp_path / "empty" / "report.json").read_text())
    assert rep["equations"] == [] and rep["metrics"] == {}
    assert "discovered.json" in rep["missing"] and "metrics.json" in rep["missing"]
    assert main(["report", "--out", str(tmp_path / "empty")]) == EXIT_OK


def test_emit_report_is_idempotent(full_run):
    first = [(full_run / f).read_bytes() for f in ("report.json", "report.txt")]
    emit_report(full_run)
    assert [(full_run / f).read_bytes() for f in ("report.json", "report.txt")] == first


def test_prediction_csv_matches_metrics(full_run):
    rows = np.loadtxt(full_run / "prediction.csv", delimiter=",", skiprows=1)
    assert rows.shape[1] == 5
    assert np.max(np.abs(rows[:, 3] - rows[:, 4])) < 1e-5
