import json

from eubrl.cli import main
from eubrl.harness import RUNS_FILE, SUMMARY_FILE


def write_config(path, **extra):
    data = {
        "name": "cli-chain",
        "env": {"kind": "chain", "reward_scheme": "classic"},
        "agent": {"kind": "eubrl", "eta": 5.0},
        "steps": 200,
        "seeds": "0..3",
    }
    data.update(extra)
    path.write_text(json.dumps(data))
    return path


def test_run_writes_results(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json")
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--seeds", "0..2"]) == 0
    assert (out / SUMMARY_FILE).exists()
    assert len((out / RUNS_FILE).read_text().splitlines()) == 2
    assert "mean_return=" in capsys.readouterr().out


def test_report_regenerates_summary(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json")
    out = tmp_path / "out"
    main(["run", "--config", str(cfg), "--out", str(out)])
    before = (out / SUMMARY_FILE).read_bytes()
    (out / SUMMARY_FILE).unlink()
    assert main(["report", "--in", str(out)]) == 0
    assert (out / SUMMARY_FILE).read_bytes() == before


def test_sweep_writes_best_config(tmp_path):
    cfg = write_config(tmp_path / "c.json", steps=500)
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"agent.eta": [0.0, 5.0]}))
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(cfg), "--grid", str(grid), "--out", str(out)]) == 0
    best = json.loads((out / "best_config.json").read_text())
    assert best["agent"]["eta"] == 5.0
    assert (out / "sweep.csv").exists()


def test_theory_check_writes_report(tmp_path, capsys):
    assert main(["theory", "--check", "transition_decomposition", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "transition_decomposition.json").read_text())
    assert rep["passed"]


def test_failing_theory_check_sets_exit_code(capsys):
    assert main(["theory", "--check", "beta_variance_monotone"]) == 1


def test_bad_config_is_reported(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", agent={"kind": "eubrl", "etta": 1})
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == 2
