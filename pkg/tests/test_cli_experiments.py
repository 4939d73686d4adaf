import json
import logging

import pytest

import utils.logging_config as logging_config
from analytic import meeting_table_bytes
from cli_experiments import main
from exact_counting import build_count_layers, count_n
from lattice_core import Environment, GraphMode
from results_store import MANIFEST_NAME, load_json


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for name in ("LPP_THREADS", "LPP_OUT_DIR", "LPP_MEMORY_BUDGET_BYTES", "LPP_ORACLE_CAP", "LPP_LOG_LEVEL", "LPP_LOG_FILE"):
        monkeypatch.delenv(name, raising=False)
    root = logging.getLogger()
    handlers = list(root.handlers)
    yield
    for handler in root.handlers[:]:
        if handler not in handlers:
            root.removeHandler(handler)
    logging_config._configured = False


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr().out


def test_count_single_path(tmp_path, capsys):
    code, out = run(capsys, "count", "--d", "1", "--n", "0", "--alpha", "0", "--out", str(tmp_path))
    assert code == 0
    assert "N=1" in out.splitlines()


def test_count_all_paths(tmp_path, capsys):
    code, out = run(capsys, "count", "--d", "2", "--n", "5", "--alpha", "0", "--out", str(tmp_path))
    assert code == 0
    lines = out.splitlines()
    assert "N=1024" in lines
    assert "conservation=ok" in lines


def test_count_matches_library(tmp_path, capsys):
    code, out = run(capsys, "count", "--d", "1", "--n", "8", "--seed", "7", "--alpha", "0.5", "--out", str(tmp_path))
    env = Environment(seed=7, p=0.5, mode=GraphMode.semi(1), n_max=8)
    expected = count_n(build_count_layers(env, 8), 8, 0.5).exact
    assert code == 0
    assert f"N={expected}" in out.splitlines()
    payload = load_json(str(tmp_path / "count.json"))
    assert payload["count"] == str(expected)
    assert (tmp_path / "count.csv").exists()


def test_manifest_is_finished(tmp_path, capsys):
    run(capsys, "count", "--d", "1", "--n", "4", "--out", str(tmp_path))
    manifest = load_json(str(tmp_path / MANIFEST_NAME))
    assert manifest["subcommand"] == "count"
    assert manifest["finishedAt"] is not None
    assert manifest["masterSeed"] == 0
    assert manifest["outputs"] == [str(tmp_path / "count.json"), str(tmp_path / "count.csv")]


def test_phi_curve_prints_out_degree_below_p(tmp_path, capsys):
    code, out = run(capsys, "phi-curve", "--d", "1", "--p", "0.5", "--alpha", "0.5", "--out", str(tmp_path))
    assert code == 0
    assert "alpha=0.5 phi=2" in out.splitlines()


def test_rho_prints_lower_bound(tmp_path, capsys):
    code, out = run(capsys, "rho", "--d", "1", "--T", "50", "--out", str(tmp_path))
    assert code == 0
    assert any(line.startswith("lowerBound=") for line in out.splitlines())
    assert load_json(str(tmp_path / "rho.json"))["T"] == 50


def test_rho_default_truncation_follows_memory_budget(tmp_path, capsys):
    budget = meeting_table_bytes(4, 10)
    code, _ = run(capsys, "rho", "--d", "4", "--memory-budget", str(budget), "--out", str(tmp_path))
    assert code == 0
    assert load_json(str(tmp_path / "rho.json"))["T"] == 10


def test_oracle_validate_passes(tmp_path, capsys):
    code, out = run(capsys, "oracle-validate", "--d", "1", "--nmax", "4", "--seeds", "2", "--out", str(tmp_path))
    assert code == 0
    assert "0 mismatches" in out


def test_unknown_flag_exits_with_usage_error(capsys):
    with pytest.raises(SystemExit) as e:
        main(["count", "--bogus"])
    assert e.value.code == 2


def test_invalid_probability_exits_2(tmp_path, capsys):
    code, _ = run(capsys, "count", "--d", "1", "--n", "3", "--p", "1.5", "--out", str(tmp_path))
    assert code == 2


def test_existing_output_requires_force(tmp_path, capsys):
    assert run(capsys, "count", "--d", "1", "--n", "3", "--out", str(tmp_path))[0] == 0
    assert run(capsys, "count", "--d", "1", "--n", "3", "--out", str(tmp_path))[0] == 2
    assert run(capsys, "count", "--d", "1", "--n", "3", "--out", str(tmp_path), "--force")[0] == 0


def test_memory_budget_refusal_exits_3(tmp_path, capsys):
    code, _ = run(capsys, "count", "--d", "2", "--n", "30", "--memory-budget", "1000", "--out", str(tmp_path))
    assert code == 3


def test_dry_run_writes_nothing(tmp_path, capsys):
    out_dir = tmp_path / "out"
    code, out = run(capsys, "count", "--d", "2", "--n", "5", "--dry-run", "--out", str(out_dir))
    assert code == 0
    assert "Estimated peak memory" in out
    assert not out_dir.exists()


def test_toml_file_sits_between_environment_and_flags(tmp_path, capsys, monkeypatch):
    config_path = tmp_path / "run.toml"
    config_path.write_text('reps = 3\nseed = 5\nn = 6\nthreads = 2\n', encoding="utf-8")
    monkeypatch.setenv("LPP_THREADS", "4")
    code, _ = run(capsys, "estimate-m", "--config", str(config_path), "--seed", "9", "--out", str(tmp_path / "out"))
    assert code == 0
    config = load_json(str(tmp_path / "out" / "estimate_m.json"))["config"]
    assert config["reps"] == 3
    assert config["masterSeed"] == 9
    assert config["threads"] == 2


def test_environment_settings_apply(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("LPP_THREADS", "3")
    monkeypatch.setenv("LPP_OUT_DIR", str(tmp_path / "from_env"))
    code, _ = run(capsys, "estimate-m", "--n", "5", "--reps", "2")
    assert code == 0
    assert load_json(str(tmp_path / "from_env" / "estimate_m.json"))["config"]["threads"] == 3


def test_csv_output_does_not_depend_on_threads(tmp_path, capsys):
    args = ["estimate-lambda", "--d", "1", "--p", "0.5", "--alpha", "0.6", "--n-grid", "10,20", "--reps", "6", "--seed", "4"]
    assert run(capsys, *args, "--threads", "1", "--out", str(tmp_path / "a"))[0] == 0
    assert run(capsys, *args, "--threads", "3", "--out", str(tmp_path / "b"))[0] == 0
    first = (tmp_path / "a" / "estimate_lambda.csv").read_text(encoding="utf-8")
    second = (tmp_path / "b" / "estimate_lambda.csv").read_text(encoding="utf-8")
    assert first == second
    per_rep = json.loads((tmp_path / "a" / "estimate_lambda.json").read_text(encoding="utf-8"))["perRep"]
    assert len(per_rep) == 6
