import csv

import pytest

from errors import OutputExistsError
from estimators import Aggregates
from results_store import get_result_path, load_json, save_json, write_csv


def test_result_path_is_sanitized(tmp_path):
    assert get_result_path(str(tmp_path), "Estimate-Lambda run", "csv") == str(tmp_path / "estimate_lambda_run.csv")


def test_save_json_dumps_models_with_camel_case(tmp_path):
    path = str(tmp_path / "nested" / "agg.json")
    save_json(path, Aggregates.from_estimate(1.0, 0.5, 4))
    data = load_json(path)
    assert data["ciLow"] == pytest.approx(1.0 - 1.96 * 0.5)
    assert "ci_low" not in data


def test_save_json_never_overwrites_without_force(tmp_path):
    path = str(tmp_path / "a.json")
    save_json(path, {"x": 1})
    with pytest.raises(OutputExistsError):
        save_json(path, {"x": 2})
    save_json(path, {"x": 3}, force=True)
    assert load_json(path) == {"x": 3}


def test_load_json_missing_file(tmp_path):
    assert load_json(str(tmp_path / "missing.json")) is None


def test_write_csv(tmp_path):
    path = str(tmp_path / "t.csv")
    write_csv(path, ["n", "value"], [[1, 0.5], [2, "1e400"]])
    with open(path, newline="", encoding="utf-8") as f:
        assert list(csv.reader(f)) == [["n", "value"], ["1", "0.5"], ["2", "1e400"]]
    with pytest.raises(OutputExistsError):
        write_csv(path, ["n"], [])
