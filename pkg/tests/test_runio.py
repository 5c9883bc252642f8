"""Persistence helpers: stable hashing, jsonl, plot-data round trips."""

import pytest

from opsdlab.errors import ConfigError
from opsdlab.runio import (
    append_jsonl,
    config_hash,
    read_json,
    read_jsonl,
    read_plot_data,
    stable_json,
    write_json,
    write_plot_data,
)


def test_stable_json_key_order():
    assert stable_json({"b": 1, "a": 2}) == stable_json({"a": 2, "b": 1})


def test_config_hash_changes_with_content():
    a = config_hash({"lr": 1e-3})
    b = config_hash({"lr": 2e-3})
    assert a != b
    assert len(a) == 16


def test_json_round_trip(tmp_path):
    path = tmp_path / "x.json"
    write_json(path, {"a": [1, 2], "b": "s"})
    assert read_json(path) == {"a": [1, 2], "b": "s"}


def test_jsonl_append_and_read(tmp_path):
    path = tmp_path / "m.jsonl"
    append_jsonl(path, {"step": 1})
    append_jsonl(path, {"step": 2})
    assert read_jsonl(path) == [{"step": 1}, {"step": 2}]


def test_plot_data_round_trip(tmp_path):
    path = tmp_path / "scatter.tsv"
    rows = [["run-a", 1.25, -3.5], ["run-b", 0.0, 7.0]]
    write_plot_data(path, "accuracy-length-scatter", ["run", "x", "y"], rows)
    schema, columns, parsed = read_plot_data(path)
    assert schema == "accuracy-length-scatter"
    assert columns == ["run", "x", "y"]
    assert parsed == rows


def test_plot_data_rejects_ragged_rows(tmp_path):
    with pytest.raises(ConfigError):
        write_plot_data(tmp_path / "x.tsv", "s", ["a", "b"], [[1]])


def test_plot_data_rejects_malformed_file(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("not a plot file\n")
    with pytest.raises(ConfigError):
        read_plot_data(path)
