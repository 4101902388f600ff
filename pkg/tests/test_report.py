"""Report writing, parsing, and table alignment."""

import pytest

from rise.errors import FormatError, IoError
from rise.report import align_table, read_report, report_paths, write_report


def test_report_paths_derivation():
    paths = report_paths("out/run.jsonl")
    assert str(paths["machine"]).endswith("run.jsonl")
    assert str(paths["text"]).endswith("run.txt")
    assert str(paths["figure"]).endswith("run.png")
    assert str(report_paths("out/run")["machine"]).endswith("run.jsonl")


def test_write_then_read_report(tmp_path):
    rows = [{"variant": "a", "target_domain": "d0", "seed": 0, "accuracy": 0.5,
             "selected_epoch": 3}]
    summary = [{"summary": "variant", "variant": "a", "mean_accuracy": 0.5, "runs": 1}]
    figure_calls = []
    paths = write_report(tmp_path / "r.jsonl", {"command": "test"}, rows, summary,
                         "table\n", figure_fn=figure_calls.append)
    assert figure_calls == [paths["figure"]]
    back = read_report(tmp_path / "r.jsonl")
    assert back["manifest"] == {"command": "test"}
    assert back["rows"] == rows
    assert back["summary"] == summary
    assert (tmp_path / "r.txt").read_text() == "table\n"


def test_read_report_missing_file(tmp_path):
    with pytest.raises(IoError):
        read_report(tmp_path / "nope.jsonl")


def test_read_report_unknown_kind(tmp_path):
    (tmp_path / "r.jsonl").write_text('{"kind": "mystery"}\n')
    with pytest.raises(FormatError, match="mystery"):
        read_report(tmp_path / "r.jsonl")


def test_align_table_pads_columns():
    out = align_table(["name", "acc"], [["long-variant", 0.123456], ["x", 1.0]])
    lines = out.splitlines()
    assert lines[0].startswith("name")
    assert "0.1235" in out and "1.0000" in out
    assert len(lines[1].split()) == 2  # separator row
