from __future__ import annotations

import json
import os

import pandas as pd

from glc_lab.reports import RunReport, mark_failed, split_complex, write_report, write_table


def test_complex_columns_are_split():
    frame = split_complex(pd.DataFrame({"M": [3, 5], "y": [1 + 2j, -0.5j]}))
    assert list(frame.columns) == ["M", "re_y", "im_y"]
    assert frame["im_y"].tolist() == [2.0, -0.5]


def test_tables_use_seventeen_significant_digits(tmp_path):
    path = write_table(str(tmp_path), "values", [{"x": 0.1, "label": "a"}])
    lines = open(path, encoding="utf-8").read().splitlines()
    assert lines == ["x,label", "0.10000000000000001,a"]


def test_report_passes_only_without_failed_checks_or_errors(tmp_path):
    report = RunReport(subcommand="identities", seed=1)
    report.check("small", 1e-15, 1e-13)
    report.experiment("spread", 3.0, 2.0)
    assert report.passed
    report.check("large", 1.0, 1e-13)
    assert not report.passed
    path = write_report(str(tmp_path), report)
    data = json.loads(open(path, encoding="utf-8").read())
    assert data["checks"][1]["passed"] is False
    assert data["experiments"][0]["within_target"] is False
    assert data["unmet_experiments"] == ["spread"]
    assert list(data) == sorted(data)


def test_failure_marker_lists_reasons(tmp_path):
    path = mark_failed(str(tmp_path), ["solve: SolverError: zero pivot at row 3"])
    assert os.path.basename(path) == ".failed"
    assert "zero pivot" in open(path, encoding="utf-8").read()


def test_unmet_experiments_name_their_context():
    report = RunReport(subcommand="control", seed=1)
    report.experiment("control_constant_spread", 3.1, 2.0, "in regime")
    report.experiment("terminal_constant_spread", 1.5, 4.0)
    report.experiment("carleman_ratio_spread", float("nan"), 2.0)
    assert report.passed
    assert report.unmet_experiments == ["control_constant_spread (in regime)", "carleman_ratio_spread"]
