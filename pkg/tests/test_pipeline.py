from __future__ import annotations

import json
import os

import pandas as pd
import pytest

from glc_lab.config import parse_config
from glc_lab.pipeline import SUBCOMMANDS, run


SMALL = [
    "identity_space_sizes=4,17",
    "identity_time_steps=5",
    "identity_samples=5",
    "energy_samples=3",
    "M=15",
    "N=16",
    "mesh_family=7,15",
    "family_steps=16,32",
    "epsilons=1e-2,1e-4",
    "samples=2",
    "delta=0.5",
    "carleman_space_sizes=7,15",
]


def small_config(*extra: str):
    return parse_config(overrides=SMALL + list(extra))


@pytest.mark.parametrize("subcommand", ["identities", "energy", "observability", "control", "weights-audit", "carleman-audit"])
def test_subcommands_pass_on_small_config(tmp_path, subcommand):
    report = run(subcommand, small_config(), out_dir=str(tmp_path), workers=2)
    assert report.errors == []
    assert report.passed, [c for c in report.checks if not c.passed]
    assert os.path.exists(tmp_path / "report.json")
    assert not os.path.exists(tmp_path / ".failed")
    for path in report.tables.values():
        assert os.path.exists(path)


def test_solve_checks_pass(tmp_path):
    report = run("solve", small_config(), out_dir=str(tmp_path))
    names = {c.name for c in report.checks}
    assert {"forward_residual", "adjoint_residual", "constant_recurrence", "duality_defect", "adjoint_dense_oracle"} <= names
    assert report.passed, [c for c in report.checks if not c.passed]
    state = pd.read_csv(report.tables["solve_state"])
    assert {"t", "x", "re_y", "im_y"} <= set(state.columns)


def test_carleman_audit_refuses_low_tau(tmp_path):
    report = run("carleman-audit", small_config("tau=1"), out_dir=str(tmp_path))
    assert not report.passed
    assert any("tau_lower" in error for error in report.errors)
    assert os.path.exists(tmp_path / ".failed")


def test_reruns_are_byte_identical(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    run("identities", small_config(), out_dir=str(first), workers=4)
    run("identities", small_config(), out_dir=str(second), workers=1)
    assert (first / "identities.csv").read_bytes() == (second / "identities.csv").read_bytes()


def test_report_separates_checks_from_experiments(tmp_path):
    run("control", small_config(), out_dir=str(tmp_path))
    data = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
    assert {e["name"] for e in data["experiments"]} == {"terminal_constant_spread", "control_constant_spread"}
    assert "control" in data["timings"]
    assert data["config"]["M"] == 15


def test_unknown_subcommand_is_rejected():
    assert "full-suite" in SUBCOMMANDS
    with pytest.raises(ValueError, match="unknown subcommand"):
        run("plot", small_config())


def test_control_checks_both_ladder_norms(tmp_path):
    report = run("control", small_config(), out_dir=str(tmp_path), workers=1)
    names = {c.name for c in report.checks}
    assert {"terminal_norm_monotone", "control_norm_monotone"} <= names
    ladder = pd.read_csv(report.tables["control_ladder"])
    assert list(ladder["epsilon"]) == [1e-2, 1e-4]
    assert ladder["control_norm"].iloc[1] >= ladder["control_norm"].iloc[0]


def test_energy_rows_follow_energy_samples(tmp_path):
    report = run("energy", small_config(), out_dir=str(tmp_path), workers=1)
    rows = pd.read_csv(report.tables["energy"])
    assert len(rows) == 3 * 3
