from __future__ import annotations

import pytest

from glc_lab.config import ConfigError, DEFAULT_SEED, ExperimentConfig, parse_config


def write(tmp_path, text: str) -> str:
    path = tmp_path / "lab.conf"
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_defaults_are_filled_in():
    config = parse_config()
    assert config.M == 31 and config.N == 64
    assert config.tau_value == pytest.approx(2.0)
    assert config.epsilons == [1e-4, 1e-6, 1e-8]
    assert config.seed == DEFAULT_SEED


def test_minimal_file_passes(tmp_path):
    config = parse_config(write(tmp_path, "# desk run\nM = 31\nN = 64\nT = 1   # horizon\n\n"))
    assert config.T == 1.0
    assert config.meshes()[0].M == 31


def test_delta_out_of_range_names_the_constraint(tmp_path):
    with pytest.raises(ConfigError, match=r"delta: delta must lie in \(0, 1/2\]"):
        parse_config(write(tmp_path, "delta = 0.7\n"))


def test_unknown_key_is_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config(write(tmp_path, "mesh_size = 12\n"))


def test_line_without_equals_is_rejected(tmp_path):
    with pytest.raises(ConfigError, match="lab.conf:2"):
        parse_config(write(tmp_path, "M = 15\nN 32\n"))


def test_lists_and_overrides(tmp_path):
    config = parse_config(
        write(tmp_path, "epsilons = 1e-3, 1e-5\nmesh_family = 7, 15\nfamily_steps = 16, 32\n"),
        ["omega=0.2, 0.7", "omega0=0.3,0.6", "carleman_betas=0.0"],
    )
    assert config.epsilons == [1e-3, 1e-5]
    assert config.family() == [(7, 16), (15, 32)]
    assert config.omega == (0.2, 0.7)
    assert config.carleman_betas == [0.0]


def test_overrides_win_over_file(tmp_path):
    config = parse_config(write(tmp_path, "M = 15\n"), ["M=7"])
    assert config.M == 7


def test_omega0_must_sit_inside_omega():
    with pytest.raises(ConfigError, match="omega0"):
        parse_config(overrides=["omega0=0.1, 0.5"])


def test_family_lengths_must_agree():
    with pytest.raises(ConfigError, match="same length"):
        parse_config(overrides=["mesh_family=7,15,31", "family_steps=16"])


def test_tau_below_lower_bound_is_flagged_not_rejected():
    config = parse_config(overrides=["tau=1"])
    assert not config.regime()["tau_lower"].passed


def test_config_is_immutable():
    config = ExperimentConfig()
    with pytest.raises(Exception):
        config.M = 3


def test_default_family_picks_steps_inside_the_observability_regime():
    config = parse_config()
    assert config.family_steps == []
    assert config.family() == [(7, 4096), (15, 65536)]
    assert parse_config(overrides=["mesh_family=3,7"]).family() == [(3, 256), (7, 4096)]


def test_energy_samples_has_its_own_key():
    config = parse_config(overrides=["identity_samples=3"])
    assert config.energy_samples == 20
    assert parse_config(overrides=["energy_samples=2"]).energy_samples == 2
    with pytest.raises(ConfigError, match="energy_samples"):
        parse_config(overrides=["energy_samples=0"])
