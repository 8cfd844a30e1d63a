"""Tests for configuration parsing and CLI overrides."""

import warnings

import numpy as np
import pytest

from ptsim.config import (
    ConfigError,
    ParameterMap,
    apply_cli_overrides,
    parse_config_file,
    parse_config_line,
)


def test_brace_argument_single_token():
    entry = parse_config_line("add_Hamiltonian {hbar/2 * (|0><1|_2 + |1><0|_2)}")
    assert entry.name == "add_Hamiltonian"
    assert entry.args == ["{hbar/2 * (|0><1|_2 + |1><0|_2)}"]


def test_comments_and_blank_lines():
    assert parse_config_line("") is None
    assert parse_config_line("   # full comment line") is None
    entry = parse_config_line("dt 0.01  # trailing comment")
    assert entry.name == "dt" and entry.args == ["0.01"]


def test_multiple_args():
    entry = parse_config_line("add_Pulse Gauss 10 4 {3*pi} 0 {hbar/2*|1><0|_2}")
    assert entry.args[0] == "Gauss"
    assert len(entry.args) == 6


def test_unterminated_brace():
    with pytest.raises(ConfigError):
        parse_config_line("initial {|0><0|_2")


def test_file_parsing_and_getters(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "\n".join([
            "ta 0",
            "te {2*pi}",
            "dt 0.01",
            "use_symmetric_Trotter true",
            "add_Output {|1><1|_2}",
            "add_Output {|0><1|_2}",
            "# comment",
            "set_precision 10",
        ])
    )
    pmap = parse_config_file(str(cfg))
    assert pmap.get_float("ta") == 0.0
    assert pmap.get_float("te") == pytest.approx(6.283185307179586)
    assert pmap.get_bool("use_symmetric_Trotter") is True
    assert pmap.get_int("set_precision") == 10
    assert len(pmap.all("add_Output")) == 2
    mat = pmap.get_matrix("add_Output")   # last one wins for scalar access
    assert np.array_equal(mat, np.array([[0, 1], [0, 0]], dtype=complex))


def test_last_occurrence_wins(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("dt 0.1\ndt 0.02\n")
    pmap = parse_config_file(str(cfg))
    assert pmap.get_float("dt") == pytest.approx(0.02)


def test_cli_overrides_append_and_win(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("dt 0.1\nte 10\n")
    pmap = parse_config_file(str(cfg))
    apply_cli_overrides(pmap, ["-dt", "0.01", "-add_Output", "{|1><1|_2}"])
    assert pmap.get_float("dt") == pytest.approx(0.01)
    assert pmap.get_float("te") == pytest.approx(10.0)
    assert len(pmap.all("add_Output")) == 1


def test_cli_negative_values():
    pmap = ParameterMap()
    apply_cli_overrides(pmap, ["-ta", "-10", "-Fermion_EFermi", "-1e6"])
    assert pmap.get_float("ta") == pytest.approx(-10.0)
    assert pmap.get_float("Fermion_EFermi") == pytest.approx(-1e6)


def test_cli_stray_token():
    with pytest.raises(ConfigError):
        apply_cli_overrides(ParameterMap(), ["0.3"])


def test_unknown_command_warns(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("dt 0.1\nfrobnicate 3\n")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        parse_config_file(str(cfg))
    assert any("frobnicate" in str(w.message) for w in caught)


def test_bool_flag_and_errors():
    pmap = ParameterMap()
    pmap.add("use_Gaussian", [])
    assert pmap.get_bool("use_Gaussian") is True
    pmap.add("propagate_alternate", ["maybe"])
    with pytest.raises(ConfigError):
        pmap.get_bool("propagate_alternate")


def test_get_int_rejects_fractional():
    pmap = ParameterMap()
    pmap.add("final_sweep_n", ["1.5"])
    with pytest.raises(ConfigError):
        pmap.get_int("final_sweep_n")
