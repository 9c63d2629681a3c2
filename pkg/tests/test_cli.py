"""Command-line front end: parsing, config merging, output formats."""

import csv
import json

import numpy as np
import pytest

from diqkd.cli import ConfigError, RunConfig, _parse_grid, _parse_rounds, main


def run_cli(argv):
    return main(argv)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_parse_grid_single_value():
    assert _parse_grid("0.9", "eta_d") == [0.9]


def test_parse_grid_range_inclusive():
    grid = _parse_grid("0.8:1.0:3", "eta_d")
    assert np.allclose(grid, [0.8, 0.9, 1.0], rtol=0, atol=1e-12)


def test_parse_grid_errors():
    with pytest.raises(ConfigError):
        _parse_grid("0.8:1.0:0", "eta_d")
    with pytest.raises(ConfigError):
        _parse_grid("abc", "eta_d")


def test_parse_rounds_comma_list():
    assert _parse_rounds("1e8,1e10") == [1e8, 1e10]


def test_run_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(protocol="three_photon").validate()
    with pytest.raises(ConfigError):
        RunConfig(format="xml").validate()
    with pytest.raises(ConfigError):
        RunConfig(visibility=1.2).validate()
    with pytest.raises(ConfigError):
        RunConfig(q=0.7).validate()
    RunConfig().validate()


def test_chsh_csv_output(tmp_path):
    out = tmp_path / "chsh.csv"
    code = run_cli(["chsh", "--starts", "2", "--out", str(out)])
    assert code == 0
    rows = read_csv(out)
    header, data = rows[0], rows[1:]
    assert header[:6] == ["protocol", "eta_d", "visibility", "L", "S", "S_signed"]
    assert len(data) == 1
    rec = dict(zip(header, data[0]))
    assert rec["protocol"] == "one_photon"
    assert np.isclose(float(rec["S"]), 2.6884, rtol=0, atol=2e-3)
    assert abs(float(rec["S_signed"])) == float(rec["S"])
    assert rec["converged"] == "true"


def test_chsh_json_output_matches_csv(tmp_path):
    csv_out = tmp_path / "a.csv"
    json_out = tmp_path / "a.json"
    assert run_cli(["chsh", "--starts", "2", "--out", str(csv_out)]) == 0
    assert run_cli(["chsh", "--starts", "2", "--format", "json", "--out", str(json_out)]) == 0
    rows = read_csv(csv_out)
    rec_csv = dict(zip(rows[0], rows[1]))
    rec_json = json.loads(json_out.read_text())[0]
    assert set(rec_json) == set(rows[0])
    assert np.isclose(float(rec_csv["S"]), rec_json["S"], rtol=0, atol=1e-12)


def test_repeated_runs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        assert run_cli([
            "chsh", "--starts", "2", "--eta-d", "0.9:1.0:2", "--out", str(out)
        ]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_config_file_merges_under_flags(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(
        '[chsh]\neta_d = "0.9"\nstarts = 2\nvisibility = 0.97\n'
    )
    out = tmp_path / "out.csv"
    code = run_cli([
        "--config", str(cfg), "chsh", "--eta-d", "1.0", "--out", str(out)
    ])
    assert code == 0
    rec = dict(zip(*read_csv(out)[:2]))
    # flag beats config; untouched config values survive
    assert float(rec["eta_d"]) == 1.0
    assert float(rec["visibility"]) == 0.97


def test_rate_command_emits_operating_point(tmp_path):
    out = tmp_path / "rate.csv"
    assert run_cli([
        "rate", "--eta-d", "0.96", "--starts", "4", "--out", str(out)
    ]) == 0
    rec = dict(zip(*read_csv(out)[:2]))
    assert float(rec["r"]) > 0.2
    assert float(rec["R"]) > 0.0
    assert "b3_mag" in rec
    assert float(rec["P_h"]) > 0.0


def test_finite_command_reports_round_budgets(tmp_path):
    out = tmp_path / "fin.csv"
    assert run_cli([
        "finite", "--eta-d", "0.96", "--distance", "0", "--rounds", "1e8,1e10",
        "--starts", "4", "--out", str(out),
    ]) == 0
    rows = read_csv(out)
    recs = [dict(zip(rows[0], r)) for r in rows[1:]]
    assert [float(r["n_rounds"]) for r in recs] == [1e8, 1e10]
    assert float(recs[0]["R"]) < float(recs[1]["R"])
    assert float(recs[0]["n_pulses"]) > float(recs[0]["n_rounds"])


def test_validate_command_small_sample(tmp_path):
    out = tmp_path / "val.csv"
    assert run_cli([
        "validate", "--draws", "2", "--checks", "marginal_1ph,series_identities",
        "--out", str(out),
    ]) == 0
    rows = read_csv(out)
    assert [r[0] for r in rows[1:]] == ["marginal_1ph", "series_identities"]
    assert all(r[1] == "true" for r in rows[1:])


def test_validate_command_detects_injected_error(tmp_path):
    out = tmp_path / "pert.csv"
    assert run_cli([
        "validate", "--draws", "2", "--checks", "marginal_1ph", "--perturb", "1e-6",
        "--out", str(out),
    ]) == 0
    rec = dict(zip(*read_csv(out)[:2]))
    assert rec["detected"] == "true"


def test_exit_code_two_for_config_errors(tmp_path):
    assert run_cli(["chsh", "--eta-d", "0.8:1.0:0"]) == 2
    assert run_cli(["--config", str(tmp_path / "none.toml"), "chsh"]) == 2
    assert run_cli(["sweep", "--eta-d", "0.96"]) == 2
    assert run_cli(["validate", "--checks", "no_such_check"]) == 2
    assert run_cli(["rate", "--q", "0.9"]) == 2


def test_unknown_config_key_rejected(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("wavelength = 1550\n")
    assert run_cli(["--config", str(cfg), "chsh"]) == 2


def test_empty_grid_writes_nothing(tmp_path):
    out = tmp_path / "never.csv"
    assert run_cli(["chsh", "--eta-d", "0.8:1.0:0", "--out", str(out)]) == 2
    assert not out.exists()


def test_one_photon_rejects_station_efficiency_knobs():
    assert run_cli(["rate", "--eta-d", "0.96", "--eta-s", "0.9", "--starts", "2"]) == 2
