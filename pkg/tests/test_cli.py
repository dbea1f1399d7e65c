import json
import logging
import os

import numpy as np
import pytest

import cli
import safety


@pytest.fixture(autouse=True)
def keep_pytest_logging(monkeypatch):
    monkeypatch.setattr(cli, "configure_logging", lambda verbose=False: None)


def write_config(tmp_path, document):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(document))
    return str(path)


def test_parse_value():
    assert cli.parse_value("0.5") == 0.5
    assert cli.parse_value("[5, 0, 0]") == [5, 0, 0]
    assert cli.parse_value("run1") == "run1"


def test_malformed_config_exits_2_with_field_path(tmp_path, caplog):
    path = write_config(tmp_path, {"gains": {"K_v": [1.0, -1.0, 1.0]}})
    with caplog.at_level(logging.ERROR, logger="CLI"):
        code = cli.main(["run", "--config", path, "--out", str(tmp_path / "out")])
    assert code == 2
    assert "gains.K_v" in caplog.text


def test_missing_config_exits_2(tmp_path):
    assert cli.main(["run", "--config", str(tmp_path / "nope.json")]) == 2


def test_unknown_preset_exits_2():
    assert cli.main(["preset", "run9"]) == 2


def test_unsuccessful_run_exits_1_and_writes_artifacts(tmp_path, capsys):
    path = write_config(tmp_path, {"timing": {"max_duration": 0.5}})
    out = tmp_path / "out"
    assert cli.main(["run", "--config", path, "--seed", "2", "--out", str(out)]) == 1
    assert (out / "telemetry.csv").exists()
    with open(out / "metrics.json", encoding="utf-8") as f:
        metrics = json.load(f)
    assert metrics["seed"] == 2 and metrics["termination"] == "timeout"
    assert "termination:     timeout" in capsys.readouterr().out


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("CBFNAV_OUT", str(tmp_path / "env-out"))
    path = write_config(tmp_path, {"timing": {"max_duration": 0.2}})
    cli.main(["run", "--config", path])
    assert os.path.exists(tmp_path / "env-out" / "metrics.json")


def test_sweep_command(tmp_path):
    path = write_config(tmp_path, {"timing": {"max_duration": 0.2}})
    code = cli.main(["sweep", "--config", path, "--param", "wind.frequency", "--values", "0.0", "1.0", "--quiet", "--out", str(tmp_path)])
    assert code == 1
    with open(tmp_path / "sweep.json", encoding="utf-8") as f:
        data = json.load(f)
    assert data["param"] == "wind.frequency"
    assert [r["value"] for r in data["runs"]] == [0.0, 1.0]


def test_sweep_bad_value_exits_2(tmp_path):
    code = cli.main(["sweep", "--preset", "run1", "--param", "vehicle.mass", "--values", "-1", "--quiet", "--out", str(tmp_path)])
    assert code == 2


def test_verify_exit_codes(monkeypatch):
    assert cli.main(["verify", "descent_params", "adaptive_fixed_point"]) == 0
    monkeypatch.setattr(safety, "grad_h_v", lambda p, params: np.ones(3))
    assert cli.main(["verify", "gradient_oracle"]) == 3


def test_subcommand_required():
    with pytest.raises(SystemExit):
        cli.main([])


@pytest.mark.slow
def test_preset_run1_exits_0(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["preset", "run1", "--out", str(out)]) == 0
    for name in ("telemetry.csv", "metrics.json", "vcbf_cone.csv", "dcbf_surface.csv"):
        assert (out / name).exists()
