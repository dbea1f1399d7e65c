import json
import math

import numpy as np
import pytest

from config import (
    ScenarioConfig,
    apply_override,
    list_presets,
    load_config,
    load_preset,
    preset_data,
    validate_config,
)
from errors import ConfigError


def test_defaults_match_published_parameters():
    cfg = ScenarioConfig()
    setup = cfg.control_setup()
    assert np.allclose(setup.gains.K, 1.2 * np.eye(3))
    assert np.allclose(setup.gains.K_p, 0.1 * np.eye(3))
    assert setup.vcbf.theta_f == pytest.approx(math.radians(50.0))
    assert setup.vcbf.alpha == 5.0
    assert setup.vcbf.margin == pytest.approx(math.radians(4.0))
    assert setup.settings.alpha_d == 3.5
    assert np.allclose(setup.box.limits, 0.1)
    assert np.allclose(setup.camera_offset, [-0.1, 0.0, 0.1])
    adaptive = cfg.initial_adaptive()
    assert (adaptive.kappa, adaptive.m) == (0.01, 0.1)
    assert cfg.timing.inner_every == 2


def test_presets_are_listed_and_load():
    assert {"run1", "run2"} <= set(list_presets())
    run1 = load_preset("run1")
    assert run1.name == "run1"
    R = run1.robot_poses()["target"].rotation
    assert np.allclose(R, [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    assert load_preset("run1", seed=7).seed == 7


def test_run2_rotation_is_reprojected():
    R = load_preset("run2").robot_poses()["target"].rotation
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert np.allclose(R, [[-0.76, -0.65, 0.0], [0.65, -0.76, 0.0], [0.0, 0.0, 1.0]], atol=0.01)


def test_unknown_preset():
    with pytest.raises(ConfigError) as info:
        preset_data("run9")
    assert info.value.field_path == "preset"


@pytest.mark.parametrize(
    "document, path",
    [
        ({"gains": {"K_v": [1.0, -1.0, 1.0]}}, "gains.K_v"),
        ({"vehicle": {"mass": 0.0}}, "vehicle.mass"),
        ({"a_priori_dir": [1.0, 1.0, 0.0]}, "a_priori_dir"),
        ({"phases": {"bogus": 1}}, "phases.bogus"),
        ({"target_pose": {"rotation": [[1, 0, 0], [0, 1, 0], [0, 0, 2]]}}, "target_pose.rotation"),
        ({"timing": {"physics_hz": 500, "inner_hz": 300}}, "timing"),
        ({"barrier": {"vcbf_margin_deg": 30.0}}, "barrier"),
    ],
)
def test_validation_errors_carry_field_path(document, path):
    with pytest.raises(ConfigError) as info:
        validate_config(document)
    assert info.value.field_path == path
    assert path in str(info.value)


def test_validate_rejects_non_object():
    with pytest.raises(ConfigError):
        validate_config([1, 2, 3])


def test_load_config(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps({"name": "short", "seed": 3, "timing": {"max_duration": 2.0}}))
    cfg = load_config(str(path))
    assert cfg.name == "short" and cfg.seed == 3 and cfg.timing.max_duration == 2.0

    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(broken))
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))


def test_apply_override_copies_and_creates_sections():
    base = {"wind": {"mean": [5.0, 0.0, 0.0]}}
    out = apply_override(base, "wind.mean", [2.0, 0.0, 0.0])
    assert out["wind"]["mean"] == [2.0, 0.0, 0.0]
    assert base["wind"]["mean"] == [5.0, 0.0, 0.0]
    assert apply_override({}, "phases.ball_radius", 0.2) == {"phases": {"ball_radius": 0.2}}
    with pytest.raises(ConfigError):
        apply_override({"seed": 1}, "seed.value", 2)
    with pytest.raises(ConfigError):
        apply_override({}, "wind..mean", 1)


def test_initial_state_in_base_frame():
    cfg = validate_config({"initial": {"position": [0.1, 0.2, -0.5], "yaw_deg": 90.0}})
    state = cfg.initial_state()
    assert np.allclose(state.position, [0.1, 0.2, -0.5])
    assert state.attitude[1, 0] == pytest.approx(1.0)
    assert np.array_equal(state.velocity, np.zeros(3))


def test_config_is_frozen():
    cfg = ScenarioConfig()
    with pytest.raises(Exception):
        cfg.seed = 4
