"""
Scenario configuration for cbfnav.

Scenario files are JSON documents validated by the pydantic models below.
Every field has a default so a preset only states what differs. Validation
failures surface as ConfigError carrying the dotted path of the field.
"""

from __future__ import annotations

import copy
import json
import math
import os
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

try:
    from .controller import AdaptiveState, ControllerGains, ControlSetup, PhaseSettings
    from .errors import ConfigError
    from .geometry import RigidTransform, orthonormalize, rot_z
    from .perception import MarkerConfig, NoiseModel
    from .safety import VcbfParams, VelocityBox
    from .vehicle import VehicleParams, VehicleState, WindModel
except ImportError:
    from controller import AdaptiveState, ControllerGains, ControlSetup, PhaseSettings
    from errors import ConfigError
    from geometry import RigidTransform, orthonormalize, rot_z
    from perception import MarkerConfig, NoiseModel
    from safety import VcbfParams, VelocityBox
    from vehicle import VehicleParams, VehicleState, WindModel

PRESET_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data", "presets")

# rotations printed to two decimals are re-projected onto SO(3) when this close
ROTATION_SLACK = 0.05

Vector = tuple[float, float, float]
Matrix = tuple[Vector, Vector, Vector]

IDENTITY: Matrix = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PoseConfig(_Section):
    """Rigid transform given as a row-major rotation matrix plus a translation."""

    rotation: Matrix = IDENTITY
    translation: Vector = (0.0, 0.0, 0.0)

    @field_validator("rotation")
    @classmethod
    def _near_rotation(cls, value):
        R = np.asarray(value, dtype=float)
        deviation = float(np.max(np.abs(R.T @ R - np.eye(3))))
        if deviation > ROTATION_SLACK or np.linalg.det(R) <= 0.0:
            raise ValueError(f"not a proper rotation (max |RᵀR - I| = {deviation:.3f})")
        return value

    def to_transform(self) -> RigidTransform:
        return RigidTransform(orthonormalize(np.asarray(self.rotation, dtype=float)), np.asarray(self.translation))


class VehicleConfig(_Section):
    mass: float = Field(0.3, gt=0.0)
    inertia: Vector = (2.25e-3, 2.25e-3, 4.0e-3)
    drag: float = Field(1.5e-3, ge=0.0)
    thrust_ceiling: Optional[float] = Field(None, gt=0.0)
    d_q: Vector = (0.0, 0.0, 0.0)

    @field_validator("inertia")
    @classmethod
    def _positive_inertia(cls, value):
        if min(value) <= 0.0:
            raise ValueError("principal inertias must be positive")
        return value


class WindConfig(_Section):
    mean: Vector = (5.0, 0.0, 0.0)
    gust: Vector = (1.0, 0.0, 0.0)
    frequency: float = Field(0.5, ge=0.0)


class NoiseConfig(_Section):
    position_sigma: float = Field(0.005, ge=0.0)
    rotation_sigma_deg: float = Field(0.5, ge=0.0)
    velocity_sigma: float = Field(0.002, ge=0.0)
    velocity_bias: Vector = (0.0, 0.0, 0.0)


class MarkerSettings(_Section):
    base_marker: PoseConfig = PoseConfig(
        rotation=((0.0, -1.0, 0.0), (1.0, 0.0, 0.0), (0.0, 0.0, 1.0)),
        translation=(0.23, 0.33, 0.0),
    )
    target_marker: PoseConfig = PoseConfig(
        rotation=((0.0, 1.0, 0.0), (-1.0, 0.0, 0.0), (0.0, 0.0, 1.0)),
        translation=(0.06, -0.07, 0.0),
    )
    base_band: tuple[float, float] = (0.35, 1.75)
    target_band: tuple[float, float] = (0.35, 1.75)
    fov_half_angles_deg: tuple[float, float] = (45.0, 32.5)

    @field_validator("base_band", "target_band")
    @classmethod
    def _ordered_band(cls, value):
        lo, hi = value
        if not 0.0 < lo < hi:
            raise ValueError("band must satisfy 0 < min < max")
        return value

    @field_validator("fov_half_angles_deg")
    @classmethod
    def _fov_range(cls, value):
        if not all(0.0 < a < 90.0 for a in value):
            raise ValueError("FOV half-angles must lie in (0, 90) degrees")
        return value


def _diagonal(values: Vector, name: str) -> Vector:
    if min(values) <= 0.0:
        raise ValueError(f"{name} diagonal must be positive")
    return values


class GainsConfig(_Section):
    K: Vector = (1.2, 1.2, 1.2)
    K_v: Vector = (0.75, 0.75, 6.0)
    eta_kappa: float = Field(2.5, gt=0.0)
    eta_m: float = Field(0.5, gt=0.0)
    K_p: Vector = (0.1, 0.1, 0.1)
    K_d: Vector = (0.03, 0.03, 0.03)
    K_i: Vector = (0.01, 0.01, 0.01)
    e_dz: float = Field(0.01, gt=0.0)
    integral_limit: float = Field(0.5, gt=0.0)
    kappa0: float = Field(0.01, gt=0.0)
    m0: float = Field(0.1, gt=0.0)

    @field_validator("K", "K_v", "K_p", "K_d", "K_i")
    @classmethod
    def _positive(cls, value, info):
        return _diagonal(value, info.field_name)


class BarrierConfig(_Section):
    theta_f_deg: float = Field(50.0, gt=0.0, lt=180.0)
    alpha_v: float = Field(5.0, gt=0.0)
    vcbf_margin_deg: float = Field(4.0, ge=0.0)
    alpha_d: float = Field(3.5, gt=0.0)
    v_max: Vector = (0.1, 0.1, 0.1)
    camera_offset: Vector = (-0.1, 0.0, 0.1)
    peak_constant: float = Field(2.718, gt=0.0)

    @field_validator("v_max")
    @classmethod
    def _positive_bounds(cls, value):
        return _diagonal(value, "v_max")

    @model_validator(mode="after")
    def _margin_inside_cone(self):
        if self.vcbf_margin_deg >= 0.5 * self.theta_f_deg:
            raise ValueError("vcbf_margin_deg must be below half of theta_f_deg")
        return self


class PhaseConfig(_Section):
    focus_altitude: float = Field(1.75, gt=0.0)
    landing_altitude: float = Field(0.35, gt=0.0)
    ball_radius: float = Field(0.1, gt=0.0)
    yaw_gate_deg: float = Field(5.0, gt=0.0)
    touchdown_margin: float = Field(0.02, ge=0.0)
    loss_timeout: float = Field(0.5, gt=0.0)
    loss_abort: float = Field(5.0, gt=0.0)
    min_switch_radius: float = Field(0.05, gt=0.0)
    realign_radius: float = Field(0.25, gt=0.0)
    ramp_time: float = Field(1.0, gt=0.0)
    contact_altitude: float = Field(0.1, ge=0.0)
    landing_margin: float = Field(0.02, gt=0.0)

    @model_validator(mode="after")
    def _altitudes(self):
        if self.landing_altitude >= self.focus_altitude:
            raise ValueError("landing_altitude must be below focus_altitude")
        return self


class TimingConfig(_Section):
    physics_hz: int = Field(500, gt=0)
    inner_hz: int = Field(250, gt=0)
    outer_hz: float = Field(30.0, gt=0.0)
    max_duration: float = Field(90.0, gt=0.0)

    @model_validator(mode="after")
    def _rates(self):
        if self.physics_hz < 100:
            raise ValueError("physics_hz must be at least 100 (integrator step <= 0.01 s)")
        if self.physics_hz % self.inner_hz:
            raise ValueError("physics_hz must be a multiple of inner_hz")
        if self.outer_hz > self.inner_hz:
            raise ValueError("outer_hz must not exceed inner_hz")
        return self

    @property
    def inner_every(self) -> int:
        return self.physics_hz // self.inner_hz


class InitialStateConfig(_Section):
    position: Vector = (0.12, 0.0, -0.75)
    yaw_deg: float = 0.0


class ScenarioConfig(_Section):
    """A complete, seeded scenario; the seed fully determines the run."""

    name: str = "custom"
    seed: int = 0
    base_pose: PoseConfig = PoseConfig()
    target_pose: PoseConfig = PoseConfig(translation=(1.1, -0.1, -0.07))
    a_priori_dir: Vector = (1.0, 0.0, 0.0)
    initial: InitialStateConfig = InitialStateConfig()
    vehicle: VehicleConfig = VehicleConfig()
    wind: WindConfig = WindConfig()
    noise: NoiseConfig = NoiseConfig()
    markers: MarkerSettings = MarkerSettings()
    gains: GainsConfig = GainsConfig()
    barrier: BarrierConfig = BarrierConfig()
    phases: PhaseConfig = PhaseConfig()
    timing: TimingConfig = TimingConfig()

    @field_validator("a_priori_dir")
    @classmethod
    def _unit(cls, value):
        if abs(math.sqrt(sum(v * v for v in value)) - 1.0) > 1e-6:
            raise ValueError("a_priori_dir must be a unit vector")
        return value

    # --- domain objects ---

    def vehicle_params(self) -> VehicleParams:
        v = self.vehicle
        return VehicleParams(
            mass=v.mass,
            inertia=np.diag(v.inertia),
            drag=v.drag,
            thrust_ceiling=v.thrust_ceiling,
            d_q=np.asarray(v.d_q),
        )

    def wind_model(self) -> WindModel:
        return WindModel(self.wind.mean, self.wind.gust, self.wind.frequency, self.seed)

    def noise_model(self) -> NoiseModel:
        n = self.noise
        return NoiseModel(
            position_sigma=n.position_sigma,
            rotation_sigma=math.radians(n.rotation_sigma_deg),
            velocity_sigma=n.velocity_sigma,
            velocity_bias=np.asarray(n.velocity_bias),
            seed=self.seed,
        )

    def marker_configs(self) -> dict[str, MarkerConfig]:
        m = self.markers
        fov = tuple(math.radians(a) for a in m.fov_half_angles_deg)
        return {
            "base": MarkerConfig("base", m.base_marker.to_transform(), m.base_band, fov),
            "target": MarkerConfig("target", m.target_marker.to_transform(), m.target_band, fov),
        }

    def robot_poses(self) -> dict[str, RigidTransform]:
        return {"base": self.base_pose.to_transform(), "target": self.target_pose.to_transform()}

    def control_setup(self) -> ControlSetup:
        g, b, p = self.gains, self.barrier, self.phases
        gains = ControllerGains(
            K=np.diag(g.K),
            K_v=np.diag(g.K_v),
            eta_kappa=g.eta_kappa,
            eta_m=g.eta_m,
            K_p=np.diag(g.K_p),
            K_d=np.diag(g.K_d),
            K_i=np.diag(g.K_i),
            e_dz=g.e_dz,
            integral_limit=g.integral_limit,
        )
        settings = PhaseSettings(
            focus_altitude=p.focus_altitude,
            landing_altitude=p.landing_altitude,
            ball_radius=p.ball_radius,
            yaw_gate=math.radians(p.yaw_gate_deg),
            touchdown_margin=p.touchdown_margin,
            loss_timeout=p.loss_timeout,
            min_switch_radius=p.min_switch_radius,
            realign_radius=p.realign_radius,
            alpha_d=b.alpha_d,
            peak_constant=b.peak_constant,
            ramp_time=p.ramp_time,
        )
        direction = np.asarray(self.a_priori_dir, dtype=float)
        return ControlSetup(
            gains=gains,
            settings=settings,
            vcbf=VcbfParams(
                math.radians(b.theta_f_deg), np.asarray(b.camera_offset), b.alpha_v, math.radians(b.vcbf_margin_deg)
            ),
            box=VelocityBox(*b.v_max),
            a_priori_dir=direction / np.linalg.norm(direction),
            outer_dt=1.0 / self.timing.outer_hz,
            camera_offset=np.asarray(b.camera_offset, dtype=float),
        )

    def initial_adaptive(self) -> AdaptiveState:
        return AdaptiveState(self.gains.kappa0, self.gains.m0)

    def initial_state(self) -> VehicleState:
        attitude = self.base_pose.to_transform().rotation @ rot_z(math.radians(self.initial.yaw_deg))
        position = self.base_pose.to_transform().apply(self.initial.position)
        return VehicleState.at_rest(position, attitude)


def _field_path(error: dict) -> str:
    return ".".join(str(part) for part in error.get("loc", ()))


def validate_config(data: Any) -> ScenarioConfig:
    """Validate a decoded JSON document.

    Raises:
        ConfigError: with the dotted path of the first failing field.
    """
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a JSON object")
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigError(first["msg"], _field_path(first)) from exc


def load_config(path: str) -> ScenarioConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config file '{path}': {exc.strerror}") from exc
    return validate_config(data)


def list_presets() -> list[str]:
    if not os.path.isdir(PRESET_DIR):
        return []
    return sorted(name[:-5] for name in os.listdir(PRESET_DIR) if name.endswith(".json"))


def preset_data(name: str) -> dict:
    path = os.path.join(PRESET_DIR, f"{name}.json")
    if not os.path.exists(path):
        raise ConfigError(f"unknown preset '{name}' (available: {', '.join(list_presets())})", "preset")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def load_preset(name: str, seed: int | None = None) -> ScenarioConfig:
    data = preset_data(name)
    if seed is not None:
        data["seed"] = seed
    return validate_config(data)


def apply_override(cfg_dict: dict, path: str, value: Any) -> dict:
    """Return a copy of cfg_dict with the dotted path set to value.

    Intermediate sections are created as needed; validation happens later.
    """
    if not path or any(not part for part in path.split(".")):
        raise ConfigError("override path must be a dotted field name", path)
    result = copy.deepcopy(cfg_dict)
    node = result
    parts = path.split(".")
    for part in parts[:-1]:
        child = node.get(part)
        if child is None:
            child = node[part] = {}
        elif not isinstance(child, dict):
            raise ConfigError(f"'{part}' is not a section", path)
        node = child
    node[parts[-1]] = value
    return result
