"""
Simulated quadrotor for cbfnav.

This module stands in for the flight hardware: it owns the ground-truth
rigid-body model, the wind disturbance and the touchdown motor ramp.
Translational dynamics follow m p̈ = τ_p − m G − d_p with τ_p = R F and
G = (0, 0, −9.81) in the down-Z convention, so hover needs τ_p = m G.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

try:
    from .errors import IntegrationFault
    from .geometry import GRAVITY, Rot3, Vec3, cross, orthonormalize, so3_dexp_inv, so3_exp
except ImportError:
    from errors import IntegrationFault
    from geometry import GRAVITY, Rot3, Vec3, cross, orthonormalize, so3_dexp_inv, so3_exp

logger = logging.getLogger("VEHICLE")

MAX_STEP = 0.01


@dataclass(frozen=True)
class VehicleParams:
    """Mass properties and aerodynamic drag of the airframe.

    Args:
        mass (float): kg, > 0.
        inertia (ndarray): 3x3 symmetric positive definite, kg·m².
        drag (float): linear drag coefficient c_d, N·s/m, >= 0.
        thrust_ceiling (float | None): N; defaults to 2·m·9.81.
        d_q (ndarray): constant attitude disturbance torque, N·m.
    """

    mass: float = 0.3
    inertia: np.ndarray = field(default_factory=lambda: np.diag([2.25e-3, 2.25e-3, 4.0e-3]))
    drag: float = 1.5e-3
    thrust_ceiling: float | None = None
    d_q: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        J = np.asarray(self.inertia, dtype=float)
        if self.mass <= 0.0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if J.shape != (3, 3) or not np.allclose(J, J.T):
            raise ValueError("inertia must be a symmetric 3x3 matrix")
        if np.min(np.linalg.eigvalsh(J)) <= 0.0:
            raise ValueError("inertia must be positive definite")
        if self.drag < 0.0:
            raise ValueError(f"drag must be non-negative, got {self.drag}")
        object.__setattr__(self, "inertia", J)
        object.__setattr__(self, "d_q", np.asarray(self.d_q, dtype=float).reshape(3))
        if self.thrust_ceiling is None:
            object.__setattr__(self, "thrust_ceiling", 2.0 * self.mass * 9.81)

    @cached_property
    def inertia_inv(self) -> np.ndarray:
        return np.linalg.inv(self.inertia)


@dataclass(frozen=True)
class VehicleState:
    """Ground truth of the UAV in the simulation world (base) frame."""

    position: Vec3
    velocity: Vec3
    attitude: Rot3
    rate: Vec3
    t: float = 0.0

    @classmethod
    def at_rest(cls, position, attitude=None, t: float = 0.0) -> VehicleState:
        return cls(
            position=np.asarray(position, dtype=float),
            velocity=np.zeros(3),
            attitude=np.eye(3) if attitude is None else np.asarray(attitude, dtype=float),
            rate=np.zeros(3),
            t=t,
        )

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.position))
            and np.all(np.isfinite(self.velocity))
            and np.all(np.isfinite(self.attitude))
            and np.all(np.isfinite(self.rate))
        )


def gust_phase(seed: int) -> Vec3:
    """Per-axis gust phase in [0, 2π), a pure function of the seed."""
    rng = np.random.default_rng([int(seed), 0x57494E44])
    return rng.uniform(0.0, 2.0 * math.pi, size=3)


@dataclass(frozen=True)
class WindModel:
    """Mean wind plus a sinusoidal gust, both as velocities in the world frame."""

    mean: Vec3 = field(default_factory=lambda: np.zeros(3))
    gust: Vec3 = field(default_factory=lambda: np.zeros(3))
    frequency: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.frequency < 0.0:
            raise ValueError(f"gust frequency must be >= 0, got {self.frequency}")
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(3))
        object.__setattr__(self, "gust", np.asarray(self.gust, dtype=float).reshape(3))

    @cached_property
    def phase(self) -> Vec3:
        return gust_phase(self.seed)

    def velocity(self, t: float) -> Vec3:
        return self.mean + self.gust * np.sin(2.0 * math.pi * self.frequency * t + self.phase)


@dataclass(frozen=True)
class ControlWrench:
    """Commanded inputs.

    tau_p is the linear force in the active localization frame, tau_q the body
    torque and F the body thrust vector (0, 0, −‖τ_p‖).
    """

    tau_p: Vec3
    tau_q: Vec3
    F: Vec3

    @classmethod
    def from_force(cls, tau_p: Vec3, tau_q: Vec3 | None = None) -> ControlWrench:
        tau_p = np.asarray(tau_p, dtype=float)
        return cls(
            tau_p=tau_p,
            tau_q=np.zeros(3) if tau_q is None else np.asarray(tau_q, dtype=float),
            F=np.array([0.0, 0.0, -float(np.linalg.norm(tau_p))]),
        )


def wind_force(wind: WindModel, v: Vec3, t: float, c_d: float) -> Vec3:
    """Disturbance d_p = −c_d (v_wind(t) − v); enters the dynamics as −d_p."""
    return -c_d * (wind.velocity(t) - v)


def touchdown_ramp(thrust_scale_in: float, dt: float, ramp_time: float) -> float:
    """Linear motor ramp-down: loses dt / ramp_time of full thrust per call."""
    if ramp_time <= 0.0:
        return 0.0
    return min(1.0, max(0.0, thrust_scale_in - dt / ramp_time))


def _saturate_thrust(F: Vec3, ceiling: float) -> Vec3:
    magnitude = float(np.linalg.norm(F))
    if magnitude > ceiling:
        return F * (ceiling / magnitude)
    return F


def _derivatives(v, R, omega, t, F, tau_q, wind, params):
    d_p = wind_force(wind, v, t, params.drag)
    accel = (R @ F) / params.mass - GRAVITY - d_p / params.mass
    J = params.inertia
    omega_dot = params.inertia_inv @ (tau_q - cross(omega, J @ omega) - params.d_q)
    return accel, omega_dot


def step(
    state: VehicleState,
    wrench: ControlWrench,
    wind: WindModel,
    params: VehicleParams,
    dt: float,
) -> VehicleState:
    """Advance the rigid body by dt with 4th-order Runge–Kutta.

    The attitude follows Runge–Kutta–Munthe-Kaas: the stages integrate a
    rotation vector φ with φ̇ = dexp⁻¹(φ)·ω, stage attitudes are R·exp(φ_i),
    and the step ends at R·exp(φ), re-orthonormalized.

    Raises:
        IntegrationFault: for dt outside (0, 0.01], a non-finite wrench or a
            non-finite resulting state.
    """
    if not (0.0 < dt <= MAX_STEP):
        raise IntegrationFault(f"dt must be in (0, {MAX_STEP}], got {dt}")
    if not (np.all(np.isfinite(wrench.F)) and np.all(np.isfinite(wrench.tau_q))):
        raise IntegrationFault("non-finite control wrench")

    F = _saturate_thrust(np.asarray(wrench.F, dtype=float), params.thrust_ceiling)
    tau_q = np.asarray(wrench.tau_q, dtype=float)
    p, v, R, w, t = state.position, state.velocity, state.attitude, state.rate, state.t
    h = dt

    a1, wd1 = _derivatives(v, R, w, t, F, tau_q, wind, params)
    v1, k1 = v, w

    v2 = v + 0.5 * h * a1
    w2 = w + 0.5 * h * wd1
    phi2 = 0.5 * h * k1
    a2, wd2 = _derivatives(v2, R @ so3_exp(phi2), w2, t + 0.5 * h, F, tau_q, wind, params)
    k2 = so3_dexp_inv(phi2, w2)

    v3 = v + 0.5 * h * a2
    w3 = w + 0.5 * h * wd2
    phi3 = 0.5 * h * k2
    a3, wd3 = _derivatives(v3, R @ so3_exp(phi3), w3, t + 0.5 * h, F, tau_q, wind, params)
    k3 = so3_dexp_inv(phi3, w3)

    v4 = v + h * a3
    w4 = w + h * wd3
    phi4 = h * k3
    a4, wd4 = _derivatives(v4, R @ so3_exp(phi4), w4, t + h, F, tau_q, wind, params)
    k4 = so3_dexp_inv(phi4, w4)

    p_new = p + (h / 6.0) * (v1 + 2.0 * v2 + 2.0 * v3 + v4)
    v_new = v + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    w_new = w + (h / 6.0) * (wd1 + 2.0 * wd2 + 2.0 * wd3 + wd4)
    R_new = orthonormalize(R @ so3_exp((h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)))

    new_state = VehicleState(p_new, v_new, R_new, w_new, t + dt)
    if not new_state.is_finite():
        logger.error(f"Non-finite state at t={t + dt:.4f}")
        raise IntegrationFault(f"non-finite vehicle state at t={t + dt:.4f}")
    return new_state
