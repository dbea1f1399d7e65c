"""
Dual-loop flight controller and phase machine for cbfnav.

The outer loop (30 Hz) turns a relative pose into a nominal velocity, passes
it through the active barrier's safety filter and tracks the result with an
adaptive velocity law. Its force command becomes a desired attitude plus a
thrust magnitude. The inner loop (250 Hz) tracks that attitude with a PID.

Phase order: Ascending -> Approaching -> Landing -> Touchdown. Transitions
latch; the only way back out of normal flight is the detection-loss fault,
which climbs until the active marker is seen again.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, NamedTuple

import numpy as np

try:
    from .geometry import GRAVITY, Rot3, Vec3, rot_z, vee_error, yaw_of
    from .perception import CAMERA_OFFSET, NavState, RelativePoseEstimate, relative_nav_state
    from .safety import (
        PEAK_CONSTANT,
        DescentBarrier,
        DescentParams,
        SafetyFilter,
        VcbfParams,
        VelocityBox,
        VisualLockBarrier,
        derive_descent_params,
        h_d,
    )
    from .vehicle import ControlWrench, touchdown_ramp
except ImportError:
    from geometry import GRAVITY, Rot3, Vec3, rot_z, vee_error, yaw_of
    from perception import CAMERA_OFFSET, NavState, RelativePoseEstimate, relative_nav_state
    from safety import (
        PEAK_CONSTANT,
        DescentBarrier,
        DescentParams,
        SafetyFilter,
        VcbfParams,
        VelocityBox,
        VisualLockBarrier,
        derive_descent_params,
        h_d,
    )
    from vehicle import ControlWrench, touchdown_ramp

logger = logging.getLogger("CONTROLLER")

ADAPTIVE_FLOOR = 1e-4
DEGENERATE_FORCE = 1e-6
X_AXIS = np.array([1.0, 0.0, 0.0])


class FlightMode(Enum):
    ASCENDING = "Ascending"
    APPROACHING = "Approaching"
    LANDING = "Landing"
    TOUCHDOWN = "Touchdown"

    @property
    def rank(self) -> int:
        return _MODE_ORDER.index(self)


_MODE_ORDER = [FlightMode.ASCENDING, FlightMode.APPROACHING, FlightMode.LANDING, FlightMode.TOUCHDOWN]


@dataclass(frozen=True)
class PhaseSettings:
    """Thresholds of the phase machine.

    Args:
        focus_altitude (float): K3 of the approaching barrier, meters.
        landing_altitude (float): K3 of the landing barrier, meters.
        ball_radius (float): switch radius around the focus point, meters.
        yaw_gate (float): heading alignment required to land, radians.
        touchdown_margin (float): camera altitude above landing K3 that starts touchdown.
        loss_timeout (float): seconds of detection loss tolerated before the fault climb.
        min_switch_radius (float): floor on sqrt(l*) when deriving descent params.
        realign_radius (float): distance to the focus point that starts heading realignment.
        alpha_d (float): class-K slope of the descending barrier.
        peak_constant (float): constant of the K2 fit (close to e).
        ramp_time (float): touchdown motor ramp duration, seconds.
    """

    focus_altitude: float = 1.75
    landing_altitude: float = 0.35
    ball_radius: float = 0.1
    yaw_gate: float = math.radians(5.0)
    touchdown_margin: float = 0.02
    loss_timeout: float = 0.5
    min_switch_radius: float = 0.05
    realign_radius: float = 0.25
    alpha_d: float = 3.5
    peak_constant: float = PEAK_CONSTANT
    ramp_time: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.landing_altitude < self.focus_altitude:
            raise ValueError("landing altitude must be positive and below the focus altitude")
        if min(self.ball_radius, self.yaw_gate, self.loss_timeout, self.min_switch_radius) <= 0.0:
            raise ValueError("phase thresholds must be positive")

    @property
    def focus_point(self) -> Vec3:
        return np.array([0.0, 0.0, -self.focus_altitude])


def _diag_pd(M, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.shape != (3, 3) or np.any(M != np.diag(np.diag(M))) or np.any(np.diag(M) <= 0.0):
        raise ValueError(f"{name} must be a positive definite diagonal 3x3 matrix")
    return M


@dataclass(frozen=True)
class ControllerGains:
    K: np.ndarray = field(default_factory=lambda: 1.2 * np.eye(3))
    K_v: np.ndarray = field(default_factory=lambda: np.diag([0.75, 0.75, 6.0]))
    eta_kappa: float = 2.5
    eta_m: float = 0.5
    K_p: np.ndarray = field(default_factory=lambda: 0.1 * np.eye(3))
    K_d: np.ndarray = field(default_factory=lambda: 0.03 * np.eye(3))
    K_i: np.ndarray = field(default_factory=lambda: 0.01 * np.eye(3))
    e_dz: float = 0.01
    integral_limit: float = 0.5

    def __post_init__(self):
        for name in ("K", "K_v", "K_p", "K_d", "K_i"):
            object.__setattr__(self, name, _diag_pd(getattr(self, name), name))
        if min(self.eta_kappa, self.eta_m, self.e_dz, self.integral_limit) <= 0.0:
            raise ValueError("leakage rates, dead zone and integral limit must be positive")


@dataclass(frozen=True)
class AdaptiveState:
    kappa: float = 0.01
    m: float = 0.1
    e: Vec3 = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (self.kappa > 0.0 and self.m > 0.0):
            raise ValueError(f"adaptive gains must stay positive, got κ̂={self.kappa}, m̂={self.m}")


@dataclass(frozen=True)
class PhaseState:
    """Mode of the phase machine plus the data that came with the last switch.

    heading is the target-frame X′ held during the approach until the drone
    reaches the focus region; None selects the target X axis.
    """

    mode: FlightMode = FlightMode.ASCENDING
    frame: str = "base"
    transition_time: float = 0.0
    descent: DescentParams | None = None
    last_valid_time: float = 0.0
    fault: bool = False
    heading: Vec3 | None = None

    def __post_init__(self):
        expected = "base" if self.mode is FlightMode.ASCENDING else "target"
        if self.frame != expected:
            raise ValueError(f"mode {self.mode.value} requires frame '{expected}', got '{self.frame}'")
        if self.mode in (FlightMode.APPROACHING, FlightMode.LANDING) and self.descent is None:
            raise ValueError(f"mode {self.mode.value} requires descent params")


# --- outer loop building blocks ---


def nominal_velocity(
    phase: PhaseState,
    p_rel: Vec3,
    a_priori_dir: Vec3,
    gains: ControllerGains,
    settings: PhaseSettings = PhaseSettings(),
) -> Vec3:
    """Pseudo virtual velocity before filtering.

    Ascending flies 1 m/s along the a-priori direction in the body frame.
    Approaching and Landing pull toward the phase goal in the target frame:
    the focus point, then the target origin.
    """
    if phase.mode is FlightMode.ASCENDING:
        direction = np.asarray(a_priori_dir, dtype=float)
        if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
            raise ValueError(f"a-priori direction must be a unit vector, got {direction}")
        return 1.0 * direction
    if phase.mode is FlightMode.APPROACHING:
        goal = settings.focus_point
    elif phase.mode is FlightMode.LANDING:
        goal = np.zeros(3)
    else:
        return np.zeros(3)
    return gains.K @ (goal - np.asarray(p_rel, dtype=float))


def _switch_params(nav: NavState, K3: float, settings: PhaseSettings) -> DescentParams:
    l_star = max(nav.l, settings.min_switch_radius**2)
    return derive_descent_params(
        float(nav.p_drone[2]), l_star, K3, alpha=settings.alpha_d, peak_constant=settings.peak_constant
    )


def _horizontal_heading(R: Rot3) -> Vec3 | None:
    x = np.array([R[0, 0], R[1, 0], 0.0])
    n = np.linalg.norm(x)
    return x / n if n > 1e-6 else None


def phase_transition(
    phase: PhaseState,
    detections: Mapping[str, RelativePoseEstimate],
    nav: NavState | None,
    yaw_err: float,
    t: float,
    settings: PhaseSettings = PhaseSettings(),
    camera_offset: Vec3 = CAMERA_OFFSET,
) -> PhaseState:
    """Advance the phase machine by one outer tick.

    Args:
        phase: current phase.
        detections: latest estimates keyed by robot id.
        nav: navigation state of the active frame, None if its detection is gated.
        yaw_err: heading of body X relative to the target X axis, radians.
        t: tick time, seconds.

    Returns:
        PhaseState: the next phase. Detection loss longer than
        settings.loss_timeout raises the fault flag without changing mode.
    """
    mode = phase.mode
    if mode is FlightMode.TOUCHDOWN:
        return phase

    if mode is FlightMode.ASCENDING:
        target = detections.get("target")
        if target is not None and target.valid:
            nav_t = relative_nav_state(target, camera_offset)
            descent = _switch_params(nav_t, settings.focus_altitude, settings)
            logger.info(
                f"Ascending -> Approaching at t={t:.3f}: altitude {-nav_t.p_drone[2]:.3f} m, "
                f"K1={descent.K1:.3f}, K2={descent.K2:.3f}"
            )
            return PhaseState(
                mode=FlightMode.APPROACHING,
                frame="target",
                transition_time=t,
                descent=descent,
                last_valid_time=t,
                heading=_horizontal_heading(nav_t.attitude),
            )

    active = detections.get(phase.frame)
    if nav is None or active is None or not active.valid:
        if t - phase.last_valid_time > settings.loss_timeout and not phase.fault:
            logger.warning(f"Lost '{phase.frame}' for {t - phase.last_valid_time:.2f} s; climbing to re-acquire")
            return replace(phase, fault=True)
        return phase

    if phase.fault:
        logger.info(f"Re-acquired '{phase.frame}' at t={t:.3f}")
    phase = replace(phase, last_valid_time=t, fault=False)

    if mode is FlightMode.APPROACHING:
        distance = float(np.linalg.norm(nav.p_drone - settings.focus_point))
        if phase.heading is not None and distance <= settings.realign_radius:
            logger.info(f"Realigning heading with the target at t={t:.3f}")
            phase = replace(phase, heading=None)
        if distance <= settings.ball_radius and abs(yaw_err) <= settings.yaw_gate:
            descent = _switch_params(nav, settings.landing_altitude, settings)
            logger.info(
                f"Approaching -> Landing at t={t:.3f}: z*={descent.z_star:.3f}, "
                f"K1={descent.K1:.1f}, K2={descent.K2:.2f}"
            )
            return PhaseState(
                mode=FlightMode.LANDING,
                frame="target",
                transition_time=t,
                descent=descent,
                last_valid_time=t,
            )
        return phase

    if mode is FlightMode.LANDING:
        if nav.camera_altitude <= settings.landing_altitude + settings.touchdown_margin:
            logger.info(f"Landing -> Touchdown at t={t:.3f}: camera altitude {nav.camera_altitude:.3f} m")
            return replace(phase, mode=FlightMode.TOUCHDOWN, transition_time=t)
    return phase


def adaptive_velocity_control(
    e: Vec3,
    adaptive: AdaptiveState,
    gains: ControllerGains,
    dt: float,
) -> tuple[Vec3, AdaptiveState]:
    """Adaptive force law with leakage-modified gain updates.

    τ_p = −K_v e − κ̂ e/‖e‖ + m̂ G, where e/‖e‖ becomes e/e_dz inside the
    dead zone. κ̂ and m̂ are then advanced one explicit Euler step and
    floored at 1e-4.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    e = np.asarray(e, dtype=float)
    norm = float(np.linalg.norm(e))
    unit = e / norm if norm >= gains.e_dz else e / gains.e_dz
    tau_p = -gains.K_v @ e - adaptive.kappa * unit + adaptive.m * GRAVITY

    kappa = adaptive.kappa + (norm - gains.eta_kappa * adaptive.kappa) * dt
    m = adaptive.m + (-float(e @ GRAVITY) - gains.eta_m * adaptive.m) * dt
    return tau_p, AdaptiveState(max(kappa, ADAPTIVE_FLOOR), max(m, ADAPTIVE_FLOOR), e)


def desired_rotation(tau_p: Vec3, previous: Rot3 | None = None, x_ref: Vec3 = X_AXIS) -> Rot3:
    """Attitude whose body −Z points along τ_p with X as close to x_ref as possible.

    Degenerate inputs (vanishing force, or force parallel to x_ref) return the
    previous command, or identity when there is none.
    """
    tau_p = np.asarray(tau_p, dtype=float)
    norm = float(np.linalg.norm(tau_p))
    fallback = np.eye(3) if previous is None else previous
    if norm <= DEGENERATE_FORCE:
        logger.debug("Vanishing force command; holding previous attitude")
        return fallback
    z_des = -tau_p / norm
    y_des = np.cross(z_des, np.asarray(x_ref, dtype=float))
    y_norm = float(np.linalg.norm(y_des))
    if y_norm <= DEGENERATE_FORCE:
        logger.debug("Force parallel to the heading reference; holding previous attitude")
        return fallback
    y_des = y_des / y_norm
    x_des = np.cross(y_des, z_des)
    return np.column_stack((x_des, y_des, z_des))


def attitude_pid(eps: Vec3, eps_dot: Vec3, integral: Vec3, gains: ControllerGains) -> Vec3:
    integral = np.clip(integral, -gains.integral_limit, gains.integral_limit)
    return -gains.K_p @ eps - gains.K_d @ eps_dot - gains.K_i @ integral


def integrate_error(integral: Vec3, eps: Vec3, dt: float, limit: float) -> Vec3:
    """Anti-windup integral of the attitude error, clamped per axis."""
    return np.clip(integral + eps * dt, -limit, limit)


# --- outer/inner composition ---


@dataclass(frozen=True)
class ControlSetup:
    """Everything control_step needs that does not change during a run."""

    gains: ControllerGains = field(default_factory=ControllerGains)
    settings: PhaseSettings = field(default_factory=PhaseSettings)
    vcbf: VcbfParams = field(default_factory=VcbfParams)
    box: VelocityBox = field(default_factory=VelocityBox)
    a_priori_dir: Vec3 = field(default_factory=lambda: X_AXIS.copy())
    outer_dt: float = 1.0 / 30.0
    camera_offset: Vec3 = field(default_factory=lambda: CAMERA_OFFSET.copy())


@dataclass(frozen=True)
class ControlMemory:
    """Controller state carried between ticks.

    R_align maps active-frame coordinates into the IMU frame; R_des is the
    desired attitude in the IMU frame held by the inner loop.
    """

    R_align: Rot3 = field(default_factory=lambda: np.eye(3))
    R_des: Rot3 = field(default_factory=lambda: np.eye(3))
    tau_p: Vec3 = field(default_factory=lambda: np.zeros(3))
    thrust: float = 0.0
    integral: Vec3 = field(default_factory=lambda: np.zeros(3))
    thrust_scale: float = 1.0

    @classmethod
    def hover(cls, attitude: Rot3, thrust: float) -> ControlMemory:
        return cls(R_des=np.asarray(attitude, dtype=float), tau_p=thrust * GRAVITY / 9.81, thrust=thrust)


@dataclass(frozen=True)
class Measurements:
    """Sensor snapshot for one outer tick: marker estimates, IMU velocity and attitude."""

    t: float
    estimates: Mapping[str, RelativePoseEstimate]
    velocity: Vec3
    attitude: Rot3
    rate: Vec3


@dataclass(frozen=True)
class ControlTrace:
    """Per-tick values the harness logs."""

    nav: NavState | None = None
    h_v: float = float("nan")
    h_d: float = float("nan")
    u_nom: Vec3 = field(default_factory=lambda: np.full(3, np.nan))
    u_filtered: Vec3 = field(default_factory=lambda: np.full(3, np.nan))
    e: Vec3 = field(default_factory=lambda: np.full(3, np.nan))
    e_body: Vec3 = field(default_factory=lambda: np.full(3, np.nan))
    filter_active: bool = False
    infeasible: bool = False
    holding: bool = False
    switch_h_d: float | None = None


class ControlOutput(NamedTuple):
    wrench: ControlWrench
    phase: PhaseState
    adaptive: AdaptiveState
    memory: ControlMemory
    trace: ControlTrace


def _hold_output(phase, adaptive, memory, trace=None) -> ControlOutput:
    wrench = ControlWrench(memory.tau_p, np.zeros(3), np.array([0.0, 0.0, -memory.thrust * memory.thrust_scale]))
    return ControlOutput(wrench, phase, adaptive, memory, trace or ControlTrace(holding=True))


def _track(e_frame, x_ref, adaptive, memory, R_align, setup) -> tuple[Vec3, AdaptiveState, ControlMemory]:
    tau_p, adaptive = adaptive_velocity_control(e_frame, adaptive, setup.gains, setup.outer_dt)
    R_des_frame = desired_rotation(tau_p, R_align.T @ memory.R_des, x_ref)
    memory = replace(
        memory,
        R_align=R_align,
        R_des=R_align @ R_des_frame,
        tau_p=tau_p,
        thrust=float(np.linalg.norm(tau_p)),
    )
    return tau_p, adaptive, memory


def control_step(
    meas: Measurements,
    phase: PhaseState,
    adaptive: AdaptiveState,
    memory: ControlMemory,
    setup: ControlSetup,
    safety: SafetyFilter | None = None,
) -> ControlOutput:
    """One outer-loop tick.

    nominal velocity -> barrier filter -> velocity error in the active frame
    -> adaptive force -> desired attitude and thrust. Touchdown bypasses the
    pipeline; the inner loop ramps the held thrust down. The filter counts
    its interventions in `safety` when one is passed.
    """
    safety = safety if safety is not None else SafetyFilter(setup.box)
    if phase.mode is FlightMode.TOUCHDOWN:
        return _hold_output(phase, adaptive, memory)

    t = meas.t
    settings = setup.settings
    est = meas.estimates.get(phase.frame)
    nav = relative_nav_state(est, setup.camera_offset) if est is not None and est.valid else None
    yaw_err = nav.yaw if nav is not None else float("nan")

    previous_mode = phase.mode
    phase = phase_transition(phase, meas.estimates, nav, yaw_err, t, settings, setup.camera_offset)
    switch_h_d = None
    if phase.mode is not previous_mode:
        if phase.mode is FlightMode.TOUCHDOWN:
            memory = replace(memory, thrust_scale=1.0)
            return _hold_output(phase, adaptive, memory, ControlTrace(nav=nav))
        if phase.frame != ("base" if previous_mode is FlightMode.ASCENDING else "target"):
            est = meas.estimates[phase.frame]
            nav = relative_nav_state(est, setup.camera_offset)
        switch_h_d = h_d(nav.p_drone, phase.descent)

    if nav is None:
        if not phase.fault:
            return _hold_output(phase, adaptive, memory)
        u_star = np.array([0.0, 0.0, -setup.box.vz])
        e = meas.velocity - u_star
        x_ref = _horizontal_heading(meas.attitude)
        x_ref = X_AXIS if x_ref is None else x_ref
        # climb is commanded directly in the IMU frame
        _, adaptive, memory = _track(e, x_ref, adaptive, memory, np.eye(3), setup)
        trace = ControlTrace(u_filtered=u_star, e=e, e_body=meas.attitude.T @ e, holding=True)
        return ControlOutput(ControlWrench.from_force(memory.tau_p), phase, adaptive, memory, trace)

    R_align = rot_z(yaw_of(meas.attitude @ est.rotation))
    v_frame = R_align.T @ meas.velocity
    h_v_val, h_d_val = float("nan"), float("nan")

    if phase.mode is FlightMode.ASCENDING:
        p = nav.p_body
        barrier = VisualLockBarrier(setup.vcbf)
        u_nom = nominal_velocity(phase, p, setup.a_priori_dir, setup.gains, settings)
        result, h_v_val = safety.filter_action(u_nom, barrier, p)
        e = v_frame - R_align.T @ meas.attitude @ result.velocity
        x_ref = X_AXIS
    else:
        p = nav.p_drone
        barrier = DescentBarrier(phase.descent)
        u_nom = nominal_velocity(phase, p, setup.a_priori_dir, setup.gains, settings)
        result, h_d_val = safety.filter_action(u_nom, barrier, p)
        e = v_frame - result.velocity
        x_ref = phase.heading if (phase.mode is FlightMode.APPROACHING and phase.heading is not None) else X_AXIS

    tau_p, adaptive, memory = _track(e, x_ref, adaptive, memory, R_align, setup)
    trace = ControlTrace(
        nav=nav,
        h_v=h_v_val,
        h_d=h_d_val,
        u_nom=u_nom,
        u_filtered=result.velocity,
        e=e,
        e_body=meas.attitude.T @ (R_align @ e),
        filter_active=result.active,
        infeasible=result.infeasible,
        switch_h_d=switch_h_d,
    )
    wrench = ControlWrench(tau_p, np.zeros(3), np.array([0.0, 0.0, -memory.thrust]))
    return ControlOutput(wrench, phase, adaptive, memory, trace)


def attitude_step(
    memory: ControlMemory,
    attitude: Rot3,
    rate: Vec3,
    dt: float,
    gains: ControllerGains,
    touchdown: bool = False,
    ramp_time: float = 1.0,
) -> tuple[Vec3, Vec3, ControlMemory]:
    """Inner loop: PID on the held desired attitude.

    The error fed to the PID is the current attitude relative to the desired
    one and its rate is the body rate (constant setpoint), so −K_p ε restores.

    Returns:
        tuple: (τ_q, body thrust vector F, updated memory).
    """
    eps = vee_error(memory.R_des, attitude)
    integral = integrate_error(memory.integral, eps, dt, gains.integral_limit)
    tau_q = attitude_pid(eps, rate, integral, gains)
    scale = touchdown_ramp(memory.thrust_scale, dt, ramp_time) if touchdown else memory.thrust_scale
    F = np.array([0.0, 0.0, -memory.thrust * scale])
    return tau_q, F, replace(memory, integral=integral, thrust_scale=scale)


class FlightController:
    """Owns the controller state and exposes the two loop rates."""

    def __init__(self, setup: ControlSetup, initial_attitude: Rot3 | None = None, adaptive: AdaptiveState | None = None):
        self.setup = setup
        self.phase = PhaseState()
        self.adaptive = adaptive or AdaptiveState()
        attitude = np.eye(3) if initial_attitude is None else initial_attitude
        self.memory = ControlMemory.hover(attitude, self.adaptive.m * 9.81)
        self.tau_q = np.zeros(3)
        self.safety = SafetyFilter(setup.box)

    @property
    def mode(self) -> FlightMode:
        return self.phase.mode

    def outer(self, meas: Measurements) -> ControlOutput:
        out = control_step(meas, self.phase, self.adaptive, self.memory, self.setup, self.safety)
        self.phase, self.adaptive, self.memory = out.phase, out.adaptive, out.memory
        return out

    def inner(self, attitude: Rot3, rate: Vec3, dt: float) -> ControlWrench:
        touchdown = self.phase.mode is FlightMode.TOUCHDOWN
        self.tau_q, F, self.memory = attitude_step(
            self.memory, attitude, rate, dt, self.setup.gains, touchdown, self.setup.settings.ramp_time
        )
        return ControlWrench(self.memory.tau_p, self.tau_q, F)
