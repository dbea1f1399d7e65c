"""
Simulated marker perception for cbfnav.

Produces gated, noisy relative poses of the base and target robots as seen
by a down-looking camera whose axes are parallel to the body axes, plus
IMU-style velocity estimates. Every noise draw is seeded from
(seed, stream, time) so repeated calls with equal inputs agree.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

try:
    from .errors import GatedMeasurementError
    from .geometry import RigidTransform, Rot3, Vec3, camera_to_body, yaw_of
    from .vehicle import VehicleState
except ImportError:
    from errors import GatedMeasurementError
    from geometry import RigidTransform, Rot3, Vec3, camera_to_body, yaw_of
    from vehicle import VehicleState

logger = logging.getLogger("PERCEPTION")

CAMERA_OFFSET = np.array([-0.1, 0.0, 0.1])

ROBOT_STREAMS = {"base": 1, "target": 2}
VELOCITY_STREAM = 3


@dataclass(frozen=True)
class MarkerConfig:
    """Detection geometry of one robot's marker.

    Args:
        robot_id (str): "base" or "target".
        marker_to_robot (RigidTransform): pose of the marker frame in the robot frame.
        band (tuple): (min, max) camera altitude above the marker plane, meters.
        fov_half_angles (tuple): (horizontal, vertical) radians; horizontal is
            measured about the camera Y axis (image x), vertical about camera X.
    """

    robot_id: str
    marker_to_robot: RigidTransform = field(default_factory=RigidTransform.identity)
    band: tuple[float, float] = (0.35, 1.75)
    fov_half_angles: tuple[float, float] = (math.radians(45.0), math.radians(32.5))

    def __post_init__(self):
        lo, hi = self.band
        if not 0.0 < lo < hi:
            raise ValueError(f"detection band must satisfy 0 < min < max, got {self.band}")
        for angle in self.fov_half_angles:
            if not 0.0 < angle < math.pi / 2:
                raise ValueError(f"FOV half-angles must lie in (0, π/2), got {self.fov_half_angles}")


@dataclass(frozen=True)
class NoiseModel:
    """Seeded measurement noise; all sigmas may be zero for exact tests."""

    position_sigma: float = 0.005
    rotation_sigma: float = math.radians(0.5)
    velocity_sigma: float = 0.002
    velocity_bias: Vec3 = field(default_factory=lambda: np.zeros(3))
    seed: int = 0

    def __post_init__(self):
        if min(self.position_sigma, self.rotation_sigma, self.velocity_sigma) < 0.0:
            raise ValueError("noise sigmas must be non-negative")
        object.__setattr__(self, "velocity_bias", np.asarray(self.velocity_bias, dtype=float).reshape(3))

    @classmethod
    def noiseless(cls, seed: int = 0) -> NoiseModel:
        return cls(position_sigma=0.0, rotation_sigma=0.0, velocity_sigma=0.0, seed=seed)

    def generator(self, stream: int, t: float) -> np.random.Generator:
        tick = int(round(t * 1e6))
        return np.random.default_rng([int(self.seed), stream, tick])


@dataclass(frozen=True)
class RelativePoseEstimate:
    """Pose of a robot frame i seen from the camera.

    position is p_C^i, the robot-frame origin in camera coordinates; rotation
    is R_C^i (equal to R_D^i since camera and body axes are parallel). When
    valid is False the pose fields carry no information.
    """

    frame: str
    position: Vec3
    rotation: Rot3
    timestamp: float
    valid: bool

    @classmethod
    def invalid(cls, frame: str, t: float) -> RelativePoseEstimate:
        return cls(frame, np.full(3, np.nan), np.full((3, 3), np.nan), t, False)


@dataclass(frozen=True)
class NavState:
    """Relative navigation quantities derived from one valid estimate.

    Attributes:
        p_body: p_D^i, robot-frame origin in the body frame.
        l_visual: (x_D^i − x_D^C)² + (y_D^i − y_D^C)², the visual-lock l.
        p_drone: p_i^D, drone position in the robot frame.
        l: x² + y² of p_drone.
        attitude: R_i^D, drone attitude in the robot frame.
        camera_altitude: camera height above the robot's ground plane.
    """

    frame: str
    p_body: Vec3
    l_visual: float
    p_drone: Vec3
    l: float
    attitude: Rot3
    camera_altitude: float

    @property
    def yaw(self) -> float:
        """Heading of body X relative to the robot frame's X axis."""
        return yaw_of(self.attitude)


def camera_pose(truth: VehicleState, p_D_C: Vec3 = CAMERA_OFFSET) -> tuple[Vec3, Rot3]:
    """Camera position and orientation in the world frame."""
    return truth.position + truth.attitude @ p_D_C, truth.attitude


def marker_visible(p_marker_C: Vec3, fov_half_angles: tuple[float, float]) -> bool:
    """True when the marker center lies strictly inside the rectangular FOV."""
    x, y, z = p_marker_C
    if z <= 0.0:
        return False
    horizontal, vertical = fov_half_angles
    return abs(x) < z * math.tan(horizontal) and abs(y) < z * math.tan(vertical)


def observe(
    truth: VehicleState,
    robot_pose_world: RigidTransform,
    cfg: MarkerConfig,
    noise: NoiseModel,
    t: float,
    p_D_C: Vec3 = CAMERA_OFFSET,
) -> RelativePoseEstimate:
    """Simulate one marker detection of a robot.

    The detection is valid iff the marker center is inside the FOV and the
    camera altitude above the marker plane is inside the detection band.
    Valid estimates carry seeded Gaussian position noise and a small-angle
    rotation perturbation.
    """
    p_cam, R_cam = camera_pose(truth, p_D_C)
    marker_world = robot_pose_world @ cfg.marker_to_robot

    p_marker_C = R_cam.T @ (marker_world.translation - p_cam)
    plane_normal = marker_world.rotation[:, 2]
    altitude = -float(plane_normal @ (p_cam - marker_world.translation))

    lo, hi = cfg.band
    if not (lo <= altitude <= hi and marker_visible(p_marker_C, cfg.fov_half_angles)):
        return RelativePoseEstimate.invalid(cfg.robot_id, t)

    p_C_i = R_cam.T @ (robot_pose_world.translation - p_cam)
    R_C_i = R_cam.T @ robot_pose_world.rotation

    rng = noise.generator(ROBOT_STREAMS.get(cfg.robot_id, 0), t)
    if noise.position_sigma > 0.0:
        p_C_i = p_C_i + rng.normal(0.0, noise.position_sigma, size=3)
    if noise.rotation_sigma > 0.0:
        perturbation = Rotation.from_rotvec(rng.normal(0.0, noise.rotation_sigma, size=3))
        R_C_i = R_C_i @ perturbation.as_matrix()
    return RelativePoseEstimate(cfg.robot_id, p_C_i, R_C_i, t, True)


def estimate_velocity(truth: VehicleState, noise: NoiseModel) -> Vec3:
    """IMU-style world-frame velocity: truth plus seeded noise plus bias."""
    v = truth.velocity + noise.velocity_bias
    if noise.velocity_sigma > 0.0:
        rng = noise.generator(VELOCITY_STREAM, truth.t)
        v = v + rng.normal(0.0, noise.velocity_sigma, size=3)
    return v


def relative_nav_state(est: RelativePoseEstimate, p_D_C: Vec3 = CAMERA_OFFSET) -> NavState:
    """Turn a valid estimate into body- and robot-frame navigation quantities.

    Raises:
        GatedMeasurementError: if the estimate is not valid.
    """
    if not est.valid:
        raise GatedMeasurementError(f"estimate of '{est.frame}' at t={est.timestamp:.3f} is gated")
    p_D_C = np.asarray(p_D_C, dtype=float)
    p_body = camera_to_body(est.position, p_D_C)
    offset = p_body - p_D_C
    l_visual = float(offset[0] ** 2 + offset[1] ** 2)

    R_i_D = est.rotation.T
    p_drone = -R_i_D @ p_body
    l = float(p_drone[0] ** 2 + p_drone[1] ** 2)
    p_camera = p_drone + R_i_D @ p_D_C
    return NavState(
        frame=est.frame,
        p_body=p_body,
        l_visual=l_visual,
        p_drone=p_drone,
        l=l,
        attitude=R_i_D,
        camera_altitude=-float(p_camera[2]),
    )
