"""
Frame and rotation algebra for cbfnav.

All frames (base W, target T, drone body D, camera C) use Z pointing down,
toward the ground plane. Vectors are plain numpy arrays of shape (3,);
rotations are (3, 3) arrays that passed through :func:`rot3`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.transform import Rotation

try:
    from .errors import FrameError, GimbalLockError
except ImportError:
    from errors import FrameError, GimbalLockError

Vec3 = NDArray[np.float64]
Rot3 = NDArray[np.float64]

ORTHONORMAL_TOLERANCE = 1e-6
GIMBAL_LIMIT = 0.995
GRAVITY = np.array([0.0, 0.0, -9.81])


def vec3(values: ArrayLike) -> Vec3:
    """Return a finite float64 copy of a 3-vector."""
    v = np.asarray(values, dtype=float).reshape(3).copy()
    if not np.all(np.isfinite(v)):
        raise FrameError(f"non-finite vector {v}")
    return v


def rot3(matrix: ArrayLike) -> Rot3:
    """Validate a rotation matrix and return it as a float64 array.

    Raises:
        FrameError: if the matrix is not 3x3, not orthonormal within 1e-6
            or not right-handed.
    """
    R = np.asarray(matrix, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise FrameError(f"rotation must be a finite 3x3 matrix, got shape {R.shape}")
    deviation = np.max(np.abs(R.T @ R - np.eye(3)))
    if deviation > ORTHONORMAL_TOLERANCE:
        raise FrameError(f"rotation is not orthonormal (max |RᵀR - I| = {deviation:.3e})")
    if np.linalg.det(R) <= 0.0:
        raise FrameError("rotation has negative determinant")
    return R.copy()


def skew(v: Vec3) -> NDArray[np.float64]:
    """Skew-symmetric matrix such that skew(a) @ b == a × b."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def vee(M: NDArray[np.float64]) -> Vec3:
    """Inverse of :func:`skew`: extracts (m32, m13, m21)."""
    return np.array([M[2, 1], M[0, 2], M[1, 0]])


def cross(a: Vec3, b: Vec3) -> Vec3:
    """a × b for single 3-vectors (integrator hot path)."""
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


def so3_exp(phi: Vec3) -> Rot3:
    """Rodrigues' formula for the exponential map of a rotation vector."""
    angle = math.sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2])
    K = skew(phi)
    if angle < 1e-8:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = math.sin(angle) / angle
    b = (1.0 - math.cos(angle)) / (angle * angle)
    return np.eye(3) + a * K + b * (K @ K)


def so3_dexp_inv(phi: Vec3, omega: Vec3) -> Vec3:
    """Rate of the rotation vector phi when R0·exp(phi) turns at body rate omega.

    Inverse right Jacobian of SO(3): ω + ½ φ×ω + c(θ) φ×(φ×ω).
    """
    angle = math.sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2])
    if angle < 1e-4:
        c = 1.0 / 12.0 + angle * angle / 720.0
    else:
        half = 0.5 * angle
        c = (1.0 - half * math.cos(half) / math.sin(half)) / (angle * angle)
    phi_x_omega = cross(phi, omega)
    return omega + 0.5 * phi_x_omega + c * cross(phi, phi_x_omega)


def orthonormalize(R: NDArray[np.float64]) -> Rot3:
    """Project a nearly orthonormal matrix back onto SO(3)."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0.0:
        U[:, -1] *= -1.0
        Q = U @ Vt
    return Q


def rot_z(angle: float) -> Rot3:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def yaw_of(R: Rot3) -> float:
    """Heading of the frame's X axis, radians in (-π, π]."""
    return math.atan2(R[1, 0], R[0, 0])


@dataclass(frozen=True)
class RigidTransform:
    """Pose of a child frame in a parent frame: p_parent = R @ p_child + t."""

    rotation: Rot3
    translation: Vec3

    def __post_init__(self):
        object.__setattr__(self, "rotation", rot3(self.rotation))
        object.__setattr__(self, "translation", vec3(self.translation))

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: ArrayLike) -> RigidTransform:
        """Build from a 3x4 or 4x4 homogeneous matrix."""
        M = np.asarray(matrix, dtype=float)
        if M.shape not in ((3, 4), (4, 4)):
            raise FrameError(f"homogeneous transform must be 3x4 or 4x4, got {M.shape}")
        return cls(M[:3, :3], M[:3, 3])

    def as_matrix(self) -> NDArray[np.float64]:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def apply(self, p: ArrayLike) -> Vec3:
        return self.rotation @ np.asarray(p, dtype=float) + self.translation

    def inverse(self) -> RigidTransform:
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)


def translate(x: float, y: float, z: float) -> RigidTransform:
    return RigidTransform(np.eye(3), np.array([x, y, z], dtype=float))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Map frame-of-b coordinates through b, then through a."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def camera_to_body(p_C_i: ArrayLike, p_D_C: ArrayLike) -> Vec3:
    """Position of frame i in the body frame from its camera-frame position.

    Camera axes are parallel to the body axes, so this is a pure translation:
    p_D^i = p_D^C + p_C^i, where p_D^C = -p_C^D is the camera origin in the body.
    """
    return np.asarray(p_D_C, dtype=float) + np.asarray(p_C_i, dtype=float)


def vee_error(R_current: Rot3, R_des: Rot3) -> Vec3:
    """Attitude error ½ (R_currentᵀ R_des − R_desᵀ R_current)^∨.

    Zero exactly when R_currentᵀ R_des is symmetric; antisymmetric in its
    arguments. For R_current = I and R_des a yaw of δ the z component is sin δ.
    """
    M = R_current.T @ R_des
    return 0.5 * vee(M - M.T)


class EulerAngles(NamedTuple):
    """Z-Y-X (yaw, pitch, roll) Euler angles in radians."""

    roll: float
    pitch: float
    yaw: float


def rot_to_euler(R: Rot3) -> EulerAngles:
    """Z-Y-X Euler angles of a rotation.

    Raises:
        GimbalLockError: when |R31| > 0.995, i.e. |pitch| above ~84 degrees.
    """
    if abs(R[2, 0]) > GIMBAL_LIMIT:
        raise GimbalLockError(f"|R31| = {abs(R[2, 0]):.4f} exceeds {GIMBAL_LIMIT}")
    yaw, pitch, roll = Rotation.from_matrix(R).as_euler("ZYX")
    return EulerAngles(float(roll), float(pitch), float(yaw))


def euler_to_rot(e: EulerAngles) -> Rot3:
    """Rotation matrix R = Rz(yaw) Ry(pitch) Rx(roll)."""
    return Rotation.from_euler("ZYX", [e.yaw, e.pitch, e.roll]).as_matrix()


def random_rotation(rng: np.random.Generator, max_pitch: float = math.pi / 2 - 0.1) -> Rot3:
    """Sample a rotation whose pitch stays inside the gimbal-safe envelope."""
    roll = rng.uniform(-math.pi + 1e-3, math.pi - 1e-3)
    pitch = rng.uniform(-max_pitch, max_pitch)
    yaw = rng.uniform(-math.pi, math.pi)
    return euler_to_rot(EulerAngles(roll, pitch, yaw))
