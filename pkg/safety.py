"""
Control-barrier-function safety filtering for cbfnav.

Two barriers are provided. The visual-locking barrier h_v keeps the base
inside a conical field of view during the ascent. The descending barrier
h_d shapes a corridor above the target. Both feed a minimally deviating
velocity filter over a box admissible set; with one halfspace in three
dimensions the filter is solved exactly by enumerating the box face lattice.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

try:
    from .geometry import Vec3
except ImportError:
    from geometry import Vec3

logger = logging.getLogger("SAFETY")

L_GUARD = 1e-9
PEAK_CONSTANT = 2.718
FEASIBILITY_TOLERANCE = 1e-12

LOWER, UPPER, FREE = -1, 1, 0


@dataclass(frozen=True)
class VcbfParams:
    """Visual-locking barrier parameters.

    Args:
        theta_f (float): constrained field of view, radians, in (0, π).
        camera_offset (ndarray): p_D^C, camera origin in the body frame, meters.
        alpha (float): class-K slope α_v, 1/s.
        margin (float): radians kept clear of the cone edge by the filter;
            h_v itself is unaffected.
    """

    theta_f: float = math.radians(50.0)
    camera_offset: Vec3 = field(default_factory=lambda: np.array([-0.1, 0.0, 0.1]))
    alpha: float = 5.0
    margin: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.theta_f < math.pi:
            raise ValueError(f"theta_f must lie in (0, π), got {self.theta_f}")
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 <= self.margin < 0.5 * self.theta_f:
            raise ValueError(f"margin must lie in [0, theta_f/2), got {self.margin}")
        object.__setattr__(self, "camera_offset", np.asarray(self.camera_offset, dtype=float).reshape(3))


@dataclass(frozen=True)
class DescentParams:
    """Descending barrier shape plus the switch state it was derived from."""

    K1: float
    K2: float
    K3: float
    alpha: float = 3.5
    z_star: float = float("nan")
    l_star: float = float("nan")

    def __post_init__(self):
        if self.K1 <= 0.0:
            raise ValueError(f"K1 must be positive, got {self.K1}")
        if self.K2 < 0.0:
            raise ValueError(f"K2 must be non-negative, got {self.K2}")
        if self.K3 <= 0.0:
            raise ValueError(f"K3 must be positive, got {self.K3}")
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")

    def as_dict(self) -> dict:
        return {
            "K1": self.K1,
            "K2": self.K2,
            "K3": self.K3,
            "alpha": self.alpha,
            "z_star": self.z_star,
            "l_star": self.l_star,
        }


@dataclass(frozen=True)
class VelocityBox:
    """Symmetric admissible set [-v_m, v_m] per axis."""

    vx: float = 0.1
    vy: float = 0.1
    vz: float = 0.1

    def __post_init__(self):
        if min(self.vx, self.vy, self.vz) <= 0.0:
            raise ValueError(f"velocity bounds must be positive, got {(self.vx, self.vy, self.vz)}")

    @property
    def limits(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.vz])

    def clamp(self, u: Vec3) -> Vec3:
        hi = self.limits
        return np.clip(u, -hi, hi)


@dataclass(frozen=True)
class HalfspaceConstraint:
    """The velocity constraint normal · u >= offset."""

    normal: Vec3
    offset: float


class FilterResult(NamedTuple):
    velocity: Vec3
    active: bool
    infeasible: bool


# --- barrier functions ---


def h_v(p_D_W: Vec3, params: VcbfParams) -> float:
    """Visual-locking barrier value in radians.

    Returns θ^f/2 when the base is within sqrt(1e-9) m of the optical axis;
    directly above is the safest place to be.
    """
    d = p_D_W - params.camera_offset
    l = d[0] * d[0] + d[1] * d[1]
    if l < L_GUARD:
        return 0.5 * params.theta_f
    return math.atan(d[2] / math.sqrt(l)) - 0.5 * math.pi + 0.5 * params.theta_f


def grad_h_v(p_D_W: Vec3, params: VcbfParams) -> Vec3:
    """Partial derivatives of h_v with respect to p_D^W (zero inside the guard)."""
    d = p_D_W - params.camera_offset
    l = d[0] * d[0] + d[1] * d[1]
    if l < L_GUARD:
        return np.zeros(3)
    s = math.sqrt(l)
    denom = d[2] * d[2] + l
    return np.array(
        [
            -d[0] * d[2] / (denom * s),
            -d[1] * d[2] / (denom * s),
            s / denom,
        ]
    )


def h_d(p_T: Vec3, params: DescentParams) -> float:
    """Descending barrier value in meters; >= 0 above the boundary surface."""
    l = p_T[0] * p_T[0] + p_T[1] * p_T[1]
    K1, K2 = params.K1, params.K2
    return -p_T[2] - K1 * K2 * l * math.exp(-K1 * l) - params.K3


def grad_h_d(p_T: Vec3, params: DescentParams) -> Vec3:
    l = p_T[0] * p_T[0] + p_T[1] * p_T[1]
    K1, K2 = params.K1, params.K2
    radial = 2.0 * K1 * K2 * (K1 * l - 1.0) * math.exp(-K1 * l)
    return np.array([radial * p_T[0], radial * p_T[1], -1.0])


def derive_descent_params(
    z_star: float,
    l_star: float,
    K3: float,
    alpha: float = 3.5,
    peak_constant: float = PEAK_CONSTANT,
) -> DescentParams:
    """Fit K1, K2 so the boundary peaks at the switch state (l*, z*).

    When the UAV is below the region altitude (z* > −K3) the surface
    degenerates to the plane z = −K3 (K2 = 0).

    Raises:
        ValueError: if l_star <= 0; callers substitute a minimum radius.
    """
    if l_star <= 0.0:
        raise ValueError(f"l_star must be positive, got {l_star}; use the centered fallback")
    K1 = 1.0 / l_star
    K2 = 0.0 if z_star > -K3 else -peak_constant * (z_star + K3)
    return DescentParams(K1=K1, K2=K2, K3=K3, alpha=alpha, z_star=z_star, l_star=l_star)


def build_constraint(h: float, grad: Vec3, alpha: float) -> HalfspaceConstraint:
    """Linear class-K constraint grad · u >= −α h."""
    if alpha <= 0.0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return HalfspaceConstraint(np.asarray(grad, dtype=float), -alpha * h)


# --- quadratic program ---


def _best_effort_vertex(u_clamped: Vec3, a: Vec3, hi: Vec3) -> Vec3:
    """Maximizer of a · u over the box, nearest to the clamped nominal on ties."""
    return np.where(a > 0.0, hi, np.where(a < 0.0, -hi, u_clamped))


def filter_velocity(u_nom: Vec3, c: HalfspaceConstraint, box: VelocityBox) -> FilterResult:
    """Exact argmin ||u − u_nom|| over the box intersected with c.

    Infeasible intersections return the box point maximizing c.normal · u
    with the infeasible flag raised.
    """
    u_nom = np.asarray(u_nom, dtype=float)
    a, b = c.normal, c.offset
    hi = box.limits
    lo = -hi
    clamped = np.clip(u_nom, lo, hi)
    if a @ clamped >= b:
        return FilterResult(clamped, False, False)

    if float(np.abs(a) @ hi) < b:
        return FilterResult(_best_effort_vertex(clamped, a, hi), True, True)

    best, best_dist = None, math.inf
    for faces in itertools.product((LOWER, UPPER, FREE), repeat=3):
        candidate = np.empty(3)
        free = np.array([f == FREE for f in faces])
        for i, f in enumerate(faces):
            if f == LOWER:
                candidate[i] = lo[i]
            elif f == UPPER:
                candidate[i] = hi[i]
        residual = b - float(a[~free] @ candidate[~free])
        a_free = a[free]
        denom = float(a_free @ a_free)
        if not free.any() or denom == 0.0:
            if abs(residual) > FEASIBILITY_TOLERANCE:
                continue
            if free.any():
                candidate[free] = u_nom[free]
        else:
            lam = (residual - float(a_free @ u_nom[free])) / denom
            candidate[free] = u_nom[free] + lam * a_free
        if np.any(candidate < lo - FEASIBILITY_TOLERANCE) or np.any(candidate > hi + FEASIBILITY_TOLERANCE):
            continue
        candidate = np.clip(candidate, lo, hi)
        if a @ candidate < b - 1e-9:
            continue
        dist = float((candidate - u_nom) @ (candidate - u_nom))
        if dist < best_dist:
            best, best_dist = candidate, dist

    if best is None:
        logger.debug("Face enumeration found no candidate; returning best-effort vertex")
        return FilterResult(_best_effort_vertex(clamped, a, hi), True, True)
    return FilterResult(best, True, False)


def brute_force_filter(
    u_nom: Vec3,
    c: HalfspaceConstraint,
    box: VelocityBox,
    step: float = 1e-3,
) -> FilterResult:
    """Grid-search oracle for :func:`filter_velocity`.

    Scans every point of a step-spaced grid over the box (endpoints
    included), one z slab at a time, and returns the feasible grid point
    nearest u_nom. An empty feasible grid returns the grid maximizer of
    c.normal · u with the infeasible flag raised.
    """
    if step <= 0.0:
        raise ValueError(f"step must be positive, got {step}")
    u_nom = np.asarray(u_nom, dtype=float)
    a, b = c.normal, c.offset
    grids = [np.linspace(-h, h, int(round(2.0 * h / step)) + 1) for h in box.limits]

    X, Y = np.meshgrid(grids[0], grids[1], indexing="ij")
    reach_xy = a[0] * X + a[1] * Y
    cost_xy = (X - u_nom[0]) ** 2 + (Y - u_nom[1]) ** 2

    best, best_cost = None, math.inf
    for z in grids[2]:
        dz = (z - u_nom[2]) ** 2
        if dz >= best_cost:
            continue
        feasible = reach_xy >= b - a[2] * z - FEASIBILITY_TOLERANCE
        if not feasible.any():
            continue
        cost = np.where(feasible, cost_xy, np.inf)
        n = np.unravel_index(np.argmin(cost), cost.shape)
        if cost[n] + dz < best_cost:
            best_cost = float(cost[n] + dz)
            best = np.array([X[n], Y[n], z])

    if best is None:
        # a · u is separable, so the grid maximizer is picked per axis
        top = np.empty(3)
        for n, grid in enumerate(grids):
            if abs(a[n]) <= FEASIBILITY_TOLERANCE:
                top[n] = grid[np.argmin(np.abs(grid - u_nom[n]))]
            else:
                top[n] = grid[-1] if a[n] > 0.0 else grid[0]
        return FilterResult(top, True, True)
    clamped_ok = a @ box.clamp(u_nom) >= b
    return FilterResult(best, not clamped_ok, False)


# --- barrier objects used by the controller and the kinematic checks ---


class VisualLockBarrier:
    """h_v over the base position in the body frame.

    The base moves opposite to the drone in the body frame (ṗ_D^W = −u),
    so the constraint normal on the drone velocity is −∇h_v.
    """

    velocity_sign = -1.0

    def __init__(self, params: VcbfParams):
        self.params = params
        self.alpha = params.alpha

    def value(self, p: Vec3) -> float:
        return h_v(p, self.params)

    def gradient(self, p: Vec3) -> Vec3:
        return grad_h_v(p, self.params)

    def constraint(self, p: Vec3) -> HalfspaceConstraint:
        h = self.value(p) - self.params.margin
        return build_constraint(h, self.velocity_sign * self.gradient(p), self.alpha)


class DescentBarrier:
    """h_d over the drone position in the target frame (ṗ_T = u)."""

    velocity_sign = 1.0

    def __init__(self, params: DescentParams):
        self.params = params
        self.alpha = params.alpha

    def value(self, p: Vec3) -> float:
        return h_d(p, self.params)

    def gradient(self, p: Vec3) -> Vec3:
        return grad_h_d(p, self.params)

    def constraint(self, p: Vec3) -> HalfspaceConstraint:
        return build_constraint(self.value(p), self.gradient(p), self.alpha)


class SafetyFilter:
    """Stateful wrapper around :func:`filter_velocity` that keeps intervention counts."""

    def __init__(self, box: VelocityBox):
        self.box = box
        self.ticks = 0
        self.interventions = 0
        self.infeasible = 0
        self.min_h = math.inf

    def filter_action(self, u_nom: Vec3, barrier, p: Vec3) -> tuple[FilterResult, float]:
        """Return the filtered velocity and the barrier value at p."""
        h = barrier.value(p)
        result = filter_velocity(u_nom, barrier.constraint(p), self.box)
        self.ticks += 1
        self.min_h = min(self.min_h, h)
        if result.active:
            self.interventions += 1
        if result.infeasible:
            self.infeasible += 1
            logger.debug(f"Infeasible filter at h={h:.4f}; commanding best-effort vertex")
        return result, h

    def get_metrics(self) -> dict:
        return {
            "ticks": self.ticks,
            "interventions": self.interventions,
            "infeasible": self.infeasible,
            "min_h": self.min_h if self.ticks else float("nan"),
        }


class RolloutResult(NamedTuple):
    times: np.ndarray
    positions: np.ndarray
    h: np.ndarray
    infeasible_ticks: int


def kinematic_rollout(
    barrier,
    p0: Vec3,
    nominal: Callable[[Vec3], Vec3],
    box: VelocityBox,
    duration: float,
    outer_hz: float = 30.0,
    substeps: int = 16,
) -> RolloutResult:
    """Single-integrator closed loop: filter at outer_hz, integrate in substeps.

    The barrier coordinate moves as ṗ = velocity_sign · u*. The barrier value
    is recorded after every substep.
    """
    dt_outer = 1.0 / outer_hz
    dt_sub = dt_outer / substeps
    p = np.asarray(p0, dtype=float).copy()
    times, positions, values = [0.0], [p.copy()], [barrier.value(p)]
    infeasible = 0
    t = 0.0
    for _ in range(int(round(duration * outer_hz))):
        result = filter_velocity(nominal(p), barrier.constraint(p), box)
        infeasible += int(result.infeasible)
        for _ in range(substeps):
            p = p + barrier.velocity_sign * result.velocity * dt_sub
            t += dt_sub
            times.append(t)
            positions.append(p.copy())
            values.append(barrier.value(p))
    return RolloutResult(np.array(times), np.array(positions), np.array(values), infeasible)


# --- boundary samplers for plot data ---


def vcbf_cone_samples(params: VcbfParams, depths: np.ndarray, n_angle: int = 36) -> np.ndarray:
    """Points on h_v = 0 expressed in the camera frame (base relative to camera)."""
    half = math.tan(0.5 * params.theta_f)
    angles = np.linspace(0.0, 2.0 * math.pi, n_angle, endpoint=False)
    rows = [
        (d * half * math.cos(phi), d * half * math.sin(phi), d)
        for d in np.asarray(depths, dtype=float)
        for phi in angles
    ]
    return np.array(rows)


def dcbf_surface_samples(params: DescentParams, r_max: float, n_r: int = 40, n_angle: int = 36) -> np.ndarray:
    """Points on h_d = 0 in the target frame."""
    angles = np.linspace(0.0, 2.0 * math.pi, n_angle, endpoint=False)
    rows = []
    for r in np.linspace(0.0, r_max, n_r):
        l = r * r
        z = -params.K1 * params.K2 * l * math.exp(-params.K1 * l) - params.K3
        rows.extend((r * math.cos(phi), r * math.sin(phi), z) for phi in angles)
    return np.array(rows)


def dcbf_profile(params: DescentParams, radii: np.ndarray) -> np.ndarray:
    """Boundary z_T as a function of horizontal distance."""
    l = np.asarray(radii, dtype=float) ** 2
    return -params.K1 * params.K2 * l * np.exp(-params.K1 * l) - params.K3
