"""
Self-check suite behind `cli.py verify`.

Each check returns a CheckResult instead of raising, so the CLI can report
every failure and exit with the verification code. Functions are looked up
on their modules at call time.
"""

from __future__ import annotations

import logging
import math
import time
from typing import Callable, NamedTuple

import numpy as np

try:
    from . import controller, safety
    from .config import ScenarioConfig
    from .geometry import rot_z
    from .harness import Simulation
    from .perception import CAMERA_OFFSET, RelativePoseEstimate, relative_nav_state
except ImportError:
    import controller
    import safety
    from config import ScenarioConfig
    from geometry import rot_z
    from harness import Simulation
    from perception import CAMERA_OFFSET, RelativePoseEstimate, relative_nav_state

logger = logging.getLogger("VERIFY")

FD_STEP = 1e-6
GRADIENT_TOLERANCE = 1e-6
QP_GRID_STEP = 1e-3
INVARIANCE_TOLERANCE = 1e-6


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str
    seconds: float


CHECKS: dict[str, Callable[[], tuple[bool, str]]] = {}


def check(name: str):
    def register(fn):
        CHECKS[name] = fn
        return fn

    return register


def central_difference(f: Callable[[np.ndarray], float], p: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    grad = np.zeros(3)
    for i in range(3):
        dp = np.zeros(3)
        dp[i] = step
        grad[i] = (f(p + dp) - f(p - dp)) / (2.0 * step)
    return grad


def gradient_error(f, grad, p: np.ndarray) -> float:
    """Relative error of an analytic gradient against central differences."""
    numeric = central_difference(f, p)
    analytic = grad(p)
    return float(np.linalg.norm(numeric - analytic) / max(np.linalg.norm(analytic), 1.0))


def sample_vcbf_point(rng: np.random.Generator, params: safety.VcbfParams) -> np.ndarray:
    while True:
        offset = np.array([rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(0.3, 2.0)])
        if math.hypot(offset[0], offset[1]) > 0.05:
            return params.camera_offset + offset


def sample_descent_params(rng: np.random.Generator) -> safety.DescentParams:
    return safety.DescentParams(
        K1=rng.uniform(0.5, 160.0), K2=rng.uniform(0.0, 5.0), K3=rng.uniform(0.35, 1.75)
    )


def random_qp_instance(rng: np.random.Generator, kind: str) -> tuple[np.ndarray, safety.HalfspaceConstraint]:
    """Seeded QP instance: 'interior', 'boundary' or 'infeasible'."""
    box = np.array([0.1, 0.1, 0.1])
    u_nom = rng.uniform(-0.3, 0.3, size=3)
    a = rng.normal(size=3)
    a /= np.linalg.norm(a)
    reach = float(np.abs(a) @ box)
    if kind == "interior":
        b = float(a @ np.clip(u_nom, -box, box)) - rng.uniform(0.0, 0.05)
    elif kind == "boundary":
        b = rng.uniform(-0.5, 0.9) * reach
    else:
        b = reach * rng.uniform(1.05, 2.0)
    return u_nom, safety.HalfspaceConstraint(a, b)


@check("descent_params")
def check_descent_params() -> tuple[bool, str]:
    landing = safety.derive_descent_params(-1.895, 1.0 / 120.6, 0.35)
    approach = safety.derive_descent_params(-1.0, 0.42, 1.75)
    ok = (
        abs(landing.K1 - 120.6) <= 0.1
        and abs(landing.K2 - 4.2) <= 0.01
        and approach.K2 == 0.0
        and abs(approach.K1 - 2.38) <= 0.01
    )
    return ok, f"landing K1={landing.K1:.2f} K2={landing.K2:.4f}; approach K1={approach.K1:.3f} K2={approach.K2}"


@check("gradient_oracle")
def check_gradients(samples: int = 1000, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    vcbf = safety.VcbfParams()
    worst_v = worst_d = 0.0
    for _ in range(samples):
        p = sample_vcbf_point(rng, vcbf)
        worst_v = max(worst_v, gradient_error(lambda q: safety.h_v(q, vcbf), lambda q: safety.grad_h_v(q, vcbf), p))
        params = sample_descent_params(rng)
        q = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-2.0, -0.1)])
        worst_d = max(worst_d, gradient_error(lambda x: safety.h_d(x, params), lambda x: safety.grad_h_d(x, params), q))
    ok = worst_v < GRADIENT_TOLERANCE and worst_d < GRADIENT_TOLERANCE
    return ok, f"worst relative error h_v={worst_v:.2e}, h_d={worst_d:.2e}"


@check("qp_oracle")
def check_qp(instances: int = 100, seed: int = 0) -> tuple[bool, str]:
    """Exact QP against the grid oracle.

    The exact answer may never be farther from u_nom than the best grid
    point, and may be at most one grid diagonal closer.
    """
    rng = np.random.default_rng(seed)
    box = safety.VelocityBox()
    kinds = ("interior", "boundary", "infeasible")
    slack = math.sqrt(3.0) * QP_GRID_STEP
    worst_gap, worst_dev = 0.0, 0.0
    ok = True
    for i in range(instances):
        kind = kinds[i % 3]
        u_nom, c = random_qp_instance(rng, kind)
        exact = safety.filter_velocity(u_nom, c, box)
        oracle = safety.brute_force_filter(u_nom, c, box, QP_GRID_STEP)
        ok &= exact.infeasible == oracle.infeasible == (kind == "infeasible")
        worst_dev = max(worst_dev, float(np.max(np.abs(exact.velocity - oracle.velocity))))
        if exact.infeasible:
            continue
        gap = float(np.linalg.norm(oracle.velocity - u_nom) - np.linalg.norm(exact.velocity - u_nom))
        worst_gap = max(worst_gap, abs(gap))
        ok &= -1e-12 <= gap <= slack
    return ok, f"worst distance gap {worst_gap:.2e}, worst component deviation {worst_dev:.2e} over {instances} instances"


def _min_h(result) -> float:
    return float(np.min(result.h))


@check("forward_invariance")
def check_forward_invariance() -> tuple[bool, str]:
    box = safety.VelocityBox()
    vcbf = safety.VcbfParams()
    ascent = safety.kinematic_rollout(
        safety.VisualLockBarrier(vcbf),
        vcbf.camera_offset + np.array([0.0, 0.0, 0.65]),
        lambda p: np.array([1.0, 0.0, 0.0]),
        box,
        duration=20.0,
    )
    landing_params = safety.derive_descent_params(-1.895, 1.0 / 120.6, 0.35)
    r = math.sqrt(landing_params.l_star)
    descent = safety.kinematic_rollout(
        safety.DescentBarrier(landing_params),
        np.array([r, 0.0, -1.895]),
        lambda p: 1.2 * (np.zeros(3) - p),
        box,
        duration=25.0,
    )
    worst = min(_min_h(ascent), _min_h(descent))
    return worst >= -INVARIANCE_TOLERANCE, f"min h_v={_min_h(ascent):.3e}, min h_d={_min_h(descent):.3e}"


def asymptotic_return(duration: float = 20.0):
    """Target seen at 1.0 m below a 1.75 m focus region: starts unsafe."""
    params = safety.derive_descent_params(-1.0, 0.42, 1.75)
    p0 = np.array([math.sqrt(0.42), 0.0, -1.0])
    focus = np.array([0.0, 0.0, -1.75])
    return safety.kinematic_rollout(
        safety.DescentBarrier(params), p0, lambda p: 1.2 * (focus - p), safety.VelocityBox(), duration
    )


@check("asymptotic_return")
def check_asymptotic_return() -> tuple[bool, str]:
    result = asymptotic_return()
    h = result.h
    negative = h[:-1] < 0.0
    drops = np.diff(h)[negative]
    worst_drop = float(-np.min(drops)) if drops.size else 0.0
    ok = h[0] < 0.0 and h[-1] >= -INVARIANCE_TOLERANCE and worst_drop <= 1e-9
    return ok, f"h(0)={h[0]:.3f}, h(end)={h[-1]:.2e}, largest decrease while unsafe {max(worst_drop, 0.0):.1e}"


@check("adaptive_fixed_point")
def check_adaptive_fixed_point() -> tuple[bool, str]:
    gains = controller.ControllerGains()
    state = controller.AdaptiveState()
    e = np.array([0.25, 0.0, 0.0])
    for _ in range(150):
        _, state = controller.adaptive_velocity_control(e, state, gains, 1.0 / 30.0)
    return abs(state.kappa - 0.1) <= 0.001, f"κ̂ after 5 s = {state.kappa:.5f}"


def synthetic_target_estimate(p_drone: np.ndarray, yaw: float, t: float = 0.0) -> RelativePoseEstimate:
    """Noise-free target detection of a drone at p_drone (target frame) with the given heading."""
    R = rot_z(yaw)
    p_body = R.T @ (-p_drone)
    return RelativePoseEstimate("target", p_body - CAMERA_OFFSET, R.T, t, True)


def switching_margins(runs: int = 50, seed: int = 0) -> list[float]:
    """h_d under the freshly derived landing params at each Approaching -> Landing switch."""
    settings = controller.PhaseSettings()
    rng = np.random.default_rng(seed)
    approach = safety.derive_descent_params(-1.0, 0.42, settings.focus_altitude)
    margins = []
    for i in range(runs):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        p = settings.focus_point + direction * rng.uniform(0.0, settings.ball_radius)
        yaw = rng.uniform(-settings.yaw_gate, settings.yaw_gate)
        est = synthetic_target_estimate(p, yaw, t=float(i))
        nav = relative_nav_state(est)
        phase = controller.PhaseState(controller.FlightMode.APPROACHING, "target", 0.0, approach, float(i))
        nxt = controller.phase_transition(phase, {"target": est}, nav, nav.yaw, float(i), settings)
        if nxt.mode is not controller.FlightMode.LANDING:
            margins.append(float("-inf"))
            continue
        margins.append(safety.h_d(nav.p_drone, nxt.descent))
    return margins


@check("switching_continuity")
def check_switching_continuity() -> tuple[bool, str]:
    margins = switching_margins()
    worst = min(margins)
    return worst >= -INVARIANCE_TOLERANCE, f"min h_d at switch over {len(margins)} seeds = {worst:.3e}"


@check("determinism")
def check_determinism() -> tuple[bool, str]:
    cfg = ScenarioConfig.model_validate({"seed": 7, "timing": {"max_duration": 2.0}})
    hashes = []
    for _ in range(2):
        sim = Simulation(cfg)
        _, metrics = sim.run()
        hashes.append(metrics.telemetry_sha256)
    return hashes[0] == hashes[1], f"telemetry sha256 {hashes[0][:12]}…"


def run_checks(names: list[str] | None = None) -> list[CheckResult]:
    results = []
    for name in names or list(CHECKS):
        start = time.perf_counter()
        try:
            passed, detail = CHECKS[name]()
        except Exception as exc:
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        elapsed = time.perf_counter() - start
        results.append(CheckResult(name, bool(passed), detail, elapsed))
        status = "PASS" if passed else "FAIL"
        log = logger.info if passed else logger.error
        log(f"{status} {name} ({elapsed:.2f} s): {detail}")
    return results
