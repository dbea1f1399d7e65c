import math

import numpy as np
import pytest

from safety import (
    DescentBarrier,
    DescentParams,
    HalfspaceConstraint,
    SafetyFilter,
    VcbfParams,
    VelocityBox,
    VisualLockBarrier,
    brute_force_filter,
    build_constraint,
    dcbf_profile,
    dcbf_surface_samples,
    derive_descent_params,
    filter_velocity,
    grad_h_d,
    grad_h_v,
    h_d,
    h_v,
    kinematic_rollout,
    vcbf_cone_samples,
)
from verify import central_difference, random_qp_instance, sample_descent_params, sample_vcbf_point

VCBF = VcbfParams()
BOX = VelocityBox()


def test_h_v_guard_returns_half_field_of_view():
    assert h_v(VCBF.camera_offset + np.array([0.0, 0.0, 1.0]), VCBF) == pytest.approx(0.4363, abs=1e-4)
    assert np.array_equal(grad_h_v(VCBF.camera_offset + np.array([1e-6, 0.0, 1.0]), VCBF), np.zeros(3))


def test_h_v_worked_value():
    p = VCBF.camera_offset + np.array([0.2, 0.0, 1.0])
    assert h_v(p, VCBF) == pytest.approx(0.238936753, abs=1e-8)


def test_h_v_zero_on_cone():
    for point in vcbf_cone_samples(VCBF, np.array([0.3, 1.0, 1.7]), n_angle=12):
        assert h_v(VCBF.camera_offset + point, VCBF) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    for _ in range(50):
        p = sample_vcbf_point(rng, VCBF)
        numeric = central_difference(lambda q: h_v(q, VCBF), p)
        assert np.allclose(numeric, grad_h_v(p, VCBF), atol=1e-7)
        params = sample_descent_params(rng)
        q = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-2.0, -0.1)])
        numeric = central_difference(lambda x: h_d(x, params), q)
        assert np.allclose(numeric, grad_h_d(q, params), rtol=1e-6, atol=1e-6)


def test_h_d_examples():
    plane = DescentParams(K1=1.0, K2=0.0, K3=0.35)
    assert h_d(np.array([0.0, 0.0, -1.0]), plane) == pytest.approx(0.65)
    assert np.allclose(grad_h_d(np.array([0.3, -0.2, -1.0]), plane), [0.0, 0.0, -1.0])
    peaked = DescentParams(K1=120.6, K2=4.2, K3=0.35)
    r = math.sqrt(1.0 / 120.6)
    assert h_d(np.array([r, 0.0, -1.895]), peaked) == pytest.approx(0.0, abs=1e-3)


def test_derive_descent_params_landing_values():
    params = derive_descent_params(-1.895, 1.0 / 120.6, 0.35)
    assert params.K1 == pytest.approx(120.6, abs=0.1)
    assert params.K2 == pytest.approx(4.2, abs=0.01)


def test_derive_descent_params_below_region_is_plane():
    params = derive_descent_params(-1.0, 0.42, 1.75)
    assert params.K2 == 0.0
    assert params.K1 == pytest.approx(2.38, rel=0.005)


def test_derive_descent_params_boundary_passes_through_switch_state():
    params = derive_descent_params(-1.2, 0.02, 0.35, peak_constant=math.e)
    assert h_d(np.array([0.0, math.sqrt(0.02), -1.2]), params) == pytest.approx(0.0, abs=1e-12)


def test_derive_descent_params_rejects_non_positive_l_star():
    with pytest.raises(ValueError):
        derive_descent_params(-1.0, 0.0, 0.35)


def test_build_constraint():
    assert build_constraint(0.0, np.array([1.0, 0.0, 0.0]), 5.0).offset == 0.0
    assert build_constraint(0.2, np.zeros(3), 5.0).offset == pytest.approx(-1.0)
    assert build_constraint(-0.1, np.zeros(3), 2.0).offset > 0.0
    with pytest.raises(ValueError):
        build_constraint(0.1, np.zeros(3), 0.0)


def test_filter_feasible_nominal_is_unchanged():
    c = HalfspaceConstraint(np.array([1.0, 0.0, 0.0]), -1.0)
    result = filter_velocity(np.array([0.05, 0.0, 0.0]), c, BOX)
    assert np.array_equal(result.velocity, [0.05, 0.0, 0.0])
    assert not result.active and not result.infeasible


def test_filter_clamps_to_box():
    c = HalfspaceConstraint(np.zeros(3), -1.0)
    assert np.allclose(filter_velocity(np.array([1.0, 0.0, 0.0]), c, BOX).velocity, [0.1, 0.0, 0.0])


def test_filter_projects_onto_halfspace():
    c = HalfspaceConstraint(np.array([0.0, 0.0, -1.0]), 0.05)
    result = filter_velocity(np.zeros(3), c, BOX)
    assert np.allclose(result.velocity, [0.0, 0.0, -0.05], atol=1e-12)
    assert result.active and not result.infeasible


def test_filter_infeasible_returns_best_vertex():
    c = HalfspaceConstraint(np.array([1.0, -1.0, 0.0]) / math.sqrt(2.0), 1.0)
    result = filter_velocity(np.array([0.0, 0.0, 0.03]), c, BOX)
    assert result.infeasible
    assert np.allclose(result.velocity, [0.1, -0.1, 0.03])


def test_filter_agrees_with_brute_force():
    rng = np.random.default_rng(42)
    step = 1e-3
    for i in range(30):
        kind = ("interior", "boundary", "infeasible")[i % 3]
        u_nom, c = random_qp_instance(rng, kind)
        exact = filter_velocity(u_nom, c, BOX)
        oracle = brute_force_filter(u_nom, c, BOX, step)
        assert exact.infeasible == oracle.infeasible == (kind == "infeasible")
        if exact.infeasible:
            assert np.allclose(exact.velocity, oracle.velocity, atol=1e-12)
            continue
        d_exact = np.linalg.norm(exact.velocity - u_nom)
        d_grid = np.linalg.norm(oracle.velocity - u_nom)
        assert d_exact <= d_grid + 1e-12
        assert d_grid <= d_exact + math.sqrt(3.0) * step
        # projection onto a convex set: |g - u*|² <= |g - u_nom|² - |u* - u_nom|²
        assert np.sum((oracle.velocity - exact.velocity) ** 2) <= d_grid**2 - d_exact**2 + 1e-12


def test_brute_force_returns_nearest_grid_point_when_feasible():
    c = HalfspaceConstraint(np.array([0.0, 0.0, 1.0]), -1.0)
    result = brute_force_filter(np.array([0.01234, -0.05678, 0.04321]), c, BOX)
    assert np.allclose(result.velocity, [0.012, -0.057, 0.043], atol=1e-12)
    assert not result.active and not result.infeasible


def test_brute_force_stays_on_grid_when_constraint_binds():
    c = HalfspaceConstraint(np.array([0.0, 0.0, -1.0]), 0.0505)
    result = brute_force_filter(np.zeros(3), c, BOX)
    assert np.allclose(result.velocity, [0.0, 0.0, -0.051], atol=1e-12)
    assert result.active


def test_filter_result_is_feasible_and_optimal_on_random_instances():
    rng = np.random.default_rng(7)
    for _ in range(200):
        u_nom, c = random_qp_instance(rng, "boundary")
        result = filter_velocity(u_nom, c, BOX)
        u = result.velocity
        assert np.all(np.abs(u) <= BOX.limits + 1e-12)
        assert c.normal @ u >= c.offset - 1e-9
        # no feasible box corner direction improves the objective
        for _ in range(20):
            v = np.clip(u + rng.normal(scale=0.01, size=3), -BOX.limits, BOX.limits)
            if c.normal @ v >= c.offset:
                assert np.linalg.norm(v - u_nom) >= np.linalg.norm(u - u_nom) - 1e-12


def test_visual_lock_filter_pushes_inward_at_boundary():
    barrier = VisualLockBarrier(VCBF)
    boundary = VCBF.camera_offset + vcbf_cone_samples(VCBF, np.array([1.0]), n_angle=1)[0]
    result = filter_velocity(np.array([-1.0, 0.0, 0.0]), barrier.constraint(boundary), BOX)
    assert -grad_h_v(boundary, VCBF) @ result.velocity >= -1e-12
    assert result.active


def test_visual_lock_margin_tightens_only_the_constraint():
    tight = VcbfParams(margin=0.05)
    p = VCBF.camera_offset + np.array([0.43, 0.0, 1.0])
    h = h_v(p, VCBF)
    assert 0.0 < h < 0.05
    barrier = VisualLockBarrier(tight)
    assert barrier.value(p) == pytest.approx(h)
    c = barrier.constraint(p)
    assert c.offset == pytest.approx(-5.0 * (h - 0.05))
    assert c.offset > 0.0
    result = filter_velocity(np.zeros(3), c, BOX)
    assert -grad_h_v(p, VCBF) @ result.velocity > 0.0


def test_safety_filter_metrics():
    sf = SafetyFilter(BOX)
    barrier = DescentBarrier(DescentParams(K1=1.0, K2=0.0, K3=0.35))
    first, _ = sf.filter_action(np.array([0.0, 0.0, 1.0]), barrier, np.array([0.0, 0.0, -0.36]))
    assert first.active and first.velocity[2] == pytest.approx(0.035)
    result, h = sf.filter_action(np.array([0.0, 0.0, -0.05]), barrier, np.array([0.0, 0.0, -1.0]))
    assert h == pytest.approx(0.65)
    metrics = sf.get_metrics()
    assert metrics["ticks"] == 2
    assert metrics["interventions"] == 1
    assert metrics["min_h"] == pytest.approx(0.01)
    assert not result.active


def test_kinematic_rollout_keeps_descent_barrier():
    params = derive_descent_params(-1.895, 1.0 / 120.6, 0.35)
    result = kinematic_rollout(
        DescentBarrier(params),
        np.array([math.sqrt(params.l_star), 0.0, -1.895]),
        lambda p: 1.2 * (np.zeros(3) - p),
        BOX,
        duration=5.0,
    )
    assert result.h.min() >= -1e-6
    assert result.infeasible_ticks == 0
    assert len(result.times) == len(result.h) == 5 * 30 * 16 + 1


def test_surface_samples_lie_on_boundary():
    params = DescentParams(K1=40.0, K2=2.0, K3=0.35)
    for point in dcbf_surface_samples(params, 0.5, n_r=10, n_angle=8):
        assert h_d(point, params) == pytest.approx(0.0, abs=1e-12)
    profile = dcbf_profile(params, np.array([0.0, 1.0 / math.sqrt(40.0)]))
    assert profile[0] == pytest.approx(-0.35)
    assert profile[1] == pytest.approx(-0.35 - 2.0 / math.e)


def test_parameter_validation():
    with pytest.raises(ValueError):
        VcbfParams(theta_f=0.0)
    with pytest.raises(ValueError):
        VcbfParams(margin=math.radians(30.0))
    with pytest.raises(ValueError):
        DescentParams(K1=-1.0, K2=0.0, K3=0.35)
    with pytest.raises(ValueError):
        VelocityBox(vx=0.0)
