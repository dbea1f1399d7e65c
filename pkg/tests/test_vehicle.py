import math

import numpy as np
import pytest

from errors import IntegrationFault
from geometry import GRAVITY
from vehicle import (
    ControlWrench,
    VehicleParams,
    VehicleState,
    WindModel,
    gust_phase,
    step,
    touchdown_ramp,
    wind_force,
)


def fly(state, wrench, wind, params, seconds, dt=0.002):
    for _ in range(int(round(seconds / dt))):
        state = step(state, wrench, wind, params, dt)
    return state


def test_hover_force_balance():
    params = VehicleParams()
    wrench = ControlWrench.from_force(params.mass * np.array([0.0, 0.0, -9.81]))
    state = fly(VehicleState.at_rest([0.0, 0.0, -1.0]), wrench, WindModel(), params, 1.0)
    assert np.linalg.norm(state.velocity) < 1e-9
    assert np.allclose(state.position, [0.0, 0.0, -1.0], atol=1e-9)


def test_free_fall_distance():
    params = VehicleParams(drag=0.0)
    start = VehicleState.at_rest([0.0, 0.0, -10.0])
    state = fly(start, ControlWrench.from_force(np.zeros(3)), WindModel(), params, 1.0)
    assert state.position[2] - start.position[2] == pytest.approx(4.905, abs=1e-6)
    assert state.t == pytest.approx(1.0)


def test_attitude_stays_orthonormal_under_torque():
    params = VehicleParams()
    wrench = ControlWrench.from_force(np.zeros(3), tau_q=np.array([1e-4, -2e-4, 5e-5]))
    state = fly(VehicleState.at_rest([0.0, 0.0, -5.0]), wrench, WindModel(), params, 2.0, dt=0.004)
    R = state.attitude
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)


def test_thrust_saturates_at_ceiling():
    params = VehicleParams(drag=0.0)
    huge = ControlWrench(np.zeros(3), np.zeros(3), np.array([0.0, 0.0, -100.0]))
    state = fly(VehicleState.at_rest([0.0, 0.0, -1.0]), huge, WindModel(), params, 0.1)
    # net upward acceleration is g once thrust is capped at 2mg
    assert state.velocity[2] == pytest.approx(-9.81 * 0.1, rel=1e-9)


@pytest.mark.parametrize("dt", [0.0, -0.001, 0.02])
def test_step_rejects_bad_dt(dt):
    with pytest.raises(IntegrationFault):
        step(VehicleState.at_rest(np.zeros(3)), ControlWrench.from_force(np.zeros(3)), WindModel(), VehicleParams(), dt)


def test_step_rejects_non_finite_wrench():
    wrench = ControlWrench.from_force(np.array([np.nan, 0.0, 0.0]))
    with pytest.raises(IntegrationFault):
        step(VehicleState.at_rest(np.zeros(3)), wrench, WindModel(), VehicleParams(), 0.002)


def test_wind_force():
    v = np.zeros(3)
    assert np.allclose(wind_force(WindModel(), v, 0.0, 0.2), 0.0)
    wind = WindModel(mean=np.array([5.0, 0.0, 0.0]), gust=np.array([1.0, 0.0, 0.0]), frequency=0.5, seed=4)
    # instant at which the x gust term vanishes
    t = (math.pi - wind.phase[0]) / (2.0 * math.pi * 0.5)
    assert np.linalg.norm(wind_force(wind, v, t, 0.2)) == pytest.approx(1.0, abs=1e-9)


def test_wind_is_deterministic():
    a = WindModel(mean=np.ones(3), gust=np.ones(3), frequency=0.5, seed=9)
    b = WindModel(mean=np.ones(3), gust=np.ones(3), frequency=0.5, seed=9)
    assert np.array_equal(a.velocity(1.234), b.velocity(1.234))
    assert np.array_equal(gust_phase(9), gust_phase(9))
    assert not np.array_equal(gust_phase(9), gust_phase(10))


def test_touchdown_ramp():
    assert touchdown_ramp(1.0, 1.0, 1.0) == 0.0
    assert touchdown_ramp(1.0, 0.5, 1.0) == pytest.approx(0.5)
    assert touchdown_ramp(0.1, 0.5, 1.0) == 0.0
    assert touchdown_ramp(1.0, 0.1, 0.0) == 0.0


def test_params_validation():
    with pytest.raises(ValueError):
        VehicleParams(mass=0.0)
    with pytest.raises(ValueError):
        VehicleParams(inertia=np.diag([1.0, -1.0, 1.0]))
    assert VehicleParams().thrust_ceiling == pytest.approx(2.0 * 0.3 * 9.81)


def _energy(state, params):
    J = params.inertia
    translational = 0.5 * params.mass * float(state.velocity @ state.velocity)
    rotational = 0.5 * float(state.rate @ J @ state.rate)
    potential = params.mass * float(GRAVITY @ state.position)
    return translational + rotational + potential


def test_energy_conserved_without_thrust_or_wind():
    params = VehicleParams(drag=0.0)
    start = VehicleState(
        position=np.array([0.0, 0.0, -20.0]),
        velocity=np.array([1.0, -0.5, -2.0]),
        attitude=np.eye(3),
        rate=np.array([0.3, 0.2, 0.1]),
    )
    end = fly(start, ControlWrench.from_force(np.zeros(3)), WindModel(), params, 2.0)
    e0, e1 = _energy(start, params), _energy(end, params)
    assert abs(e1 - e0) <= 1e-5 * abs(e0)


def _tumbling_flight(dt):
    params = VehicleParams(drag=0.3)
    start = VehicleState(
        position=np.array([0.0, 0.0, -5.0]),
        velocity=np.array([0.2, 0.0, 0.0]),
        attitude=np.eye(3),
        rate=np.array([0.5, 0.1, 0.2]),
    )
    wrench = ControlWrench(np.zeros(3), np.zeros(3), np.array([0.0, 0.0, -3.5]))
    return fly(start, wrench, WindModel(), params, 1.0, dt=dt).position


def test_rk4_fourth_order_while_rates_precess():
    dt = 0.01
    reference = _tumbling_flight(dt / 16.0)
    coarse = np.linalg.norm(_tumbling_flight(dt) - reference)
    fine = np.linalg.norm(_tumbling_flight(dt / 2.0) - reference)
    assert fine > 0.0
    assert coarse / fine >= 8.0


@pytest.mark.parametrize(
    "rate",
    [
        (0.0, 0.0, 3.0),
        (2.0, 0.0, 0.0),
        (0.5, 0.1, 0.2),
    ],
)
def test_torque_free_spin_keeps_angular_momentum(rate):
    params = VehicleParams(drag=0.0)
    J = params.inertia
    start = VehicleState(np.zeros(3), np.zeros(3), np.eye(3), np.array(rate))
    end = fly(start, ControlWrench.from_force(np.zeros(3)), WindModel(), params, 1.0)
    L0 = np.linalg.norm(J @ start.rate)
    assert np.linalg.norm(J @ end.rate) == pytest.approx(L0, abs=1e-6)


@pytest.mark.slow
def test_attitude_orthonormal_after_long_integration():
    params = VehicleParams()
    wrench = ControlWrench(np.zeros(3), np.array([2e-6, -1e-6, 5e-7]), np.array([0.0, 0.0, -2.943]))
    state = VehicleState(np.zeros(3), np.zeros(3), np.eye(3), np.array([0.4, -0.3, 0.9]))
    for _ in range(100_000):
        state = step(state, wrench, WindModel(), params, 0.002)
    R = state.attitude
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-8
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-8)
