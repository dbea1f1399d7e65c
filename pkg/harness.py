"""
Deterministic closed-loop simulation of one scenario.

Physics runs at physics_hz, the attitude loop every physics_hz / inner_hz
steps and the outer loop plus perception at outer_hz. Outer tick j fires at
physics step ceil(j * physics_hz / outer_hz). Within a tick the order is
perception, outer control, then inner control interleaved with physics.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from typing import Any, Sequence

import numpy as np
from tqdm import tqdm

try:
    from .config import ScenarioConfig, apply_override, validate_config
    from .controller import FlightController, FlightMode, Measurements
    from .errors import IntegrationFault
    from .perception import estimate_velocity, observe
    from .safety import h_d, h_v
    from .telemetry import (
        RunMetrics,
        TelemetryRecord,
        barrier_statistics,
        emit_csv,
        emit_plot_data,
        min_barriers,
        phase_durations,
        telemetry_hash,
        write_metrics,
    )
    from .vehicle import step as vehicle_step
except ImportError:
    from config import ScenarioConfig, apply_override, validate_config
    from controller import FlightController, FlightMode, Measurements
    from errors import IntegrationFault
    from perception import estimate_velocity, observe
    from safety import h_d, h_v
    from telemetry import (
        RunMetrics,
        TelemetryRecord,
        barrier_statistics,
        emit_csv,
        emit_plot_data,
        min_barriers,
        phase_durations,
        telemetry_hash,
        write_metrics,
    )
    from vehicle import step as vehicle_step

logger = logging.getLogger("HARNESS")

DEFAULT_OUT = "out"
MAX_TILT_COS = math.cos(math.radians(60.0))
SWEEP_COLUMNS = ["value", "success", "termination", "landing_error", "breach_duration", "flight_time"]


def resolve_output_dir(cli_out: str | None = None) -> str:
    """--out wins, then the CBFNAV_OUT environment variable, then ./out."""
    if cli_out:
        return cli_out
    return os.environ.get("CBFNAV_OUT") or DEFAULT_OUT


class Simulation:
    """One scenario, advanced an outer tick at a time."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.params = cfg.vehicle_params()
        self.wind = cfg.wind_model()
        self.noise = cfg.noise_model()
        self.markers = cfg.marker_configs()
        self.poses = cfg.robot_poses()
        self.setup = cfg.control_setup()
        self.state = cfg.initial_state()
        self.controller = FlightController(self.setup, self.state.attitude, cfg.initial_adaptive())

        timing = cfg.timing
        self.dt = 1.0 / timing.physics_hz
        self.inner_every = timing.inner_every
        self.inner_dt = self.dt * self.inner_every
        self.step_index = 0
        self.tick_index = 0

        self.records: list[TelemetryRecord] = []
        self.switches: list[dict] = []
        self.descents: list = []
        self.termination: str | None = None
        self.landing_error = float("nan")
        self._target_inverse = self.poses["target"].inverse()
        self._wrench = None

    @property
    def t(self) -> float:
        return self.step_index * self.dt

    @property
    def done(self) -> bool:
        return self.termination is not None

    def _tick_step(self, j: int) -> int:
        timing = self.cfg.timing
        return math.ceil(j * timing.physics_hz / timing.outer_hz - 1e-9)

    def _truth_barriers(self, phase) -> tuple[float, float, np.ndarray, np.ndarray]:
        s = self.state
        base_in_body = s.attitude.T @ (self.poses["base"].translation - s.position)
        drone_in_target = self._target_inverse.apply(s.position)
        hv = h_v(base_in_body, self.setup.vcbf)
        hd = h_d(drone_in_target, phase.descent) if phase.descent is not None else float("nan")
        return hv, hd, base_in_body - self.setup.vcbf.camera_offset, drone_in_target

    def _record(self, out) -> None:
        phase = out.phase
        hv, hd, base_in_camera, drone_in_target = self._truth_barriers(phase)
        trace = out.trace
        nav = trace.nav
        p_rel = np.full(3, np.nan)
        if nav is not None:
            p_rel = nav.p_body if nav.frame == "base" else nav.p_drone
        if phase.mode is not FlightMode.ASCENDING:
            hv = float("nan")
        self.records.append(
            TelemetryRecord(
                t=self.t,
                phase=phase.mode.value,
                position=self.state.position.copy(),
                velocity=self.state.velocity.copy(),
                h_v=hv,
                h_d=hd,
                u_nom=trace.u_nom,
                u_filtered=trace.u_filtered,
                e=trace.e,
                kappa_hat=out.adaptive.kappa,
                m_hat=out.adaptive.m,
                tau_p=out.wrench.tau_p,
                tau_q=self.controller.tau_q.copy(),
                e_body=trace.e_body,
                p_rel_est=p_rel,
                base_in_camera=base_in_camera,
                drone_in_target=drone_in_target,
                h_v_est=trace.h_v,
                h_d_est=trace.h_d,
                infeasible=trace.infeasible,
            )
        )
        if trace.switch_h_d is not None:
            switch = {"t": self.t, "phase": phase.mode.value, **phase.descent.as_dict(), "h_d_at_switch": trace.switch_h_d}
            self.switches.append(switch)
            self.descents.append((phase.mode.value, phase.descent))

    def _check_termination(self) -> None:
        s = self.state
        mode = self.controller.mode
        drone_in_target = self._target_inverse.apply(s.position)
        if mode is FlightMode.TOUCHDOWN and -drone_in_target[2] <= self.cfg.phases.contact_altitude:
            self.landing_error = float(math.hypot(drone_in_target[0], drone_in_target[1]))
            self.termination = "touchdown"
        elif mode is not FlightMode.TOUCHDOWN and (s.position[2] >= 0.0 or drone_in_target[2] >= 0.0):
            self.termination = "crash"
        elif s.attitude[2, 2] < MAX_TILT_COS:
            self.termination = "attitude_envelope"
        elif self.t >= self.cfg.timing.max_duration - 1e-12:
            self.termination = "timeout"

    def tick(self) -> None:
        """Run one outer period: perception, outer loop, then inner loop and physics."""
        if self.done:
            return
        t = self.t
        estimates = {
            rid: observe(self.state, self.poses[rid], self.markers[rid], self.noise, t, self.setup.camera_offset)
            for rid in ("base", "target")
        }
        meas = Measurements(
            t=t,
            estimates=estimates,
            velocity=estimate_velocity(self.state, self.noise),
            attitude=self.state.attitude,
            rate=self.state.rate,
        )
        out = self.controller.outer(meas)
        self._record(out)

        phase = self.controller.phase
        if phase.fault and t - phase.last_valid_time > self.cfg.phases.loss_abort:
            logger.error(f"Detection of '{phase.frame}' lost for more than {self.cfg.phases.loss_abort} s")
            self.termination = "detection_loss"
            return

        self.tick_index += 1
        next_step = self._tick_step(self.tick_index)
        while self.step_index < next_step and not self.done:
            if self._wrench is None or self.step_index % self.inner_every == 0:
                self._wrench = self.controller.inner(self.state.attitude, self.state.rate, self.inner_dt)
            try:
                self.state = vehicle_step(self.state, self._wrench, self.wind, self.params, self.dt)
            except IntegrationFault as exc:
                logger.error(f"Integration fault: {exc}")
                self.termination = "integration_fault"
                return
            self.step_index += 1
            self._check_termination()

    def run(self) -> tuple[list[TelemetryRecord], RunMetrics]:
        logger.info(f"Running scenario '{self.cfg.name}' with seed {self.cfg.seed}")
        while not self.done:
            self.tick()
        metrics = self.metrics()
        logger.info(
            f"Scenario '{self.cfg.name}' ended by {metrics.termination} at t={metrics.flight_time:.2f} s "
            f"(landing error {metrics.landing_error:.4f} m, success={metrics.success})"
        )
        return self.records, metrics

    def metrics(self) -> RunMetrics:
        outer_dt = 1.0 / self.cfg.timing.outer_hz
        breach, recovery = barrier_statistics(self.records, outer_dt)
        min_h_v, min_h_d = min_barriers(self.records)
        filtering = self.controller.safety.get_metrics()
        success = self.termination == "touchdown" and self.landing_error <= self.cfg.phases.landing_margin
        return RunMetrics(
            landing_error=self.landing_error,
            min_h_v=min_h_v if math.isfinite(min_h_v) else float("nan"),
            min_h_d=min_h_d,
            flight_time=self.t,
            breach_duration=breach,
            success=bool(success),
            termination=self.termination or "running",
            seed=self.cfg.seed,
            recovery_time=recovery,
            switches=list(self.switches),
            infeasible_ticks=filtering["infeasible"],
            filter_interventions=filtering["interventions"],
            filtered_ticks=filtering["ticks"],
            phase_durations=phase_durations(self.records, outer_dt),
            telemetry_sha256=telemetry_hash(self.records) if self.records else "",
        )


def run_scenario(cfg: ScenarioConfig) -> tuple[list[TelemetryRecord], RunMetrics]:
    return Simulation(cfg).run()


def write_artifacts(sim: Simulation, metrics: RunMetrics, out_dir: str) -> list[str]:
    """Write telemetry.csv, metrics.json and the plot data of a finished run."""
    os.makedirs(out_dir, exist_ok=True)
    written = [emit_csv(sim.records, os.path.join(out_dir, "telemetry.csv"))]
    written.append(write_metrics(metrics, os.path.join(out_dir, "metrics.json")))
    written.extend(emit_plot_data(sim.records, out_dir, sim.setup.vcbf, sim.descents))
    logger.info(f"Artefacts written to {out_dir}")
    return written


def _sweep_worker(data: dict) -> dict:
    cfg = validate_config(data)
    _, metrics = run_scenario(cfg)
    return metrics.to_dict()


def run_sweep(
    base: dict,
    param: str,
    values: Sequence[Any],
    jobs: int = 1,
    progress: bool = True,
) -> list[dict]:
    """Run one scenario per value of a dotted config field.

    Every document is validated before any run starts, so a bad value fails
    fast with its field path. Results keep the order of values.

    Returns:
        list[dict]: {"value", "metrics"} per run, metrics verbatim.
    """
    documents = [apply_override(base, param, value) for value in values]
    for document in documents:
        validate_config(document)

    results: list[dict | None] = [None] * len(documents)
    bar = tqdm(total=len(documents), desc=f"sweep {param}", disable=not progress)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_sweep_worker, doc): i for i, doc in enumerate(documents)}
            for future in as_completed(futures):
                results[futures[future]] = future.result()
                bar.update(1)
    else:
        for i, doc in enumerate(documents):
            results[i] = _sweep_worker(doc)
            bar.update(1)
    bar.close()
    return [{"value": value, "metrics": metrics} for value, metrics in zip(values, results)]


def write_sweep(rows: list[dict], param: str, out_dir: str) -> list[str]:
    """sweep.json keeps every per-run metric; sweep.csv is the summary table."""
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, "sweep.json")
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump({"param": param, "runs": rows}, f, indent=2)
    csv_path = os.path.join(out_dir, "sweep.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            m = row["metrics"]
            writer.writerow([json.dumps(row["value"])] + [m[c] for c in SWEEP_COLUMNS[1:]])
    return [json_path, csv_path]
