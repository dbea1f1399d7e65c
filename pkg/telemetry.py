"""
Telemetry records, run metrics and output artefacts for cbfnav.

One TelemetryRecord is kept per outer-loop tick. Barrier values in the
records are evaluated on ground truth; the estimate-based values the filter
acted on are kept alongside for the plots.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

try:
    from .errors import EmptyTelemetryError
    from .safety import DescentParams, VcbfParams, dcbf_profile, dcbf_surface_samples, vcbf_cone_samples
except ImportError:
    from errors import EmptyTelemetryError
    from safety import DescentParams, VcbfParams, dcbf_profile, dcbf_surface_samples, vcbf_cone_samples

logger = logging.getLogger("TELEMETRY")

SCHEMA_VERSION = 1
BREACH_LEVEL = -0.05

CSV_COLUMNS = (
    ["t", "phase", "px", "py", "pz", "vx", "vy", "vz", "hx_v", "h_d"]
    + [f"unom_{a}" for a in "xyz"]
    + [f"ufil_{a}" for a in "xyz"]
    + [f"e_{a}" for a in "xyz"]
    + ["kappa_hat", "m_hat"]
    + [f"taup_{a}" for a in "xyz"]
    + [f"tauq_{a}" for a in "xyz"]
)
SCHEMA_COLUMN = f"schema_v{SCHEMA_VERSION}"


def _nan3() -> np.ndarray:
    return np.full(3, np.nan)


@dataclass(frozen=True)
class TelemetryRecord:
    t: float
    phase: str
    position: np.ndarray
    velocity: np.ndarray
    h_v: float
    h_d: float
    u_nom: np.ndarray
    u_filtered: np.ndarray
    e: np.ndarray
    kappa_hat: float
    m_hat: float
    tau_p: np.ndarray
    tau_q: np.ndarray
    e_body: np.ndarray = field(default_factory=_nan3)
    p_rel_est: np.ndarray = field(default_factory=_nan3)
    base_in_camera: np.ndarray = field(default_factory=_nan3)
    drone_in_target: np.ndarray = field(default_factory=_nan3)
    h_v_est: float = float("nan")
    h_d_est: float = float("nan")
    infeasible: bool = False

    def row(self) -> list:
        values = [self.t, self.phase, *self.position, *self.velocity, self.h_v, self.h_d]
        values += [*self.u_nom, *self.u_filtered, *self.e, self.kappa_hat, self.m_hat]
        values += [*self.tau_p, *self.tau_q]
        return [v if isinstance(v, str) else float(v) for v in values]


@dataclass
class RunMetrics:
    """Summary of one scenario run; serialised verbatim to metrics.json."""

    landing_error: float
    min_h_v: float
    min_h_d: dict[str, float]
    flight_time: float
    breach_duration: float
    success: bool
    termination: str
    seed: int
    recovery_time: float = 0.0
    switches: list[dict] = field(default_factory=list)
    infeasible_ticks: int = 0
    filter_interventions: int = 0
    filtered_ticks: int = 0
    phase_durations: dict[str, float] = field(default_factory=dict)
    telemetry_sha256: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _barrier_of(phase: str, record: TelemetryRecord) -> float:
    if phase == "Ascending":
        return record.h_v
    if phase in ("Approaching", "Landing"):
        return record.h_d
    return float("nan")


def barrier_statistics(records: Sequence[TelemetryRecord], dt: float) -> tuple[float, float]:
    """Breach and recovery time of the active barrier.

    A tick counts as a breach when h < −0.05 after the barrier of its phase
    has been satisfied at least once; ticks with h < 0 before that count as
    recovery from an unsafe start.

    Returns:
        tuple: (breach_duration, recovery_time) in seconds.
    """
    breach, recovery = 0.0, 0.0
    satisfied: dict[str, bool] = {}
    for record in records:
        h = _barrier_of(record.phase, record)
        if math.isnan(h):
            continue
        if h >= 0.0:
            satisfied[record.phase] = True
        elif satisfied.get(record.phase):
            if h < BREACH_LEVEL:
                breach += dt
        else:
            recovery += dt
    return breach, recovery


def min_barriers(records: Sequence[TelemetryRecord]) -> tuple[float, dict[str, float]]:
    min_h_v = math.inf
    min_h_d: dict[str, float] = {}
    for record in records:
        if record.phase == "Ascending" and not math.isnan(record.h_v):
            min_h_v = min(min_h_v, record.h_v)
        elif record.phase in ("Approaching", "Landing") and not math.isnan(record.h_d):
            min_h_d[record.phase] = min(min_h_d.get(record.phase, math.inf), record.h_d)
    return min_h_v, min_h_d


def phase_durations(records: Sequence[TelemetryRecord], dt: float) -> dict[str, float]:
    durations: dict[str, float] = {}
    for record in records:
        durations[record.phase] = durations.get(record.phase, 0.0) + dt
    return durations


# --- artefacts ---


def _require(records: Sequence[TelemetryRecord]) -> None:
    if not records:
        raise EmptyTelemetryError("no telemetry records to write")


def csv_text(records: Sequence[TelemetryRecord]) -> str:
    _require(records)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow([*CSV_COLUMNS, SCHEMA_COLUMN])
    for record in records:
        writer.writerow([*record.row(), SCHEMA_VERSION])
    return buffer.getvalue()


def telemetry_hash(records: Sequence[TelemetryRecord]) -> str:
    return hashlib.sha256(csv_text(records).encode("utf-8")).hexdigest()


def emit_csv(records: Sequence[TelemetryRecord], path: str) -> str:
    """Write telemetry.csv; returns the path written.

    Raises:
        EmptyTelemetryError: for an empty record stream.
    """
    text = csv_text(records)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    return path


def _write_rows(path: str, header: Iterable[str], rows: Iterable[Iterable]) -> str:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([v if isinstance(v, str) else float(v) for v in row])
    return path


def emit_plot_data(
    records: Sequence[TelemetryRecord],
    out_dir: str,
    vcbf: VcbfParams,
    descents: Sequence[tuple[str, DescentParams]] = (),
) -> list[str]:
    """Write the boundary samples and traces used for the run plots.

    Args:
        records: telemetry of one run.
        out_dir: existing directory.
        vcbf: visual-locking barrier parameters for the cone samples.
        descents: (phase, params) for each descent switch, in order.

    Returns:
        list[str]: paths written.
    """
    _require(records)
    written = []
    ascending = [r for r in records if r.phase == "Ascending"]
    written.append(
        _write_rows(
            os.path.join(out_dir, "ascending.csv"),
            ["t", "x", "y", "z", "h_v"],
            ([r.t, *r.base_in_camera, r.h_v] for r in ascending),
        )
    )
    max_depth = max([float(r.base_in_camera[2]) for r in ascending if np.isfinite(r.base_in_camera[2])] or [1.75])
    cone = vcbf_cone_samples(vcbf, np.linspace(0.05, max(max_depth, 0.1), 25))
    written.append(_write_rows(os.path.join(out_dir, "vcbf_cone.csv"), ["x", "y", "z"], cone))

    written.append(
        _write_rows(
            os.path.join(out_dir, "h_values.csv"),
            ["t", "phase", "h_v", "h_d", "h_v_est", "h_d_est"],
            ([r.t, r.phase, r.h_v, r.h_d, r.h_v_est, r.h_d_est] for r in records),
        )
    )

    descent = [r for r in records if r.phase in ("Approaching", "Landing", "Touchdown")]
    written.append(
        _write_rows(
            os.path.join(out_dir, "descent.csv"),
            ["t", "phase", "x", "y", "z", "r"],
            (
                [r.t, r.phase, *r.drone_in_target, math.hypot(r.drone_in_target[0], r.drone_in_target[1])]
                for r in descent
            ),
        )
    )

    if descents:
        _, params = descents[-1]
        r_max = max([math.hypot(r.drone_in_target[0], r.drone_in_target[1]) for r in descent] or [0.0])
        surface = dcbf_surface_samples(params, max(r_max, 4.0 * math.sqrt(params.l_star)))
        written.append(_write_rows(os.path.join(out_dir, "dcbf_surface.csv"), ["x", "y", "z"], surface))
        profile_rows = []
        for phase, p in descents:
            radii = np.linspace(0.0, max(r_max, 4.0 * math.sqrt(p.l_star)), 200)
            profile_rows.extend([phase, r, z] for r, z in zip(radii, dcbf_profile(p, radii)))
        written.append(_write_rows(os.path.join(out_dir, "descent_profile.csv"), ["phase", "r", "z"], profile_rows))

    written.append(
        _write_rows(
            os.path.join(out_dir, "adaptive.csv"),
            ["t", "phase", "e_x", "e_y", "e_z", "kappa_hat", "m_hat"],
            ([r.t, r.phase, *r.e_body, r.kappa_hat, r.m_hat] for r in records),
        )
    )
    logger.info(f"Wrote {len(written)} plot files to {out_dir}")
    return written


def write_metrics(metrics: RunMetrics, path: str) -> str:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(metrics.to_dict(), f, indent=2, allow_nan=True)
    return path
