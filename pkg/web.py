from __future__ import annotations

import logging
import queue
import threading
import uuid
from enum import Enum

from flask import Flask, jsonify, request

try:
    from .config import list_presets, preset_data, validate_config
    from .errors import ConfigError
except ImportError:
    from config import list_presets, preset_data, validate_config
    from errors import ConfigError

logger = logging.getLogger("WEB")


class WorkerState(Enum):
    IDLE = 1
    RUNNING = 2


# Global variables
command_queue: "queue.Queue[tuple[str, object]]" = queue.Queue()  # (run_id, ScenarioConfig)
runs: dict[str, dict] = {}
runs_lock = threading.Lock()
MAX_RUNS = 100  # finished runs beyond this are dropped, oldest first
worker_state = WorkerState.IDLE

app = Flask(__name__)


def set_worker_state(state: WorkerState) -> None:
    global worker_state
    worker_state = state


def update_run(run_id: str, **fields) -> None:
    with runs_lock:
        runs[run_id].update(fields)


def _evict_finished() -> None:
    """Drop the oldest done or failed runs until a new one fits. Caller holds runs_lock."""
    finished = [rid for rid, run in runs.items() if run["status"] in ("done", "failed")]
    stale = finished[: max(len(runs) - MAX_RUNS + 1, 0)]
    for rid in stale:
        del runs[rid]
    if stale:
        logger.debug(f"Evicted {len(stale)} finished runs")


@app.route("/status")
def status():
    return {"state": worker_state.name, "queued": command_queue.qsize()}


@app.route("/api/presets")
def get_presets():
    return jsonify({"presets": list_presets()})


@app.route("/api/runs", methods=["POST"])
def submit_run():
    """Queue a scenario given as {"preset": name} or {"config": {...}}, optional "seed"."""
    body = request.get_json(silent=True)
    if not isinstance(body, dict):
        return jsonify({"error": "request body must be a JSON object", "field": ""}), 400
    try:
        if "preset" in body:
            data = preset_data(str(body["preset"]))
        elif "config" in body:
            data = body["config"]
            if not isinstance(data, dict):
                raise ConfigError("config must be a JSON object", "config")
        else:
            raise ConfigError("expected 'preset' or 'config'")
        if body.get("seed") is not None:
            data = {**data, "seed": body["seed"]}
        cfg = validate_config(data)
    except ConfigError as exc:
        return jsonify({"error": str(exc), "field": exc.field_path}), 400

    run_id = uuid.uuid4().hex[:12]
    with runs_lock:
        _evict_finished()
        runs[run_id] = {"id": run_id, "status": "queued", "name": cfg.name, "seed": cfg.seed, "metrics": None}
    command_queue.put((run_id, cfg))
    logger.info(f"Queued run {run_id} ({cfg.name}, seed {cfg.seed})")
    return jsonify({"id": run_id, "status": "queued"}), 202


@app.route("/api/runs/<run_id>")
def get_run(run_id: str):
    with runs_lock:
        run = runs.get(run_id)
        run = dict(run) if run is not None else None
    if run is None:
        return jsonify({"error": f"unknown run '{run_id}'"}), 404
    return jsonify(run)


def run_server(port: int = 5001, host: str = "0.0.0.0") -> None:
    """Run the Flask web server."""
    app.run(host=host, port=port, threaded=True)
