"""
Job service entry point for cbfnav.

A single worker thread consumes web.command_queue and runs the queued
scenarios one at a time while Flask serves the API.
"""

from __future__ import annotations

import logging
import queue
import threading

try:
    from . import web
    from .harness import run_scenario
except ImportError:
    import web
    from harness import run_scenario

logger = logging.getLogger("WORKER")


def process_next(timeout: float = 1.0) -> bool:
    """Run the next queued scenario, if any; returns whether one ran."""
    try:
        run_id, cfg = web.command_queue.get(timeout=timeout)
    except queue.Empty:
        return False

    web.set_worker_state(web.WorkerState.RUNNING)
    web.update_run(run_id, status="running")
    logger.info(f"Running {run_id}")
    try:
        _, metrics = run_scenario(cfg)
        web.update_run(run_id, status="done", metrics=metrics.to_dict())
        logger.info(f"Run {run_id} finished: {metrics.termination}")
    except Exception as exc:
        logger.exception(f"Run {run_id} failed")
        web.update_run(run_id, status="failed", error=f"{type(exc).__name__}: {exc}")
    finally:
        web.set_worker_state(web.WorkerState.IDLE)
        web.command_queue.task_done()
    return True


def worker_loop(stop: threading.Event) -> None:
    logger.info("Worker ready for runs")
    while not stop.is_set():
        process_next()


def main(host: str = "0.0.0.0", port: int = 5001) -> None:
    stop = threading.Event()
    worker = threading.Thread(target=worker_loop, args=(stop,), daemon=True)
    worker.start()
    logger.info(f"Serving on {host}:{port}")
    try:
        web.run_server(port=port, host=host)
    finally:
        stop.set()


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="[%(name)s] %(message)s")
    main()
