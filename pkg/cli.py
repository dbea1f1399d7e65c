"""
Command Line Interface module for cbfnav.

Subcommands:
    run      Run a scenario from a JSON config file
    preset   Run a shipped preset (run1, run2)
    sweep    Run one scenario per value of a config field
    verify   Run the oracle and invariant checks
    serve    Start the job-submission web service
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Any, Sequence

try:
    from .config import ScenarioConfig, list_presets, load_config, load_preset, preset_data
    from .errors import CbfNavError, ConfigError
    from .harness import Simulation, resolve_output_dir, run_sweep, write_artifacts, write_sweep
    from .verify import run_checks
except ImportError:
    from config import ScenarioConfig, list_presets, load_config, load_preset, preset_data
    from errors import CbfNavError, ConfigError
    from harness import Simulation, resolve_output_dir, run_sweep, write_artifacts, write_sweep
    from verify import run_checks

logger = logging.getLogger("CLI")

EXIT_OK = 0
EXIT_FAULT = 1
EXIT_CONFIG = 2
EXIT_VERIFY = 3


def configure_logging(verbose: bool = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="[%(name)s] %(message)s",
        force=True,
    )


def parse_value(text: str) -> Any:
    """Sweep values are JSON literals; anything else is taken as a string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _with_seed(cfg: ScenarioConfig, seed: int | None) -> ScenarioConfig:
    return cfg if seed is None else cfg.model_copy(update={"seed": seed})


def _run(cfg: ScenarioConfig, out: str | None) -> int:
    sim = Simulation(cfg)
    _, metrics = sim.run()
    out_dir = resolve_output_dir(out)
    if sim.records:
        write_artifacts(sim, metrics, out_dir)
    print(f"termination:     {metrics.termination}")
    print(f"flight time:     {metrics.flight_time:.2f} s")
    print(f"landing error:   {metrics.landing_error:.4f} m")
    print(f"breach duration: {metrics.breach_duration:.3f} s")
    print(f"success:         {metrics.success}")
    return EXIT_OK if metrics.success else EXIT_FAULT


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _with_seed(load_config(args.config), args.seed)
    return _run(cfg, args.out)


def cmd_preset(args: argparse.Namespace) -> int:
    return _run(load_preset(args.name, args.seed), args.out)


def cmd_sweep(args: argparse.Namespace) -> int:
    if args.config:
        with open(args.config, "r", encoding="utf-8") as f:
            try:
                base = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    else:
        base = preset_data(args.preset)
    values = [parse_value(v) for v in args.values]
    rows = run_sweep(base, args.param, values, jobs=args.jobs, progress=not args.quiet)
    out_dir = resolve_output_dir(args.out)
    for path in write_sweep(rows, args.param, out_dir):
        logger.info(f"Wrote {path}")

    print(f"{args.param:>20}  success  termination       landing_error")
    for row in rows:
        m = row["metrics"]
        print(f"{json.dumps(row['value']):>20}  {str(m['success']):7}  {m['termination']:16}  {m['landing_error']:.4f}")
    return EXIT_OK if all(row["metrics"]["success"] for row in rows) else EXIT_FAULT


def cmd_verify(args: argparse.Namespace) -> int:
    results = run_checks(args.checks or None)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        print(f"Failed: {', '.join(failed)}")
        return EXIT_VERIFY
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    try:
        from .app import main as serve_main
    except ImportError:
        from app import main as serve_main
    serve_main(host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cbfnav", description="Switched-CBF quadrotor landing simulator")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario config file")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.set_defaults(func=cmd_run)

    preset = sub.add_parser("preset", help=f"run a shipped preset ({', '.join(list_presets())})")
    preset.add_argument("name")
    preset.add_argument("--seed", type=int)
    preset.add_argument("--out")
    preset.set_defaults(func=cmd_preset)

    sweep = sub.add_parser("sweep", help="run one scenario per value of a config field")
    source = sweep.add_mutually_exclusive_group(required=True)
    source.add_argument("--config")
    source.add_argument("--preset")
    sweep.add_argument("--param", required=True, help="dotted field path, e.g. wind.mean")
    sweep.add_argument("--values", nargs="+", required=True, help="JSON literals")
    sweep.add_argument("--jobs", type=int, default=1)
    sweep.add_argument("--out")
    sweep.add_argument("--quiet", action="store_true", help="no progress bar")
    sweep.set_defaults(func=cmd_sweep)

    verify = sub.add_parser("verify", help="run the oracle and invariant checks")
    verify.add_argument("checks", nargs="*")
    verify.set_defaults(func=cmd_verify)

    serve = sub.add_parser("serve", help="start the job-submission service")
    serve.add_argument("--host", default="0.0.0.0")
    serve.add_argument("--port", type=int, default=5001)
    serve.set_defaults(func=cmd_serve)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        return args.func(args)
    except ConfigError as exc:
        logger.error(f"Configuration error: {exc}")
        return EXIT_CONFIG
    except OSError as exc:
        logger.error(f"I/O error: {exc}")
        return EXIT_CONFIG
    except CbfNavError as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
