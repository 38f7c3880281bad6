"""Command line: run scenario configs, list presets, validate configs."""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace

from . import presets
from .dynamics import StepFailure
from .io import ParseError, ValidationError, parse_config, render_config, write_outputs
from .scenarios import run_incline_test, run_shape_comparison, run_tumbling_sweep

RUNNERS = {
    "tumbling_sweep": run_tumbling_sweep,
    "incline_test": run_incline_test,
    "shape_comparison": run_shape_comparison,
}


def _load(path):
    with open(path) as fh:
        return parse_config(fh.read())


def cmd_run(args):
    config = _load(args.config)
    if args.output_dir:
        config = replace(config, output_dir=args.output_dir)
    if args.step_size:
        spec = replace(config.scenario, step_s=args.step_size)
        config = replace(config, scenario=spec)
    started = time.time()
    result = RUNNERS[config.scenario.kind](config.scenario)
    failures = [p for p in result.points if p.failure]
    files = write_outputs(result, config, started_at=started)
    for path in files:
        print(path)
    if failures:
        for p in failures:
            print(f"sweep point failed: {p.failure}", file=sys.stderr)
        return 1
    return 0


def cmd_presets(args):
    for name in presets.PRESET_NAMES:
        robot = presets.ROBOTS[name]
        sub = presets.SUBSTRATES[name]
        print(
            f"{name}: mass {robot.mass} kg, magnetization {robot.magnetization} A/m, "
            f"adhesion {sub.adhesion_coefficient} N/m^2, friction {sub.mu}, "
            f"electrostatic {sub.electrostatic_force} N"
        )
    return 0


def cmd_check(args):
    config = _load(args.config)
    sys.stdout.write(render_config(config))
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="tumblesim",
        description="Contact-implicit tumbling microrobot simulations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario config")
    p_run.add_argument("config", help="YAML config path")
    p_run.add_argument("--output-dir", help="override the config's output_dir")
    p_run.add_argument(
        "--step-size", type=float, help="override the integration step (s)"
    )
    p_run.set_defaults(fn=cmd_run)

    p_presets = sub.add_parser("presets", help="list built-in parameter sets")
    p_presets.set_defaults(fn=cmd_presets)

    p_check = sub.add_parser("check", help="validate a config and echo defaults")
    p_check.add_argument("config", help="YAML config path")
    p_check.set_defaults(fn=cmd_check)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ParseError, ValidationError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except StepFailure as err:
        print(f"simulation failed: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
