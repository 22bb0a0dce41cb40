"""Provides the command line entrypoint for the adaptive tube MPC simulator. """

import argparse
import logging
import os

from adampc.tube import constants
from adampc.tube.sim import commands


def steps(value: str):
    """Parses a comma separated list of steps, e.g. '0,3,7,20'."""
    try:
        return [int(step) for step in value.split(",") if step.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid step list '{value}'")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(
        description=(
            "Adaptive tube MPC simulator: Runs closed-loop scenarios, compares the "
            "controller modes and checks the runtime monitors."
        )
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    run = subparsers.add_parser("run", help="Simulate one scenario in one mode")
    run.add_argument("--scenario", required=True, help="Path to the scenario file")
    run.add_argument(
        "--mode",
        choices=constants.MODES,
        help="The controller mode, overriding the scenario",
    )
    run.add_argument("--out", help="Directory to write the trace and report to")

    compare = subparsers.add_parser("compare", help="Simulate every mode")
    compare.add_argument("--scenario", required=True, help="Path to the scenario file")
    compare.add_argument("--out", help="Directory to write the results to")

    verify = subparsers.add_parser(
        "verify", help="Exit with non-zero status if any monitor is violated"
    )
    verify.add_argument("--scenario", required=True, help="Path to the scenario file")

    sets = subparsers.add_parser("sets", help="Print the parameter set snapshots")
    sets.add_argument("--scenario", required=True, help="Path to the scenario file")
    sets.add_argument(
        "--at",
        type=steps,
        help="Comma separated steps to snapshot, overriding the scenario",
    )
    sets.add_argument("--out", help="Directory to write the snapshots to")
    arguments = parser.parse_args()

    logging.basicConfig(
        level=os.environ.get(constants.LOG_LEVEL_VARIABLE, "INFO").upper(),
        format="%(asctime)s - %(process)d - [%(levelname)s] %(message)s",
    )

    if arguments.command == "run":
        commands.run(arguments.scenario, mode=arguments.mode, out=arguments.out)
    elif arguments.command == "compare":
        commands.compare(arguments.scenario, out=arguments.out)
    elif arguments.command == "verify":
        commands.verify(arguments.scenario)
    else:
        commands.sets(arguments.scenario, at=arguments.at, out=arguments.out)
