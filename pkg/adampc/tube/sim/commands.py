"""Adaptive tube MPC command line actions.

Each action loads a scenario, runs it, prints a summary and exits with a non-zero
status on failure.

SPDX-License-Identifier: BSD-3-Clause
"""

import logging
import sys
from typing import List

from adampc.tube import constants, helpers
from adampc.tube.__about__ import __version__
from adampc.tube.exceptions import AdaptiveMPCException, MonitorViolationException
from adampc.tube.models import Scenario, load_scenario
from adampc.tube.sim.export import export_artifacts, export_comparison
from adampc.tube.sim.run import compare_modes, run_closed_loop
from colorama import Fore, init


def _load(scenario_file: str) -> Scenario:
    log = logging.getLogger(__name__)

    try:
        return load_scenario(scenario_file)
    except (OSError, AdaptiveMPCException) as err:
        log.fatal(err)
        sys.exit(1)


def run(scenario_file: str, mode: str = None, out: str = None):
    log = logging.getLogger(__name__)

    # Colorama.
    init()

    scenario = _load(scenario_file)
    print(helpers.banner(version=__version__))

    try:
        trace, report = run_closed_loop(scenario, mode)
        if out:
            export_artifacts(trace, report, out)
    except (OSError, AdaptiveMPCException) as err:
        log.fatal(err)
        sys.exit(1)

    print(f"{Fore.GREEN}✔ {report.mode} mode finished {report.steps} steps\n")
    helpers.printi(f"{Fore.YELLOW}J        : {report.cost_index:.6f}")
    helpers.printi(f"{Fore.YELLOW}|x_T|    : {report.final_norm:.3e}")
    helpers.printi(f"{Fore.YELLOW}Bound    : {report.final_bound:.3e}")
    helpers.printi(f"{Fore.YELLOW}Violation: {report.max_violation:.3e}{Fore.RESET}\n")


def compare(scenario_file: str, out: str = None):
    log = logging.getLogger(__name__)

    # Colorama.
    init()

    scenario = _load(scenario_file)
    print(helpers.banner(version=__version__))

    try:
        traces, reports = compare_modes(scenario)
        if out:
            export_comparison(traces, reports, out)
    except (OSError, AdaptiveMPCException) as err:
        log.fatal(err)
        sys.exit(1)

    print(f"{Fore.GREEN}✔ Cost ordering holds over {scenario.t_stp} steps\n")
    for mode, report in reports.items():
        helpers.printi(f"{Fore.YELLOW}{mode:<11}: J = {report.cost_index:.6f}")
    print(Fore.RESET)


def verify(scenario_file: str):
    log = logging.getLogger(__name__)

    # Colorama.
    init()

    scenario = _load(scenario_file)
    print(helpers.banner(version=__version__))

    try:
        _, report = run_closed_loop(scenario)
    except AdaptiveMPCException as err:
        log.fatal(err)
        sys.exit(constants.MONITOR_EXIT_CODE)

    failed = 0
    for name, entry in sorted(report.monitors.items()):
        colour = Fore.RED if entry["violations"] else Fore.GREEN
        failed += entry["violations"]
        helpers.printi(
            f"{colour}{name:<18}: {entry['checks']} checks, "
            f"{entry['violations']} violations, worst margin {entry['worst']:.3e}"
        )
    print(Fore.RESET)

    if failed:
        log.fatal(MonitorViolationException(f"{failed} monitor checks failed"))
        sys.exit(constants.MONITOR_EXIT_CODE)

    print(f"{Fore.GREEN}✨ All monitors hold ✨{Fore.RESET}\n")
    sys.exit(0)


def sets(scenario_file: str, at: List[int] = None, out: str = None):
    log = logging.getLogger(__name__)

    # Colorama.
    init()

    scenario = _load(scenario_file)
    if at is not None:
        scenario = scenario.with_overrides(**{"simulation.snapshots": list(at)})

    try:
        trace, report = run_closed_loop(scenario)
        if out:
            export_artifacts(trace, report, out)
    except (OSError, AdaptiveMPCException) as err:
        log.fatal(err)
        sys.exit(1)

    for step, points in sorted(trace.snapshots.items()):
        print(f"{Fore.BLUE}Θ at k = {step}: {len(points)} vertices{Fore.RESET}")
        for point in points:
            helpers.printi(", ".join(f"{value: .6f}" for value in point))
        print()
