"""Closed-loop simulation and performance scoring.

The plant is the scenario model under the true parameter θ*, driven by the adaptive
tube MPC in one of its modes. The plant has no stochastic elements, so a run is fully
determined by its scenario. The seed only drives randomized parameter draws.

SPDX-License-Identifier: BSD-3-Clause
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from adampc.tube import constants
from adampc.tube.controller import (
    FEASIBILITY,
    AdaptiveTubeMPC,
    StepDiagnostics,
    controller_step,
)
from adampc.tube.estimator import Estimator
from adampc.tube.exceptions import OrderingViolationException
from adampc.tube.helpers import as_vector
from adampc.tube.models import Scenario
from adampc.tube.solvers import synthesize_gain


@dataclass
class TraceRecord:
    """Per step diagnostics of one run, plus the Θ̄ₖ snapshots."""

    scenario: str
    mode: str
    steps: List[StepDiagnostics] = field(default_factory=list)
    snapshots: Dict[int, List[List[float]]] = field(default_factory=dict)
    final_state: Optional[List[float]] = None


@dataclass
class PerformanceReport:
    scenario: str
    mode: str
    t_stp: int
    cost_index: float
    steps: int
    feasible: bool
    max_violation: float
    final_norm: float
    final_bound: float
    theta_true: List[float]
    monitors_ok: bool
    monitors: Dict[str, Dict[str, Any]]

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


def performance_index(
    steps: List[StepDiagnostics], Q: np.ndarray, R: np.ndarray, t_stp: int
) -> float:
    """Returns J̄ₚ = Σ(xᵀQx + uᵀRu) / T_stp over the recorded steps.

    The trace holds the stages k = 0…T_stp, so the sum has T_stp + 1 terms.
    """
    total = 0.0
    for step in steps:
        x = np.asarray(step.x, dtype=float)
        u = np.asarray(step.u, dtype=float)
        total += float(x @ Q @ x + u @ R @ u)

    return total / t_stp


def draw_parameters(scenario: Scenario, count: int) -> List[np.ndarray]:
    """Draws parameters uniformly from the ball Θ₀, seeded by the scenario."""
    rng = np.random.default_rng(scenario.seed)
    n_theta = scenario.n_theta

    draws = []
    for _ in range(count):
        direction = rng.normal(size=n_theta)
        direction /= np.linalg.norm(direction)
        radius = scenario.radius * rng.uniform() ** (1.0 / n_theta)
        draws.append(radius * direction)

    return draws


def build_controller(
    scenario: Scenario, mode: str = None, theta_true: Any = None
) -> AdaptiveTubeMPC:
    """Builds the estimator and controller for a scenario.

    A missing gain is synthesized for the vertices of the initial parameter set.
    """
    model = scenario.model
    estimator = Estimator(
        model,
        scenario.x0,
        scenario.radius,
        scenario.beta,
        scenario.estimator_settings,
    )

    K = scenario.K
    if K is None:
        pairs = [(model.A(theta), model.B(theta)) for theta in estimator.state.vertices]
        K = synthesize_gain(pairs, scenario.Q, scenario.R)

    return AdaptiveTubeMPC(
        model,
        scenario.constraint(K),
        scenario.Q,
        scenario.R,
        scenario.N,
        estimator,
        mode=mode or scenario.mode,
        lambda_c=scenario.lambda_c,
        l_max=scenario.l_max,
        max_iter=scenario.max_iter,
        theta_true=scenario.theta_true if theta_true is None else theta_true,
    )


def run_closed_loop(
    scenario: Scenario, mode: str = None, theta_true: Any = None
) -> Tuple[TraceRecord, PerformanceReport]:
    """Simulates the closed loop over the stages k = 0…T_stp.

    InfeasibleAtStepException is propagated, carrying the failing step.
    """
    log = logging.getLogger(__name__)

    mode = mode or scenario.mode
    theta_true = as_vector(
        scenario.theta_true if theta_true is None else theta_true, scenario.n_theta
    )
    controller = build_controller(scenario, mode, theta_true)
    model = scenario.model
    snapshots = set(scenario.snapshots)

    trace = TraceRecord(scenario=scenario.name, mode=mode)
    x = scenario.x0
    log.info(f"Running '{scenario.name}' in {mode} mode for {scenario.t_stp} steps")

    # The terminal stage k = T_stp is solved for its input but not applied.
    for k in range(scenario.t_stp + 1):
        if k in snapshots:
            trace.snapshots[k] = controller.estimator.state.vertices.points.tolist()

        u, diagnostics = controller_step(controller, x)
        trace.steps.append(diagnostics)
        if k == scenario.t_stp:
            break

        x_next = model.step(theta_true, x, u)
        controller.observe(x, u, x_next)
        x = x_next

    trace.final_state = x.tolist()

    violations = [
        controller.constraint.violation(step.x, step.u) for step in trace.steps
    ]
    report = PerformanceReport(
        scenario=scenario.name,
        mode=mode,
        t_stp=scenario.t_stp,
        cost_index=performance_index(
            trace.steps, scenario.Q, scenario.R, scenario.t_stp
        ),
        steps=len(trace.steps),
        feasible=not any(
            record.violated
            for record in controller.monitors.records
            if record.name == FEASIBILITY
        ),
        max_violation=max(violations, default=0.0),
        final_norm=float(np.linalg.norm(x)),
        final_bound=controller.estimator.state.bound,
        theta_true=theta_true.tolist(),
        monitors_ok=controller.monitors.ok,
        monitors=controller.monitors.summary(),
    )
    log.info(
        f"Finished {mode} mode: J = {report.cost_index:.4f}, "
        f"final |x| = {report.final_norm:.2e}"
    )

    return trace, report


def check_ordering(reports: Dict[str, PerformanceReport]):
    """Raises unless J̄ₚ(adaptive) ≤ J̄ₚ(simplified) ≤ J̄ₚ(robust), up to a slack."""
    for better, worse in zip(constants.MODES, constants.MODES[1:]):
        first = reports[better].cost_index
        second = reports[worse].cost_index
        if first > second + constants.ORDERING_TOLERANCE:
            raise OrderingViolationException(
                f"J({better}) = {first:.6f} exceeds J({worse}) = {second:.6f}"
            )


def compare_modes(
    scenario: Scenario, theta_true: Any = None
) -> Tuple[Dict[str, TraceRecord], Dict[str, PerformanceReport]]:
    """Runs every mode with the same θ* and x₀, then checks the cost ordering."""
    traces = {}
    reports = {}
    for mode in constants.MODES:
        traces[mode], reports[mode] = run_closed_loop(scenario, mode, theta_true)

    check_ordering(reports)

    return traces, reports


def comparison_summary(reports: Dict[str, PerformanceReport]) -> Dict[str, Any]:
    """Returns the per mode cost summary written by compare."""
    first = next(iter(reports.values()))

    return {
        "scenario": first.scenario,
        "t_stp": first.t_stp,
        "theta_true": first.theta_true,
        "modes": {
            mode: {
                "cost_index": report.cost_index,
                "feasible": report.feasible,
                "final_norm": report.final_norm,
                "monitors_ok": report.monitors_ok,
            }
            for mode, report in reports.items()
        },
    }
