"""Tests the closed-loop simulation, exports and commands."""

import argparse
import filecmp
import json
import os
import tempfile
import unittest

import numpy as np
from adampc.tube import constants
from adampc.tube.models import load_scenario
from adampc.tube.polytope import VertexSet, from_vertices
from adampc.tube.sim import commands, export, run
from adampc.tube.sim.__main__ import steps

# Full Monte-Carlo suites take minutes, so they only run on request.
SLOW_TESTS = os.environ.get("ADAMPC_SLOW_TESTS") == "1"

# Reported costs for the two-state scenario, for information only.
REFERENCE_COST = {"adaptive": 9.2023, "simplified": 9.2524}


class AdaptiveMPCSimulation(unittest.TestCase):
    """Tests the closed loop on the two-state scenario."""

    @classmethod
    def setUpClass(cls):
        cls.scenario = load_scenario("two_state.toml")
        cls.trace, cls.report = run.run_closed_loop(cls.scenario)

    def setUp(self):
        """Ensure the application is setup for testing."""
        self.fixtures_path = os.path.join(
            os.path.dirname(os.path.abspath(__file__)),
            "fixtures/",
        )

    def tearDown(self):
        """Ensure everything is torn down between tests."""
        pass

    def test_convergence(self):
        """Ensures the adaptive closed loop is feasible, safe and converges."""
        report = self.report

        self.assertEqual(report.steps, 21)
        self.assertTrue(report.feasible)
        self.assertLessEqual(report.max_violation, 1e-8)
        self.assertLessEqual(report.final_norm, 0.1)
        self.assertTrue(report.monitors_ok, report.monitors)
        self.assertGreater(report.cost_index, 0.0)

        for name in ("feasibility", "lyapunov", "containment", "cost_certificate"):
            self.assertEqual(report.monitors[name]["violations"], 0)

        # Every estimator update contracted the error energy.
        contraction = report.monitors["energy_contraction"]
        self.assertGreater(contraction["checks"], 0)
        self.assertEqual(contraction["violations"], 0)

    def test_monotone_ingredients(self):
        """Ensures the bound, horizon and gamma sequences are monotone."""
        steps = self.trace.steps

        updates = 0
        for step in steps:
            updates += int(step.updated)
            self.assertAlmostEqual(step.bound, 0.15 * 0.5**updates, places=15)

        horizons = [step.horizon_ext for step in steps]
        gammas = [step.gamma for step in steps]
        self.assertTrue(all(a >= b for a, b in zip(horizons, horizons[1:])))
        self.assertTrue(all(a <= b + 1e-9 for a, b in zip(gammas, gammas[1:])))

        residuals = [step.lyapunov_residual for step in steps[1:]]
        self.assertTrue(all(value <= 1e-5 for value in residuals))

    def test_snapshots(self):
        """Ensures the parameter set snapshots are nested."""
        snapshots = self.trace.snapshots
        self.assertEqual(sorted(snapshots), [0, 3, 7, 20])

        for outer, inner in ((0, 3), (3, 7), (7, 20)):
            hull = from_vertices(VertexSet(snapshots[outer]))
            self.assertTrue(np.all(hull.contains(np.array(snapshots[inner]))))

        # The true parameter survives in the final set.
        final = from_vertices(VertexSet(snapshots[20]))
        self.assertTrue(final.contains(self.scenario.theta_true))

    def test_export(self):
        """Ensures exported files reproduce the report and are stable."""
        with tempfile.TemporaryDirectory() as directory:
            first = export.export_artifacts(
                self.trace, self.report, os.path.join(directory, "first")
            )
            second = export.export_artifacts(
                self.trace, self.report, os.path.join(directory, "second")
            )

            names = [os.path.basename(path) for path in first]
            self.assertEqual(
                names,
                [
                    "trace.csv",
                    "sets_k0.json",
                    "sets_k3.json",
                    "sets_k7.json",
                    "sets_k20.json",
                    "report.json",
                ],
            )
            for left, right in zip(first, second):
                self.assertTrue(filecmp.cmp(left, right, shallow=False))

            # The score recomputed from the CSV matches the report, with the
            # terminal stage k = 20 included.
            rows = export.read_trace(first[0])
            self.assertEqual([row["k"] for row in rows], list(range(21)))
            total = 0.0
            for row in rows:
                x = np.array(row["x"])
                u = np.array(row["u"])
                total += float(x @ self.scenario.Q @ x + u @ self.scenario.R @ u)
            self.assertAlmostEqual(total / 20, self.report.cost_index, places=12)

            # Snapshots load back as vertex sets.
            for path, step in zip(first[1:5], (0, 3, 7, 20)):
                with open(path, "r") as fin:
                    document = json.load(fin)
                self.assertEqual(sorted(document), ["points"])
                np.testing.assert_array_equal(
                    VertexSet.from_dict(document).points, self.trace.snapshots[step]
                )

    def test_empty_trace(self):
        """Ensures an empty trace is exported as a header only CSV."""
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, constants.TRACE_FILE)
            export.write_trace(run.TraceRecord("empty", "adaptive"), path)

            with open(path, "r") as fin:
                self.assertEqual(fin.read(), ",".join(constants.TRACE_FIELDS) + "\n")

    def test_reference_cost(self):
        """Ensures the cost index is reported next to the published value."""
        reference = REFERENCE_COST["adaptive"]
        deviation = abs(self.report.cost_index - reference) / reference
        print(
            f"\nJ(adaptive) = {self.report.cost_index:.4f}, reference {reference} "
            f"({100 * deviation:.1f}% apart)"
        )
        self.assertTrue(np.isfinite(self.report.cost_index))


class AdaptiveMPCComparison(unittest.TestCase):
    """Tests mode comparisons and the command line actions."""

    def setUp(self):
        """Ensure the application is setup for testing."""
        self.fixtures_path = os.path.join(
            os.path.dirname(os.path.abspath(__file__)),
            "fixtures/",
        )

    def tearDown(self):
        """Ensure everything is torn down between tests."""
        pass

    def fixture(self, name: str) -> str:
        return os.path.join(self.fixtures_path, "scenarios", name)

    def test_certain_system(self):
        """Ensures every mode costs the same without parameter uncertainty."""
        scenario = load_scenario(self.fixture("certain_scalar.toml"))
        _, reports = run.compare_modes(scenario)

        costs = [reports[mode].cost_index for mode in constants.MODES]
        self.assertLessEqual(max(costs) - min(costs), 1e-9)

        summary = run.comparison_summary(reports)
        self.assertEqual(sorted(summary["modes"]), sorted(constants.MODES))
        self.assertEqual(summary["t_stp"], 10)

    def test_two_state_ordering(self):
        """Ensures adaptive ≤ simplified ≤ robust on the two-state scenario."""
        scenario = load_scenario("two_state.toml")
        _, reports = run.compare_modes(scenario)

        costs = [reports[mode].cost_index for mode in constants.MODES]
        self.assertLessEqual(costs[0], costs[1] + 1e-9)
        self.assertLessEqual(costs[1], costs[2] + 1e-9)
        for report in reports.values():
            self.assertTrue(report.feasible)

    def test_large_residual_draw(self):
        """Ensures a draw whose QPs end with large OSQP residuals stays feasible."""
        scenario = load_scenario("two_state.toml")
        theta_true = run.draw_parameters(scenario, 50)[5]
        np.testing.assert_allclose(theta_true, [-0.5906, -0.4389], atol=1e-4)

        _, report = run.run_closed_loop(scenario, theta_true=theta_true)

        self.assertTrue(report.feasible)
        self.assertEqual(report.steps, 21)
        for name in ("feasibility", "containment", "error_energy"):
            self.assertEqual(report.monitors[name]["violations"], 0, name)

    def test_repeatable_runs(self):
        """Ensures a run exports identical files after other runs in the process."""
        scenario = load_scenario("toy_scalar.toml")

        with tempfile.TemporaryDirectory() as directory:
            trace, report = run.run_closed_loop(scenario)
            first = export.export_artifacts(
                trace, report, os.path.join(directory, "first")
            )

            run.compare_modes(load_scenario(self.fixture("certain_scalar.toml")))
            run.run_closed_loop(scenario, mode="robust")

            trace, report = run.run_closed_loop(scenario)
            second = export.export_artifacts(
                trace, report, os.path.join(directory, "second")
            )

            for left, right in zip(first, second):
                self.assertTrue(filecmp.cmp(left, right, shallow=False), left)

    def test_ordering(self):
        """Ensures an ordering violation is raised."""
        reports = {
            mode: run.PerformanceReport(
                scenario="example",
                mode=mode,
                t_stp=1,
                cost_index=cost,
                steps=1,
                feasible=True,
                max_violation=0.0,
                final_norm=0.0,
                final_bound=0.0,
                theta_true=[0.0],
                monitors_ok=True,
                monitors={},
            )
            for mode, cost in zip(constants.MODES, (1.0, 2.0, 1.5))
        }
        with self.assertRaises(run.OrderingViolationException):
            run.check_ordering(reports)

        reports["robust"].cost_index = 2.0 + 1e-12
        run.check_ordering(reports)

    def test_draw_parameters(self):
        """Ensures parameter draws are seeded and lie inside the initial set."""
        scenario = load_scenario("two_state.toml")
        first = run.draw_parameters(scenario, 20)
        second = run.draw_parameters(scenario, 20)

        for left, right in zip(first, second):
            np.testing.assert_array_equal(left, right)
            self.assertLessEqual(np.linalg.norm(left), scenario.radius)

    def test_commands(self):
        """Ensures the command line actions write files and exit correctly."""
        with tempfile.TemporaryDirectory() as directory:
            commands.run("toy_scalar.toml", mode="simplified", out=directory)
            self.assertTrue(
                os.path.exists(os.path.join(directory, constants.REPORT_FILE))
            )
            self.assertTrue(os.path.exists(os.path.join(directory, "sets_k15.json")))

        with self.assertRaises(SystemExit) as context:
            commands.verify("toy_scalar.toml")
        self.assertEqual(context.exception.code, 0)

        with self.assertRaises(SystemExit) as context:
            commands.run(self.fixture("theta_outside.toml"))
        self.assertEqual(context.exception.code, 1)

        commands.sets("toy_scalar.toml", at=[0, 2])

    def test_step_list(self):
        """Ensures the --at option parses comma separated steps."""
        self.assertEqual(steps("0,3, 7,20"), [0, 3, 7, 20])
        self.assertEqual(steps("5,"), [5])

        with self.assertRaises(argparse.ArgumentTypeError):
            steps("0,three")


@unittest.skipUnless(SLOW_TESTS, "set ADAMPC_SLOW_TESTS=1 to run")
class AdaptiveMPCMonteCarlo(unittest.TestCase):
    """Tests the guarantees over randomized true parameters."""

    def setUp(self):
        """Ensure the application is setup for testing."""
        self.scenario = load_scenario("two_state.toml")

    def test_random_rollouts(self):
        """Ensures containment, feasibility and decrease over 50 rollouts."""
        for theta_true in run.draw_parameters(self.scenario, 50):
            _, report = run.run_closed_loop(self.scenario, theta_true=theta_true)

            self.assertTrue(report.feasible)
            for name in (
                "containment",
                "error_energy",
                "energy_contraction",
                "lyapunov",
                "constraint",
            ):
                self.assertEqual(report.monitors[name]["violations"], 0, name)

    def test_random_ordering(self):
        """Ensures the cost ordering of the modes over 20 draws."""
        for theta_true in run.draw_parameters(self.scenario, 20):
            run.compare_modes(self.scenario, theta_true)

    def test_compare_determinism(self):
        """Ensures two comparisons write byte-identical directories."""
        with tempfile.TemporaryDirectory() as directory:
            outputs = []
            for name in ("first", "second"):
                traces, reports = run.compare_modes(self.scenario)
                outputs.append(
                    export.export_comparison(
                        traces, reports, os.path.join(directory, name)
                    )
                )

            for left, right in zip(*outputs):
                self.assertTrue(filecmp.cmp(left, right, shallow=False))

        for mode, reference in REFERENCE_COST.items():
            cost = reports[mode].cost_index
            print(f"\nJ({mode}) = {cost:.4f}, reference {reference}")


if __name__ == "__main__":
    unittest.main()
