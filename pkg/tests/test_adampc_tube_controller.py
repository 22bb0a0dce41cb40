"""Tests the controller module."""

import itertools
import os
import unittest

import numpy as np
from adampc.tube import controller
from adampc.tube.exceptions import InfeasibleAtStepException
from adampc.tube.models import load_scenario
from adampc.tube.polytope import VertexSet
from adampc.tube.sim.run import build_controller


class AdaptiveMPCController(unittest.TestCase):
    """Tests the tube MPC building blocks on the scalar system."""

    def setUp(self):
        """Ensure the application is setup for testing."""
        self.fixtures_path = os.path.join(
            os.path.dirname(os.path.abspath(__file__)),
            "fixtures/",
        )
        self.scenario = load_scenario("toy_scalar.toml")

    def tearDown(self):
        """Ensure everything is torn down between tests."""
        pass

    def test_constraint_data(self):
        """Ensures box bounds become normalized mixed constraints."""
        constraint = controller.ConstraintData.from_bounds([5.0], [2.0], [[-0.5]])

        self.assertEqual(constraint.n_con, 4)
        np.testing.assert_allclose(
            constraint.closed_loop[:, 0], [0.2, -0.2, -0.25, 0.25]
        )
        self.assertAlmostEqual(constraint.violation([0.0], [0.0]), -1.0)
        self.assertAlmostEqual(constraint.violation([0.0], [3.0]), 0.5)
        self.assertEqual(constraint.state_polytope().n_rows, 4)

    def test_prediction_lift(self):
        """Ensures the lifted stage cost equals the closed-loop stage cost."""
        Q = np.diag([1.0, 2.0])
        R = np.array([[0.5]])
        K = np.array([[-0.4, 1.1]])
        lift = controller.PredictionLift.build(Q, R, K, 3)

        x = np.array([1.0, -2.0])
        v = np.array([0.3, -0.1, 0.7])
        xi = np.concatenate((x, v))
        u = K @ x + v[:1]
        self.assertAlmostEqual(xi @ lift.qbar @ xi, x @ Q @ x + u @ R @ u, places=12)

        # One lifted step applies v₀ and shifts the remaining inputs.
        phi = np.array([[0.5, 0.1], [0.0, 0.4]])
        B = np.array([[1.0], [0.5]])
        successor = lift.lift(phi, B) @ xi
        np.testing.assert_allclose(successor[:2], phi @ x + B @ v[:1])
        np.testing.assert_allclose(successor[2:], [-0.1, 0.7, 0.0])

    def test_prediction_matrices(self):
        """Ensures the stacked predictions match a step by step rollout."""
        phi = np.array([[0.5, 0.1], [0.0, 0.4]])
        B = np.array([[1.0], [0.5]])
        x = np.array([1.0, -2.0])
        v = np.array([0.3, -0.1])

        Sx, Sv = controller.prediction_matrices(phi, B, 2, 4)
        rollout = controller.nominal_rollout(phi, B, x, v, 4)
        for step in range(5):
            np.testing.assert_allclose(Sx[step] @ x + Sv[step] @ v, rollout[step])

    def test_ingredients(self):
        """Ensures the vertex data, horizon and gamma on the scalar system."""
        subject = build_controller(self.scenario)
        np.testing.assert_allclose(np.sort(subject.tube_shape.V[:, 0]), [-0.25, 0.25])

        subject.step(self.scenario.x0)
        vertex_data = subject.vertex_data
        self.assertEqual(vertex_data.n_c, 2)
        self.assertAlmostEqual(vertex_data.contraction, 0.7, places=9)

        # γ̲ₗ = 1.6·0.7ˡ / 0.3 first drops below γ̄ₗ = 1 − 0.7ˡ at l = 6.
        self.assertEqual(subject.terminal.horizon_ext, 6)
        self.assertAlmostEqual(subject.terminal.gamma, 1.0 - 0.7**6, places=8)

        lower, upper = controller.gamma_bounds(
            subject.terminal.terminal_vertices,
            vertex_data,
            subject.tube_shape,
            subject.constraint,
            5,
        )
        self.assertGreater(lower, upper)

    def test_gamma_bounds_per_vertex(self):
        """Ensures the lower bound pairs the offset and spread of each vertex."""
        V = np.array([[1.0], [-1.0]])
        phi = [np.array([[0.7]]), np.array([[0.1]])]
        vertex_data = controller.VertexTransitionData(
            theta_hat=np.zeros(1),
            phi_hat=np.array([[0.6]]),
            B_hat=np.zeros((1, 1)),
            points=np.array([[1.0], [-1.0]]),
            phi=phi,
            B=[np.zeros((1, 1))] * 2,
            dphi=[item - 0.6 for item in phi],
            dB=[np.zeros((1, 1))] * 2,
            H=[item[0, 0] * np.eye(2) for item in phi],
        )
        constraint = controller.ConstraintData(
            F=np.array([[0.5], [-0.5]]), G=np.zeros((2, 1)), K=np.zeros((1, 1))
        )
        tube_shape = controller.TubeShape(V, 0.5 * np.eye(2))

        # The first vertex has offset 0.1 and spread 1.4, the second 0.5 and 0.2.
        lower, upper = controller.gamma_bounds(
            VertexSet([[-1.0], [1.0]]), vertex_data, tube_shape, constraint, 0
        )
        self.assertAlmostEqual(lower, 1.5 / 0.3, places=9)
        self.assertAlmostEqual(upper, 1.0, places=12)

    def test_tube_contains_vertex_realizations(self):
        """Ensures every vertex sequence of the dynamics stays inside the tube."""
        subject = build_controller(self.scenario)
        x0 = self.scenario.x0
        subject.step(x0)

        solution = subject.solution
        model = subject.model
        K = subject.constraint.K
        V = subject.tube_shape.V
        points = subject.vertex_data.points

        for sequence in itertools.product(range(len(points)), repeat=subject.N):
            x = x0
            for step, index in enumerate(sequence):
                error = V @ (x - solution.z_seq[step])
                self.assertTrue(np.all(error <= solution.alpha_seq[step] + 1e-8))

                theta = points[index]
                u = K @ x + solution.v_seq[step]
                x = model.step(theta, x, u)

            error = V @ (x - solution.z_seq[subject.N])
            self.assertTrue(np.all(error <= solution.alpha_seq[subject.N] + 1e-8))

    def test_infeasible_step(self):
        """Ensures an infeasible problem reports the step it happened at."""
        subject = build_controller(self.scenario)

        with self.assertRaises(InfeasibleAtStepException) as context:
            controller.controller_step(subject, np.array([50.0]))
        self.assertEqual(context.exception.step, 0)
        self.assertFalse(subject.monitors.ok)

    def test_modes(self):
        """Ensures the robust mode freezes the estimator and bad modes raise."""
        subject = build_controller(self.scenario, mode="robust")
        self.assertFalse(subject.estimator.enabled)

        _, diagnostics = subject.step(self.scenario.x0)
        self.assertFalse(diagnostics.updated)
        self.assertEqual(diagnostics.bound, 1.0)

        with self.assertRaises(ValueError):
            build_controller(self.scenario, mode="optimistic")

    def test_closed_loop(self):
        """Ensures the monitors hold along a short closed loop."""
        subject = build_controller(self.scenario)
        theta_true = self.scenario.theta_true
        x = self.scenario.x0

        horizons = []
        gammas = []
        for _ in range(8):
            u, diagnostics = controller.controller_step(subject, x)
            x_next = subject.model.step(theta_true, x, u)
            subject.observe(x, u, x_next)
            x = x_next

            horizons.append(diagnostics.horizon_ext)
            gammas.append(diagnostics.gamma)

        self.assertTrue(subject.monitors.ok, subject.monitors.violations)
        self.assertLess(abs(x[0]), abs(self.scenario.x0[0]))
        self.assertTrue(all(a >= b for a, b in zip(horizons, horizons[1:])))
        self.assertTrue(all(a <= b + 1e-9 for a, b in zip(gammas, gammas[1:])))

        summary = subject.monitors.summary()
        self.assertEqual(summary[controller.FEASIBILITY]["checks"], 8)
        self.assertEqual(summary[controller.LYAPUNOV]["checks"], 7)
        self.assertEqual(summary[controller.LYAPUNOV]["violations"], 0)

    def test_monitors(self):
        """Ensures monitor records and their summary."""
        monitors = controller.Monitors()
        self.assertTrue(monitors.check("example", 0, -1.0, 0.0))
        self.assertFalse(monitors.check("example", 1, 0.5, 0.0))

        self.assertFalse(monitors.ok)
        self.assertEqual(len(monitors.violations), 1)
        self.assertEqual(
            monitors.summary(),
            {"example": {"checks": 2, "violations": 1, "worst": 0.5}},
        )


if __name__ == "__main__":
    unittest.main()
