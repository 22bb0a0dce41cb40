"""Tests the estimator module."""

import os
import unittest
from dataclasses import replace

import numpy as np
from adampc.tube import estimator
from adampc.tube.exceptions import UnstableException
from adampc.tube.models import load_scenario
from adampc.tube.polytope import from_vertices
from adampc.tube.sim.run import draw_parameters


class AdaptiveMPCEstimator(unittest.TestCase):
    """Tests the parameter estimator and the feasible solution set."""

    def setUp(self):
        """Ensure the application is setup for testing."""
        self.fixtures_path = os.path.join(
            os.path.dirname(os.path.abspath(__file__)),
            "fixtures/",
        )
        self.scenario = load_scenario("two_state.toml")
        self.model = self.scenario.model

    def tearDown(self):
        """Ensure everything is torn down between tests."""
        pass

    def build(self, **kwargs) -> estimator.Estimator:
        return estimator.Estimator(
            self.model,
            self.scenario.x0,
            self.scenario.radius,
            self.scenario.beta,
            self.scenario.estimator_settings,
            **kwargs,
        )

    def rollout(self, theta_true, steps=20):
        """Drives the estimator with a stabilizing, excited input.

        Returns the estimator states seen after each update.
        """
        subject = self.build()
        K = self.scenario.K
        x = self.scenario.x0
        states = []

        for k in range(steps):
            subject.update()
            states.append(subject.state)

            u = K @ x + 0.5 * np.array([np.sin(1.3 * k)])
            x_next = self.model.step(theta_true, x, u)
            subject.observe(x, u, x_next)
            x = x_next

        return subject, states

    def test_parametric_model(self):
        """Ensures the model is affine in the parameter."""
        theta = np.array([-0.2, 0.5])
        A = self.model.A(theta)
        expected = np.array([[0.42, -0.28], [0.02, 0.6]]) - 0.7 * np.array(
            [[-0.12, -0.08], [-0.12, -0.17]]
        )
        np.testing.assert_allclose(A, expected, atol=1e-12)
        np.testing.assert_allclose(
            self.model.B(theta), [[0.3 - 0.008 - 0.03], [-0.4 + 0.016 + 0.06]]
        )
        self.assertEqual(self.model.n_theta, 2)

        # The regressor reproduces the parameter dependent part of the step.
        x = np.array([1.0, -2.0])
        u = np.array([0.5])
        g = estimator.regressor(self.model, x, u)
        np.testing.assert_allclose(
            self.model.step(theta, x, u),
            self.model.base_A @ x + self.model.base_B @ u + g @ theta,
            atol=1e-12,
        )

        with self.assertRaises(ValueError):
            estimator.ParametricModel(np.eye(2), np.ones((2, 1)), [], [])

    def test_initial_state(self):
        """Ensures the estimator starts at the centre of the initial set."""
        state = self.build().state

        np.testing.assert_array_equal(state.theta_hat, [0.0, 0.0])
        np.testing.assert_array_equal(state.gamma, 0.15 * np.eye(2))
        self.assertAlmostEqual(state.bound, 0.15, places=15)
        self.assertEqual(len(state.vertices), 8)
        self.assertTrue(state.fss.contains(self.scenario.theta_true))

    def test_recursions(self):
        """Ensures the filter, prediction and auxiliary recursions on one step."""
        state = self.build().state
        x = np.array([1.0, 0.0])
        u = np.array([0.0])

        g = estimator.regressor(self.model, x, u)
        np.testing.assert_allclose(g, [[-0.12, 0.12], [-0.12, 0.12]], atol=1e-15)

        # Holding (x, u) for two steps with K_e = 0.5·I leaves half the regressor.
        first = estimator.filter_update(state, self.model, x, u)
        np.testing.assert_array_equal(first, g)
        held = replace(state, filter_w=first)
        second = estimator.filter_update(held, self.model, x, u)
        np.testing.assert_allclose(second, 0.5 * g, atol=1e-15)

        # A perfect estimate with no error predicts the true next state.
        theta_true = self.scenario.theta_true
        exact = replace(state, theta_hat=theta_true, filter_w=second)
        np.testing.assert_allclose(
            estimator.predict_state(exact, self.model, x, u, theta_true),
            self.model.step(theta_true, x, u),
            atol=1e-15,
        )

        eta = np.array([0.2, -0.4])
        np.testing.assert_allclose(
            estimator.eta_update(replace(state, eta=eta)), [-0.1, 0.2]
        )
        self.assertAlmostEqual(estimator.bound_update(state), 0.075, places=15)

    def test_unstable_observer(self):
        """Ensures an observer gain outside the unit circle is rejected."""
        settings = replace(
            self.scenario.estimator_settings, observer_gain=1.5 * np.eye(2)
        )
        with self.assertRaises(UnstableException):
            estimator.Estimator(self.model, self.scenario.x0, 1.0, 0.15, settings)

    def test_should_update(self):
        """Ensures the termination criterion is inclusive of its thresholds."""
        state = self.build().state
        frozen = replace(state, x_tilde=np.zeros(2), bound=1e-4)
        self.assertFalse(estimator.should_update(frozen, 1e-3, 1e-3))

        at_threshold = replace(frozen, x_tilde=np.array([1e-3, 0.0]))
        self.assertTrue(estimator.should_update(at_threshold, 1e-3, 1e-3))
        self.assertTrue(
            estimator.should_update(replace(frozen, bound=1e-3), 1e-3, 1e-3)
        )

    def test_disabled(self):
        """Ensures a disabled estimator never moves."""
        subject = self.build(enabled=False)
        initial = subject.state

        self.assertFalse(subject.update())
        self.assertIs(subject.state.fss, initial.fss)
        self.assertEqual(subject.state.bound, initial.bound)

    def test_rollout(self):
        """Ensures containment, nesting and the bound recursion along a rollout."""
        theta_true = self.scenario.theta_true
        subject, states = self.rollout(theta_true)

        previous = None
        updates = 0
        for state in states:
            energy = estimator.error_energy(state, theta_true)
            self.assertTrue(state.fss.contains(theta_true))
            self.assertLessEqual(energy - state.bound, 1e-9)

            if previous is not None:
                hull = from_vertices(previous.vertices)
                self.assertTrue(np.all(hull.contains(state.vertices.points)))

                # Every update contracts θ̃ᵀΓθ̃ by at least the forgetting factor.
                if state.bound < previous.bound:
                    updates += 1
                    contracted = 0.5 * estimator.error_energy(previous, theta_true)
                    self.assertLessEqual(energy - contracted, 1e-9)
                else:
                    np.testing.assert_array_equal(state.theta_hat, previous.theta_hat)
            previous = state

        # The bound halves on every update.
        self.assertGreater(updates, 0)
        self.assertAlmostEqual(
            states[-1].bound, 0.15 * 0.5 ** (updates + 1), places=15
        )
        self.assertGreater(subject.excitation_level(), 0.0)

    def test_rls_update(self):
        """Ensures the RLS step on the scalar and degenerate cases."""
        state = self.build().state

        # One parameter, w = 1, Γ = 1, λ = 0.5 and x̃ − η = 0.3.
        scalar = replace(
            state,
            theta_hat=np.array([0.1]),
            gamma=np.eye(1),
            filter_w=np.array([[1.0], [0.0]]),
            eta=np.zeros(2),
        )
        theta, gamma = estimator.rls_update(scalar, np.array([0.3, 0.0]))
        np.testing.assert_allclose(gamma, [[1.5]], atol=1e-15)
        np.testing.assert_allclose(theta, [0.3], atol=1e-15)

        # Without excitation only the forgetting factor acts.
        excited = replace(
            state,
            theta_hat=np.array([-0.1, 0.2]),
            gamma=np.array([[0.3, 0.1], [0.1, 0.2]]),
        )
        idle = replace(excited, filter_w=np.zeros((2, 2)))
        theta, gamma = estimator.rls_update(idle, np.array([0.4, -0.7]))
        np.testing.assert_allclose(gamma, 0.5 * excited.gamma, atol=1e-15)
        np.testing.assert_allclose(theta, excited.theta_hat, atol=1e-15)

        # No innovation leaves the estimate in place while Γ still grows.
        w = np.array([[1.0, -0.5], [0.25, 2.0]])
        eta = np.array([0.4, -0.7])
        quiet = replace(excited, filter_w=w, eta=eta)
        theta, gamma = estimator.rls_update(quiet, eta)
        np.testing.assert_allclose(gamma, 0.5 * excited.gamma + w.T @ w, atol=1e-15)
        np.testing.assert_allclose(theta, excited.theta_hat, atol=1e-15)

    def test_random_rollouts(self):
        """Ensures the true parameter is never excluded for random draws."""
        for theta_true in draw_parameters(self.scenario, 10):
            _, states = self.rollout(theta_true, steps=12)
            for state in states:
                self.assertTrue(state.fss.contains(theta_true))
                self.assertLessEqual(
                    estimator.error_energy(state, theta_true) - state.bound, 1e-9
                )


if __name__ == "__main__":
    unittest.main()
