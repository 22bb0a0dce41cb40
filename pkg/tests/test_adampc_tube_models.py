"""Tests the scenario models."""

import os
import unittest

import numpy as np
from adampc.tube import models
from adampc.tube.exceptions import SchemaException
from adampc.tube.sim.run import build_controller


class AdaptiveMPCModels(unittest.TestCase):
    """Tests scenario loading and validation."""

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

    def test_bundled_scenarios(self):
        """Ensures the bundled scenarios are listed and load by name."""
        self.assertIn("two_state.toml", models.bundled_scenarios())
        self.assertIn("toy_scalar.toml", models.bundled_scenarios())

        scenario = models.load_scenario("two_state.toml")
        self.assertEqual(scenario.name, "two_state")
        np.testing.assert_array_equal(scenario.A0, [[0.42, -0.28], [0.02, 0.6]])
        np.testing.assert_array_equal(scenario.theta_true, [-0.2, 0.5])
        np.testing.assert_array_equal(scenario.K, [[-0.4187, 1.1562]])
        np.testing.assert_array_equal(scenario.x0, [8.0, 8.0])
        self.assertEqual(scenario.N, 10)
        self.assertEqual(scenario.forgetting, 0.5)
        self.assertEqual(scenario.beta, 0.15)
        self.assertEqual(scenario.eps_x, 0.001)
        self.assertEqual(scenario.eps_r, 0.001)
        self.assertEqual(scenario.n_theta, 2)
        self.assertEqual(scenario.t_stp, 20)
        self.assertEqual(scenario.snapshots, [0, 3, 7, 20])

        # The second parameter direction mirrors the first for A.
        np.testing.assert_array_equal(scenario.delta_A[1], -scenario.delta_A[0])
        np.testing.assert_allclose(scenario.delta_B[1], -1.5 * scenario.delta_B[0])

        # Box bounds become one row per side and signal.
        constraint = scenario.constraint(scenario.K)
        self.assertEqual(constraint.n_con, 6)

    def test_scenario_alias(self):
        """Ensures the two-state scenario also loads under its published name."""
        self.assertNotIn("paper_sec5.toml", models.bundled_scenarios())

        alias = models.load_scenario("paper_sec5.toml")
        scenario = models.load_scenario("two_state.toml")
        self.assertEqual(alias.name, "two_state")
        self.assertEqual(alias.to_dict(), scenario.to_dict())
        np.testing.assert_array_equal(alias.A0, [[0.42, -0.28], [0.02, 0.6]])

    def test_defaults(self):
        """Ensures omitted fields take their documented defaults."""
        scenario = models.load_scenario(self.fixture("certain_scalar.toml"))

        self.assertEqual(scenario.mode, "adaptive")
        self.assertEqual(scenario.lambda_c, 0.95)
        self.assertEqual(scenario.l_max, 50)
        self.assertEqual(scenario.kappa, 0.5)
        self.assertEqual(scenario.max_iter, 500)
        self.assertEqual(scenario.seed, 0)
        self.assertEqual(scenario.snapshots, [0, 3, 7])
        np.testing.assert_array_equal(
            scenario.estimator_settings.observer_gain, [[0.5]]
        )

    def test_synthesized_gain(self):
        """Ensures a missing gain is synthesized for the initial parameter set."""
        scenario = models.load_scenario(self.fixture("synthesize_gain.toml"))
        self.assertIsNone(scenario.K)

        subject = build_controller(scenario)
        K = subject.constraint.K
        self.assertEqual(K.shape, (1, 1))
        for theta in subject.estimator.state.vertices:
            phi = scenario.model.A(theta) + scenario.model.B(theta) @ K
            self.assertLess(abs(phi[0, 0]), 1.0)

    def test_invalid_scenarios(self):
        """Ensures invalid scenarios raise with the offending field path."""
        cases = {
            "theta_outside.toml": "uncertainty.theta_true",
            "missing_horizon.toml": "controller.N",
            "x0_on_boundary.toml": "simulation.x0",
        }
        for name, path in cases.items():
            with self.assertRaises(SchemaException) as context:
                models.load_scenario(self.fixture(name))
            self.assertEqual(context.exception.path, path)

        with self.assertRaises(SchemaException):
            models.load_scenario(self.fixture("invalid.toml"))

        with self.assertRaises(OSError):
            models.load_scenario(self.fixture("missing.toml"))

    def test_overrides(self):
        """Ensures overrides produce a validated copy."""
        scenario = models.load_scenario("toy_scalar.toml")

        changed = scenario.with_overrides(
            **{"controller.mode": "robust", "simulation.t_stp": 5}
        )
        self.assertEqual(changed.mode, "robust")
        self.assertEqual(changed.t_stp, 5)
        self.assertEqual(changed.snapshots, [0, 3])
        self.assertEqual(scenario.mode, "adaptive")

        with self.assertRaises(SchemaException) as context:
            scenario.with_overrides(**{"controller.mode": "optimistic"})
        self.assertEqual(context.exception.path, "controller.mode")

        with self.assertRaises(SchemaException) as context:
            scenario.with_overrides(**{"cost.R": [[-1.0]]})
        self.assertEqual(context.exception.path, "cost.R")


if __name__ == "__main__":
    unittest.main()
