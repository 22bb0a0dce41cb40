"""Scenario models used by adaptive MPC.

SPDX-License-Identifier: BSD-3-Clause
"""

import os
from typing import Any, Dict, List, Optional

import jmespath
import numpy as np
from adampc.tube import constants
from adampc.tube.controller import ConstraintData
from adampc.tube.estimator import EstimatorSettings, ParametricModel
from adampc.tube.exceptions import SchemaException

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

SCENARIO_PATH = os.path.join(os.path.dirname(__file__), "scenarios")

# Alternative names under which bundled scenarios are also published.
SCENARIO_ALIASES = {"paper_sec5.toml": "two_state.toml"}


class ScenarioObject:
    def __init__(self, raw: Dict[str, Any]):
        self._raw = raw

    def by_path(self, path: str, default: Any = None) -> Any:
        """Returns a given field by JMESPath, or the default if not found."""
        candidate = jmespath.search(path, self._raw)

        if candidate is None:
            return default
        else:
            return candidate

    def require(self, path: str) -> Any:
        """Returns a given field by JMESPath, raising if it is missing."""
        candidate = self.by_path(path)

        if candidate is None:
            raise SchemaException(path, "field is required")

        return candidate


def _matrix(value: Any, path: str, rows: int = None, cols: int = None) -> np.ndarray:
    """Converts a nested list into a matrix, naming the field on failure."""
    try:
        candidate = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise SchemaException(path, "expected a matrix of numbers")

    if candidate.ndim == 1:
        column = cols == 1 or (rows is not None and rows > 1 and candidate.size == rows)
        candidate = candidate.reshape(-1, 1) if column else candidate.reshape(1, -1)
    if candidate.ndim != 2:
        raise SchemaException(path, f"expected a matrix, got {candidate.ndim} dims")
    if rows is not None and candidate.shape[0] != rows:
        raise SchemaException(path, f"expected {rows} rows, got {candidate.shape[0]}")
    if cols is not None and candidate.shape[1] != cols:
        raise SchemaException(
            path, f"expected {cols} columns, got {candidate.shape[1]}"
        )

    return candidate


def _vector(value: Any, path: str, size: int = None) -> np.ndarray:
    try:
        candidate = np.array(value, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise SchemaException(path, "expected a list of numbers")

    if size is not None and candidate.size != size:
        raise SchemaException(path, f"expected {size} entries, got {candidate.size}")

    return candidate


def _number(value: Any, path: str, low=None, high=None, inclusive=True) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaException(path, f"expected a number, got {value!r}")

    below = low is not None and (value < low if inclusive else value <= low)
    above = high is not None and (value > high if inclusive else value >= high)
    if below or above:
        interval = f"[{low}, {high}]" if inclusive else f"({low}, {high})"
        raise SchemaException(path, f"{value} is outside {interval}")

    return float(value)


def _integer(value: Any, path: str, low: int = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaException(path, f"expected an integer, got {value!r}")
    if low is not None and value < low:
        raise SchemaException(path, f"{value} is below {low}")

    return value


class Scenario(ScenarioObject):
    """A validated closed-loop scenario.

    Every field is checked when the scenario is constructed, so a Scenario which
    exists is always usable.
    """

    def __init__(self, raw: Dict[str, Any], name: str = "scenario"):
        super().__init__(raw)
        self.name = name
        self.validate()

    @property
    def A0(self) -> np.ndarray:
        return _matrix(self.require("model.A0"), "model.A0")

    @property
    def n_x(self) -> int:
        return self.A0.shape[0]

    @property
    def B0(self) -> np.ndarray:
        return _matrix(self.require("model.B0"), "model.B0", rows=self.n_x)

    @property
    def n_u(self) -> int:
        return self.B0.shape[1]

    @property
    def delta_A(self) -> List[np.ndarray]:
        return [
            _matrix(item, f"model.A[{index}]", self.n_x, self.n_x)
            for index, item in enumerate(self.require("model.A"))
        ]

    @property
    def delta_B(self) -> List[np.ndarray]:
        return [
            _matrix(item, f"model.B[{index}]", self.n_x, self.n_u)
            for index, item in enumerate(self.require("model.B"))
        ]

    @property
    def n_theta(self) -> int:
        return len(self.require("model.A"))

    @property
    def model(self) -> ParametricModel:
        return ParametricModel(self.A0, self.B0, self.delta_A, self.delta_B)

    @property
    def radius(self) -> float:
        return _number(
            self.require("uncertainty.radius"), "uncertainty.radius", 0.0, None, False
        )

    @property
    def theta_true(self) -> np.ndarray:
        return _vector(
            self.require("uncertainty.theta_true"),
            "uncertainty.theta_true",
            self.n_theta,
        )

    @property
    def K(self) -> Optional[np.ndarray]:
        """Returns the feedback gain, or None when it is to be synthesized."""
        candidate = self.by_path("controller.K", "synthesize")
        if candidate == "synthesize":
            return None

        return _matrix(candidate, "controller.K", self.n_u, self.n_x)

    def constraint(self, K: np.ndarray) -> ConstraintData:
        """Returns the constraint data for the given feedback gain."""
        if self.by_path("constraints.F") is not None:
            F = _matrix(self.require("constraints.F"), "constraints.F", cols=self.n_x)
            G = _matrix(
                self.require("constraints.G"),
                "constraints.G",
                rows=F.shape[0],
                cols=self.n_u,
            )
            return ConstraintData(F, G, K)

        bounds = {}
        for key, size in (("x_max", self.n_x), ("u_max", self.n_u)):
            path = f"constraints.{key}"
            bounds[key] = _vector(self.require(path), path, size)
            if np.any(bounds[key] <= 0):
                raise SchemaException(path, "bounds must be positive")

        return ConstraintData.from_bounds(bounds["x_max"], bounds["u_max"], K)

    @property
    def Q(self) -> np.ndarray:
        return _matrix(self.require("cost.Q"), "cost.Q", self.n_x, self.n_x)

    @property
    def R(self) -> np.ndarray:
        return _matrix(self.require("cost.R"), "cost.R", self.n_u, self.n_u)

    @property
    def N(self) -> int:
        return _integer(self.require("controller.N"), "controller.N", 1)

    @property
    def mode(self) -> str:
        candidate = self.by_path("controller.mode", constants.DEFAULT_MODE)
        if candidate not in constants.MODES:
            raise SchemaException(
                "controller.mode", f"expected one of {constants.MODES}"
            )

        return candidate

    @property
    def lambda_c(self) -> float:
        return _number(
            self.by_path("controller.lambda_c", constants.DEFAULT_LAMBDA_C),
            "controller.lambda_c",
            0.0,
            1.0,
            False,
        )

    @property
    def l_max(self) -> int:
        return _integer(
            self.by_path("controller.l_max", constants.DEFAULT_HORIZON_CAP),
            "controller.l_max",
            0,
        )

    @property
    def forgetting(self) -> float:
        return _number(
            self.require("estimator.forgetting"),
            "estimator.forgetting",
            0.0,
            1.0,
            False,
        )

    @property
    def beta(self) -> float:
        return _number(
            self.require("estimator.beta"), "estimator.beta", 0.0, None, False
        )

    @property
    def eps_x(self) -> float:
        return _number(self.require("estimator.eps_x"), "estimator.eps_x", 0.0)

    @property
    def eps_r(self) -> float:
        return _number(self.require("estimator.eps_r"), "estimator.eps_r", 0.0)

    @property
    def kappa(self) -> float:
        return _number(
            self.by_path("estimator.kappa", constants.DEFAULT_KAPPA),
            "estimator.kappa",
            -1.0,
            1.0,
            False,
        )

    @property
    def n_dirs(self) -> int:
        return _integer(
            self.by_path("geometry.n_dirs", constants.DEFAULT_POL_DIRECTIONS),
            "geometry.n_dirs",
            self.n_theta + 1,
        )

    @property
    def max_iter(self) -> int:
        return _integer(
            self.by_path("geometry.max_iter", constants.DEFAULT_MAX_ITER),
            "geometry.max_iter",
            1,
        )

    @property
    def estimator_settings(self) -> EstimatorSettings:
        return EstimatorSettings(
            forgetting=self.forgetting,
            observer_gain=self.kappa * np.eye(self.n_x),
            n_dirs=self.n_dirs,
            eps_x=self.eps_x,
            eps_r=self.eps_r,
        )

    @property
    def x0(self) -> np.ndarray:
        return _vector(self.require("simulation.x0"), "simulation.x0", self.n_x)

    @property
    def t_stp(self) -> int:
        return _integer(
            self.by_path("simulation.t_stp", constants.DEFAULT_T_STP),
            "simulation.t_stp",
            1,
        )

    @property
    def seed(self) -> int:
        return _integer(
            self.by_path("simulation.seed", constants.DEFAULT_SEED),
            "simulation.seed",
            0,
        )

    @property
    def snapshots(self) -> List[int]:
        candidates = self.by_path(
            "simulation.snapshots", list(constants.DEFAULT_SNAPSHOTS)
        )
        steps = [
            _integer(step, f"simulation.snapshots[{index}]", 0)
            for index, step in enumerate(candidates)
        ]

        return sorted(set(step for step in steps if step <= self.t_stp))

    def validate(self):
        """Reads every field once, raising SchemaException on the first problem."""
        self.model
        if len(self.require("model.A")) != len(self.require("model.B")):
            raise SchemaException("model.B", "expected one B delta per A delta")

        theta_true = self.theta_true
        if np.linalg.norm(theta_true) > self.radius:
            raise SchemaException(
                "uncertainty.theta_true", "the true parameter lies outside Θ₀"
            )

        # A placeholder gain is enough to check the constraint shapes.
        K = self.K
        constraint = self.constraint(np.zeros((self.n_u, self.n_x)) if K is None else K)
        state_rows = np.all(constraint.G == 0, axis=1)
        if np.any(constraint.F[state_rows] @ self.x0 >= 1.0):
            raise SchemaException(
                "simulation.x0", "initial state is not strictly inside the constraints"
            )

        for path, matrix in (("cost.Q", self.Q), ("cost.R", self.R)):
            if np.max(np.abs(matrix - matrix.T)) > 1e-12:
                raise SchemaException(path, "matrix is not symmetric")
        if np.min(np.linalg.eigvalsh(self.Q)) < 0:
            raise SchemaException("cost.Q", "matrix is not positive semi-definite")
        if np.min(np.linalg.eigvalsh(self.R)) <= 0:
            raise SchemaException("cost.R", "matrix is not positive definite")

        for field in (
            "N",
            "mode",
            "lambda_c",
            "l_max",
            "beta",
            "eps_x",
            "eps_r",
            "kappa",
            "n_dirs",
            "max_iter",
            "t_stp",
            "seed",
            "snapshots",
        ):
            getattr(self, field)

    def with_overrides(self, **fields: Any) -> "Scenario":
        """Returns a copy with the given dotted fields replaced."""
        raw = {table: dict(values) for table, values in self._raw.items()}
        for path, value in fields.items():
            table, key = path.split(".", 1)
            raw.setdefault(table, {})[key] = value

        return Scenario(raw, name=self.name)

    def to_dict(self) -> Dict[str, Any]:
        return {table: dict(values) for table, values in self._raw.items()}


def bundled_scenarios() -> List[str]:
    """Returns the names of the scenarios shipped with the package."""
    return sorted(
        name for name in os.listdir(SCENARIO_PATH) if name.endswith(".toml")
    )


def load_scenario(path: str) -> Scenario:
    """Loads and validates a scenario file.

    Bundled scenarios may be given by file name alone, e.g. 'two_state.toml',
    or by one of their aliases.
    """
    candidate = os.path.abspath(os.path.expanduser(path))
    if not os.path.exists(candidate):
        bundled = SCENARIO_ALIASES.get(path, path)
        if bundled in bundled_scenarios():
            candidate = os.path.join(SCENARIO_PATH, bundled)

    try:
        with open(candidate, "rb") as fin:
            raw = tomllib.load(fin)
    except tomllib.TOMLDecodeError as err:
        raise SchemaException(os.path.basename(candidate), f"invalid TOML: {err}")

    return Scenario(raw, name=os.path.splitext(os.path.basename(candidate))[0])
