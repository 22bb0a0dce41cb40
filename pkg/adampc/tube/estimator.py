"""Recursive least squares estimation of the uncertain parameters.

The estimator filters the regressor, predicts the next state, updates the
parameter estimate by RLS with forgetting and maintains the feasible solution set
Θ̄ₖ, a polytope which only ever shrinks and always holds the true parameter.

SPDX-License-Identifier: BSD-3-Clause
"""

import logging
from collections import deque
from dataclasses import dataclass, replace
from typing import Any, List, Optional, Tuple

import numpy as np
import scipy.linalg
from adampc.tube import constants
from adampc.tube.exceptions import UnstableException
from adampc.tube.helpers import as_matrix, as_vector, spectral_radius
from adampc.tube.polytope import (
    Ellipsoid,
    Polytope,
    VertexSet,
    ellipsoid_outer_polytope,
    intersect,
    vertices,
)


class ParametricModel:
    """A linear system x⁺ = A(θ)x + B(θ)u, affine in the parameter θ.

    A(θ) = A₀ + Σθᵢ·Aᵢ and B(θ) = B₀ + Σθᵢ·Bᵢ.
    """

    def __init__(
        self, base_A: Any, base_B: Any, delta_A: List[Any], delta_B: List[Any]
    ):
        self.base_A = as_matrix(base_A)
        n_x = self.base_A.shape[0]
        self.base_B = np.asarray(base_B, dtype=float).reshape(n_x, -1)

        if self.base_A.shape != (n_x, n_x):
            raise ValueError(f"A0 of shape {self.base_A.shape} is not square")
        if len(delta_A) != len(delta_B) or not delta_A:
            raise ValueError("expected matching, non-empty lists of A and B deltas")

        self.delta_A = [as_matrix(item, n_x, n_x) for item in delta_A]
        self.delta_B = [
            np.asarray(item, dtype=float).reshape(n_x, self.n_u) for item in delta_B
        ]

    @property
    def n_x(self) -> int:
        return self.base_A.shape[0]

    @property
    def n_u(self) -> int:
        return self.base_B.shape[1]

    @property
    def n_theta(self) -> int:
        return len(self.delta_A)

    def A(self, theta: Any) -> np.ndarray:
        theta = as_vector(theta, self.n_theta)
        return self.base_A + sum(t * A for t, A in zip(theta, self.delta_A))

    def B(self, theta: Any) -> np.ndarray:
        theta = as_vector(theta, self.n_theta)
        return self.base_B + sum(t * B for t, B in zip(theta, self.delta_B))

    def step(self, theta: Any, x: Any, u: Any) -> np.ndarray:
        """Returns the successor state under the given parameter."""
        return self.A(theta) @ as_vector(x, self.n_x) + self.B(theta) @ as_vector(
            u, self.n_u
        )


@dataclass(frozen=True, eq=False)
class EstimatorSettings:
    forgetting: float
    observer_gain: np.ndarray
    n_dirs: int = constants.DEFAULT_POL_DIRECTIONS
    eps_x: float = 1e-3
    eps_r: float = 1e-3


@dataclass(frozen=True, eq=False)
class EstimatorState:
    """The full estimator recursion state at one time step."""

    theta_hat: np.ndarray
    gamma: np.ndarray
    bound: float
    filter_w: np.ndarray
    x_hat: np.ndarray
    eta: np.ndarray
    x_tilde: np.ndarray
    fss: Polytope
    ellipsoid: Ellipsoid
    vertices: VertexSet
    settings: EstimatorSettings


def regressor(model: ParametricModel, x: Any, u: Any) -> np.ndarray:
    """Returns g(x, u), whose column i is Aᵢx + Bᵢu."""
    x = as_vector(x, model.n_x)
    u = as_vector(u, model.n_u)

    pairs = zip(model.delta_A, model.delta_B)
    return np.column_stack([A @ x + B @ u for A, B in pairs])


def filter_update(
    state: EstimatorState, model: ParametricModel, x: Any, u: Any
) -> np.ndarray:
    return regressor(model, x, u) - state.settings.observer_gain @ state.filter_w


def predict_state(
    state: EstimatorState, model: ParametricModel, x: Any, u: Any, theta_next: Any
) -> np.ndarray:
    """Predicts the next state from the freshly updated estimate theta_next."""
    x = as_vector(x, model.n_x)
    u = as_vector(u, model.n_u)
    gain = state.settings.observer_gain

    return (
        model.base_A @ x
        + model.base_B @ u
        + regressor(model, x, u) @ theta_next
        + gain @ state.x_tilde
        + gain @ state.filter_w @ (state.theta_hat - theta_next)
    )


def rls_update(state: EstimatorState, x_tilde: Any) -> Tuple[np.ndarray, np.ndarray]:
    """Returns the RLS estimate and information matrix after one update."""
    w = state.filter_w
    gamma = state.settings.forgetting * state.gamma + w.T @ w
    gamma = 0.5 * (gamma + gamma.T)

    innovation = w.T @ (as_vector(x_tilde) - state.eta)
    theta = state.theta_hat + scipy.linalg.cho_solve(
        scipy.linalg.cho_factor(gamma), innovation
    )

    return theta, gamma


def eta_update(state: EstimatorState) -> np.ndarray:
    return -state.settings.observer_gain @ state.eta


def bound_update(state: EstimatorState) -> float:
    return state.settings.forgetting * state.bound


def fss_update(state: EstimatorState) -> Tuple[Ellipsoid, Polytope, VertexSet]:
    """Intersects the outer polytope of the current ellipsoid with the previous set.

    Raises EmptyIntersectionException when the sets do not overlap, which means
    the true parameter was never in the initial set.
    """
    ellipsoid = Ellipsoid(state.theta_hat, state.gamma, state.bound)
    outer = ellipsoid_outer_polytope(ellipsoid, state.settings.n_dirs)

    # The previous set is kept as is when the new outer polytope covers it.
    if np.all(outer.contains(state.vertices.points)):
        return ellipsoid, state.fss, state.vertices

    fss = intersect(outer, state.fss)

    return ellipsoid, fss, vertices(fss)


def should_update(state: EstimatorState, eps_x: float, eps_r: float) -> bool:
    return bool(np.linalg.norm(state.x_tilde) >= eps_x or state.bound >= eps_r)


def error_energy(state: EstimatorState, theta_true: Any) -> float:
    """Returns θ̃ᵀΓθ̃, which never exceeds the bound while the true θ is in Θ₀."""
    error = as_vector(theta_true) - state.theta_hat
    return float(error @ state.gamma @ error)


def initial_state(
    model: ParametricModel,
    x0: Any,
    radius: float,
    beta: float,
    settings: EstimatorSettings,
) -> EstimatorState:
    """Returns the state at k = 0 for Θ₀ = {‖θ‖ ≤ radius} and Γ₀ = β·I.

    The estimate starts at the centre of Θ₀ and the predictor at the measured
    state, so the auxiliary signal is zero throughout.
    """
    n_theta = model.n_theta
    gamma = beta * np.eye(n_theta)
    bound = float(np.max(np.linalg.eigvalsh(gamma)) * radius**2)
    theta_hat = np.zeros(n_theta)

    ellipsoid = Ellipsoid(theta_hat, gamma, bound)
    fss = ellipsoid_outer_polytope(ellipsoid, settings.n_dirs)
    x0 = as_vector(x0, model.n_x)

    return EstimatorState(
        theta_hat=theta_hat,
        gamma=gamma,
        bound=bound,
        filter_w=np.zeros((model.n_x, n_theta)),
        x_hat=x0.copy(),
        eta=np.zeros(model.n_x),
        x_tilde=np.zeros(model.n_x),
        fss=fss,
        ellipsoid=ellipsoid,
        vertices=vertices(fss),
        settings=settings,
    )


class Estimator:
    """Drives the estimator recursion across closed-loop steps.

    update() runs at the start of step k and produces θ̂ₖ₊₁ and Θ̄ₖ₊₁ when the
    termination criterion allows it. observe() runs once the successor state is
    measured and advances the filter and predictor.
    """

    def __init__(
        self,
        model: ParametricModel,
        x0: Any,
        radius: float,
        beta: float,
        settings: EstimatorSettings,
        enabled: bool = True,
    ):
        radius_ke = spectral_radius(settings.observer_gain)
        if radius_ke >= 1.0:
            raise UnstableException(
                f"observer gain has spectral radius {radius_ke:.4f}"
            )

        self.model = model
        self.enabled = enabled
        self.state = initial_state(model, x0, radius, beta, settings)
        self.history = deque([self.state.filter_w], maxlen=64)
        self.updated = False
        self._previous: Optional[EstimatorState] = None

    def update(self) -> bool:
        """Runs the parameter update for this step if the criterion allows it."""
        log = logging.getLogger(__name__)
        settings = self.state.settings

        self._previous = self.state
        flag = self.enabled and should_update(
            self.state, settings.eps_x, settings.eps_r
        )

        if flag != self.updated and self.enabled:
            if flag:
                log.info("Estimator update triggered")
            else:
                log.info("Estimator frozen, termination criterion met")
        self.updated = flag

        if not flag:
            return False

        theta, gamma = rls_update(self.state, self.state.x_tilde)
        staged = replace(
            self.state, theta_hat=theta, gamma=gamma, bound=bound_update(self.state)
        )
        ellipsoid, fss, fss_vertices = fss_update(staged)
        self.state = replace(
            staged, ellipsoid=ellipsoid, fss=fss, vertices=fss_vertices
        )

        return True

    def observe(self, x: Any, u: Any, x_next: Any):
        """Advances the filter and predictor once x_next has been measured."""
        previous = self._previous or self.state

        x_hat = predict_state(previous, self.model, x, u, self.state.theta_hat)
        filter_w = filter_update(previous, self.model, x, u)

        self.state = replace(
            self.state,
            filter_w=filter_w,
            x_hat=x_hat,
            eta=eta_update(previous),
            x_tilde=as_vector(x_next, self.model.n_x) - x_hat,
        )
        self.history.append(filter_w)
        self._previous = None

    def error_energy(self, theta_true: Any) -> float:
        return error_energy(self.state, theta_true)

    def excitation_level(self, window: int = constants.DEFAULT_EXCITATION_WINDOW):
        """Returns the smallest eigenvalue of Σwᵢᵀwᵢ over the last window filters."""
        recent = list(self.history)[-window:]
        information = sum(w.T @ w for w in recent)

        return float(np.min(np.linalg.eigvalsh(information)))
