"""Homothetic tube MPC with terminal ingredients refreshed from the estimator.

SPDX-License-Identifier: BSD-3-Clause
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from adampc.tube import constants
from adampc.tube.estimator import Estimator, ParametricModel
from adampc.tube.exceptions import (
    ConicInfeasibleException,
    HorizonCapException,
    InfeasibleAtStepException,
    InfeasibleException,
)
from adampc.tube.helpers import as_matrix, as_vector, inf_norm, max_eigenvalue
from adampc.tube.polytope import (
    Polytope,
    VertexSet,
    lambda_contractive_shape,
    mrpi_set,
    nonneg_factor,
    vertices,
)
from adampc.tube.solvers import (
    QPSolution,
    QuadraticProgram,
    find_cost_matrix,
    solve_qp,
)

# Monitor names.
FEASIBILITY = "feasibility"
LYAPUNOV = "lyapunov"
CONSTRAINT = "constraint"
HORIZON = "horizon_monotone"
GAMMA = "gamma_monotone"
COST = "cost_monotone"
CERTIFICATE = "cost_certificate"
CONTAINMENT = "containment"
ENERGY = "error_energy"
CONTRACTION = "energy_contraction"


@dataclass(frozen=True, eq=False)
class ConstraintData:
    """Mixed constraints F·x + G·u ≤ 1 under the control law u = K·x + v."""

    F: np.ndarray
    G: np.ndarray
    K: np.ndarray

    @classmethod
    def from_bounds(cls, x_max: Any, u_max: Any, K: Any) -> "ConstraintData":
        """Builds the constraints |xᵢ| ≤ x_maxᵢ and |uᵢ| ≤ u_maxᵢ."""
        x_max = as_vector(x_max)
        u_max = as_vector(u_max)
        n_x = x_max.size
        n_u = u_max.size

        state = np.diag(1.0 / x_max)
        control = np.diag(1.0 / u_max)
        F = np.vstack((state, -state, np.zeros((2 * n_u, n_x))))
        G = np.vstack((np.zeros((2 * n_x, n_u)), control, -control))

        return cls(F, G, as_matrix(K, n_u, n_x))

    @property
    def n_con(self) -> int:
        return self.F.shape[0]

    @property
    def closed_loop(self) -> np.ndarray:
        return self.F + self.G @ self.K

    def state_polytope(self) -> Polytope:
        """Returns {x : (F + G·K)·x ≤ 1}, dropping rows which vanish under K."""
        closed = self.closed_loop
        active = np.any(np.abs(closed) > constants.ZERO_TOLERANCE, axis=1)

        return Polytope(closed[active], np.ones(int(np.sum(active))))

    def violation(self, x: Any, u: Any) -> float:
        """Returns the largest value of F·x + G·u − 1."""
        return float(np.max(self.F @ as_vector(x) + self.G @ as_vector(u) - 1.0))


@dataclass(frozen=True, eq=False)
class TubeShape:
    """The tube cross-section {e : V·e ≤ α} with H_static·V = F + G·K."""

    V: np.ndarray
    H_static: np.ndarray

    @property
    def n_v(self) -> int:
        return self.V.shape[0]

    @classmethod
    def synthesize(
        cls,
        constraint: ConstraintData,
        vertex_maps: List[np.ndarray],
        lambda_c: float,
        max_iter: int = constants.DEFAULT_MAX_ITER,
    ) -> "TubeShape":
        V = lambda_contractive_shape(
            vertex_maps, lambda_c, constraint.state_polytope(), max_iter
        )
        return cls(V, nonneg_factor(V, constraint.closed_loop))


@dataclass(frozen=True, eq=False)
class VertexTransitionData:
    """Closed-loop maps at each vertex of Θ̄ₖ₊₁ and at the estimate θ̂ₖ₊₁."""

    theta_hat: np.ndarray
    phi_hat: np.ndarray
    B_hat: np.ndarray
    points: np.ndarray
    phi: List[np.ndarray]
    B: List[np.ndarray]
    dphi: List[np.ndarray]
    dB: List[np.ndarray]
    H: List[np.ndarray]

    @property
    def n_c(self) -> int:
        return len(self.phi)

    @property
    def contraction(self) -> float:
        return max(inf_norm(H) for H in self.H)


@dataclass(frozen=True, eq=False)
class TerminalIngredients:
    terminal_set: Polytope
    terminal_vertices: VertexSet
    D: np.ndarray
    gamma: float
    horizon_ext: int
    cost_W: np.ndarray
    residuals: List[float] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class PredictionLift:
    """The lifted dynamics ξ⁺ = Ψ·ξ of ξ = (x, v₀, …, v_{N−1}) and its stage cost."""

    shift_T: np.ndarray
    selector_E: np.ndarray
    qbar: np.ndarray
    n_x: int

    @classmethod
    def build(cls, Q: Any, R: Any, K: Any, N: int) -> "PredictionLift":
        Q = as_matrix(Q)
        R = as_matrix(R)
        n_x = Q.shape[0]
        n_u = R.shape[0]
        K = as_matrix(K, n_u, n_x)

        shift = np.eye(N * n_u, k=n_u)
        selector = np.zeros((n_u, N * n_u))
        selector[:, :n_u] = np.eye(n_u)

        qbar = np.block(
            [
                [Q + K.T @ R @ K, K.T @ R @ selector],
                [selector.T @ R @ K, selector.T @ R @ selector],
            ]
        )

        return cls(shift, selector, 0.5 * (qbar + qbar.T), n_x)

    def lift(self, phi: np.ndarray, B: np.ndarray) -> np.ndarray:
        """Returns Ψ = [[φ, B·E], [0, T]]."""
        n_v = self.shift_T.shape[0]
        return np.block(
            [
                [phi, B @ self.selector_E],
                [np.zeros((n_v, self.n_x)), self.shift_T],
            ]
        )

    def vertex_lifts(self, vertex_data: VertexTransitionData) -> List[np.ndarray]:
        return [self.lift(phi, B) for phi, B in zip(vertex_data.phi, vertex_data.B)]


@dataclass(frozen=True, eq=False)
class MPCSolution:
    v_seq: np.ndarray
    alpha_seq: np.ndarray
    z_seq: np.ndarray
    cost: float
    iterations: int = 0
    status: str = "solved"


@dataclass
class StepDiagnostics:
    k: int
    x: List[float]
    u: List[float]
    cost: float
    horizon_ext: int
    gamma: float
    n_c: int
    solver_iterations: int
    updated: bool
    lyapunov_residual: Optional[float]
    theta_hat: List[float]
    bound: float
    x_tilde_norm: float
    excitation: float
    status: str = "solved"


class ConstraintBlock(NamedTuple):
    """Rows over_decision·y + over_state·xₖ ≤ bound."""

    over_decision: np.ndarray
    over_state: np.ndarray
    bound: np.ndarray


class DecisionLayout(NamedTuple):
    """Positions of v₀…v_{N−1} and α₀…α_{N+M} in the decision vector."""

    N: int
    n_u: int
    n_v: int
    length: int

    @property
    def size(self) -> int:
        return self.N * self.n_u + (self.length + 1) * self.n_v

    @property
    def inputs(self) -> slice:
        return slice(0, self.N * self.n_u)

    def input(self, step: int) -> slice:
        return slice(step * self.n_u, (step + 1) * self.n_u)

    def alpha(self, step: int) -> slice:
        start = self.N * self.n_u + step * self.n_v
        return slice(start, start + self.n_v)

    @property
    def alphas(self) -> slice:
        return slice(self.N * self.n_u, self.size)


class ProblemTemplate(NamedTuple):
    """Everything of problem ℙ except the measured state."""

    hessian: np.ndarray
    linear_map: np.ndarray
    constant_map: np.ndarray
    block: ConstraintBlock
    layout: DecisionLayout
    prediction: Tuple[np.ndarray, np.ndarray]
    cost_W: np.ndarray


def _stack(blocks: List[ConstraintBlock]) -> ConstraintBlock:
    return ConstraintBlock(
        np.vstack([block.over_decision for block in blocks]),
        np.vstack([block.over_state for block in blocks]),
        np.concatenate([block.bound for block in blocks]),
    )


def closed_loop_maps(
    model: ParametricModel, K: np.ndarray, points: np.ndarray
) -> List[np.ndarray]:
    """Returns φ = A(θ) + B(θ)·K at each parameter point."""
    return [model.A(theta) + model.B(theta) @ K for theta in points]


def nominal_rollout(
    phi_hat: np.ndarray, B_hat: np.ndarray, x_k: Any, v_seq: Any, length: int
) -> np.ndarray:
    """Predicts z₀…z_length from z₀ = xₖ, with v = 0 after the input sequence."""
    z = as_vector(x_k)
    v_seq = np.asarray(v_seq, dtype=float).reshape(-1, B_hat.shape[1])

    rollout = [z]
    for step in range(length):
        z = phi_hat @ z
        if step < v_seq.shape[0]:
            z = z + B_hat @ v_seq[step]
        rollout.append(z)

    return np.array(rollout)


def prediction_matrices(
    phi_hat: np.ndarray, B_hat: np.ndarray, N: int, length: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (Sx, Sv) with z_l = Sx[l]·xₖ + Sv[l]·v for l = 0…length."""
    n_x, n_u = B_hat.shape
    state = [np.eye(n_x)]
    inputs = [np.zeros((n_x, N * n_u))]

    for step in range(length):
        state.append(phi_hat @ state[-1])
        successor = phi_hat @ inputs[-1]
        if step < N:
            successor[:, step * n_u : (step + 1) * n_u] += B_hat
        inputs.append(successor)

    return np.array(state), np.array(inputs)


def build_vertex_data(
    model: ParametricModel,
    K: np.ndarray,
    theta_next: Any,
    fss_vertices: VertexSet,
    tube_shape: TubeShape,
) -> VertexTransitionData:
    """Computes the vertex maps and the factors Hʲ with Hʲ·V = V·φʲ.

    Raises ConicInfeasibleException when some Hʲ does not contract.
    """
    theta_next = as_vector(theta_next, model.n_theta)
    points = fss_vertices.points
    V = tube_shape.V

    phi_hat = model.A(theta_next) + model.B(theta_next) @ K
    B_hat = model.B(theta_next)
    phi = closed_loop_maps(model, K, points)
    B = [model.B(theta) for theta in points]
    H = [nonneg_factor(V, V @ item) for item in phi]

    data = VertexTransitionData(
        theta_hat=theta_next,
        phi_hat=phi_hat,
        B_hat=B_hat,
        points=points,
        phi=phi,
        B=B,
        dphi=[item - phi_hat for item in phi],
        dB=[item - B_hat for item in B],
        H=H,
    )
    if data.contraction >= 1.0:
        raise ConicInfeasibleException(
            f"tube shape does not contract at every vertex ({data.contraction:.4f})"
        )

    return data


def tube_inequalities(
    vertex_data: VertexTransitionData,
    tube_shape: TubeShape,
    constraint: ConstraintData,
    layout: DecisionLayout,
    prediction: Tuple[np.ndarray, np.ndarray],
) -> ConstraintBlock:
    """Returns the tube constraints for l = 0…N+M−1.

    Constraint rows read H·α_l + (F + G·K)·z_l + G·v_l ≤ 1 (no v_l from l = N
    onwards), and α_{l+1} ≥ Hʲ·α_l + V·(Δφʲ·z_l + ΔBʲ·v_l) for every vertex j.
    """
    Sx, Sv = prediction
    V = tube_shape.V
    closed = constraint.closed_loop
    blocks = []

    for step in range(layout.length):
        rows = np.zeros((constraint.n_con, layout.size))
        rows[:, layout.inputs] = closed @ Sv[step]
        if step < layout.N:
            rows[:, layout.input(step)] += constraint.G
        rows[:, layout.alpha(step)] = tube_shape.H_static
        blocks.append(
            ConstraintBlock(rows, closed @ Sx[step], np.ones(constraint.n_con))
        )

        for dphi, dB, H in zip(vertex_data.dphi, vertex_data.dB, vertex_data.H):
            rows = np.zeros((tube_shape.n_v, layout.size))
            rows[:, layout.inputs] = V @ dphi @ Sv[step]
            if step < layout.N:
                rows[:, layout.input(step)] += V @ dB
            rows[:, layout.alpha(step)] += H
            rows[:, layout.alpha(step + 1)] -= np.eye(tube_shape.n_v)
            blocks.append(
                ConstraintBlock(rows, V @ dphi @ Sx[step], np.zeros(tube_shape.n_v))
            )

    return _stack(blocks)


def support_triplet(
    terminal_vertices: VertexSet,
    vertex_data: VertexTransitionData,
    tube_shape: TubeShape,
    constraint: ConstraintData,
    step: int,
) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Returns (f̄ʲ, c̄ʲ, ḡʲ) for every vertex j over 𝒵ʲ = (φʲ)ˡ·𝒵.

    f̄ʲ = max (F + G·K)·z, c̄ʲ = max V·(φʲ − φ̂)·z and ḡʲ = max V·φʲ·(z₁ − z₂),
    row-wise over the mapped set. 𝒵 is given by its vertices, whose images span
    the image of 𝒵, so every maximum is attained at a mapped vertex.
    """
    V = tube_shape.V
    closed = constraint.closed_loop
    triplets = []

    for phi, dphi in zip(vertex_data.phi, vertex_data.dphi):
        mapped = terminal_vertices.points @ np.linalg.matrix_power(phi, step).T

        f_bar = np.max(closed @ mapped.T, axis=1)
        c_bar = np.max(V @ dphi @ mapped.T, axis=1)
        images = V @ phi @ mapped.T
        g_bar = np.max(images, axis=1) - np.min(images, axis=1)

        triplets.append((f_bar, c_bar, g_bar))

    return triplets


def gamma_bounds(
    terminal_vertices: VertexSet,
    vertex_data: VertexTransitionData,
    tube_shape: TubeShape,
    constraint: ConstraintData,
    step: int,
) -> Tuple[float, float]:
    """Returns (γ̲, γ̄) at horizon extension l = step."""
    contraction = vertex_data.contraction
    if contraction >= 1.0:
        raise ValueError(f"vertex factors do not contract ({contraction:.4f})")

    triplets = support_triplet(
        terminal_vertices, vertex_data, tube_shape, constraint, step
    )
    f_bar = max(np.max(np.abs(f), initial=0.0) for f, _, _ in triplets)
    # The offset and spread are paired per vertex before taking the maximum.
    spread = max(
        np.max(np.abs(c), initial=0.0) + np.max(np.abs(g), initial=0.0)
        for _, c, g in triplets
    )

    lower = spread / (1.0 - contraction)
    upper = (1.0 - f_bar) / inf_norm(tube_shape.H_static)

    return float(lower), float(upper)


def find_horizon_and_gamma(
    terminal_vertices: VertexSet,
    vertex_data: VertexTransitionData,
    tube_shape: TubeShape,
    constraint: ConstraintData,
    l_max: int = constants.DEFAULT_HORIZON_CAP,
    gamma_floor: float = 0.0,
) -> Tuple[int, float]:
    """Returns the smallest l ≤ l_max with γ̄_l ≥ max(γ̲_l, gamma_floor), and γ̄_l."""
    for step in range(l_max + 1):
        lower, upper = gamma_bounds(
            terminal_vertices, vertex_data, tube_shape, constraint, step
        )
        if upper >= lower and upper >= gamma_floor - constants.ORDERING_TOLERANCE:
            return step, max(upper, gamma_floor)

    raise HorizonCapException(
        f"no horizon extension up to {l_max} satisfies the gamma bounds"
    )


def terminal_rows(
    terminal: TerminalIngredients,
    tube_shape: TubeShape,
    layout: DecisionLayout,
    prediction: Tuple[np.ndarray, np.ndarray],
) -> ConstraintBlock:
    """Returns Vₖ·z_N + Dₖ·α_N ≤ 1 and α_{N+M} ≤ γₖ."""
    Sx, Sv = prediction
    V_k = terminal.terminal_set.normals
    n_x = V_k.shape[1]

    entry = np.zeros((V_k.shape[0], layout.size))
    entry[:, layout.inputs] = V_k @ Sv[layout.N]
    entry[:, layout.alpha(layout.N)] = terminal.D

    tail = np.zeros((tube_shape.n_v, layout.size))
    tail[:, layout.alpha(layout.length)] = np.eye(tube_shape.n_v)

    return _stack(
        [
            ConstraintBlock(entry, V_k @ Sx[layout.N], np.ones(V_k.shape[0])),
            ConstraintBlock(
                tail,
                np.zeros((tube_shape.n_v, n_x)),
                np.full(tube_shape.n_v, terminal.gamma),
            ),
        ]
    )


def update_terminal_set(
    vertex_maps: List[np.ndarray],
    constraint: Polytope,
    z_prev: Optional[Polytope] = None,
    max_iter: int = constants.DEFAULT_MAX_ITER,
) -> Polytope:
    """Returns the invariant terminal set for the current vertex maps.

    The new set must contain the image of the previous set under every vertex
    map; otherwise the previous set is kept.
    """
    log = logging.getLogger(__name__)

    fresh = mrpi_set(vertex_maps, constraint, max_iter)
    if z_prev is None:
        return fresh

    previous = vertices(z_prev).points
    for phi in vertex_maps:
        if not np.all(fresh.contains(previous @ phi.T)):
            log.warning("Invariant set failed the cross-check, keeping the previous")
            return z_prev

    return fresh


def problem_template(
    vertex_data: VertexTransitionData,
    tube_shape: TubeShape,
    terminal: TerminalIngredients,
    constraint: ConstraintData,
    N: int,
) -> ProblemTemplate:
    """Assembles problem ℙ for the current ingredients, leaving xₖ as a parameter."""
    n_x = constraint.F.shape[1]
    n_u = constraint.G.shape[1]
    layout = DecisionLayout(N, n_u, tube_shape.n_v, N + terminal.horizon_ext)
    prediction = prediction_matrices(
        vertex_data.phi_hat, vertex_data.B_hat, N, layout.length
    )

    n_alpha = (layout.length + 1) * layout.n_v
    nonnegative = np.zeros((n_alpha, layout.size))
    nonnegative[:, layout.alphas] = -np.eye(n_alpha)

    block = _stack(
        [
            tube_inequalities(vertex_data, tube_shape, constraint, layout, prediction),
            terminal_rows(terminal, tube_shape, layout, prediction),
            ConstraintBlock(nonnegative, np.zeros((n_alpha, n_x)), np.zeros(n_alpha)),
        ]
    )

    # J = ξᵀWξ with ξ = (xₖ, v); only the v block is a decision variable.
    W = terminal.cost_W
    hessian = np.zeros((layout.size, layout.size))
    hessian[layout.inputs, layout.inputs] = 2.0 * W[n_x:, n_x:]
    linear_map = np.zeros((layout.size, n_x))
    linear_map[layout.inputs] = 2.0 * W[n_x:, :n_x]

    return ProblemTemplate(
        hessian=hessian,
        linear_map=linear_map,
        constant_map=W[:n_x, :n_x],
        block=block,
        layout=layout,
        prediction=prediction,
        cost_W=W,
    )


def assemble_problem(x_k: Any, template: ProblemTemplate) -> QuadraticProgram:
    """Returns problem ℙ at the measured state xₖ."""
    x_k = as_vector(x_k)
    block = template.block

    return QuadraticProgram(
        hessian=template.hessian,
        linear=template.linear_map @ x_k,
        ineq_constraints=(block.over_decision, block.bound - block.over_state @ x_k),
        constant=float(x_k @ template.constant_map @ x_k),
    )


def extract_solution(
    x_k: Any, template: ProblemTemplate, result: QPSolution
) -> MPCSolution:
    """Splits the QP optimum into inputs, tube sizes and the nominal prediction."""
    x_k = as_vector(x_k)
    layout = template.layout
    optimum = result.optimum
    Sx, Sv = template.prediction

    v_seq = optimum[layout.inputs].reshape(layout.N, layout.n_u)
    alpha_seq = optimum[layout.alphas].reshape(layout.length + 1, layout.n_v)
    z_seq = np.einsum("lij,j->li", Sx, x_k) + np.einsum(
        "lij,j->li", Sv, optimum[layout.inputs]
    )

    xi = np.concatenate((x_k, optimum[layout.inputs]))
    return MPCSolution(
        v_seq,
        alpha_seq,
        z_seq,
        float(xi @ template.cost_W @ xi),
        result.iterations,
        result.status,
    )


@dataclass
class MonitorRecord:
    name: str
    step: int
    value: float
    limit: float

    @property
    def violated(self) -> bool:
        return not self.value <= self.limit


class Monitors:
    """Records the runtime checks of the closed-loop guarantees."""

    def __init__(self):
        self.records: List[MonitorRecord] = []

    def check(self, name: str, step: int, value: float, limit: float) -> bool:
        log = logging.getLogger(__name__)

        record = MonitorRecord(name, step, float(value), float(limit))
        self.records.append(record)
        if record.violated:
            log.warning(f"Monitor {name} violated at step {step}: {value} > {limit}")

        return not record.violated

    @property
    def violations(self) -> List[MonitorRecord]:
        return [record for record in self.records if record.violated]

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> Dict[str, Dict[str, Any]]:
        """Returns per monitor the number of checks, violations and worst margin."""
        summary = {}
        for record in self.records:
            entry = summary.setdefault(
                record.name, {"checks": 0, "violations": 0, "worst": None}
            )
            margin = record.value - record.limit
            entry["checks"] += 1
            entry["violations"] += int(record.violated)
            if entry["worst"] is None or margin > entry["worst"]:
                entry["worst"] = margin

        return summary


class AdaptiveTubeMPC:
    """The adaptive tube MPC controller.

    Modes:
      adaptive   - every estimator update refreshes the tube data and the
                   terminal ingredients.
      simplified - the tube data follow the estimator, the terminal ingredients
                   stay at their k = 0 values.
      robust     - the estimator is disabled and everything stays at k = 0.
    """

    def __init__(
        self,
        model: ParametricModel,
        constraint: ConstraintData,
        Q: Any,
        R: Any,
        N: int,
        estimator: Estimator,
        mode: str = constants.DEFAULT_MODE,
        lambda_c: float = constants.DEFAULT_LAMBDA_C,
        l_max: int = constants.DEFAULT_HORIZON_CAP,
        max_iter: int = constants.DEFAULT_MAX_ITER,
        theta_true: Any = None,
    ):
        log = logging.getLogger(__name__)

        if mode not in constants.MODES:
            raise ValueError(f"unknown mode '{mode}', expected {constants.MODES}")
        if N < 1:
            raise ValueError(f"the prediction horizon must be positive, got {N}")

        self.model = model
        self.constraint = constraint
        self.Q = as_matrix(Q, model.n_x, model.n_x)
        self.R = as_matrix(R, model.n_u, model.n_u)
        self.N = N
        self.estimator = estimator
        self.mode = mode
        self.l_max = l_max
        self.max_iter = max_iter
        self.theta_true = None if theta_true is None else as_vector(theta_true)

        if mode == "robust":
            self.estimator.enabled = False

        self.lift = PredictionLift.build(self.Q, self.R, constraint.K, N)
        initial_maps = closed_loop_maps(
            model, constraint.K, estimator.state.vertices.points
        )
        self.tube_shape = TubeShape.synthesize(
            constraint, initial_maps, lambda_c, max_iter
        )
        log.info(f"Tube shape has {self.tube_shape.n_v} rows")

        self.monitors = Monitors()
        self.k = 0
        self.vertex_data: Optional[VertexTransitionData] = None
        self.terminal: Optional[TerminalIngredients] = None
        self.template: Optional[ProblemTemplate] = None
        self.solution: Optional[MPCSolution] = None
        self._last: Optional[Tuple[float, float]] = None

    def _terminal_ingredients(
        self, vertex_data: VertexTransitionData
    ) -> TerminalIngredients:
        """Computes 𝒵ₖ, Dₖ, γₖ, Mₖ and Wₖ₊₁, keeping them monotone across updates."""
        log = logging.getLogger(__name__)

        previous = self.terminal
        constraint = self.constraint.state_polytope()
        z_prev = previous.terminal_set if previous else None
        fresh = update_terminal_set(vertex_data.phi, constraint, z_prev, self.max_iter)

        arguments = (vertex_data, self.tube_shape, self.constraint)
        if previous is None:
            terminal_set = fresh
            horizon, gamma = find_horizon_and_gamma(
                vertices(fresh), *arguments, l_max=self.l_max
            )
        else:
            terminal_set = None
            candidates = [fresh] if fresh is z_prev else [fresh, z_prev]
            for candidate in candidates:
                try:
                    horizon, gamma = find_horizon_and_gamma(
                        vertices(candidate),
                        *arguments,
                        l_max=previous.horizon_ext,
                        gamma_floor=previous.gamma,
                    )
                except HorizonCapException:
                    continue
                terminal_set = candidate
                break

            if terminal_set is None:
                log.warning("No monotone horizon and gamma found, recomputing freely")
                terminal_set = fresh
                horizon, gamma = find_horizon_and_gamma(
                    vertices(fresh), *arguments, l_max=self.l_max
                )
            elif terminal_set is not fresh:
                log.warning("Keeping the previous terminal set for monotone gamma")

            self.monitors.check(HORIZON, self.k, horizon - previous.horizon_ext, 0)
            self.monitors.check(
                GAMMA, self.k, previous.gamma - gamma, constants.ORDERING_TOLERANCE
            )

        w_prev = previous.cost_W if previous else None
        certificate = find_cost_matrix(
            self.lift.vertex_lifts(vertex_data), self.lift.qbar, w_prev
        )
        self.monitors.check(
            CERTIFICATE,
            self.k,
            max(certificate.residuals),
            constants.LMI_RESIDUAL_TOLERANCE,
        )
        if w_prev is not None:
            self.monitors.check(
                COST,
                self.k,
                max_eigenvalue(certificate.W - w_prev),
                constants.LMI_MONOTONE_TOLERANCE,
            )

        return TerminalIngredients(
            terminal_set=terminal_set,
            terminal_vertices=vertices(terminal_set),
            D=nonneg_factor(self.tube_shape.V, terminal_set.normals),
            gamma=gamma,
            horizon_ext=horizon,
            cost_W=certificate.W,
            residuals=certificate.residuals,
        )

    def refresh(self):
        """Recomputes the ingredients from the current estimator state."""
        log = logging.getLogger(__name__)
        state = self.estimator.state

        vertex_data = build_vertex_data(
            self.model,
            self.constraint.K,
            state.theta_hat,
            state.vertices,
            self.tube_shape,
        )
        if self.terminal is None or self.mode == "adaptive":
            self.terminal = self._terminal_ingredients(vertex_data)

        self.vertex_data = vertex_data
        self.template = problem_template(
            vertex_data, self.tube_shape, self.terminal, self.constraint, self.N
        )

        log.info(
            f"Ingredients at k = {self.k}: n_c = {vertex_data.n_c}, "
            f"M = {self.terminal.horizon_ext}, gamma = {self.terminal.gamma:.4f}, "
            f"n_v = {self.tube_shape.n_v}, "
            f"terminal rows = {self.terminal.terminal_set.n_rows}"
        )

    def _estimate_changed(self) -> bool:
        state = self.estimator.state
        return not (
            np.array_equal(state.theta_hat, self.vertex_data.theta_hat)
            and np.array_equal(state.vertices.points, self.vertex_data.points)
        )

    def _check_containment(self, previous_energy: Optional[float]):
        state = self.estimator.state
        energy = self.estimator.error_energy(self.theta_true)
        inside = state.fss.contains(self.theta_true)
        self.monitors.check(CONTAINMENT, self.k, 0.0 if inside else 1.0, 0.0)
        self.monitors.check(
            ENERGY,
            self.k,
            energy - state.bound,
            constants.MEMBERSHIP_TOLERANCE,
        )
        if previous_energy is not None:
            self.monitors.check(
                CONTRACTION,
                self.k,
                energy - state.settings.forgetting * previous_energy,
                constants.MEMBERSHIP_TOLERANCE,
            )

    def step(self, x_k: Any) -> Tuple[np.ndarray, StepDiagnostics]:
        """Runs one controller step and returns uₖ with the step diagnostics."""
        x_k = as_vector(x_k, self.model.n_x)

        energy = None
        if self.theta_true is not None:
            energy = self.estimator.error_energy(self.theta_true)

        updated = self.estimator.update()
        if self.template is None or (updated and self._estimate_changed()):
            self.refresh()
        if self.theta_true is not None:
            self._check_containment(energy if updated else None)

        try:
            result = solve_qp(assemble_problem(x_k, self.template))
        except InfeasibleException as err:
            self.monitors.check(FEASIBILITY, self.k, 1.0, 0.0)
            raise InfeasibleAtStepException(
                self.k, f"Problem infeasible at step {self.k}: {err}"
            )
        self.monitors.check(FEASIBILITY, self.k, 0.0, 0.0)

        solution = extract_solution(x_k, self.template, result)
        u_k = self.constraint.K @ x_k + solution.v_seq[0]

        self.monitors.check(
            CONSTRAINT,
            self.k,
            self.constraint.violation(x_k, u_k),
            constants.CONSTRAINT_TOLERANCE,
        )

        residual = None
        if self._last is not None:
            cost, stage = self._last
            residual = solution.cost - cost + stage
            self.monitors.check(
                LYAPUNOV, self.k, residual, constants.LYAPUNOV_TOLERANCE
            )
        self._last = (solution.cost, float(x_k @ self.Q @ x_k + u_k @ self.R @ u_k))
        self.solution = solution

        state = self.estimator.state
        diagnostics = StepDiagnostics(
            k=self.k,
            x=x_k.tolist(),
            u=u_k.tolist(),
            cost=solution.cost,
            horizon_ext=self.terminal.horizon_ext,
            gamma=self.terminal.gamma,
            n_c=self.vertex_data.n_c,
            solver_iterations=solution.iterations,
            updated=updated,
            lyapunov_residual=residual,
            theta_hat=state.theta_hat.tolist(),
            bound=state.bound,
            x_tilde_norm=float(np.linalg.norm(state.x_tilde)),
            excitation=self.estimator.excitation_level(),
            status=solution.status,
        )
        self.k += 1

        return u_k, diagnostics

    def observe(self, x_k: Any, u_k: Any, x_next: Any):
        """Passes the measured successor state to the estimator."""
        self.estimator.observe(x_k, u_k, x_next)


def controller_step(
    controller: AdaptiveTubeMPC, x_k: Any
) -> Tuple[np.ndarray, StepDiagnostics]:
    return controller.step(x_k)
