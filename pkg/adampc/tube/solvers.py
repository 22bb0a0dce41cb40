"""Convex solvers used by adaptive MPC.

Linear programs are solved with HiGHS (through SciPy), the tube MPC quadratic
program with OSQP, and the vertex LMIs with CVXPY.

SPDX-License-Identifier: BSD-3-Clause
"""

import json
import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import cvxpy as cp
import numpy as np
import osqp
import scipy.linalg
from adampc.tube import constants
from adampc.tube.exceptions import (
    InfeasibleException,
    InfeasibleLMIException,
    MaxIterationsException,
    SolverException,
    UnboundedException,
)
from adampc.tube.helpers import as_matrix, as_vector, dumps, max_eigenvalue, symmetrize
from scipy import sparse
from scipy.optimize import linprog

Block = Tuple[np.ndarray, np.ndarray]

# Statuses reported by scipy.optimize.linprog.
LP_INFEASIBLE = 2
LP_UNBOUNDED = 3


def _block(block: Optional[Block], n_vars: int) -> Block:
    """Returns a (matrix, vector) constraint block with consistent shapes."""
    if block is None:
        return np.zeros((0, n_vars)), np.zeros(0)

    matrix, vector = block
    matrix = np.asarray(matrix, dtype=float).reshape(-1, n_vars)
    vector = as_vector(vector, matrix.shape[0])

    return matrix, vector


@dataclass
class LinearProgram:
    """Minimise objective·x subject to equality, inequality and bound constraints.

    Variables are free unless bounds are given. Bounds are a list of (lower, upper)
    pairs where None means unbounded on that side.
    """

    objective: np.ndarray
    eq_constraints: Optional[Block] = None
    ineq_constraints: Optional[Block] = None
    bounds: Optional[List[Tuple[Optional[float], Optional[float]]]] = None

    def __post_init__(self):
        self.objective = as_vector(self.objective)
        self.eq_constraints = _block(self.eq_constraints, self.n_vars)
        self.ineq_constraints = _block(self.ineq_constraints, self.n_vars)

        if self.bounds is None:
            self.bounds = [(None, None)] * self.n_vars
        if len(self.bounds) != self.n_vars:
            raise ValueError(f"expected {self.n_vars} bounds, got {len(self.bounds)}")

    @property
    def n_vars(self) -> int:
        return self.objective.size


@dataclass
class QuadraticProgram:
    """Minimise ½·xᵀ·hessian·x + linear·x + constant subject to linear constraints.

    Inequalities read A·x ≤ b and equalities A·x = b.
    """

    hessian: np.ndarray
    linear: np.ndarray
    ineq_constraints: Optional[Block] = None
    eq_constraints: Optional[Block] = None
    constant: float = 0.0

    def __post_init__(self):
        self.linear = as_vector(self.linear)
        self.hessian = as_matrix(self.hessian, self.n_vars, self.n_vars)

        if np.max(np.abs(self.hessian - self.hessian.T), initial=0.0) > 1e-10:
            raise ValueError("hessian is not symmetric")
        self.hessian = symmetrize(self.hessian)
        if self.n_vars and np.min(np.linalg.eigvalsh(self.hessian)) < -1e-10:
            raise ValueError("hessian is not positive semi-definite")

        self.ineq_constraints = _block(self.ineq_constraints, self.n_vars)
        self.eq_constraints = _block(self.eq_constraints, self.n_vars)

    @property
    def n_vars(self) -> int:
        return self.linear.size

    def objective(self, point: np.ndarray) -> float:
        """Evaluates the objective at the given point."""
        return float(
            0.5 * point @ self.hessian @ point + self.linear @ point + self.constant
        )

    def violation(self, point: np.ndarray) -> float:
        """Returns the largest constraint violation at the given point."""
        a_ub, b_ub = self.ineq_constraints
        a_eq, b_eq = self.eq_constraints

        return float(
            max(
                np.max(a_ub @ point - b_ub, initial=0.0),
                np.max(np.abs(a_eq @ point - b_eq), initial=0.0),
            )
        )

    def to_dict(self):
        return {
            "hessian": self.hessian,
            "linear": self.linear,
            "constant": self.constant,
            "ineq_constraints": {
                "matrix": self.ineq_constraints[0],
                "vector": self.ineq_constraints[1],
            },
            "eq_constraints": {
                "matrix": self.eq_constraints[0],
                "vector": self.eq_constraints[1],
            },
        }


# Cost matrices (W, Q̄) are plain arrays validated by symmetric_matrix.
SymmetricMatrix = np.ndarray


def symmetric_matrix(entries, tolerance: float = 1e-12) -> SymmetricMatrix:
    """Returns the entries as a square array, checking symmetry to tolerance."""
    candidate = as_matrix(entries)
    if candidate.shape[0] != candidate.shape[1]:
        raise ValueError(f"matrix of shape {candidate.shape} is not square")
    if np.max(np.abs(candidate - candidate.T)) > tolerance:
        raise ValueError("matrix is not symmetric")

    return symmetrize(candidate)


class QPSolution(NamedTuple):
    optimum: np.ndarray
    value: float
    iterations: int
    status: str


class CostCertificate(NamedTuple):
    """A cost matrix with the eigenvalues certifying it.

    residuals holds the largest eigenvalue of ΨᵀWΨ − W + Q̄ per vertex, and
    monotone the largest eigenvalue of W − w_prev (None without w_prev).
    """

    W: np.ndarray
    residuals: List[float]
    monotone: Optional[float]
    reused: bool = False


def solve_lp(lp: LinearProgram) -> Tuple[np.ndarray, float]:
    """Solves a linear program with the HiGHS dual simplex.

    The dual simplex always terminates at a basic solution, so repeated calls with
    the same problem return bit-identical results.
    """
    a_eq, b_eq = lp.eq_constraints
    a_ub, b_ub = lp.ineq_constraints

    result = linprog(
        lp.objective,
        A_ub=a_ub if a_ub.size else None,
        b_ub=b_ub if a_ub.size else None,
        A_eq=a_eq if a_eq.size else None,
        b_eq=b_eq if a_eq.size else None,
        bounds=lp.bounds,
        method="highs-ds",
        options={
            "primal_feasibility_tolerance": constants.LP_FEASIBILITY_TOLERANCE,
            "dual_feasibility_tolerance": constants.LP_FEASIBILITY_TOLERANCE,
        },
    )

    if result.status == LP_INFEASIBLE:
        raise InfeasibleException(result.message)
    if result.status == LP_UNBOUNDED:
        raise UnboundedException(result.message)
    if result.status != 0:
        raise SolverException(f"LP failed ({result.status}): {result.message}")

    return np.asarray(result.x, dtype=float), float(result.fun)


def solve_qp(qp: QuadraticProgram) -> QPSolution:
    """Solves a convex quadratic program with OSQP.

    Problems without any constraint are solved in closed form.
    """
    log = logging.getLogger(__name__)

    a_ub, b_ub = qp.ineq_constraints
    a_eq, b_eq = qp.eq_constraints

    if not a_ub.size and not a_eq.size:
        optimum = np.linalg.lstsq(qp.hessian, -qp.linear, rcond=None)[0]
        return QPSolution(optimum, qp.objective(optimum), 0, "solved")

    constraints = sparse.csc_matrix(np.vstack((a_ub, a_eq)))
    lower = np.concatenate((np.full(b_ub.size, -np.inf), b_eq))
    upper = np.concatenate((b_ub, b_eq))

    solver = osqp.OSQP()
    solver.setup(
        P=sparse.triu(sparse.csc_matrix(qp.hessian), format="csc"),
        q=qp.linear,
        A=constraints,
        l=lower,
        u=upper,
        verbose=False,
        eps_abs=constants.QP_EPS_ABS,
        eps_rel=constants.QP_EPS_REL,
        eps_prim_inf=constants.QP_EPS_INFEASIBLE,
        eps_dual_inf=constants.QP_EPS_INFEASIBLE,
        max_iter=constants.QP_MAX_ITER,
        adaptive_rho_interval=constants.QP_ADAPTIVE_RHO_INTERVAL,
        polish=True,
    )
    result = solver.solve()
    status = result.info.status

    if "primal infeasible" in status:
        raise InfeasibleException(f"QP is {status}")
    if "maximum iterations" in status:
        raise MaxIterationsException(
            f"QP stopped after {result.info.iter} iterations"
        )
    if status not in ("solved", "solved inaccurate"):
        raise SolverException(f"QP failed with status '{status}'")

    optimum = np.asarray(result.x, dtype=float)
    limit = residual_limit(qp)
    if qp.violation(optimum) > limit:
        log.info(
            f"OSQP left a violation of {qp.violation(optimum):.3e}, refining the "
            "solution with an interior point method"
        )
        optimum = refine_qp(qp)
        status = "solved refined"

    violation = qp.violation(optimum)
    if violation > limit:
        raise SolverException(
            f"QP solution violates its constraints by {violation:.3e} ({status})"
        )

    return QPSolution(optimum, qp.objective(optimum), int(result.info.iter), status)


def residual_limit(qp: QuadraticProgram) -> float:
    """Returns the largest constraint violation accepted for a QP solution.

    The tolerance scales with the largest right-hand side, as OSQP terminates on
    residuals relative to the constraint magnitudes.
    """
    bounds = np.concatenate((qp.ineq_constraints[1], qp.eq_constraints[1]))
    scale = max(1.0, float(np.max(np.abs(bounds), initial=0.0)))

    return constants.QP_RESIDUAL_TOLERANCE * scale


def refine_qp(qp: QuadraticProgram) -> np.ndarray:
    """Solves a quadratic program with the interior point solver used for the LMIs."""
    a_ub, b_ub = qp.ineq_constraints
    a_eq, b_eq = qp.eq_constraints

    x = cp.Variable(qp.n_vars)
    constraints = []
    if a_ub.size:
        constraints.append(a_ub @ x <= b_ub)
    if a_eq.size:
        constraints.append(a_eq @ x == b_eq)
    objective = 0.5 * cp.quad_form(x, cp.psd_wrap(qp.hessian)) + qp.linear @ x
    problem = cp.Problem(cp.Minimize(objective), constraints)

    try:
        problem.solve(solver=_sdp_solver())
    except cp.error.SolverError as err:
        raise SolverException(f"QP refinement failed: {err}")

    if problem.status == cp.INFEASIBLE:
        raise InfeasibleException("QP is primal infeasible")
    if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or x.value is None:
        raise SolverException(f"QP refinement failed with status '{problem.status}'")

    return np.asarray(x.value, dtype=float)


def dump_problem(qp: QuadraticProgram, path: str):
    """Writes a quadratic program to the given path as JSON."""
    with open(path, "w") as fout:
        fout.write(dumps(qp.to_dict()))
        fout.write("\n")


def load_problem(path: str) -> QuadraticProgram:
    """Reads a quadratic program previously written by dump_problem."""
    with open(path, "r") as fin:
        document = json.load(fin)

    n_vars = len(document["linear"])
    return QuadraticProgram(
        hessian=as_matrix(document["hessian"], n_vars, n_vars),
        linear=document["linear"],
        ineq_constraints=(
            document["ineq_constraints"]["matrix"],
            document["ineq_constraints"]["vector"],
        ),
        eq_constraints=(
            document["eq_constraints"]["matrix"],
            document["eq_constraints"]["vector"],
        ),
        constant=document["constant"],
    )


def lyapunov_cost(psi: np.ndarray, qbar: np.ndarray) -> np.ndarray:
    """Returns W solving ΨᵀWΨ − W + Q̄ = 0 for a single Schur stable Ψ."""
    return symmetrize(scipy.linalg.solve_discrete_lyapunov(psi.T, qbar))


def _sdp_solver() -> Optional[str]:
    """Returns the preferred installed conic solver for the vertex LMIs."""
    installed = cp.installed_solvers()

    for candidate in ("CLARABEL", "SCS"):
        if candidate in installed:
            return candidate

    return None


def _certify(
    W: np.ndarray,
    vertex_lifts: List[np.ndarray],
    qbar: np.ndarray,
    w_prev: Optional[np.ndarray],
) -> CostCertificate:
    """Computes the eigenvalue certificate of a candidate cost matrix."""
    residuals = [max_eigenvalue(psi.T @ W @ psi - W + qbar) for psi in vertex_lifts]
    monotone = None
    if w_prev is not None:
        monotone = max_eigenvalue(W - w_prev)

    return CostCertificate(W, residuals, monotone)


def _certified(certificate: CostCertificate) -> bool:
    if max(certificate.residuals) > constants.LMI_RESIDUAL_TOLERANCE:
        return False
    if np.min(np.linalg.eigvalsh(certificate.W)) <= 0:
        return False
    if certificate.monotone is not None:
        return certificate.monotone <= constants.LMI_MONOTONE_TOLERANCE

    return True


def find_cost_matrix(
    vertex_lifts: List[np.ndarray],
    qbar: np.ndarray,
    w_prev: Optional[np.ndarray] = None,
) -> CostCertificate:
    """Finds the minimum trace W satisfying the cost decrease LMI at every vertex.

    The LMIs ΨʲᵀWΨʲ − W + Q̄ ⪯ 0 are imposed with a small strict margin, and
    W ⪯ w_prev when a previous cost matrix is given. The solver result is
    certified by eigenvalues before being returned. When certification fails the
    previous matrix is returned if it still certifies.
    """
    log = logging.getLogger(__name__)

    qbar = symmetric_matrix(qbar, tolerance=1e-10)
    if w_prev is not None:
        w_prev = symmetric_matrix(w_prev, tolerance=1e-10)
    n_dim = qbar.shape[0]
    identity = np.eye(n_dim)

    W = cp.Variable((n_dim, n_dim), symmetric=True)
    lmis = [W >> constants.LMI_MARGIN * identity]
    for psi in vertex_lifts:
        residual = W - psi.T @ W @ psi - qbar
        lmis.append(0.5 * (residual + residual.T) >> constants.LMI_MARGIN * identity)
    if w_prev is not None:
        lmis.append(w_prev - W >> 0)

    problem = cp.Problem(cp.Minimize(cp.trace(W)), lmis)
    try:
        problem.solve(solver=_sdp_solver())
    except cp.error.SolverError as err:
        log.warning(f"Cost matrix solver failed: {err}")

    if problem.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) and W.value is not None:
        certificate = _certify(symmetrize(W.value), vertex_lifts, qbar, w_prev)

        # The solver may overshoot W ⪯ w_prev by its own accuracy. A small downward
        # shift restores it and moves the decrease residuals by no more than the shift.
        monotone = certificate.monotone
        if (
            monotone is not None
            and monotone > constants.LMI_MONOTONE_TOLERANCE
            and monotone <= constants.LMI_RESIDUAL_TOLERANCE
        ):
            shifted = certificate.W - (monotone + 1e-10) * identity
            certificate = _certify(shifted, vertex_lifts, qbar, w_prev)

        if _certified(certificate):
            return certificate

        log.warning(
            "Cost matrix failed certification with residual "
            f"{max(certificate.residuals):.3e} and monotone {certificate.monotone}"
        )
    else:
        log.warning(f"Cost matrix LMI reported status '{problem.status}'")

    if w_prev is not None:
        fallback = _certify(symmetrize(w_prev), vertex_lifts, qbar, None)
        if _certified(fallback):
            log.warning("Reusing the previous cost matrix")
            return CostCertificate(fallback.W, fallback.residuals, 0.0, reused=True)

    raise InfeasibleLMIException(
        "No cost matrix satisfies the decrease condition at every vertex"
    )


def synthesize_gain(
    vertex_pairs: List[Tuple[np.ndarray, np.ndarray]],
    Q: np.ndarray,
    R: np.ndarray,
) -> np.ndarray:
    """Synthesizes a feedback gain K quadratically stabilizing every (A, B) vertex.

    The gain minimises an upper bound on the infinite horizon LQ cost common to all
    vertices, with K = Y·X⁻¹ from the LMI in (X, Y).
    """
    log = logging.getLogger(__name__)

    n_x = Q.shape[0]
    n_u = R.shape[0]
    q_half = np.real(scipy.linalg.sqrtm(Q))
    r_half = np.real(scipy.linalg.sqrtm(R))

    X = cp.Variable((n_x, n_x), symmetric=True)
    Y = cp.Variable((n_u, n_x))
    bound = cp.Variable()

    zero_xx = np.zeros((n_x, n_x))
    zero_xu = np.zeros((n_x, n_u))
    zero_ux = np.zeros((n_u, n_x))

    lmis = [X >> np.eye(n_x)]
    for A, B in vertex_pairs:
        closed = A @ X + B @ Y
        block = cp.bmat(
            [
                [X, closed.T, (q_half @ X).T, (r_half @ Y).T],
                [closed, X, zero_xx, zero_xu],
                [q_half @ X, zero_xx, bound * np.eye(n_x), zero_xu],
                [r_half @ Y, zero_ux, zero_ux, bound * np.eye(n_u)],
            ]
        )
        lmis.append(0.5 * (block + block.T) >> 0)

    problem = cp.Problem(cp.Minimize(bound), lmis)
    try:
        problem.solve(solver=_sdp_solver())
    except cp.error.SolverError as err:
        raise InfeasibleLMIException(f"Gain synthesis failed: {err}")

    if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or X.value is None:
        raise InfeasibleLMIException(
            f"No common stabilizing gain exists (status '{problem.status}')"
        )

    gain = np.linalg.solve(symmetrize(X.value), Y.value.T).T
    log.info(f"Synthesized feedback gain K = {np.round(gain, 4).tolist()}")

    return gain
