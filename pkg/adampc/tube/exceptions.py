"""Adaptive MPC Exceptions.

SPDX-License-Identifier: BSD-3-Clause
"""


class AdaptiveMPCException(Exception):
    """The most generic form of exception raised by adaptive MPC."""


class GeometryException(AdaptiveMPCException):
    """Indicates that a set operation could not be completed."""


class UnboundedException(AdaptiveMPCException):
    """Indicates that a polytope is unbounded in a requested direction."""


class InfeasibleException(AdaptiveMPCException):
    """Indicates that a set or optimisation problem has no feasible point."""


class EmptyIntersectionException(GeometryException):
    """Indicates that the intersection of two polytopes is empty."""


class DimensionUnsupportedException(GeometryException):
    """Indicates that an operation is not supported in the given dimension."""


class ConicInfeasibleException(GeometryException):
    """Indicates that a matrix cannot be written as a non-negative combination of
    the rows of a shape matrix."""


class IterationCapException(GeometryException):
    """Indicates that an invariant set iteration did not converge."""


class UnstableException(GeometryException):
    """Indicates that a closed-loop map is not Schur stable."""


class NotContractiveException(GeometryException):
    """Indicates that a lambda-contractive set could not be certified."""


class SolverException(AdaptiveMPCException):
    """Indicates that an embedded solver failed."""


class MaxIterationsException(SolverException):
    """Indicates that a solver ran out of iterations."""


class InfeasibleLMIException(SolverException):
    """Indicates that no cost matrix satisfies the vertex LMIs."""


class HorizonCapException(AdaptiveMPCException):
    """Indicates that no terminal horizon below the cap satisfies the gamma bounds."""


class InfeasibleAtStepException(AdaptiveMPCException):
    """Indicates that the MPC problem became infeasible during a closed-loop run."""

    def __init__(self, step: int, message: str = None):
        self.step = step
        super().__init__(message or f"Problem infeasible at step {step}")


class SchemaException(AdaptiveMPCException):
    """Indicates that a scenario document is malformed."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class OrderingViolationException(AdaptiveMPCException):
    """Indicates that the performance ordering across controller modes failed."""


class MonitorViolationException(AdaptiveMPCException):
    """Indicates that a runtime monitor detected a violated guarantee."""
