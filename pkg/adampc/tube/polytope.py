"""H-representation polytopes and invariant set synthesis.

SPDX-License-Identifier: BSD-3-Clause
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Tuple

import numpy as np
import scipy.linalg
from adampc.tube import constants
from adampc.tube.exceptions import (
    ConicInfeasibleException,
    DimensionUnsupportedException,
    EmptyIntersectionException,
    GeometryException,
    InfeasibleException,
    IterationCapException,
    NotContractiveException,
    UnboundedException,
    UnstableException,
)
from adampc.tube.helpers import (
    as_matrix,
    as_vector,
    inf_norm,
    spectral_radius,
    unit_directions,
)
from adampc.tube.solvers import LinearProgram, solve_lp
from scipy.spatial import ConvexHull, HalfspaceIntersection


class Polytope:
    """A set {x : normals·x ≤ offsets}."""

    def __init__(self, normals: Any, offsets: Any):
        normals = np.asarray(normals, dtype=float)
        if normals.ndim == 1:
            normals = normals.reshape(1, -1)
        offsets = as_vector(offsets)

        if normals.shape[0] < 1:
            raise ValueError("a polytope needs at least one row")
        if normals.shape[0] != offsets.size:
            raise ValueError(
                f"{normals.shape[0]} normals given with {offsets.size} offsets"
            )
        if np.any(np.all(np.abs(normals) <= constants.ZERO_TOLERANCE, axis=1)):
            raise ValueError("every row of normals must be nonzero")

        self.normals = normals
        self.offsets = offsets

    def __repr__(self) -> str:
        return f"Polytope(n_rows={self.n_rows}, n_dim={self.n_dim})"

    @property
    def n_dim(self) -> int:
        return self.normals.shape[1]

    @property
    def n_rows(self) -> int:
        return self.normals.shape[0]

    @classmethod
    def box(cls, lower: Any, upper: Any) -> "Polytope":
        """Returns the axis-aligned box lower ≤ x ≤ upper."""
        lower = as_vector(lower)
        upper = as_vector(upper, lower.size)
        identity = np.eye(lower.size)

        return cls(np.vstack((identity, -identity)), np.concatenate((upper, -lower)))

    @classmethod
    def from_dict(cls, document: Dict[str, Any]) -> "Polytope":
        return cls(document["normals"], document["offsets"])

    def to_dict(self) -> Dict[str, Any]:
        return {"normals": self.normals.tolist(), "offsets": self.offsets.tolist()}

    def contains(self, points: Any, tolerance: float = constants.MEMBERSHIP_TOLERANCE):
        """Tests membership of a point, or of each row of a 2D array of points."""
        points = np.asarray(points, dtype=float)
        inside = np.all(
            np.atleast_2d(points) @ self.normals.T <= self.offsets + tolerance, axis=1
        )

        if points.ndim == 1:
            return bool(inside[0])
        return inside

    def normalized(self) -> "Polytope":
        """Returns the same set written as {x : V·x ≤ 1}.

        Only defined when the origin lies in the interior (every offset positive).
        """
        if np.any(self.offsets <= constants.ZERO_TOLERANCE):
            raise GeometryException("origin is not in the interior of the polytope")

        return Polytope(self.normals / self.offsets[:, None], np.ones(self.n_rows))


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """A set {θ : (θ − center)ᵀ·shape·(θ − center) ≤ level}."""

    center: np.ndarray
    shape: np.ndarray
    level: float

    def __post_init__(self):
        center = as_vector(self.center)
        shape = as_matrix(self.shape, center.size, center.size)

        if np.max(np.abs(shape - shape.T)) > 1e-12 * max(1.0, np.max(np.abs(shape))):
            raise ValueError("ellipsoid shape is not symmetric")
        if np.min(np.linalg.eigvalsh(shape)) <= 0:
            raise ValueError("ellipsoid shape is not positive definite")
        if not self.level > 0:
            raise ValueError(f"ellipsoid level must be positive, got {self.level}")

        object.__setattr__(self, "center", center)
        object.__setattr__(self, "shape", 0.5 * (shape + shape.T))
        object.__setattr__(self, "level", float(self.level))

    @property
    def n_dim(self) -> int:
        return self.center.size

    def contains(self, points: Any, tolerance: float = constants.MEMBERSHIP_TOLERANCE):
        """Tests membership of a point, or of each row of a 2D array of points."""
        points = np.asarray(points, dtype=float)
        offset = np.atleast_2d(points) - self.center
        inside = np.einsum("ij,jk,ik->i", offset, self.shape, offset) <= (
            self.level + tolerance
        )

        if points.ndim == 1:
            return bool(inside[0])
        return inside

    def boundary_points(self, count: int, seed: int = 0) -> np.ndarray:
        """Returns points sampled on the ellipsoid boundary."""
        generator = np.random.default_rng(seed)
        directions = generator.standard_normal((count, self.n_dim))
        directions /= np.linalg.norm(directions, axis=1)[:, None]

        # With shape = L·Lᵀ, θ = center + sqrt(level)·L⁻ᵀu lies on the boundary.
        lower = np.linalg.cholesky(self.shape)
        offsets = scipy.linalg.solve_triangular(lower.T, directions.T, lower=False)

        return self.center + np.sqrt(self.level) * offsets.T


class VertexSet:
    """The extreme points of a bounded polytope, one point per row."""

    def __init__(self, points: Any):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))

    def __len__(self) -> int:
        return self.points.shape[0]

    def __iter__(self):
        return iter(self.points)

    @property
    def n_dim(self) -> int:
        return self.points.shape[1]

    @classmethod
    def from_dict(cls, document: Dict[str, Any]) -> "VertexSet":
        return cls(document["points"])

    def to_dict(self) -> Dict[str, Any]:
        return {"points": self.points.tolist()}

    def contains(self, point: Any) -> bool:
        """Tests whether a point is in the convex hull, by a feasibility LP."""
        point = as_vector(point, self.n_dim)
        count = len(self)
        lp = LinearProgram(
            objective=np.zeros(count),
            eq_constraints=(
                np.vstack((self.points.T, np.ones((1, count)))),
                np.concatenate((point, [1.0])),
            ),
            bounds=[(0, None)] * count,
        )

        try:
            solve_lp(lp)
        except InfeasibleException:
            return False

        return True


def support(polytope: Polytope, direction: Any) -> Tuple[float, np.ndarray]:
    """Returns max cᵀx over the polytope, and a maximizer."""
    direction = as_vector(direction, polytope.n_dim)
    lp = LinearProgram(
        objective=-direction,
        ineq_constraints=(polytope.normals, polytope.offsets),
    )
    maximizer, value = solve_lp(lp)

    return -value, maximizer


def _is_empty(polytope: Polytope) -> bool:
    lp = LinearProgram(
        objective=np.zeros(polytope.n_dim),
        ineq_constraints=(polytope.normals, polytope.offsets),
    )
    try:
        solve_lp(lp)
    except InfeasibleException:
        return True

    return False


def remove_redundancy(polytope: Polytope) -> Polytope:
    """Returns the polytope with every redundant row removed.

    Row i is redundant when maximising its normal over the remaining rows, with
    row i itself relaxed by one, stays below its offset.
    """
    if _is_empty(polytope):
        raise InfeasibleException("cannot remove redundancy from an empty polytope")

    # Rows are compared on a unit-norm scale; the original scaling is returned.
    scale = np.linalg.norm(polytope.normals, axis=1)
    normals = polytope.normals / scale[:, None]
    offsets = polytope.offsets / scale

    kept = np.ones(polytope.n_rows, dtype=bool)
    for row in range(polytope.n_rows):
        candidates = kept.copy()
        relaxed = offsets.copy()
        relaxed[row] += 1.0

        lp = LinearProgram(
            objective=-normals[row],
            ineq_constraints=(normals[candidates], relaxed[candidates]),
        )
        try:
            _, value = solve_lp(lp)
        except UnboundedException:
            continue

        if -value <= offsets[row] + constants.REDUNDANCY_TOLERANCE:
            kept[row] = False

    return Polytope(polytope.normals[kept], polytope.offsets[kept])


def intersect(first: Polytope, second: Polytope) -> Polytope:
    """Returns the irredundant intersection of two polytopes."""
    if first.n_dim != second.n_dim:
        raise ValueError(
            f"cannot intersect polytopes of dimension {first.n_dim} and {second.n_dim}"
        )

    stacked = Polytope(
        np.vstack((first.normals, second.normals)),
        np.concatenate((first.offsets, second.offsets)),
    )
    try:
        return remove_redundancy(stacked)
    except InfeasibleException:
        raise EmptyIntersectionException("polytope intersection is empty")


def chebyshev_center(polytope: Polytope) -> Tuple[np.ndarray, float]:
    """Returns the centre and radius of the largest ball inside the polytope."""
    norms = np.linalg.norm(polytope.normals, axis=1)
    objective = np.zeros(polytope.n_dim + 1)
    objective[-1] = -1.0

    lp = LinearProgram(
        objective=objective,
        ineq_constraints=(
            np.column_stack((polytope.normals, norms)),
            polytope.offsets,
        ),
        bounds=[(None, None)] * polytope.n_dim + [(0, None)],
    )
    optimum, _ = solve_lp(lp)

    return optimum[:-1], float(optimum[-1])


def _bounding_box(polytope: Polytope) -> Tuple[np.ndarray, np.ndarray]:
    identity = np.eye(polytope.n_dim)
    upper = np.array([support(polytope, axis)[0] for axis in identity])
    lower = np.array([-support(polytope, -axis)[0] for axis in identity])

    return lower, upper


def _unique_points(points: np.ndarray, tolerance: float = 1e-9) -> np.ndarray:
    unique = []
    for point in points:
        if all(np.max(np.abs(point - other)) > tolerance for other in unique):
            unique.append(point)

    return np.array(unique)


def vertices(polytope: Polytope) -> VertexSet:
    """Enumerates the extreme points of a bounded polytope in up to 3 dimensions.

    Points are ordered counter-clockwise in 2D.
    """
    n_dim = polytope.n_dim
    if n_dim > 3:
        raise DimensionUnsupportedException(
            f"vertex enumeration is limited to 3 dimensions, got {n_dim}"
        )
    if _is_empty(polytope):
        raise InfeasibleException("cannot enumerate the vertices of an empty polytope")

    lower, upper = _bounding_box(polytope)

    if n_dim == 1:
        if upper[0] - lower[0] <= 1e-9:
            return VertexSet([[lower[0]]])
        return VertexSet([[lower[0]], [upper[0]]])

    center, radius = chebyshev_center(polytope)
    if radius <= 1e-9:
        if np.all(upper - lower <= 1e-9):
            return VertexSet([center])
        raise GeometryException("polytope is not full-dimensional")

    halfspaces = np.column_stack((polytope.normals, -polytope.offsets))
    intersection = HalfspaceIntersection(halfspaces, center)
    points = _unique_points(intersection.intersections)

    hull = ConvexHull(points)
    if n_dim == 2:
        # ConvexHull returns 2D vertices in counter-clockwise order.
        return VertexSet(points[hull.vertices])

    return VertexSet(points[np.sort(hull.vertices)])


def from_vertices(vertex_set: VertexSet) -> Polytope:
    """Returns the H-representation of the convex hull of a vertex set."""
    if vertex_set.n_dim == 1:
        points = vertex_set.points
        return Polytope.box(points.min(axis=0), points.max(axis=0))
    if vertex_set.n_dim > 3:
        raise DimensionUnsupportedException(
            f"hull facets are limited to 3 dimensions, got {vertex_set.n_dim}"
        )

    equations = ConvexHull(vertex_set.points).equations
    return Polytope(equations[:, :-1], -equations[:, -1])


def ellipsoid_outer_polytope(ellipsoid: Ellipsoid, n_dirs: int) -> Polytope:
    """Returns the polytope bounded by tangent halfspaces of the ellipsoid.

    One halfspace dᵀθ ≤ dᵀc + sqrt(level·dᵀ·shape⁻¹·d) is added per direction d.
    """
    if n_dirs < ellipsoid.n_dim + 1:
        raise ValueError(
            f"at least {ellipsoid.n_dim + 1} directions are needed, got {n_dirs}"
        )

    directions = unit_directions(ellipsoid.n_dim, n_dirs)
    factor = scipy.linalg.cho_factor(ellipsoid.shape)
    spread = np.einsum(
        "ij,ji->i", directions, scipy.linalg.cho_solve(factor, directions.T)
    )
    offsets = directions @ ellipsoid.center + np.sqrt(ellipsoid.level * spread)

    return Polytope(directions, offsets)


def _factor_row(V: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Returns the minimal row-sum h ≥ 0 with hV = target."""
    count = V.shape[0]
    lp = LinearProgram(
        objective=np.ones(count),
        eq_constraints=(V.T, target),
        bounds=[(0, None)] * count,
    )
    try:
        row, _ = solve_lp(lp)
    except InfeasibleException:
        raise ConicInfeasibleException(
            f"row {np.round(target, 6).tolist()} is outside the cone of the shape rows"
        )

    # Re-solve the equality on the support of the basic solution to remove the
    # solver's feasibility error.
    active = row > constants.FACTOR_TOLERANCE
    refined = np.zeros(count)
    refined[active] = np.linalg.lstsq(V[active].T, target, rcond=None)[0]
    if np.all(refined >= -constants.ZERO_TOLERANCE) and np.max(
        np.abs(refined @ V - target)
    ) <= np.max(np.abs(row @ V - target)):
        row = refined

    return np.clip(row, 0.0, None)


def nonneg_factor(V: Any, M: Any) -> np.ndarray:
    """Returns H ≥ 0 with H·V = M, each row of minimal sum."""
    V = as_matrix(V)
    M = as_matrix(M, cols=V.shape[1])

    H = np.vstack([_factor_row(V, target) for target in M])

    residual = np.max(np.abs(H @ V - M))
    if residual > constants.FACTOR_TOLERANCE * max(1.0, np.max(np.abs(M))):
        raise ConicInfeasibleException(
            f"non-negative factor has residual {residual:.3e}"
        )

    return H


def _drop_trivial_rows(normals: np.ndarray, offsets: np.ndarray):
    """Removes zero rows, which hold trivially when their offset is non-negative."""
    trivial = np.all(np.abs(normals) <= constants.ZERO_TOLERANCE, axis=1)
    if np.any(offsets[trivial] < 0):
        raise InfeasibleException("a zero row has a negative offset")

    return normals[~trivial], offsets[~trivial]


def _row_maxima(polytope: Polytope, normals: np.ndarray) -> np.ndarray:
    """Returns max nᵀx over the polytope for each row n."""
    if polytope.n_dim <= 3:
        points = vertices(polytope).points
        return np.max(normals @ points.T, axis=1)

    return np.array([support(polytope, row)[0] for row in normals])


def _preimage_rows(polytope: Polytope, vertex_maps: List[np.ndarray], scale=1.0):
    """Returns the rows of {x : φx ∈ scale·P} for every map φ."""
    normals = np.vstack([polytope.normals @ phi for phi in vertex_maps])
    offsets = scale * np.tile(polytope.offsets, len(vertex_maps))

    return _drop_trivial_rows(normals, offsets)


def mrpi_set(
    vertex_maps: List[np.ndarray],
    constraint: Polytope,
    max_iter: int = constants.DEFAULT_MAX_ITER,
) -> Polytope:
    """Computes the maximal robustly positively invariant set inside a constraint.

    Rows of the constraint mapped through every vertex map are added until all
    new rows are redundant. The result is written as {x : V·x ≤ 1}.
    """
    log = logging.getLogger(__name__)

    for phi in vertex_maps:
        radius = spectral_radius(phi)
        if radius >= 1.0:
            raise UnstableException(f"vertex map has spectral radius {radius:.4f}")

    omega = remove_redundancy(constraint).normalized()
    for iteration in range(max_iter):
        normals, offsets = _preimage_rows(omega, vertex_maps)
        if normals.shape[0] == 0:
            return omega

        maxima = _row_maxima(omega, normals)
        violated = maxima > offsets + constants.REDUNDANCY_TOLERANCE
        if not np.any(violated):
            log.debug(f"Invariant set converged after {iteration} iterations")
            return omega

        omega = remove_redundancy(
            Polytope(
                np.vstack((omega.normals, normals[violated])),
                np.concatenate((omega.offsets, offsets[violated])),
            )
        ).normalized()

    raise IterationCapException(
        f"invariant set did not converge within {max_iter} iterations"
    )


def lambda_contractive_shape(
    vertex_maps: List[np.ndarray],
    lambda_c: float,
    seed: Polytope,
    max_iter: int = constants.DEFAULT_MAX_ITER,
) -> np.ndarray:
    """Returns a shape matrix V whose set {x : V·x ≤ 1} is λ-contractive.

    The seed is intersected with the preimage of λ times itself under every vertex
    map until one step contraction holds, certified by the non-negative factors.
    """
    log = logging.getLogger(__name__)

    if not 0.0 < lambda_c < 1.0:
        raise ValueError(f"lambda_c must lie in (0, 1), got {lambda_c}")

    shape = remove_redundancy(seed).normalized()
    for iteration in range(max_iter):
        normals, offsets = _preimage_rows(shape, vertex_maps, scale=lambda_c)
        maxima = _row_maxima(shape, normals)
        violated = maxima > offsets + constants.REDUNDANCY_TOLERANCE

        if not np.any(violated):
            V = shape.normals
            contraction = max(
                inf_norm(nonneg_factor(V, V @ phi)) for phi in vertex_maps
            )
            if contraction <= lambda_c + constants.REDUNDANCY_TOLERANCE:
                log.debug(
                    f"Contractive shape with {V.shape[0]} rows after {iteration} "
                    f"iterations, contraction {contraction:.4f}"
                )
                return V
            raise NotContractiveException(
                f"contraction {contraction:.4f} exceeds {lambda_c} on an invariant "
                "shape"
            )

        shape = remove_redundancy(
            Polytope(
                np.vstack((shape.normals, normals[violated])),
                np.concatenate((shape.offsets, offsets[violated])),
            )
        ).normalized()

    raise NotContractiveException(
        f"no {lambda_c}-contractive shape found within {max_iter} iterations"
    )
