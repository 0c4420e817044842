"""Convex constraint sets and Euclidean projection operators.

Every set descriptor is an immutable value object. Leaf sets (orthant, box,
simplex, halfspace, hyperplane, affine linearization) project in closed form;
intersections are projected with Dykstra's algorithm, which converges to the
true Euclidean projection rather than merely a feasible point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ProjectionError",
    "ProjectionResult",
    "ConstraintSet",
    "NonNegativeOrthant",
    "Box",
    "UnitSimplex",
    "Halfspace",
    "Hyperplane",
    "AffineLinearization",
    "Intersection",
    "ProductWithFree",
    "full_space",
    "project",
    "project_simplex",
    "project_affine_linearization",
    "feasibility_residual",
]


class ProjectionError(RuntimeError):
    """Iterative projection failed to converge (likely empty intersection)."""


@dataclass(frozen=True)
class ProjectionResult:
    """Outcome of a projection: the point, iterations used, and the
    maximum remaining distance to any member set."""

    point: np.ndarray
    iterations: int
    residual: float


def _as_vector(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-d vector, got shape {arr.shape}")
    return arr


class ConstraintSet:
    """Base class for convex set descriptors. Subclasses define ``dim`` and,
    for leaf sets, an exact ``_project`` method."""

    dim: int

    def _project(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class NonNegativeOrthant(ConstraintSet):
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    def _project(self, y):
        return np.maximum(y, 0.0)


@dataclass(frozen=True, eq=False)
class Box(ConstraintSet):
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = _as_vector(self.lower, "lower")
        upper = _as_vector(self.upper, "upper")
        if lower.shape != upper.shape:
            raise ValueError("lower and upper must have equal length")
        if np.any(lower > upper):
            raise ValueError("box requires lower <= upper componentwise")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def _project(self, y):
        return np.clip(y, self.lower, self.upper)


@dataclass(frozen=True, eq=False)
class UnitSimplex(ConstraintSet):
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    def _project(self, y):
        return project_simplex(y)


@dataclass(frozen=True, eq=False)
class Halfspace(ConstraintSet):
    """The set {x : <normal, x> >= offset}."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        normal = _as_vector(self.normal, "normal")
        if not np.any(normal):
            raise ValueError("halfspace normal must be nonzero")
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def dim(self) -> int:
        return self.normal.shape[0]

    def _project(self, y):
        gap = self.offset - float(self.normal @ y)
        if gap <= 0.0:
            # already feasible: no-op fast path
            return np.asarray(y, dtype=float)
        return y + (gap / float(self.normal @ self.normal)) * self.normal


@dataclass(frozen=True, eq=False)
class Hyperplane(ConstraintSet):
    """The set {x : <normal, x> = offset}."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        normal = _as_vector(self.normal, "normal")
        if not np.any(normal):
            raise ValueError("hyperplane normal must be nonzero")
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def dim(self) -> int:
        return self.normal.shape[0]

    def _project(self, y):
        shift = (float(self.normal @ y) - self.offset) / float(self.normal @ self.normal)
        return y - shift * self.normal


@dataclass(frozen=True, eq=False)
class AffineLinearization(ConstraintSet):
    """Hyperplane {z : <gradient, z> + value = 0}, as produced by linearizing
    a smooth equality constraint about the current iterate."""

    gradient: np.ndarray
    value: float

    def __post_init__(self):
        gradient = _as_vector(self.gradient, "gradient")
        if not np.any(gradient):
            raise ValueError("degenerate linearization: zero gradient")
        object.__setattr__(self, "gradient", gradient)
        object.__setattr__(self, "value", float(self.value))

    @property
    def dim(self) -> int:
        return self.gradient.shape[0]

    def _project(self, y):
        return project_affine_linearization(self.gradient, self.value, y)


@dataclass(frozen=True, eq=False)
class Intersection(ConstraintSet):
    """Intersection of convex sets, projected iteratively with Dykstra's
    algorithm. Feasibility of the intersection is the caller's responsibility
    and is checked lazily through projection convergence."""

    members: tuple

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("intersection requires at least one member set")
        dims = {m.dim for m in members}
        if len(dims) != 1:
            raise ValueError(f"member sets disagree on dimension: {sorted(dims)}")
        object.__setattr__(self, "members", members)

    @property
    def dim(self) -> int:
        return self.members[0].dim


@dataclass(frozen=True, eq=False)
class ProductWithFree(ConstraintSet):
    """Cartesian product of a base set with R^n_free: the trailing
    coordinates are unconstrained and pass through projection unchanged."""

    base: ConstraintSet
    n_free: int = 1

    def __post_init__(self):
        if self.n_free < 1:
            raise ValueError("n_free must be >= 1")

    @property
    def dim(self) -> int:
        return self.base.dim + self.n_free


def full_space(dim: int) -> Box:
    """The unconstrained set R^dim, expressed as a box with infinite bounds."""
    return Box(np.full(dim, -np.inf), np.full(dim, np.inf))


def project_simplex(y) -> np.ndarray:
    """Euclidean projection onto {x : x >= 0, sum(x) = 1}.

    Sort-and-threshold method, O(n log n). Ties at the threshold are handled
    by the strict positivity scan, which keeps equal elements together.
    """
    y = _as_vector(y, "y")
    if y.size == 0:
        raise ValueError("cannot project an empty vector")
    u = np.sort(y)[::-1]
    css = np.cumsum(u)
    j = np.arange(1, y.size + 1)
    positive = u + (1.0 - css) / j > 0.0
    k = int(np.nonzero(positive)[0][-1]) + 1
    tau = (css[k - 1] - 1.0) / k
    return np.maximum(y - tau, 0.0)


def project_affine_linearization(g, value: float, y) -> np.ndarray:
    """Project y onto the hyperplane {z : <g, z> + value = 0}.

    The result satisfies the linearized constraint exactly.
    """
    g = _as_vector(g, "g")
    if not np.any(g):
        raise ValueError("degenerate linearization: zero gradient")
    y = _as_vector(y, "y")
    return y - ((float(g @ y) + float(value)) / float(g @ g)) * g


def _member_residual(members, x, tol, max_iter) -> float:
    return max(
        float(np.linalg.norm(x - project(m, x, tol, max_iter).point))
        for m in members
    )


def _dykstra(members, y, tol: float, max_iter: int) -> ProjectionResult:
    x = np.array(y, dtype=float)
    corrections = [np.zeros_like(x) for _ in members]
    for it in range(1, max_iter + 1):
        x_prev = x.copy()
        corr_change_sq = 0.0
        for i, m in enumerate(members):
            w = x + corrections[i]
            px = project(m, w, tol, max_iter).point
            new_p = w - px
            corr_change_sq += float(np.sum((new_p - corrections[i]) ** 2))
            corrections[i] = new_p
            x = px
        # The iterate can stall for a full cycle at a feasible non-solution
        # while the corrections still move, so convergence needs the
        # correction increments to vanish too, not just the iterate change.
        if (
            float(np.linalg.norm(x - x_prev)) <= tol
            and math.sqrt(corr_change_sq) <= tol
        ):
            residual = _member_residual(members, x, tol, max_iter)
            if residual <= tol:
                return ProjectionResult(x, it, residual)
    raise ProjectionError(
        f"Dykstra did not converge in {max_iter} iterations "
        "(intersection may be empty)"
    )


def project(cset: ConstraintSet, y, tol: float = 1e-10, max_iter: int = 10000) -> ProjectionResult:
    """Euclidean projection of y onto the set.

    Closed form for leaf sets; Dykstra's alternating projections for
    intersections, terminating when the iterate change, the correction
    increments, and the feasibility residual all fall below tol.
    """
    y = _as_vector(y, "y")
    if y.shape[0] != cset.dim:
        raise ValueError(f"point has dimension {y.shape[0]}, set expects {cset.dim}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if isinstance(cset, Intersection):
        return _dykstra(cset.members, y, tol, max_iter)
    if isinstance(cset, ProductWithFree):
        head = project(cset.base, y[: cset.base.dim], tol, max_iter)
        point = np.concatenate([head.point, y[cset.base.dim:]])
        return ProjectionResult(point, head.iterations, head.residual)
    return ProjectionResult(cset._project(y), 0, 0.0)


def feasibility_residual(cset: ConstraintSet, y, tol: float = 1e-10, max_iter: int = 10000) -> float:
    """Distance from y to the set, measured through its projection."""
    return float(np.linalg.norm(_as_vector(y, "y") - project(cset, y, tol, max_iter).point))
