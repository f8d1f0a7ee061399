"""Finite empirical measures, Wasserstein-2 distance and measure functionals"""

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
import ot
from scipy.optimize import linear_sum_assignment

from src.errors import DimensionMismatchError, NotExactlyComputableError

WEIGHT_TOLERANCE = 1e-12


class EmpiricalMeasure:
    """Finitely supported probability measure on R^d"""

    def __init__(self, points: Union[Sequence, np.ndarray], weights: Optional[Sequence[float]] = None):
        """
        Build a measure from atoms and weights

        Args:
            points: Atom locations, shape (K,) for d = 1 or (K, d)
            weights: Nonnegative weights summing to 1 (uniform if None)
        """
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("points must be a non-empty (K,) or (K, d) array")
        if weights is None:
            w = np.full(pts.shape[0], 1.0 / pts.shape[0])
        else:
            w = np.asarray(weights, dtype=float).reshape(-1)
        if w.shape[0] != pts.shape[0]:
            raise DimensionMismatchError(
                f"{pts.shape[0]} atoms but {w.shape[0]} weights"
            )
        if np.any(w <= 0.0):
            raise ValueError("atom weights must be strictly positive")
        if abs(w.sum() - 1.0) > WEIGHT_TOLERANCE:
            raise ValueError(f"weights sum to {w.sum():.17g}, expected 1")
        if not np.all(np.isfinite(pts)):
            raise ValueError("atom locations must be finite")

        pts.setflags(write=False)
        w.setflags(write=False)
        self._points = pts
        self._weights = w

    @classmethod
    def dirac(cls, point: Union[float, Sequence[float]]) -> "EmpiricalMeasure":
        """Point mass at a single location"""
        return cls(np.atleast_1d(np.asarray(point, dtype=float)).reshape(1, -1))

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def dim(self) -> int:
        return self._points.shape[1]

    @property
    def size(self) -> int:
        return self._points.shape[0]

    def second_moment(self) -> float:
        return float(np.sum(self._weights * np.sum(self._points ** 2, axis=1)))

    def mean(self) -> np.ndarray:
        return self._weights @ self._points

    def support_radius(self) -> float:
        return float(np.max(np.linalg.norm(self._points, axis=1)))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Draw count points, shape (count, d)"""
        idx = rng.choice(self.size, size=count, p=self._weights)
        return self._points[idx].copy()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmpiricalMeasure):
            return NotImplemented
        return (
            self._points.shape == other._points.shape
            and np.array_equal(self._points, other._points)
            and np.array_equal(self._weights, other._weights)
        )

    def __hash__(self) -> int:
        return hash((self._points.tobytes(), self._weights.tobytes()))

    def __repr__(self) -> str:
        return f"EmpiricalMeasure(size={self.size}, dim={self.dim})"


def w2_distance(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """
    Exact Wasserstein-2 distance

    d = 1 uses the monotone (quantile) coupling. For d > 1 only uniform
    measures with the same atom count are supported, solved as an
    assignment problem.

    Raises:
        DimensionMismatchError: measures live in different dimensions
        NotExactlyComputableError: d > 1 with non-uniform or unequal-count atoms
    """
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dimension {a.dim} vs {b.dim}")

    if a.dim == 1:
        cost = ot.emd2_1d(
            a.points[:, 0], b.points[:, 0],
            a.weights / a.weights.sum(), b.weights / b.weights.sum(),
            metric="sqeuclidean",
        )
        return float(np.sqrt(max(float(cost), 0.0)))

    uniform = (
        a.size == b.size
        and np.allclose(a.weights, 1.0 / a.size, rtol=0.0, atol=WEIGHT_TOLERANCE)
        and np.allclose(b.weights, 1.0 / b.size, rtol=0.0, atol=WEIGHT_TOLERANCE)
    )
    if not uniform:
        raise NotExactlyComputableError(
            "W2 for d > 1 requires equal-count uniform atom sets"
        )
    cost = np.sum((a.points[:, None, :] - b.points[None, :, :]) ** 2, axis=2)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].sum() / a.size))


class FunctionalKind(str, Enum):
    """Measure functionals usable in kernels and basis features"""
    MEAN = "mean"
    TRUNCATED_SECOND_MOMENT = "truncated_second_moment"
    LINEAR = "linear"


@dataclass(frozen=True)
class MeasureFunctional:
    """A scalar functional of a one-dimensional empirical measure"""
    kind: FunctionalKind
    radius: Optional[float] = None
    integrand: Optional[Callable[[np.ndarray], np.ndarray]] = None
    lipschitz: Optional[float] = None

    def __post_init__(self):
        if self.kind == FunctionalKind.TRUNCATED_SECOND_MOMENT:
            if self.radius is None or self.radius <= 0:
                raise ValueError("truncated_second_moment needs a radius r > 0")
        if self.kind == FunctionalKind.LINEAR:
            if self.integrand is None or self.lipschitz is None:
                raise ValueError("linear functional needs an integrand and its Lipschitz constant")

    @property
    def name(self) -> str:
        if self.kind == FunctionalKind.TRUNCATED_SECOND_MOMENT:
            return f"v_{self.radius:g}"
        return self.kind.value

    def __call__(self, nu: EmpiricalMeasure) -> float:
        return measure_functional(nu, self)

    def lipschitz_constant(self, support_radius: Optional[float] = None) -> float:
        """
        W2-Lipschitz constant of the functional

        For the truncated second moment the constant 2R only holds on
        measures whose atoms lie in the ball of radius R < r.
        """
        if self.kind == FunctionalKind.MEAN:
            return 1.0
        if self.kind == FunctionalKind.LINEAR:
            return float(self.lipschitz)
        if support_radius is None:
            raise ValueError("truncated second moment needs a declared support radius")
        if support_radius >= self.radius:
            raise ValueError(
                f"support radius {support_radius} must be below the truncation radius {self.radius}"
            )
        return 2.0 * support_radius


def mean_functional() -> MeasureFunctional:
    return MeasureFunctional(FunctionalKind.MEAN)


def truncated_second_moment(radius: float) -> MeasureFunctional:
    return MeasureFunctional(FunctionalKind.TRUNCATED_SECOND_MOMENT, radius=radius)


def linear_functional(integrand: Callable[[np.ndarray], np.ndarray], lipschitz: float) -> MeasureFunctional:
    return MeasureFunctional(FunctionalKind.LINEAR, integrand=integrand, lipschitz=lipschitz)


def measure_functional(nu: EmpiricalMeasure, functional: MeasureFunctional) -> float:
    """
    Evaluate a functional on a one-dimensional measure

    Args:
        nu: Measure on R
        functional: mean, truncated second moment over the open ball, or linear

    Returns:
        Functional value as float
    """
    if nu.dim != 1:
        raise DimensionMismatchError("measure functionals are defined for d = 1")
    x = nu.points[:, 0]
    if functional.kind == FunctionalKind.MEAN:
        return float(np.dot(nu.weights, x))
    if functional.kind == FunctionalKind.TRUNCATED_SECOND_MOMENT:
        inside = np.abs(x) < functional.radius
        return float(np.dot(nu.weights[inside], x[inside] ** 2))
    values = np.asarray(functional.integrand(x), dtype=float).reshape(-1)
    return float(np.dot(nu.weights, values))


def lipschitz_transport_gap(
    functional: MeasureFunctional,
    nu: EmpiricalMeasure,
    nu_prime: EmpiricalMeasure,
    support_radius: Optional[float] = None,
) -> Tuple[float, float]:
    """Return (|ψ(ν) − ψ(ν′)|, Lip·W2(ν, ν′)) for a transport-bound check"""
    gap = abs(functional(nu) - functional(nu_prime))
    bound = functional.lipschitz_constant(support_radius) * w2_distance(nu, nu_prime)
    return gap, bound
