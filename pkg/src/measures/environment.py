"""Step-function environment flows t -> mu_t of empirical measures"""

from enum import Enum
from typing import List, Optional, Sequence

import numpy as np

from src.errors import OutOfHorizonError
from src.measures.empirical import EmpiricalMeasure, MeasureFunctional, w2_distance


class Side(str, Enum):
    """Evaluation side for a cadlag flow"""
    RIGHT = "right"
    LEFT = "left"


class EnvironmentPath:
    """Right-continuous step flow of empirical measures on [0, T]"""

    def __init__(self, breakpoints: Sequence[float], values: Sequence[EmpiricalMeasure], horizon: float):
        """
        Args:
            breakpoints: Strictly increasing times starting at 0, all <= horizon
            values: One measure per breakpoint, all of the same dimension
            horizon: Terminal time T > 0
        """
        times = np.asarray(breakpoints, dtype=float).reshape(-1)
        if horizon <= 0:
            raise ValueError("horizon must be positive")
        if times.size == 0 or times[0] != 0.0:
            raise ValueError("breakpoints must start at 0")
        if np.any(np.diff(times) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if times[-1] > horizon:
            raise OutOfHorizonError(f"breakpoint {times[-1]} beyond horizon {horizon}")
        if len(values) != times.size:
            raise ValueError(f"{times.size} breakpoints but {len(values)} values")
        dims = {v.dim for v in values}
        if len(dims) != 1:
            raise ValueError(f"environment values mix dimensions {sorted(dims)}")

        times.setflags(write=False)
        self._breakpoints = times
        self._values: List[EmpiricalMeasure] = list(values)
        self._horizon = float(horizon)

    @classmethod
    def constant(cls, nu: EmpiricalMeasure, horizon: float) -> "EnvironmentPath":
        return cls([0.0], [nu], horizon)

    @property
    def breakpoints(self) -> np.ndarray:
        return self._breakpoints

    @property
    def values(self) -> List[EmpiricalMeasure]:
        return list(self._values)

    @property
    def horizon(self) -> float:
        return self._horizon

    @property
    def initial(self) -> EmpiricalMeasure:
        """The initial distribution nu_0 = mu_0"""
        return self._values[0]

    @property
    def dim(self) -> int:
        return self._values[0].dim

    def index_at(self, t: float, side: Side = Side.RIGHT) -> int:
        if t < 0.0 or t > self._horizon:
            raise OutOfHorizonError(f"t={t} outside [0, {self._horizon}]")
        return int(self.indices_at(np.array([t]), side)[0])

    def indices_at(self, times: np.ndarray, side: Side = Side.RIGHT) -> np.ndarray:
        """Vectorized breakpoint index lookup"""
        times = np.asarray(times, dtype=float)
        if side == Side.RIGHT:
            idx = np.searchsorted(self._breakpoints, times, side="right") - 1
        else:
            idx = np.searchsorted(self._breakpoints, times, side="left") - 1
        # mu_{0-} := mu_0
        return np.maximum(idx, 0)

    def feature_path(self, functional: MeasureFunctional, times: np.ndarray, side: Side = Side.RIGHT) -> np.ndarray:
        """Evaluate a functional of mu_t (or mu_{t-}) at each time"""
        values = np.array([functional(v) for v in self._values])
        return values[self.indices_at(times, side)]

    def w2_sup_bound(self, reference: EmpiricalMeasure) -> float:
        """sup_t W2(mu_t, reference)^2, exact for a step flow"""
        return max(w2_distance(v, reference) ** 2 for v in self._values)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EnvironmentPath):
            return NotImplemented
        return (
            self._horizon == other._horizon
            and np.array_equal(self._breakpoints, other._breakpoints)
            and self._values == other._values
        )


def env_at(env: EnvironmentPath, t: float, side: Side = Side.RIGHT) -> EmpiricalMeasure:
    """
    Evaluate the flow at time t

    Args:
        env: Environment flow
        t: Time in [0, T]
        side: RIGHT for mu_t, LEFT for the predictable mu_{t-}

    Returns:
        Measure in force at t (or just before t)
    """
    return env._values[env.index_at(t, Side(side))]


def dumps(env: EnvironmentPath) -> str:
    """
    Serialize to line records

    First line: ``horizon <T> dim <d>``. Then one line per breakpoint:
    the time followed by ``x1,...,xd;w`` tokens. Floats use repr so the
    text round-trips exactly.
    """
    lines = [f"horizon {env.horizon!r} dim {env.dim}"]
    for t, nu in zip(env.breakpoints, env.values):
        atoms = " ".join(
            ",".join(repr(float(c)) for c in point) + ";" + repr(float(w))
            for point, w in zip(nu.points, nu.weights)
        )
        lines.append(f"{float(t)!r} {atoms}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> EnvironmentPath:
    """Parse the output of dumps"""
    rows = [line for line in text.splitlines() if line.strip()]
    if not rows:
        raise ValueError("empty environment record")
    header = rows[0].split()
    if len(header) != 4 or header[0] != "horizon" or header[2] != "dim":
        raise ValueError(f"bad environment header: {rows[0]!r}")
    horizon = float(header[1])
    dim = int(header[3])

    times: List[float] = []
    values: List[EmpiricalMeasure] = []
    for row in rows[1:]:
        tokens = row.split()
        times.append(float(tokens[0]))
        points, weights = [], []
        for token in tokens[1:]:
            coords, weight = token.split(";")
            point = [float(c) for c in coords.split(",")]
            if len(point) != dim:
                raise ValueError(f"atom {token!r} does not have dimension {dim}")
            points.append(point)
            weights.append(float(weight))
        values.append(EmpiricalMeasure(np.array(points), weights))
    return EnvironmentPath(times, values, horizon)


def sup_w2_to(env: EnvironmentPath, reference: Optional[EmpiricalMeasure] = None) -> float:
    """Convenience wrapper: bound against nu_0 by default"""
    return env.w2_sup_bound(reference if reference is not None else env.initial)
