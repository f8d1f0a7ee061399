"""Intensity kernels: additive (baseline + environment + self-excitation) and regime-switching"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate

from src.errors import MajorantViolationError, MissingBoundError
from src.measures.empirical import EmpiricalMeasure, MeasureFunctional
from src.measures.environment import EnvironmentPath, Side
from src.pointproc.events import EventLog

RATE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Baseline:
    """Deterministic baseline psi0(t): constant, piecewise-constant table, or callable with a bound"""
    level: float = 0.0
    table_times: Optional[Tuple[float, ...]] = None
    table_values: Optional[Tuple[float, ...]] = None
    fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    bound: Optional[float] = None

    def __post_init__(self):
        if self.table_times is not None:
            if self.table_values is None or len(self.table_times) != len(self.table_values):
                raise ValueError("baseline table needs matching times and values")
            if self.table_times[0] != 0.0 or np.any(np.diff(self.table_times) <= 0):
                raise ValueError("baseline table times must start at 0 and increase")
            if min(self.table_values) < 0:
                raise ValueError("baseline table values must be nonnegative")
        elif self.fn is None and self.level < 0:
            raise ValueError("baseline level must be nonnegative")

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.fn is not None:
            return np.asarray(self.fn(t), dtype=float)
        if self.table_times is not None:
            idx = np.searchsorted(self.table_times, t, side="right") - 1
            return np.asarray(self.table_values, dtype=float)[np.maximum(idx, 0)]
        return np.full(t.shape, self.level)

    def upper_bound(self) -> float:
        if self.fn is not None:
            if self.bound is None:
                raise MissingBoundError("callable baseline needs a declared bound")
            return float(self.bound)
        if self.table_times is not None:
            return float(max(self.table_values))
        return float(self.level)

    def integral(self, t: float) -> float:
        """int_0^t psi0(s) ds"""
        if self.fn is not None:
            return float(integrate.quad(lambda s: float(self.fn(np.asarray(s))), 0.0, t, limit=200)[0])
        if self.table_times is not None:
            edges = np.append(np.asarray(self.table_times), np.inf)
            widths = np.clip(np.minimum(edges[1:], t) - edges[:-1], 0.0, None)
            return float(np.dot(widths, self.table_values))
        return float(self.level * t)


@dataclass(frozen=True)
class EnvironmentTerm:
    """psi1(nu) = scale * functional(nu), nonnegative, with a declared upper bound"""
    functional: MeasureFunctional
    scale: float = 1.0
    bound: Optional[float] = None
    support_radius: Optional[float] = None

    def __call__(self, nu: EmpiricalMeasure) -> float:
        value = self.scale * self.functional(nu)
        if value < 0:
            raise ValueError(f"environment term is negative ({value:.6g})")
        return value

    def upper_bound(self) -> float:
        if self.bound is None:
            raise MissingBoundError("environment term needs a declared upper bound")
        return float(self.bound)

    def lipschitz(self) -> float:
        return abs(self.scale) * self.functional.lipschitz_constant(self.support_radius)


class ExcitationFamily(str, Enum):
    """Admissible self-excitation lag kernels"""
    NONE = "none"
    EXPONENTIAL = "exponential"
    PIECEWISE = "piecewise"


@dataclass(frozen=True)
class Excitation:
    """
    Non-increasing lag kernel psi2(u) >= 0

    EXPONENTIAL: a * exp(-b u). PIECEWISE: value values[k] on
    [edges[k], edges[k+1]), zero beyond the last edge.
    """
    family: ExcitationFamily = ExcitationFamily.NONE
    a: float = 0.0
    b: float = 0.0
    edges: Optional[Tuple[float, ...]] = None
    values: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.family == ExcitationFamily.EXPONENTIAL:
            if self.a < 0 or self.b < 0:
                raise ValueError("exponential excitation needs a >= 0 and b >= 0")
        if self.family == ExcitationFamily.PIECEWISE:
            if self.edges is None or self.values is None or len(self.edges) != len(self.values) + 1:
                raise ValueError("piecewise excitation needs len(edges) == len(values) + 1")
            if self.edges[0] != 0.0 or np.any(np.diff(self.edges) <= 0):
                raise ValueError("piecewise edges must start at 0 and increase")
            vals = np.asarray(self.values)
            if np.any(vals < 0) or np.any(np.diff(vals) > 0):
                raise ValueError("piecewise excitation must be nonnegative and non-increasing")

    @property
    def active(self) -> bool:
        return self.family != ExcitationFamily.NONE

    def __call__(self, lag) -> np.ndarray:
        u = np.asarray(lag, dtype=float)
        if self.family == ExcitationFamily.EXPONENTIAL:
            return self.a * np.exp(-self.b * u)
        if self.family == ExcitationFamily.PIECEWISE:
            edges = np.asarray(self.edges)
            idx = np.searchsorted(edges, u, side="right") - 1
            vals = np.append(np.asarray(self.values, dtype=float), 0.0)
            return vals[np.maximum(idx, 0)]
        return np.zeros(u.shape)

    def value_at_zero(self) -> float:
        return float(self(0.0))

    def integral(self, lag) -> np.ndarray:
        """int_0^u psi2(s) ds"""
        u = np.asarray(lag, dtype=float)
        if self.family == ExcitationFamily.EXPONENTIAL:
            if self.b == 0:
                return self.a * u
            return self.a / self.b * (1.0 - np.exp(-self.b * u))
        if self.family == ExcitationFamily.PIECEWISE:
            edges = np.asarray(self.edges)
            widths = np.clip(np.minimum(edges[1:], u[..., None]) - edges[:-1], 0.0, None)
            return widths @ np.asarray(self.values, dtype=float)
        return np.zeros(u.shape)

    def branching_ratio(self) -> float:
        """int_0^inf psi2"""
        if self.family == ExcitationFamily.EXPONENTIAL:
            return np.inf if self.b == 0 else self.a / self.b
        return float(self.integral(np.inf)) if self.active else 0.0

    def is_non_increasing(self, horizon: float, points: int = 1000) -> bool:
        grid = np.linspace(0.0, horizon, points)
        vals = self(grid)
        return bool(np.all(vals >= 0) and np.all(np.diff(vals) <= RATE_TOLERANCE))


@dataclass(frozen=True)
class MarkLaw:
    """Finite discrete mark distribution Q on R"""
    marks: Tuple[float, ...] = (1.0,)
    probs: Tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if len(self.marks) != len(self.probs) or len(self.marks) == 0:
            raise ValueError("mark law needs matching non-empty marks and probabilities")
        if len(set(self.marks)) != len(self.marks):
            raise ValueError("marks must be distinct")
        p = np.asarray(self.probs)
        if np.any(p < 0) or abs(p.sum() - 1.0) > RATE_TOLERANCE:
            raise ValueError("mark probabilities must be nonnegative and sum to 1")

    @property
    def size(self) -> int:
        return len(self.marks)

    def index_of(self, marks: np.ndarray) -> np.ndarray:
        """Mark cell index of each mark value"""
        table = np.asarray(self.marks)
        idx = np.array([int(np.flatnonzero(table == m)[0]) for m in np.asarray(marks).reshape(-1)], dtype=int)
        return idx


@dataclass(frozen=True)
class AdditiveKernel:
    """K(t, dr) = lambda_t Q(dr) with lambda_t = psi0(t) + psi1(mu_{t-}) + sum psi2(t - tau)"""
    baseline: Baseline = field(default_factory=Baseline)
    environment: Optional[EnvironmentTerm] = None
    excitation: Excitation = field(default_factory=Excitation)
    mark_law: MarkLaw = field(default_factory=MarkLaw)

    @classmethod
    def constant(cls, rate: float, mark_law: Optional[MarkLaw] = None) -> "AdditiveKernel":
        return cls(baseline=Baseline(level=rate), mark_law=mark_law or MarkLaw())

    @classmethod
    def hawkes(cls, base_rate: float, a: float, b: float, mark_law: Optional[MarkLaw] = None) -> "AdditiveKernel":
        return cls(
            baseline=Baseline(level=base_rate),
            excitation=Excitation(ExcitationFamily.EXPONENTIAL, a=a, b=b),
            mark_law=mark_law or MarkLaw(),
        )

    def static_bound(self) -> float:
        """bound(psi0) + bound(psi1)"""
        total = self.baseline.upper_bound()
        if self.environment is not None:
            total += self.environment.upper_bound()
        return total

    def env_values(self, env: EnvironmentPath) -> np.ndarray:
        """psi1 at each environment breakpoint value"""
        if self.environment is None:
            return np.zeros(len(env.breakpoints))
        return np.array([self.environment(v) for v in env.values])

    def intensity_path(
        self,
        times: np.ndarray,
        history_times: np.ndarray,
        env: EnvironmentPath,
        right_limit: bool = False,
    ) -> np.ndarray:
        """
        Vectorized intensity along a time vector

        Args:
            times: Evaluation times
            history_times: Event times of this channel
            env: Environment flow
            right_limit: False gives the predictable value lambda_t (events < t,
                mu_{t-}); True gives lambda_{t+} (events <= t, mu_t)

        Returns:
            Intensity at each time
        """
        times = np.asarray(times, dtype=float)
        lam = self.baseline(times)
        if self.environment is not None:
            side = Side.RIGHT if right_limit else Side.LEFT
            lam = lam + self.env_values(env)[env.indices_at(times, side)]
        hist = np.asarray(history_times, dtype=float)
        if self.excitation.active and hist.size:
            lags = times[:, None] - hist[None, :]
            mask = lags >= 0 if right_limit else lags > 0
            contrib = np.where(mask, self.excitation(np.where(mask, lags, 0.0)), 0.0)
            lam = lam + contrib.sum(axis=1)
        return lam

    def compensator(self, times: np.ndarray, history_times: np.ndarray, env: EnvironmentPath) -> np.ndarray:
        """Lambda(t) = int_0^t lambda_s ds, exact along the step environment"""
        times = np.asarray(times, dtype=float)
        out = np.array([self.baseline.integral(t) for t in times])
        if self.environment is not None:
            edges = np.append(env.breakpoints, np.inf)
            vals = self.env_values(env)
            widths = np.clip(np.minimum(edges[1:][None, :], times[:, None]) - edges[:-1][None, :], 0.0, None)
            out = out + widths @ vals
        hist = np.asarray(history_times, dtype=float)
        if self.excitation.active and hist.size:
            lags = np.clip(times[:, None] - hist[None, :], 0.0, None)
            out = out + self.excitation.integral(lags).sum(axis=1)
        return out


def _channel_times(history: EventLog, channel: Optional[int]) -> np.ndarray:
    if channel is None:
        return history.times
    return history.times[history.channels == channel]


def eval_intensity(
    k: AdditiveKernel,
    t: float,
    history: EventLog,
    env: EnvironmentPath,
    channel: Optional[int] = None,
) -> float:
    """
    Predictable intensity lambda_t

    psi0(t) + psi1(mu_{t-}) + sum over tau < t of psi2(t - tau). Events at
    exactly t are ignored, so the value does not depend on them.
    """
    times = _channel_times(history, channel)
    return float(k.intensity_path(np.array([t]), times, env, right_limit=False)[0])


def majorant(k: AdditiveKernel, history_times: np.ndarray, t_from: float) -> float:
    """bound(psi0) + bound(psi1) + sum over tau <= t_from of psi2(t_from - tau)"""
    # psi2 is non-increasing by construction, so its value at t_from dominates the window
    rate = k.static_bound()
    past = np.asarray(history_times, dtype=float)
    past = past[past <= t_from]
    if k.excitation.active and past.size:
        rate += float(np.sum(k.excitation(t_from - past)))
    return rate


def dominating_rate(
    k: AdditiveKernel,
    history: EventLog,
    t_from: float,
    t_to: float,
    channel: Optional[int] = None,
) -> float:
    """
    Majorant of the intensity on (t_from, t_to] with history frozen at t_from

    Uses declared bounds for psi0 and psi1 and the monotone decay of psi2.

    Raises:
        MissingBoundError: a bound is not declared
    """
    if not t_from < t_to:
        raise ValueError("dominating_rate needs t_from < t_to")
    return majorant(k, _channel_times(history, channel), t_from)


class RegimeKernel:
    """Environment-dependent generator Q(nu) on states {1, ..., n}"""

    def __init__(
        self,
        n_states: int,
        rate_matrix: Callable[[EmpiricalMeasure], np.ndarray],
        h0: float,
        lipschitz: Optional[np.ndarray] = None,
    ):
        """
        Args:
            n_states: Number of states n_E
            rate_matrix: nu -> n_E x n_E conservative rate matrix
            h0: Declared bound on every off-diagonal row sum
            lipschitz: Optional per-entry W2-Lipschitz constants
        """
        if n_states < 1:
            raise ValueError("need at least one state")
        if h0 < 0:
            raise ValueError("H0 must be nonnegative")
        self.n_states = int(n_states)
        self._rate_matrix = rate_matrix
        self.h0 = float(h0)
        self.lipschitz = None if lipschitz is None else np.asarray(lipschitz, dtype=float)

    @classmethod
    def constant(cls, q: Sequence[Sequence[float]], h0: Optional[float] = None) -> "RegimeKernel":
        mat = np.asarray(q, dtype=float)
        off = mat - np.diag(np.diag(mat))
        bound = float(off.sum(axis=1).max()) if h0 is None else h0
        return cls(mat.shape[0], lambda nu: mat, bound, lipschitz=np.zeros_like(mat))

    @property
    def states(self) -> List[int]:
        return list(range(1, self.n_states + 1))

    @property
    def thinning_rate(self) -> float:
        """Candidate rate covering every lexicographic interval"""
        return self.n_states * self.h0

    def Q(self, nu: EmpiricalMeasure) -> np.ndarray:
        """Validated rate matrix at nu"""
        mat = np.asarray(self._rate_matrix(nu), dtype=float)
        n = self.n_states
        if mat.shape != (n, n):
            raise ValueError(f"rate matrix has shape {mat.shape}, expected {(n, n)}")
        off = mat - np.diag(np.diag(mat))
        if np.any(off < 0):
            raise ValueError("off-diagonal rates must be nonnegative")
        scale = max(1.0, float(np.abs(mat).max()))
        if np.any(np.abs(mat.sum(axis=1)) > RATE_TOLERANCE * scale):
            raise ValueError("rate matrix rows must sum to zero")
        row_mass = off.sum(axis=1)
        if np.any(row_mass > self.h0 * (1.0 + RATE_TOLERANCE)):
            worst = float(row_mass.max())
            raise MajorantViolationError(time=float("nan"), intensity=worst, bound=self.h0)
        return mat

    def is_irreducible(self, nu: EmpiricalMeasure) -> bool:
        off = (self.Q(nu) - np.diag(np.diag(self.Q(nu)))) > 0
        reach = np.eye(self.n_states, dtype=bool) | off
        for _ in range(self.n_states):
            reach = reach | ((reach.astype(int) @ reach.astype(int)) > 0)
        return bool(reach.all())

    def _check_state(self, i: int) -> None:
        if i not in range(1, self.n_states + 1):
            raise ValueError(f"state {i} outside 1..{self.n_states}")


def partition_intervals(rk: RegimeKernel, nu: EmpiricalMeasure, i: int) -> List[Tuple[int, Tuple[float, float]]]:
    """
    Intervals Gamma^(i,j)(nu) for j != i

    Off-diagonal pairs are laid end to end in row-major order, so the
    offset of (i, j) is the total rate of all pairs preceding it.

    Returns:
        [(j, (lo, hi)), ...] with hi - lo = Q^(i,j)(nu)
    """
    rk._check_state(i)
    mat = rk.Q(nu)
    offset = 0.0
    out: List[Tuple[int, Tuple[float, float]]] = []
    for row in range(1, rk.n_states + 1):
        for col in range(1, rk.n_states + 1):
            if row == col:
                continue
            rate = float(mat[row - 1, col - 1])
            if row == i:
                out.append((col, (offset, offset + rate)))
            offset += rate
    return out


def q_jump(rk: RegimeKernel, nu: EmpiricalMeasure, i: int, r: float) -> int:
    """Displacement j - i if r lies in Gamma^(i,j)(nu), else 0"""
    if r < 0:
        raise ValueError("r must be nonnegative")
    for j, (lo, hi) in partition_intervals(rk, nu, i):
        if lo <= r < hi:
            return j - i
    return 0
