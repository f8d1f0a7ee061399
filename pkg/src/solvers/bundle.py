"""Path bundles: discretized noise, environment features and kernel masses on a shared grid"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.data.generator import EnvironmentGenerator, Stream, substream
from src.errors import NoiseMismatchError
from src.measures.empirical import EmpiricalMeasure, MeasureFunctional, mean_functional
from src.measures.environment import EnvironmentPath, Side
from src.pointproc.events import EventLog
from src.pointproc.intensity import AdditiveKernel, RegimeKernel
from src.pointproc.thinning import simulate_channels
from src.solvers.grid import TimeGrid

logger = logging.getLogger(__name__)

Kernel = Union[AdditiveKernel, RegimeKernel]


@dataclass(frozen=True)
class NoiseSpec:
    """Brownian dimension k and one intensity kernel per jump channel"""
    kernels: Tuple[Kernel, ...]
    brownian_dim: int = 1
    initial_state: int = 1

    @property
    def channels(self) -> int:
        return len(self.kernels)

    def mark_table(self) -> np.ndarray:
        """(l, R) mark values, NaN-padded to the widest channel"""
        rows = [self._marks(k) for k in self.kernels]
        width = max((len(r) for r in rows), default=1)
        table = np.full((max(len(rows), 1), width), np.nan)
        for j, row in enumerate(rows):
            table[j, :len(row)] = row
        return table

    @property
    def regime_channel(self) -> Optional[int]:
        for j, k in enumerate(self.kernels):
            if isinstance(k, RegimeKernel):
                return j
        return None

    @staticmethod
    def _marks(kernel: Kernel) -> List[float]:
        if isinstance(kernel, RegimeKernel):
            return [float(s) for s in kernel.states]
        return [float(m) for m in kernel.mark_law.marks]


@dataclass(frozen=True)
class StepContext:
    """Everything a coefficient may read at grid node t_m, vectorized over paths"""
    step: int
    t: float
    dt: float
    features: Dict[str, np.ndarray]
    features_left: Dict[str, np.ndarray]
    kernel_mass: np.ndarray
    regime: Optional[np.ndarray] = None

    @property
    def n_paths(self) -> int:
        return self.kernel_mass.shape[0]

    def take(self, rows: np.ndarray) -> "StepContext":
        """Context restricted (or resampled) to the given path rows"""
        return StepContext(
            step=self.step,
            t=self.t,
            dt=self.dt,
            features={k: v[rows] for k, v in self.features.items()},
            features_left={k: v[rows] for k, v in self.features_left.items()},
            kernel_mass=self.kernel_mass[rows],
            regime=None if self.regime is None else self.regime[rows],
        )


@dataclass
class PathBundle:
    """
    Shared noise for forward and backward solvers

    Shapes: x0 (P, d), dW (P, N, k), dN (P, N, l, R), kernel_mass
    (P, N, l, R) holding K(t_m+, {r}), features (P, N+1) per name,
    regime (P, N+1) or None.
    """
    grid: TimeGrid
    x0: np.ndarray
    dW: np.ndarray
    dN: np.ndarray
    kernel_mass: np.ndarray
    features: Dict[str, np.ndarray] = field(default_factory=dict)
    features_left: Dict[str, np.ndarray] = field(default_factory=dict)
    regime: Optional[np.ndarray] = None
    mark_values: Optional[np.ndarray] = None
    events: Optional[List[EventLog]] = None
    environments: Optional[List[EnvironmentPath]] = None
    seed: Optional[int] = None

    def __post_init__(self):
        P, N = self.dW.shape[0], self.grid.steps
        if self.x0.ndim != 2 or self.x0.shape[0] != P:
            raise NoiseMismatchError(f"x0 has shape {self.x0.shape}, expected ({P}, d)")
        if self.dW.shape[1] != N:
            raise NoiseMismatchError(f"dW has {self.dW.shape[1]} steps, grid has {N}")
        if self.dN.shape[:2] != (P, N) or self.kernel_mass.shape != self.dN.shape:
            raise NoiseMismatchError("jump counts and kernel masses must share shape (P, N, l, R)")
        for name, values in list(self.features.items()) + list(self.features_left.items()):
            if values.shape != (P, N + 1):
                raise NoiseMismatchError(f"feature {name} has shape {values.shape}")

    @property
    def n_paths(self) -> int:
        return self.dW.shape[0]

    @property
    def steps(self) -> int:
        return self.grid.steps

    @property
    def brownian_dim(self) -> int:
        return self.dW.shape[2]

    @property
    def channels(self) -> int:
        return self.dN.shape[2]

    @property
    def mark_cells(self) -> int:
        return self.dN.shape[3]

    @property
    def dt(self) -> np.ndarray:
        return self.grid.dt

    @property
    def W(self) -> np.ndarray:
        """Brownian path on the grid, (P, N+1, k)"""
        return np.concatenate([np.zeros((self.n_paths, 1, self.brownian_dim)), np.cumsum(self.dW, axis=1)], axis=1)

    def compensated(self) -> np.ndarray:
        """dN - K dt, (P, N, l, R)"""
        return self.dN - self.kernel_mass * self.dt[None, :, None, None]

    def context(self, m: int) -> StepContext:
        """Context at node m; m = N gives the terminal context with zero jump mass"""
        N = self.steps
        if m < N:
            mass = self.kernel_mass[:, m]
            dt = float(self.dt[m])
        else:
            mass = np.zeros_like(self.kernel_mass[:, 0])
            dt = 0.0
        return StepContext(
            step=m,
            t=float(self.grid.times[m]),
            dt=dt,
            features={k: v[:, m] for k, v in self.features.items()},
            features_left={k: v[:, m] for k, v in self.features_left.items()},
            kernel_mass=mass,
            regime=None if self.regime is None else self.regime[:, m],
        )

    def same_noise(self, other: "PathBundle") -> bool:
        return (
            self.grid == other.grid
            and np.array_equal(self.dW, other.dW)
            and np.array_equal(self.dN, other.dN)
            and np.array_equal(self.kernel_mass, other.kernel_mass)
        )


def _discretize_path(
    noise: NoiseSpec,
    env: EnvironmentPath,
    log: EventLog,
    grid: TimeGrid,
    mark_table: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """Counts, kernel masses and regime states of one path"""
    N = grid.steps
    l, R = mark_table.shape
    dN = np.zeros((N, l, R))
    mass = np.zeros((N, l, R))
    left_nodes = grid.times[:-1]
    regime = None

    for j, kernel in enumerate(noise.kernels):
        keep = log.channels == j
        tau, marks = log.times[keep], log.marks[keep]
        if tau.size:
            cells = grid.cell_of(tau)
            cols = np.array([int(np.flatnonzero(mark_table[j] == r)[0]) for r in marks])
            np.add.at(dN, (cells, j, cols), 1.0)

        if isinstance(kernel, RegimeKernel):
            # state after every jump <= t_m
            states = np.concatenate([[noise.initial_state], marks.astype(int)])
            regime = states[np.searchsorted(tau, grid.times, side="right")]
            env_idx = env.indices_at(left_nodes, Side.RIGHT)
            rates = [kernel.Q(v) for v in env.values]
            for m in range(N):
                row = rates[env_idx[m]][regime[m] - 1].copy()
                row[regime[m] - 1] = 0.0
                mass[m, j, :kernel.n_states] = row
        else:
            lam = kernel.intensity_path(left_nodes, tau, env, right_limit=True)
            probs = np.asarray(kernel.mark_law.probs)
            mass[:, j, :probs.size] = lam[:, None] * probs[None, :]

    return dN, mass, regime


def build_bundle(
    noise: NoiseSpec,
    environment: EnvironmentGenerator,
    horizon: float,
    steps: int,
    n_paths: int,
    seed: int,
    x0: Union[EmpiricalMeasure, Sequence[float]],
    functionals: Optional[Sequence[MeasureFunctional]] = None,
    keep_events: bool = False,
) -> PathBundle:
    """
    Simulate a bundle of paths on one shared grid

    The grid is the uniform grid plus the deterministic environment
    breakpoints. Each event is counted in the cell (t_m, t_{m+1}] holding
    it. Every path draws from its own substreams, so path p does not
    depend on the bundle size.

    Args:
        noise: Brownian dimension and channel kernels
        environment: Environment flow generator
        horizon: Terminal time T
        steps: Number of uniform steps N
        n_paths: Number of paths P
        seed: Master seed
        x0: Initial measure to sample from, or a fixed initial vector
        functionals: Environment features exposed to coefficients and
            regression bases (mean for one-dimensional environments)
        keep_events: Keep the EventLogs and environments on the bundle

    Returns:
        PathBundle
    """
    grid = TimeGrid.build(horizon, steps, breakpoints=environment.deterministic_breakpoints())
    N = grid.steps
    mark_table = noise.mark_table()
    l, R = mark_table.shape
    if functionals is None:
        functionals = [mean_functional()] if environment.initial.dim == 1 else []

    x0_arr = np.empty((n_paths, _initial_dim(x0)))
    dW = np.empty((n_paths, N, noise.brownian_dim))
    dN = np.zeros((n_paths, N, l, R))
    mass = np.zeros((n_paths, N, l, R))
    features = {f.name: np.empty((n_paths, N + 1)) for f in functionals}
    features_left = {f.name: np.empty((n_paths, N + 1)) for f in functionals}
    regime = np.empty((n_paths, N + 1), dtype=int) if noise.regime_channel is not None else None
    events: List[EventLog] = []
    envs = environment.generate_batch(seed, n_paths)
    sqrt_dt = np.sqrt(grid.dt)

    for p in range(n_paths):
        env = envs[p]
        if noise.channels:
            log = simulate_channels(noise.kernels, env, horizon, seed, p, noise.initial_state)
        else:
            log = EventLog.empty(horizon)
        if noise.channels:
            dN[p], mass[p], reg = _discretize_path(noise, env, log, grid, mark_table)
            if regime is not None:
                regime[p] = reg
        dW[p] = substream(seed, p, 0, Stream.BROWNIAN).standard_normal((N, noise.brownian_dim)) * sqrt_dt[:, None]
        x0_arr[p] = _initial_value(x0, substream(seed, p, 0, Stream.INITIAL))
        for f in functionals:
            features[f.name][p] = env.feature_path(f, grid.times, Side.RIGHT)
            features_left[f.name][p] = env.feature_path(f, grid.times, Side.LEFT)
        if keep_events:
            events.append(log)

    logger.info("built bundle: %d paths, %d steps, %d channels", n_paths, N, noise.channels)
    return PathBundle(
        grid=grid,
        x0=x0_arr,
        dW=dW,
        dN=dN,
        kernel_mass=mass,
        features=features,
        features_left=features_left,
        regime=regime,
        mark_values=mark_table,
        events=events if keep_events else None,
        environments=envs if keep_events else None,
        seed=seed,
    )


def bundle_from_realization(
    noise: NoiseSpec,
    env: EnvironmentPath,
    log: EventLog,
    dW: np.ndarray,
    grid: TimeGrid,
    x0: Sequence[float],
    functionals: Optional[Sequence[MeasureFunctional]] = None,
) -> PathBundle:
    """
    Single-path bundle from a given realization

    The grid should already contain the event times (TimeGrid.build with
    event_times) so each jump sits at a node.
    """
    dW = np.asarray(dW, dtype=float).reshape(grid.steps, -1)
    if dW.shape[1] != noise.brownian_dim:
        raise NoiseMismatchError("Brownian increments do not match the noise dimension")
    mark_table = noise.mark_table()
    if noise.channels:
        dN, mass, reg = _discretize_path(noise, env, log, grid, mark_table)
    else:
        dN = mass = np.zeros((grid.steps, 1, 1))
        reg = None
    if functionals is None:
        functionals = [mean_functional()] if env.dim == 1 else []
    return PathBundle(
        grid=grid,
        x0=np.asarray(x0, dtype=float).reshape(1, -1),
        dW=dW[None],
        dN=dN[None],
        kernel_mass=mass[None],
        features={f.name: env.feature_path(f, grid.times, Side.RIGHT)[None] for f in functionals},
        features_left={f.name: env.feature_path(f, grid.times, Side.LEFT)[None] for f in functionals},
        regime=None if reg is None else reg[None],
        mark_values=mark_table,
        events=[log],
        environments=[env],
    )


def _initial_dim(x0) -> int:
    if isinstance(x0, EmpiricalMeasure):
        return x0.dim
    return int(np.asarray(x0, dtype=float).reshape(-1).size)


def _initial_value(x0, rng: np.random.Generator) -> np.ndarray:
    if isinstance(x0, EmpiricalMeasure):
        return x0.sample(rng, 1)[0]
    return np.asarray(x0, dtype=float).reshape(-1)
