"""Seeded random substreams and synthetic environment flows"""

from enum import IntEnum, Enum
from typing import List, Optional, Sequence

import numpy as np

from src.measures.empirical import EmpiricalMeasure
from src.measures.environment import EnvironmentPath


class Stream(IntEnum):
    """Purpose codes mixed into substream seeds"""
    ENVIRONMENT = 0
    EVENTS = 1
    BROWNIAN = 2
    INITIAL = 3
    REGIME = 4
    SAMPLING = 5


def substream(seed: int, path: int, channel: int = 0, purpose: Stream = Stream.EVENTS) -> np.random.Generator:
    """
    Independent generator for one (seed, path, channel, purpose) tuple

    The stream is PCG64 seeded by numpy's SeedSequence with entropy
    [seed, path, channel, purpose]; it depends on nothing else, so any
    path can be regenerated in isolation.
    """
    if seed is None:
        raise ValueError("a master seed is required")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(path), int(channel), int(purpose)])))


class EnvironmentKind(str, Enum):
    """Types of environment flow"""
    CONSTANT = "constant"
    STEPS = "steps"
    COMMON_SHOCK = "common_shock"


class EnvironmentGenerator:
    """Generates environment flows, deterministic or driven by a common shock"""

    def __init__(
        self,
        initial: EmpiricalMeasure,
        horizon: float,
        kind: EnvironmentKind = EnvironmentKind.CONSTANT,
        step_times: Optional[Sequence[float]] = None,
        step_values: Optional[Sequence[EmpiricalMeasure]] = None,
        shock_rate: float = 0.0,
        shock_scale: float = 0.0,
        clip_radius: Optional[float] = None,
    ):
        """
        Initialize environment generator

        Args:
            initial: Initial distribution nu_0
            horizon: Terminal time T
            kind: Flow type
            step_times: Breakpoints after 0 for STEPS flows
            step_values: Measures in force from each step time on
            shock_rate: Poisson rate of common shocks (COMMON_SHOCK)
            shock_scale: Standard deviation of each shock
            clip_radius: Atoms are clipped into [-R, R] after each shock
        """
        self.initial = initial
        self.horizon = float(horizon)
        self.kind = EnvironmentKind(kind)
        self.step_times = list(step_times or [])
        self.step_values = list(step_values or [])
        self.shock_rate = float(shock_rate)
        self.shock_scale = float(shock_scale)
        self.clip_radius = clip_radius

        if self.kind == EnvironmentKind.STEPS and len(self.step_times) != len(self.step_values):
            raise ValueError("step flow needs one measure per step time")
        if self.shock_rate < 0 or self.shock_scale < 0:
            raise ValueError("shock rate and scale must be nonnegative")

    @property
    def is_deterministic(self) -> bool:
        return self.kind != EnvironmentKind.COMMON_SHOCK or self.shock_rate == 0.0

    def deterministic_breakpoints(self) -> List[float]:
        """Breakpoints shared by every path (empty for random flows)"""
        if self.kind == EnvironmentKind.STEPS:
            return [t for t in self.step_times if 0.0 < t < self.horizon]
        return []

    def generate(self, rng: Optional[np.random.Generator] = None) -> EnvironmentPath:
        """
        Generate one environment flow

        Args:
            rng: Generator for random flows (ignored by deterministic ones)

        Returns:
            EnvironmentPath on [0, T]
        """
        if self.kind == EnvironmentKind.CONSTANT:
            return EnvironmentPath.constant(self.initial, self.horizon)

        if self.kind == EnvironmentKind.STEPS:
            return EnvironmentPath([0.0] + self.step_times, [self.initial] + self.step_values, self.horizon)

        if rng is None:
            raise ValueError("common-shock flows need a generator")
        times = [0.0]
        values = [self.initial]
        points = self.initial.points.copy()
        t = 0.0
        while self.shock_rate > 0:
            t += rng.exponential(1.0 / self.shock_rate)
            if t >= self.horizon:
                break
            # one shock moves every atom
            points = points + rng.normal(0.0, self.shock_scale, size=(1, points.shape[1]))
            if self.clip_radius is not None:
                points = np.clip(points, -self.clip_radius, self.clip_radius)
            times.append(t)
            values.append(EmpiricalMeasure(points.copy(), self.initial.weights))
        return EnvironmentPath(times, values, self.horizon)

    def generate_batch(self, seed: int, n_paths: int) -> List[EnvironmentPath]:
        """One flow per path from the ENVIRONMENT substreams"""
        if self.is_deterministic:
            env = self.generate()
            return [env] * n_paths
        return [self.generate(substream(seed, p, 0, Stream.ENVIRONMENT)) for p in range(n_paths)]
