"""Thinning simulation of marked point processes with stochastic intensity"""

import logging
from typing import List, Sequence, Tuple, Union

import numpy as np

from src.data.generator import Stream, substream
from src.errors import MajorantViolationError
from src.measures.environment import EnvironmentPath, Side, env_at
from src.pointproc.events import EventLog, merge
from src.pointproc.intensity import AdditiveKernel, RegimeKernel, majorant, partition_intervals

logger = logging.getLogger(__name__)

Kernel = Union[AdditiveKernel, RegimeKernel]

MAJORANT_SLACK = 1e-12


def _next_breakpoint(env: EnvironmentPath, kernel: AdditiveKernel, t: float, horizon: float) -> float:
    candidates = [horizon]
    if kernel.environment is not None:
        later = env.breakpoints[env.breakpoints > t]
        if later.size:
            candidates.append(float(later[0]))
    if kernel.baseline.table_times is not None:
        table = np.asarray(kernel.baseline.table_times)
        later = table[table > t]
        if later.size:
            candidates.append(float(later[0]))
    return min(candidates)


def _thin_additive(kernel: AdditiveKernel, env: EnvironmentPath, horizon: float, rng: np.random.Generator) -> EventLog:
    times: List[float] = []
    marks: List[float] = []
    mark_values = np.asarray(kernel.mark_law.marks, dtype=float)
    mark_probs = np.asarray(kernel.mark_law.probs, dtype=float)

    t = 0.0
    while t < horizon:
        window_end = _next_breakpoint(env, kernel, t, horizon)
        lam_bar = majorant(kernel, np.asarray(times), t)
        if lam_bar <= 0.0:
            t = window_end
            continue
        candidate = t + rng.exponential(1.0 / lam_bar)
        if candidate > window_end:
            # memoryless: restart from the window end with a refreshed majorant
            t = window_end
            continue
        t = candidate
        lam = float(kernel.intensity_path(np.array([t]), np.asarray(times), env, right_limit=False)[0])
        if lam > lam_bar * (1.0 + MAJORANT_SLACK):
            raise MajorantViolationError(t, lam, lam_bar)
        if rng.uniform() * lam_bar < lam:
            times.append(t)
            marks.append(float(rng.choice(mark_values, p=mark_probs)))

    return EventLog.from_arrays(times, marks, np.zeros(len(times), dtype=int), horizon)


def regime_jumps(
    rk: RegimeKernel,
    env: EnvironmentPath,
    xi0: int,
    horizon: float,
    rng: np.random.Generator,
) -> Tuple[List[float], List[int]]:
    """
    Jump times and post-jump states of the regime chain

    Candidates arrive at rate n_E * H0 with r uniform on [0, n_E * H0);
    a candidate moves the chain from i to j when r falls in
    Gamma^(i,j)(mu_{t-}).
    """
    rk._check_state(xi0)
    rate = rk.thinning_rate
    times: List[float] = []
    states: List[int] = []
    if rate <= 0.0:
        return times, states

    state = xi0
    t = 0.0
    while True:
        t += rng.exponential(1.0 / rate)
        if t > horizon:
            break
        r = rng.uniform(0.0, rate)
        nu = env_at(env, t, Side.LEFT)
        intervals = partition_intervals(rk, nu, state)
        if intervals and intervals[-1][1][1] > rate * (1.0 + MAJORANT_SLACK):
            raise MajorantViolationError(t, intervals[-1][1][1], rate)
        for j, (lo, hi) in intervals:
            if lo <= r < hi:
                state = j
                times.append(t)
                states.append(j)
                break
    return times, states


def simulate_thinning(
    kernel: Kernel,
    env: EnvironmentPath,
    horizon: float,
    rng: np.random.Generator,
    initial_state: int = 1,
) -> EventLog:
    """
    Simulate one channel by thinning a dominating Poisson stream

    Args:
        kernel: AdditiveKernel, or RegimeKernel for a regime chain
        env: Environment flow on [0, T]
        horizon: Terminal time T
        rng: Generator owned by this (path, channel)
        initial_state: Starting state for a RegimeKernel

    Returns:
        EventLog of accepted events; for a RegimeKernel the mark is the
        state entered at the jump

    Raises:
        MajorantViolationError: an evaluated intensity exceeded the bound
    """
    if isinstance(kernel, RegimeKernel):
        times, states = regime_jumps(kernel, env, initial_state, horizon, rng)
        return EventLog.from_arrays(times, states, np.zeros(len(times), dtype=int), horizon)
    return _thin_additive(kernel, env, horizon, rng)


def simulate_channels(
    kernels: Sequence[Kernel],
    env: EnvironmentPath,
    horizon: float,
    seed: int,
    path: int,
    initial_state: int = 1,
) -> EventLog:
    """Simulate every channel of one path from its own substream and merge by time"""
    logs = [
        simulate_thinning(kernel, env, horizon, substream(seed, path, j, Stream.EVENTS), initial_state)
        for j, kernel in enumerate(kernels)
    ]
    return merge(logs, horizon)


def replicate_counts(kernel: AdditiveKernel, env: EnvironmentPath, horizon: float, seed: int, replications: int) -> np.ndarray:
    """Event count N_T of independent replications"""
    counts = np.empty(replications, dtype=int)
    for p in range(replications):
        counts[p] = len(simulate_thinning(kernel, env, horizon, substream(seed, p, 0, Stream.EVENTS)))
    logger.debug("simulated %d replications, mean count %.4f", replications, counts.mean())
    return counts
