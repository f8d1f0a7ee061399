"""Regime-switching chain with an environment-dependent generator"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from src.data.generator import Stream, substream
from src.measures.environment import EnvironmentPath, Side, env_at
from src.pointproc.intensity import RegimeKernel
from src.pointproc.thinning import regime_jumps

logger = logging.getLogger(__name__)


@dataclass
class RegimePath:
    """Step path of the chain: `states[i]` holds on [times[i], times[i+1])"""
    times: np.ndarray
    states: np.ndarray
    horizon: float

    def state_at(self, t) -> np.ndarray:
        """State in force at t (right-continuous)"""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right") - 1
        return self.states[np.clip(idx, 0, None)]

    @property
    def jumps(self) -> int:
        return len(self.states) - 1

    def records(self) -> List[Tuple[float, int]]:
        """(time, state) step records starting at (0, xi0)"""
        return [(float(t), int(s)) for t, s in zip(self.times, self.states)]

    def occupation(self, n_states: int) -> np.ndarray:
        """Time spent in each state on [0, T]"""
        ends = np.append(self.times[1:], self.horizon)
        out = np.zeros(n_states)
        np.add.at(out, self.states - 1, ends - self.times)
        return out


def simulate_regime_chain(
    rk: RegimeKernel,
    env: EnvironmentPath,
    xi0: int,
    horizon: float,
    rng: np.random.Generator,
) -> RegimePath:
    """
    Simulate the chain by thinning against the dominating rate

    Candidates arrive at rate n_E * H0 with a uniform mark r; the chain
    moves from its current state i to j when r falls in the interval of
    (i, j) built from Q(mu_{t-}).

    Raises:
        ValueError: xi0 outside the state space
        MajorantViolationError: a row of Q exceeds the declared bound
    """
    times, states = regime_jumps(rk, env, xi0, horizon, rng)
    return RegimePath(
        times=np.concatenate([[0.0], np.asarray(times, dtype=float)]),
        states=np.concatenate([[xi0], np.asarray(states, dtype=int)]).astype(int),
        horizon=float(horizon),
    )


def replicate_chains(
    rk: RegimeKernel,
    env: EnvironmentPath,
    xi0: int,
    horizon: float,
    seed: int,
    replications: int,
) -> List[RegimePath]:
    """Independent chains, replication p drawing from its own substream"""
    return [
        simulate_regime_chain(rk, env, xi0, horizon, substream(seed, p, 0, Stream.REGIME))
        for p in range(replications)
    ]


def occupation_fraction(paths: Sequence[RegimePath], state: int, n_states: int) -> Tuple[float, float]:
    """Mean fraction of [0, T] spent in `state` with its standard error"""
    fractions = np.array([p.occupation(n_states)[state - 1] / p.horizon for p in paths])
    se = float(fractions.std(ddof=1) / np.sqrt(fractions.size)) if fractions.size > 1 else float("nan")
    return float(fractions.mean()), se


def holding_times(paths: Sequence[RegimePath], state: int) -> np.ndarray:
    """Completed sojourns in `state` (the final, censored one is dropped)"""
    out: List[float] = []
    for p in paths:
        durations = np.diff(p.times)
        out.extend(durations[p.states[:-1] == state].tolist())
    return np.asarray(out)


def empirical_generator(paths: Sequence[RegimePath], n_states: int) -> Dict[str, np.ndarray]:
    """
    Transition counts divided by occupation time

    Returns:
        rates (n_E x n_E, conservative), counts and occupation
    """
    counts = np.zeros((n_states, n_states))
    occupation = np.zeros(n_states)
    for p in paths:
        occupation += p.occupation(n_states)
        np.add.at(counts, (p.states[:-1] - 1, p.states[1:] - 1), 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        rates = np.where(occupation[:, None] > 0, counts / occupation[:, None], 0.0)
    np.fill_diagonal(rates, 0.0)
    np.fill_diagonal(rates, -rates.sum(axis=1))
    return {"rates": rates, "counts": counts, "occupation": occupation}


def segment_jump_counts(
    paths: Sequence[RegimePath],
    breakpoints: Sequence[float],
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mean number of jumps per segment between consecutive breakpoints

    Args:
        paths: Simulated chains on a common horizon
        breakpoints: Segment boundaries inside (0, T)

    Returns:
        (means, standard errors), one entry per segment
    """
    edges = np.concatenate([[0.0], np.asarray(breakpoints, dtype=float), [paths[0].horizon]])
    counts = np.array([np.histogram(p.times[1:], bins=edges)[0] for p in paths], dtype=float)
    se = counts.std(axis=0, ddof=1) / np.sqrt(counts.shape[0])
    return counts.mean(axis=0), se


def integrated_hazard(
    rk: RegimeKernel,
    env: EnvironmentPath,
    source: int,
    target: int,
    t_from: float,
    t_to: float,
) -> float:
    """Integral of Q^(source, target)(mu_t) over [t_from, t_to] along a step environment"""
    cuts = env.breakpoints[(env.breakpoints > t_from) & (env.breakpoints < t_to)]
    edges = np.concatenate([[t_from], cuts, [t_to]])
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        q = rk.Q(env_at(env, float(lo), Side.RIGHT))
        total += float(q[source - 1, target - 1]) * (hi - lo)
    return total
