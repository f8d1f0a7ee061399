"""Tests for the regime-switching chain"""

import numpy as np
import pytest

from src.data.generator import substream
from src.measures.empirical import EmpiricalMeasure
from src.measures.environment import EnvironmentPath
from src.models.regime import (
    RegimePath,
    empirical_generator,
    holding_times,
    integrated_hazard,
    occupation_fraction,
    replicate_chains,
    segment_jump_counts,
    simulate_regime_chain,
)
from src.pointproc.intensity import RegimeKernel

Q = [[-1.0, 1.0], [2.0, -2.0]]


@pytest.fixture(scope="module")
def long_chains():
    T = 50.0
    env = EnvironmentPath.constant(EmpiricalMeasure.dirac(0.0), T)
    return replicate_chains(RegimeKernel.constant(Q), env, 1, T, seed=17, replications=200)


@pytest.fixture
def switching():
    """Symmetric rate 1 + mean(mu): 1 on [0, 0.5), 2 afterwards"""
    env = EnvironmentPath([0.0, 0.5], [EmpiricalMeasure.dirac(0.0), EmpiricalMeasure.dirac(1.0)], 1.0)

    def rates(nu):
        a = 1.0 + float(nu.mean()[0])
        return np.array([[-a, a], [a, -a]])

    return RegimeKernel(2, rates, h0=2.0), env


def test_regime_path_step_records():
    """A hand-built path reports states and occupation"""
    path = RegimePath(times=np.array([0.0, 0.4, 0.7]), states=np.array([1, 2, 1]), horizon=1.0)
    assert list(path.state_at([0.0, 0.4, 0.69, 1.0])) == [1, 2, 2, 1]
    assert path.jumps == 2
    np.testing.assert_allclose(path.occupation(2), [0.7, 0.3])
    assert path.records() == [(0.0, 1), (0.4, 2), (0.7, 1)]


def test_invalid_initial_state():
    """Initial states outside {1, ..., n} are rejected"""
    env = EnvironmentPath.constant(EmpiricalMeasure.dirac(0.0), 1.0)
    with pytest.raises(ValueError):
        simulate_regime_chain(RegimeKernel.constant(Q), env, 3, 1.0, substream(0, 0))


def test_stationary_occupation(long_chains):
    """Long-run time in state 1 is 2/3"""
    mean, se = occupation_fraction(long_chains, 1, 2)
    assert abs(mean - 2.0 / 3.0) < 4 * se + 0.005


def test_holding_times_are_exponential(long_chains):
    """Sojourns in state 1 have mean 1 / 1"""
    h = holding_times(long_chains, 1)
    assert h.size > 1000
    assert abs(h.mean() - 1.0) < 4 * h.std(ddof=1) / np.sqrt(h.size) + 0.02


def test_empirical_generator_recovers_rates(long_chains):
    """Counts over occupation estimate Q"""
    est = empirical_generator(long_chains, 2)
    np.testing.assert_allclose(est["rates"], Q, atol=0.15)
    np.testing.assert_allclose(est["rates"].sum(axis=1), 0.0, atol=1e-12)
    assert est["occupation"].sum() == pytest.approx(200 * 50.0)


def test_jumps_follow_environment(switching):
    """Mean jumps per segment equal the integrated hazard"""
    rk, env = switching
    paths = replicate_chains(rk, env, 1, 1.0, seed=23, replications=4000)
    means, se = segment_jump_counts(paths, [0.5])
    expected = [integrated_hazard(rk, env, 1, 2, 0.0, 0.5), integrated_hazard(rk, env, 1, 2, 0.5, 1.0)]
    np.testing.assert_allclose(expected, [0.5, 1.0])
    assert np.all(np.abs(means - expected) < 4 * se)


def test_chains_are_reproducible(switching):
    """Same seed gives the same chains"""
    rk, env = switching
    a = replicate_chains(rk, env, 2, 1.0, seed=5, replications=20)
    b = replicate_chains(rk, env, 2, 1.0, seed=5, replications=20)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.times, y.times)
        np.testing.assert_array_equal(x.states, y.states)
