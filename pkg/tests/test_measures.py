"""Tests for empirical measures, W2 and environment flows"""

from itertools import permutations

import numpy as np
import pytest

from src.errors import DimensionMismatchError, NotExactlyComputableError, OutOfHorizonError
from src.measures.empirical import (
    EmpiricalMeasure,
    lipschitz_transport_gap,
    mean_functional,
    truncated_second_moment,
    w2_distance,
)
from src.measures.environment import EnvironmentPath, Side, dumps, env_at, loads, sup_w2_to


def test_w2_between_diracs():
    """W2 of two point masses is their distance"""
    assert w2_distance(EmpiricalMeasure.dirac(0.0), EmpiricalMeasure.dirac(3.0)) == pytest.approx(3.0)


def test_w2_shifted_uniform():
    """Shifting every atom by c moves the measure by c"""
    a = EmpiricalMeasure([0.0, 1.0, 5.0])
    b = EmpiricalMeasure([1.5, 2.5, 6.5])
    assert w2_distance(a, b) == pytest.approx(1.5, abs=1e-12)


def test_w2_weighted_one_dimensional():
    """Weighted atoms use the quantile coupling"""
    a = EmpiricalMeasure([0.0, 1.0], [0.5, 0.5])
    b = EmpiricalMeasure([0.0], [1.0])
    assert w2_distance(a, b) == pytest.approx(np.sqrt(0.5))


def test_w2_multivariate_assignment():
    """Permuted atom sets are at distance zero"""
    a = EmpiricalMeasure([[0.0, 0.0], [1.0, 1.0]])
    b = EmpiricalMeasure([[1.0, 1.0], [0.0, 0.0]])
    assert w2_distance(a, b) == pytest.approx(0.0, abs=1e-12)


def test_w2_multivariate_non_uniform_rejected():
    """d > 1 with non-uniform weights has no exact algorithm here"""
    a = EmpiricalMeasure([[0.0, 0.0], [1.0, 1.0]], [0.3, 0.7])
    b = EmpiricalMeasure([[1.0, 1.0], [0.0, 0.0]])
    with pytest.raises(NotExactlyComputableError):
        w2_distance(a, b)


def test_w2_dimension_mismatch():
    """Measures in different dimensions cannot be compared"""
    with pytest.raises(DimensionMismatchError):
        w2_distance(EmpiricalMeasure.dirac(0.0), EmpiricalMeasure.dirac([0.0, 0.0]))


def test_weights_must_sum_to_one():
    """Unnormalized weights are rejected"""
    with pytest.raises(ValueError):
        EmpiricalMeasure([0.0, 1.0], [0.5, 0.6])


def test_truncated_second_moment_excludes_far_atoms():
    """Atoms outside the open ball do not contribute"""
    nu = EmpiricalMeasure([1.0, 3.0])
    assert truncated_second_moment(2.0)(nu) == pytest.approx(0.5)


def test_mean_functional_transport_bound():
    """|mean(nu) - mean(nu')| <= W2(nu, nu')"""
    rng = np.random.default_rng(7)
    for _ in range(50):
        nu = EmpiricalMeasure(rng.normal(size=8))
        nu_prime = EmpiricalMeasure(rng.normal(1.0, 2.0, size=8))
        gap, bound = lipschitz_transport_gap(mean_functional(), nu, nu_prime)
        assert gap <= bound + 1e-12


def test_truncated_moment_needs_support_radius_inside_ball():
    """The 2R constant requires R below the truncation radius"""
    v = truncated_second_moment(1.0)
    assert v.lipschitz_constant(0.5) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        v.lipschitz_constant(1.5)


@pytest.fixture
def step_env():
    return EnvironmentPath(
        [0.0, 0.5],
        [EmpiricalMeasure.dirac(0.0), EmpiricalMeasure([1.0, 3.0])],
        1.0,
    )


def test_env_right_and_left_limits(step_env):
    """mu_t jumps at a breakpoint, mu_{t-} still holds the old value"""
    assert env_at(step_env, 0.5, Side.RIGHT).mean()[0] == pytest.approx(2.0)
    assert env_at(step_env, 0.5, Side.LEFT).mean()[0] == pytest.approx(0.0)
    assert env_at(step_env, 0.0, Side.LEFT).mean()[0] == pytest.approx(0.0)


def test_env_outside_horizon(step_env):
    """Times beyond T are rejected"""
    with pytest.raises(OutOfHorizonError):
        env_at(step_env, 1.5)


def test_env_text_record_is_exact(step_env):
    """The text record reproduces the flow exactly"""
    assert loads(dumps(step_env)) == step_env


def test_env_sup_w2(step_env):
    """Supremum over a step flow is the largest step value"""
    # W2(uniform{1,3}, delta_0)^2 = (1 + 9) / 2
    assert sup_w2_to(step_env) == pytest.approx(5.0)


def test_breakpoints_must_increase():
    """Non-increasing breakpoints are rejected"""
    nu = EmpiricalMeasure.dirac(0.0)
    with pytest.raises(ValueError):
        EnvironmentPath([0.0, 0.5, 0.5], [nu, nu, nu], 1.0)


@pytest.mark.parametrize("dim", [1, 2])
def test_w2_matches_permutation_search(dim):
    """Exact W2 of uniform atom sets equals the best matching over all permutations"""
    rng = np.random.default_rng(dim)
    for size in range(1, 7):
        for _ in range(10):
            a = rng.normal(size=(size, dim))
            b = rng.normal(size=(size, dim))
            best = min(
                np.mean(np.sum((a - b[list(perm)]) ** 2, axis=1)) for perm in permutations(range(size))
            )
            assert w2_distance(EmpiricalMeasure(a), EmpiricalMeasure(b)) == pytest.approx(np.sqrt(best), rel=1e-9, abs=1e-12)
