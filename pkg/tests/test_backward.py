"""Tests for the regression backward solver and solution norms"""

import numpy as np
import pytest

from src.cli.experiments import orthogonality_check
from src.errors import NormSandwichError, RegressionError
from src.models.linear import build_one_way_model
from src.solvers.backward_bsde import BackwardSolution, Driver, LipschitzProfile, lsmc_solve
from src.solvers.basis import BasisSpec, basis_dimension, design_matrix, regress
from src.solvers.forward_sde import euler_simulate
from src.solvers.norms import (
    WeightedNormParams,
    apriori_gap_family,
    difference,
    norm_equivalence_check,
    star_components,
    star_norm,
)


def _zero_driver():
    return Driver(lambda ctx, x, y, z, u: np.zeros((x.shape[0], 1)))


@pytest.fixture(scope="module")
def one_way():
    return build_one_way_model()


@pytest.fixture(scope="module")
def solved(one_way):
    bundle = one_way.build_bundle(20, 3000, seed=5)
    X = euler_simulate(one_way.forward, bundle)
    sol = lsmc_solve(one_way.driver, one_way.evaluate_terminal(bundle, X[:, -1]), bundle, BasisSpec(), X)
    return bundle, X, sol


def test_constant_terminal_is_exact(solved):
    """f = 0 and constant zeta give Y = c with no integrands"""
    bundle, X, _ = solved
    sol = lsmc_solve(_zero_driver(), np.full((bundle.n_paths, 1), 1.5), bundle, BasisSpec(), X)
    np.testing.assert_allclose(sol.Y, 1.5, atol=1e-10)
    for part in (sol.Z, sol.U, sol.M):
        np.testing.assert_allclose(part, 0.0, atol=1e-10)


def test_unit_driver_counts_remaining_time(solved):
    """f = 1 and zeta = 0 give Y_t = T - t"""
    bundle, X, _ = solved
    driver = Driver(lambda ctx, x, y, z, u: np.ones((x.shape[0], 1)))
    sol = lsmc_solve(driver, np.zeros((bundle.n_paths, 1)), bundle, BasisSpec(), X)
    expected = bundle.grid.horizon - bundle.grid.times
    np.testing.assert_allclose(sol.Y[:, :, 0], np.broadcast_to(expected, sol.Y.shape[:2]), atol=1e-10)


def test_implicit_linear_driver(solved):
    """f = -y is solved implicitly: Y_m = Y_{m+1} / (1 + dt)"""
    bundle, X, _ = solved
    driver = Driver(lambda ctx, x, y, z, u: -y)
    sol = lsmc_solve(driver, np.ones((bundle.n_paths, 1)), bundle, BasisSpec(), X)
    assert sol.Y[0, 0, 0] == pytest.approx(np.prod(1.0 / (1.0 + bundle.dt)), rel=1e-10)


def test_brownian_terminal_recovers_unit_integrand(solved):
    """zeta = W_T gives Y = W and Z = 1"""
    bundle, X, _ = solved
    sol = lsmc_solve(_zero_driver(), bundle.W[:, -1], bundle, BasisSpec(include_brownian=True), X)
    assert np.abs(sol.Y - bundle.W).max() < 0.05
    assert abs(sol.Z.mean() - 1.0) < 0.05


def test_too_few_paths_for_basis(one_way):
    """Fewer paths than basis functions is a regression error"""
    bundle = one_way.build_bundle(5, 3, seed=0)
    with pytest.raises(RegressionError):
        lsmc_solve(_zero_driver(), np.ones((3, 1)), bundle, BasisSpec(include_brownian=True), euler_simulate(one_way.forward, bundle))


def test_design_matrix_drops_constant_columns(solved):
    """Zero-variance inputs leave only the intercept at t = 0"""
    bundle, X, _ = solved
    A = design_matrix(BasisSpec(), bundle, X[:, 0], 0)
    assert A.shape == (bundle.n_paths, 1)
    assert basis_dimension(BasisSpec(), bundle, 1) == 6


def test_regress_projects_onto_span():
    """Targets in the span of the basis are reproduced"""
    rng = np.random.default_rng(0)
    x = rng.normal(size=200)
    A = np.column_stack([np.ones_like(x), x, x ** 2])
    target = 1.0 + 2.0 * x - 0.5 * x ** 2
    np.testing.assert_allclose(regress(A, target), target, atol=1e-10)


def test_residual_martingale_is_orthogonal(solved):
    """M has no covariation with W or the compensated jumps"""
    bundle, _, sol = solved
    result = orthogonality_check(sol, bundle, sigmas=4.0)
    assert result.passed


def test_star_norm_of_difference(solved):
    """A solution is at distance zero from itself"""
    bundle, X, sol = solved
    assert star_norm(difference(sol, sol), bundle) == 0.0
    comps = star_components(sol, bundle, X)
    assert set(comps) == {"X", "Y", "Z", "U", "M"}
    assert all(v >= 0 for v in comps.values())


def test_weighted_norm_sandwich(one_way, solved):
    """plain <= weighted <= exp(beta K^* T) plain"""
    bundle, _, sol = solved
    params = WeightedNormParams.from_profile(one_way.driver.profile, bundle.grid)
    lower, value, upper = norm_equivalence_check(sol, params, bundle)
    assert lower <= value <= upper


def test_sandwich_violation_raises(solved):
    """Weights growing faster than K^* break the upper bound"""
    bundle, _, sol = solved
    params = WeightedNormParams(alpha_sq=np.full(bundle.steps, 5.0), beta=1.0, k_lower=1.0, k_upper=1.0)
    with pytest.raises(ValueError):
        params.validate(bundle.grid)
    with pytest.raises(NormSandwichError):
        norm_equivalence_check(sol, params, bundle)


def test_lipschitz_profile_bounds():
    """Declared bounds must enclose the profile"""
    profile = LipschitzProfile(k_y=4.0, k_w=1.0, k_jump=0.5, k_env=1.0)
    assert profile.k_lower == 0.5
    assert profile.alpha_sq == pytest.approx(2.0)
    with pytest.raises(ValueError):
        LipschitzProfile(k_y=4.0, k_upper=2.0)


def test_gap_shrinks_with_terminal_perturbation(one_way, solved):
    """Smaller terminal perturbations give smaller solution gaps"""
    bundle, X, _ = solved

    def solve_at(level):
        zeta = X[:, -1] + level
        return lsmc_solve(one_way.driver, zeta, bundle, BasisSpec(), X), one_way.driver, zeta

    report = apriori_gap_family(solve_at, bundle, initial_level=0.4, levels=3, X=X)
    assert report.passed
    assert report.gaps[-1].terminal_gap == pytest.approx(0.01)


def test_zero_solution_shapes(solved):
    """Zero solutions carry the bundle's shapes"""
    bundle, _, _ = solved
    zero = BackwardSolution.zeros(bundle, 2)
    assert zero.Y.shape == (bundle.n_paths, bundle.steps + 1, 2)
    assert zero.U.shape == (bundle.n_paths, bundle.steps, 2, bundle.channels, bundle.mark_cells)


def test_lsmc_rerun_is_bit_identical(one_way, solved):
    """Solving again on the same bundle reproduces every array exactly"""
    bundle, X, sol = solved
    again = lsmc_solve(one_way.driver, one_way.evaluate_terminal(bundle, X[:, -1]), bundle, BasisSpec(), X)
    for name in ("Y", "Z", "U", "M"):
        np.testing.assert_array_equal(getattr(again, name), getattr(sol, name))
