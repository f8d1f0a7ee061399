"""Tests for grids, path bundles and the Euler scheme"""

from dataclasses import replace

import numpy as np
import pytest

from src.errors import CoefficientError, DimensionMismatchError
from src.models.linear import build_one_way_model, build_zero_model
from src.solvers.forward_sde import (
    ForwardCoefficients,
    coarsen_increments,
    euler_from_offsets,
    euler_simulate,
    euler_step,
    lipschitz_spot_check,
    moment_report,
)
from src.solvers.grid import TimeGrid


@pytest.fixture
def one_way():
    return build_one_way_model()


def test_grid_merges_close_extra_times():
    """Extra times within 1e-12 of a node collapse onto it"""
    grid = TimeGrid.build(1.0, 4, event_times=[0.25 + 1e-14, 0.3])
    np.testing.assert_allclose(grid.times, [0.0, 0.25, 0.3, 0.5, 0.75, 1.0])


def test_grid_cell_of_is_left_open():
    """An event at a node belongs to the cell ending there"""
    grid = TimeGrid.build(1.0, 4)
    assert list(grid.cell_of(np.array([0.25, 0.26, 1.0]))) == [0, 1, 3]


def test_bundle_paths_do_not_depend_on_bundle_size(one_way):
    """Path p draws from its own substreams"""
    small = one_way.build_bundle(10, 5, seed=8)
    large = one_way.build_bundle(10, 50, seed=8)
    np.testing.assert_array_equal(small.dW, large.dW[:5])
    np.testing.assert_array_equal(small.dN, large.dN[:5])


def test_bundle_kernel_mass_of_constant_rate(one_way):
    """Unit intensity gives unit kernel mass on every cell"""
    bundle = one_way.build_bundle(10, 20, seed=1)
    np.testing.assert_allclose(bundle.kernel_mass, 1.0)
    np.testing.assert_allclose(bundle.compensated().sum(axis=1)[:, 0, 0], bundle.dN.sum(axis=1)[:, 0, 0] - 1.0)


def test_euler_mean_reversion(one_way):
    """E[X_N] = (1 - dt)^N x0 for the Euler scheme of dX = -X dt + noise"""
    bundle = one_way.build_bundle(50, 4000, seed=12)
    X = euler_simulate(one_way.forward, bundle)
    terminal = X[:, -1, 0]
    se = terminal.std(ddof=1) / np.sqrt(terminal.size)
    assert abs(terminal.mean() - (1.0 - 0.02) ** 50) < 4 * se


def test_euler_matches_offsets_for_constant_coefficients():
    """Constant coefficients give the same path either way"""
    model = build_zero_model(x0=(0.5,))
    bundle = model.build_bundle(20, 30, seed=2)
    P, N, R = bundle.n_paths, bundle.steps, bundle.mark_cells
    coef = ForwardCoefficients(
        b=lambda ctx, x, y, z, u: np.full_like(x, 0.1),
        sigma=lambda ctx, x, y, z, u: np.full((x.shape[0], 1, 1), 0.3),
        gamma=lambda ctx, x, y, z, u: np.full((x.shape[0], 1, 1, R), 0.2),
    )
    X = euler_simulate(coef, bundle)
    X_off = euler_from_offsets(
        bundle,
        np.full((P, N, 1), 0.1),
        np.full((P, N, 1, 1), 0.3),
        np.full((P, N, 1, 1, R), 0.2),
    )
    np.testing.assert_allclose(X, X_off, atol=1e-12)


def test_euler_reports_non_finite_coefficient():
    """NaN from a coefficient names the coefficient and step"""
    model = build_zero_model()
    bundle = model.build_bundle(5, 4, seed=0)
    coef = ForwardCoefficients(
        b=lambda ctx, x, y, z, u: np.full_like(x, np.nan if ctx.step == 3 else 0.0),
        sigma=model.forward.sigma,
        gamma=model.forward.gamma,
    )
    with pytest.raises(CoefficientError) as exc:
        euler_simulate(coef, bundle)
    assert exc.value.step == 3
    assert exc.value.name == "b"


def test_euler_dimension_mismatch(one_way):
    """x0 must match the coefficient dimension"""
    bundle = one_way.build_bundle(5, 4, seed=0)
    coef = ForwardCoefficients(
        b=one_way.forward.b, sigma=one_way.forward.sigma, gamma=one_way.forward.gamma, dim=2
    )
    with pytest.raises(DimensionMismatchError):
        euler_simulate(coef, bundle)


def test_moment_report_of_constant_paths():
    """Constant paths have zero variance and known second moment"""
    report = moment_report(np.full((10, 4), 2.0))
    np.testing.assert_allclose(report.variance, 0.0)
    assert report.sup_norm == pytest.approx(4.0)


def test_coarsen_increments_sums_pairs():
    """Coarsened increments keep the terminal Brownian value"""
    dW = np.random.default_rng(0).normal(size=(3, 8, 1))
    coarse = coarsen_increments(dW, 2)
    assert coarse.shape == (3, 4, 1)
    np.testing.assert_allclose(coarse.sum(axis=1), dW.sum(axis=1))


def test_lipschitz_spot_check_of_drift(one_way):
    """b(x) = -x is 1-Lipschitz"""
    bundle = one_way.build_bundle(5, 200, seed=0)
    report = lipschitz_spot_check(one_way.forward.b, bundle.context(0), 1.0, 1, np.random.default_rng(1))
    assert report["passed"]
    assert report["observed"] == pytest.approx(1.0)


def test_zero_effect_event_leaves_path_unchanged():
    """With gamma = 0 an extra jump changes nothing, bit for bit"""
    model = build_one_way_model(gamma=0.0)
    bundle = model.build_bundle(20, 200, seed=4)
    dN = bundle.dN.copy()
    dN[:, 7, 0, 0] += 1.0
    inserted = replace(bundle, dN=dN)
    np.testing.assert_array_equal(euler_simulate(model.forward, inserted), euler_simulate(model.forward, bundle))


def _ou_terminal(dW: np.ndarray, theta: float, sigma: float, x0: float, T: float) -> np.ndarray:
    P, N, _ = dW.shape
    dt = T / N
    vol = np.full((P, 1, 1), sigma)
    jump = np.zeros((P, 1, 1, 1))
    no_jumps = np.zeros((P, 1, 1))
    x = np.full((P, 1), x0)
    for m in range(N):
        x = euler_step(x, -theta * x, vol, jump, dt, dW[:, m], no_jumps)
    return x[:, 0]


def test_euler_refinement_halves_error():
    """Halving the step of the OU Euler scheme cuts the strong error by about 2"""
    T, theta, sigma, x0 = 1.0, 1.0, 0.5, 1.0
    rng = np.random.default_rng(17)
    fine_steps = 1024
    dW = rng.normal(0.0, np.sqrt(T / fine_steps), size=(2000, fine_steps, 1))
    reference = _ou_terminal(dW, theta, sigma, x0, T)
    errors = {}
    for steps in (16, 32, 64):
        coarse = coarsen_increments(dW, fine_steps // steps)
        errors[steps] = np.mean(np.abs(_ou_terminal(coarse, theta, sigma, x0, T) - reference))
    for steps in (16, 32):
        assert 1.2 <= errors[steps] / errors[2 * steps] <= 3.0
