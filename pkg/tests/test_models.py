"""Tests for the Hamiltonian builder and the linear-quadratic reference"""

import numpy as np
import pytest
from pydantic import ValidationError

from src.measures.empirical import mean_functional
from src.models.hamiltonian import (
    HamiltonianSpec,
    build_hamiltonian_fbsde,
    derivative_check,
    finite_difference,
    gradient_check,
    lq_hamiltonian_spec,
)
from src.models.lq import LQParams, build_lq_model, riccati_closed_form, riccati_reference
from src.pointproc.intensity import AdditiveKernel
from src.solvers.bundle import NoiseSpec
from src.solvers.grid import TimeGrid


@pytest.fixture(scope="module")
def params():
    return LQParams()


@pytest.fixture(scope="module")
def spec(params):
    return lq_hamiltonian_spec(params.b_hat, params.f_hat, params.f2, params.sigma, params.gamma, params.g)


@pytest.fixture(scope="module")
def bundle(params):
    return build_lq_model(params).build_bundle(10, 50, seed=0)


def test_lq_params_defaults(params):
    """Default coefficients satisfy the standing constraints"""
    assert params.b_hat == pytest.approx(-3.0)
    assert params.f_hat == pytest.approx(0.0)
    assert params.stated_beta1 == pytest.approx(2.0)


@pytest.mark.parametrize("overrides", [
    {"b": -1.0},
    {"f1": 1.0},
    {"sigma": 0.0},
    {"f2": -1.0},
])
def test_lq_params_rejects_invalid(overrides):
    """Broken constraints are rejected at construction"""
    with pytest.raises(ValidationError):
        LQParams(**overrides)


def test_lq_declares_nonnegative_beta1():
    """beta1 is clipped at zero and the alternative formula is noted"""
    model = build_lq_model(LQParams(b=-2.0, f2=1.0, f=1.0, f1=4.0, g=1.0))
    assert model.betas.beta1 == pytest.approx(1.0)
    assert model.betas.beta3 == pytest.approx(1.0)
    assert model.notes


def test_riccati_rk4_matches_closed_form(params):
    """RK4 on the grid agrees with the separable solution"""
    grid = TimeGrid.build(params.horizon, 50)
    ref = riccati_reference(params, grid)
    np.testing.assert_allclose(ref.p, riccati_closed_form(params, grid.times), atol=1e-8)
    assert ref.p[-1] == params.g


def test_riccati_predictors(params):
    """Z and U predictors read p at the right end of each step"""
    ref = riccati_reference(params, TimeGrid.build(params.horizon, 10))
    np.testing.assert_allclose(ref.z(), ref.p[1:] * params.sigma)
    np.testing.assert_allclose(ref.u(), ref.p[1:] * params.gamma)


def test_hamiltonian_gradient_matches_differences(spec, bundle):
    """Analytic gradient of H agrees with central differences"""
    errors = gradient_check(spec, bundle, count=500, seed=4)
    assert set(errors) == {"x", "y", "z", "u"}
    assert max(errors.values()) < 1e-5


def test_supplied_derivatives_match_differences(spec, bundle):
    """Each supplied base derivative agrees with its finite difference"""
    errors = derivative_check(spec, bundle, count=500, seed=5)
    assert set(errors) == {"b", "sigma", "gamma", "f", "g"}
    assert max(errors.values()) < 1e-5


def test_missing_derivative_uses_finite_difference(bundle):
    """d(x^3)/dx = 3 x^2 without a supplied derivative"""
    spec = HamiltonianSpec(
        b=lambda ctx, x: x[:, 0],
        sigma=lambda ctx, x: np.ones(x.shape[0]),
        gamma=lambda ctx, x: np.ones(x.shape[0]),
        f=lambda ctx, x: x[:, 0] ** 3,
        g=lambda ctx, x: x[:, 0],
    )
    x = np.array([[0.5], [-2.0]])
    ctx = bundle.context(0).take(np.array([0, 1]))
    np.testing.assert_allclose(spec.derivative("f")(ctx, x), [0.75, 12.0], rtol=1e-6)
    np.testing.assert_allclose(finite_difference(spec.g)(ctx, x), 1.0, rtol=1e-8)


def test_hamiltonian_system_reproduces_lq(params, spec, bundle):
    """The Hamiltonian system of the quadratic costs is the linear model"""
    lq = build_lq_model(params)
    ham = build_hamiltonian_fbsde(
        spec, params.noise(), params.environment_generator(), [1.0], params.horizon,
        lq.betas, functionals=[mean_functional()],
    )
    rng = np.random.default_rng(0)
    P, R = bundle.n_paths, bundle.mark_cells
    x, y = rng.normal(size=(P, 1)), rng.normal(size=(P, 1))
    z, u = rng.normal(size=(P, 1, 1)), rng.normal(size=(P, 1, 1, R))
    for step in (0, 4, 9):
        ctx = bundle.context(step)
        for name in ("b", "sigma", "gamma"):
            np.testing.assert_allclose(
                getattr(ham.forward, name)(ctx, x, y, z, u),
                getattr(lq.forward, name)(ctx, x, y, z, u),
                atol=1e-12,
            )
        np.testing.assert_allclose(ham.driver.f(ctx, x, y, z, u), lq.driver.f(ctx, x, y, z, u), atol=1e-12)
    term = bundle.context(bundle.steps)
    np.testing.assert_allclose(ham.terminal(term, x), lq.terminal(term, x), atol=1e-12)


def test_hamiltonian_builder_needs_one_channel(spec, params):
    """Several jump channels are rejected"""
    noise = NoiseSpec(kernels=(AdditiveKernel.constant(1.0), AdditiveKernel.constant(1.0)), brownian_dim=1)
    with pytest.raises(ValueError):
        build_hamiltonian_fbsde(
            spec, noise, params.environment_generator(), [1.0], 1.0,
            build_lq_model(params).betas,
        )
