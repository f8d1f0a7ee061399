"""Tests for continuation, the monotonicity verifier, duality and uniqueness"""

from dataclasses import replace

import numpy as np
import pytest

from src.data.contracts import CheckKind, SolverSettings
from src.errors import PicardDivergenceError
from src.models.linear import build_one_way_model, build_zero_model
from src.models.lq import MIN_FEEDBACK, LQParams, build_lq_model, riccati_comparison, riccati_guess, riccati_reference
from src.monitoring.metrics import MetricsCollector
from src.solvers.basis import BasisSpec
from src.solvers.backward_bsde import Driver
from src.solvers.coupled_solver import (
    FBSDESolution,
    Offsets,
    continuation_solve,
    solve_decoupled_base,
    solve_level,
    uniqueness_probe,
)
from src.solvers.duality import (
    BackwardLegs,
    ForwardLegs,
    duality_from_processes,
    ito_duality_check,
    solution_legs,
    uniqueness_identity,
)
from src.solvers.monotonicity import check_g_monotonicity
from src.solvers.model import Case, MonotonicityConstants


@pytest.fixture(scope="module")
def lq():
    params = LQParams()
    model = build_lq_model(params)
    bundle = model.build_bundle(20, 2000, seed=42)
    metrics = MetricsCollector()
    solution, report = continuation_solve(model, bundle, metrics=metrics)
    return params, model, bundle, solution, report, metrics


def test_case_dispatch():
    """d = n picks the forward-first base unless only beta2 is positive"""
    one_way = build_one_way_model()
    assert one_way.case == Case.D_LT_N
    flipped = replace(one_way, betas=MonotonicityConstants(beta1=0.0, beta2=1.0, beta3=0.0))
    assert flipped.case == Case.D_GE_N


def test_continuation_reaches_full_coupling(lq):
    """The run ends at alpha = 1 with Y_T = g(X_T) on every path"""
    _, model, bundle, solution, report, _ = lq
    assert report.alpha == 1.0
    assert report.picard_iterations > 0
    np.testing.assert_array_equal(solution.Y[:, -1], model.evaluate_terminal(bundle, solution.X[:, -1]))


def test_continuation_matches_riccati(lq):
    """Y tracks p_t X_t"""
    params, _, bundle, solution, _, _ = lq
    ref = riccati_reference(params, bundle.grid)
    numbers = riccati_comparison(ref, solution, bundle)
    assert numbers["y_error"] < 0.1


def test_continuation_records_telemetry(lq):
    """Accepted steps and Picard iterations reach the registry"""
    _, _, _, _, report, metrics = lq
    accepted = metrics.registry.get_sample_value("fbsde_continuation_steps_total", {"outcome": "accepted"})
    assert accepted == report.accepted_steps
    assert metrics.registry.get_sample_value("fbsde_picard_iterations_total") == report.picard_iterations
    assert report.inner_sweeps >= report.picard_iterations
    assert metrics.registry.get_sample_value("fbsde_inner_sweeps_total") <= report.inner_sweeps


def test_precheck_passes_for_lq(lq):
    """The declared constants of the linear model hold"""
    _, _, _, _, report, _ = lq
    assert report.checks["g_monotonicity"].passed


def test_monotonicity_detects_sign_flip():
    """Coefficients built with the opposite f_hat violate the declared beta1"""
    params = LQParams(b=-2.0, f2=1.0, f=1.0, f1=4.0, g=1.0)
    model = build_lq_model(params, f_hat=-1.0)
    bundle = model.build_bundle(5, 50, seed=0)
    result = check_g_monotonicity(model, bundle, count=2000, seed=1)
    assert not result.passed
    assert result.numbers["violations"] > 0
    assert result.violations[0]["kind"] == CheckKind.MONOTONICITY.value
    assert result.numbers["terminal_violations"] == 0


def test_one_way_model_is_monotone():
    """b = -x, f = x - y, g = x satisfy beta = (1, 0, 1)"""
    model = build_one_way_model()
    result = check_g_monotonicity(model, model.build_bundle(5, 50, seed=0), count=2000, seed=2)
    assert result.passed


def test_no_step_from_base_raises():
    """A map that never converges at alpha = 0 is reported as divergence"""
    model = build_lq_model(LQParams())
    bundle = model.build_bundle(5, 200, seed=0)
    settings = SolverSettings(picard_max_iter=1, picard_tol=1e-30, eps_init=0.25, eps_min=0.1)
    with pytest.raises(PicardDivergenceError):
        continuation_solve(model, bundle, settings, precheck=False)


def test_duality_constant_coefficients():
    """dX = sigma dW against Y = y0 + z W gives E[X_T Y_T] - E[X_0 Y_0] = sigma z T"""
    bundle = build_zero_model().build_bundle(20, 2000, seed=3)
    P, N = bundle.n_paths, bundle.steps
    forward = ForwardLegs(
        B=np.zeros((P, N, 1)),
        S=np.full((P, N, 1, 1), 0.3),
        Gm=np.zeros((P, N, 1, bundle.channels, bundle.mark_cells)),
    )
    backward = BackwardLegs(F=np.zeros((P, N, 1)), zeta=1.0 + 0.5 * bundle.W[:, -1])
    result, _, sol = ito_duality_check(forward, backward, np.eye(1), bundle, BasisSpec(include_brownian=True))
    assert result.passed
    assert result.lhs == pytest.approx(0.15, abs=4 * result.mc_error + 0.01)
    assert abs(sol.Z.mean() - 0.5) < 0.05


def test_duality_on_solved_lq(lq):
    """Both sides agree along the solved iterate"""
    _, model, bundle, solution, _, _ = lq
    legs = solution_legs(model, solution.X, solution.backward, bundle)
    result = duality_from_processes(
        solution.X, solution.backward, legs["B"], legs["S"], legs["Gm"], legs["F"], model.G, bundle
    )
    assert result.passed
    assert result.to_check().passed


def test_uniqueness_identity_of_a_solution_with_itself(lq):
    """Identical solutions give zero on both sides"""
    _, model, bundle, solution, _, _ = lq
    pair = (solution.X, solution.backward)
    result = uniqueness_identity(model, pair, pair, bundle)
    assert result.lhs == 0.0
    assert result.rhs == 0.0


def test_uniqueness_probe_from_two_guesses():
    """Zero and Riccati-ansatz starts converge to the same solution"""
    params = LQParams()
    model = build_lq_model(params)
    bundle = model.build_bundle(10, 500, seed=9)
    ref = riccati_reference(params, bundle.grid)
    guesses = (FBSDESolution.zeros(bundle, 1, 1), riccati_guess(params, ref, bundle))
    result, _, _ = uniqueness_probe(model, bundle, guesses, SolverSettings())
    assert result.passed
    assert result.tolerance == pytest.approx(1e-5)


def _relative_gap(a: FBSDESolution, b: FBSDESolution, bundle) -> float:
    return a.minus(b).norm(bundle) / b.norm(bundle)


def test_lq_base_feedback_is_floored():
    """f_hat = 0 declares beta1 = 0 while the base keeps a positive G-feedback"""
    model = build_lq_model(LQParams())
    assert model.betas.beta1 == 0.0
    assert model.base_feedback == MIN_FEEDBACK
    assert build_lq_model(LQParams(), feedback=2.0).base_feedback == 2.0
    assert build_one_way_model().base_feedback == 1.0


def test_negative_feedback_rejected():
    with pytest.raises(ValueError, match="nonnegative"):
        replace(build_one_way_model(), feedback=-1.0)


def test_level_zero_is_decoupled_base():
    """At alpha = 0 one sweep is the decoupled base solve"""
    model = build_lq_model(LQParams())
    bundle = model.build_bundle(10, 300, seed=5)
    offsets = Offsets.zeros(bundle, 1, 1)
    offsets.F[:] = 0.3
    offsets.zeta[:] = bundle.W[:, -1, None]
    inner = FBSDESolution.zeros(bundle, 1, 1)
    level = solve_level(model, 0.0, offsets, inner, bundle)
    base = solve_decoupled_base(model, offsets, bundle, feedback=model.base_feedback, state=inner.X)
    np.testing.assert_array_equal(level.X, base.X)
    np.testing.assert_array_equal(level.Y, base.Y)


def test_solved_pair_is_fixed_point_of_full_sweep(lq):
    """A sweep of the alpha = 1 system started at the solution returns it"""
    _, model, bundle, solution, _, _ = lq
    settings = SolverSettings()
    basis = BasisSpec(degree=settings.basis_degree, ridge_alpha=settings.ridge_alpha)
    swept = solve_level(model, 1.0, Offsets.zeros(bundle, 1, 1), solution, bundle, basis=basis)
    assert _relative_gap(swept, solution, bundle) < 1e-4


def test_full_coupling_independent_of_step_size():
    """Continuation with eps = 0.25 and eps = 0.1 lands on the same solution"""
    model = build_lq_model(LQParams())
    bundle = model.build_bundle(10, 400, seed=13)
    tol = 1e-8
    coarse, coarse_report = continuation_solve(
        model, bundle, SolverSettings(picard_tol=tol, eps_init=0.25), precheck=False
    )
    fine, fine_report = continuation_solve(
        model, bundle, SolverSettings(picard_tol=tol, eps_init=0.1), precheck=False
    )
    assert coarse_report.alpha == fine_report.alpha == 1.0
    assert _relative_gap(coarse, fine, bundle) <= 10 * tol


def test_non_finite_driver_halves_until_divergence():
    """A driver that returns NaN off the base never yields an accepted step"""
    model = replace(
        build_one_way_model(),
        driver=Driver(f=lambda ctx, x, y, z, u: np.full((x.shape[0], 1), np.nan), dim=1),
    )
    bundle = model.build_bundle(5, 100, seed=0)
    settings = SolverSettings(eps_init=0.25, eps_min=0.1)
    with pytest.raises(PicardDivergenceError):
        continuation_solve(model, bundle, settings, precheck=False)
