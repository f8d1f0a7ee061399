"""Tests for intensity kernels, thinning and point-process diagnostics"""

import numpy as np
import pytest

from src.data.generator import Stream, substream
from src.errors import MajorantViolationError, MissingBoundError
from src.measures.empirical import EmpiricalMeasure, mean_functional
from src.measures.environment import EnvironmentPath
from src.pointproc.diagnostics import (
    kernel_compensator,
    mark_frequency_check,
    poisson_count_test,
    pooled_time_rescale,
)
from src.pointproc.events import EventLog, MarkedEvent, dumps, loads, merge
from src.pointproc.integrals import integrate_against, random_inner, random_norm, random_norm_sq
from src.pointproc.intensity import (
    AdditiveKernel,
    Baseline,
    EnvironmentTerm,
    Excitation,
    ExcitationFamily,
    MarkLaw,
    RegimeKernel,
    dominating_rate,
    eval_intensity,
    partition_intervals,
    q_jump,
)
from src.pointproc.thinning import replicate_counts, simulate_channels, simulate_thinning


@pytest.fixture
def flat_env():
    return EnvironmentPath.constant(EmpiricalMeasure.dirac(0.0), 1.0)


def test_intensity_ignores_event_at_evaluation_time():
    """lambda_t only sees events strictly before t"""
    env = EnvironmentPath.constant(EmpiricalMeasure.dirac(0.0), 2.0)
    k = AdditiveKernel.hawkes(1.0, 0.5, 1.0)
    log = EventLog([MarkedEvent(0.5, 1.0)], 2.0)
    assert eval_intensity(k, 0.5, log, env) == pytest.approx(1.0)
    assert eval_intensity(k, 0.6, log, env) == pytest.approx(1.0 + 0.5 * np.exp(-0.1))


def test_hawkes_compensator_closed_form():
    """Lambda(1) = lambda0 + (a / b)(1 - e^{-b (1 - tau)})"""
    env = EnvironmentPath.constant(EmpiricalMeasure.dirac(0.0), 1.0)
    k = AdditiveKernel.hawkes(1.0, 0.5, 2.0)
    value = k.compensator(np.array([1.0]), np.array([0.5]), env)[0]
    assert value == pytest.approx(1.0 + 0.25 * (1.0 - np.exp(-1.0)))


def test_callable_baseline_needs_bound():
    """A callable baseline without a declared bound cannot be thinned"""
    k = AdditiveKernel(baseline=Baseline(fn=lambda t: np.ones_like(t)))
    with pytest.raises(MissingBoundError):
        k.static_bound()


def test_understated_bound_is_a_hard_failure(flat_env):
    """An intensity above its majorant stops the simulation"""
    k = AdditiveKernel(baseline=Baseline(fn=lambda t: np.full(np.shape(t), 3.0), bound=1.0))
    with pytest.raises(MajorantViolationError):
        simulate_thinning(k, flat_env, 1.0, substream(0, 0))


def test_homogeneous_poisson_count(flat_env):
    """Mean count of a rate-2 process on [0, 1] is 2"""
    counts = replicate_counts(AdditiveKernel.constant(2.0), flat_env, 1.0, seed=11, replications=20_000)
    se = counts.std(ddof=1) / np.sqrt(counts.size)
    assert abs(counts.mean() - 2.0) < 4 * se
    assert poisson_count_test(counts, 2.0)["p_value"] > 1e-3


def test_replications_are_deterministic(flat_env):
    """Same seed gives the same counts"""
    k = AdditiveKernel.hawkes(1.0, 0.5, 1.0)
    a = replicate_counts(k, flat_env, 1.0, seed=3, replications=200)
    b = replicate_counts(k, flat_env, 1.0, seed=3, replications=200)
    np.testing.assert_array_equal(a, b)


def test_table_baseline_switches_on(flat_env):
    """No events while the table baseline is zero"""
    k = AdditiveKernel(baseline=Baseline(table_times=(0.0, 0.5), table_values=(0.0, 4.0)))
    logs = [simulate_thinning(k, flat_env, 1.0, substream(5, p)) for p in range(2000)]
    assert all(np.all(log.times >= 0.5) for log in logs)
    counts = np.array([len(log) for log in logs], dtype=float)
    assert abs(counts.mean() - 2.0) < 4 * counts.std(ddof=1) / np.sqrt(counts.size)


def test_hawkes_time_rescaling():
    """Rescaled interarrivals of a Hawkes process are unit exponential"""
    T = 50.0
    env = EnvironmentPath.constant(EmpiricalMeasure.dirac(0.0), T)
    k = AdditiveKernel.hawkes(1.0, 0.5, 1.0)
    logs = [simulate_thinning(k, env, T, substream(21, p)) for p in range(20)]
    result = pooled_time_rescale(logs, [kernel_compensator(k, log, env) for log in logs])
    assert result.interarrivals.size > 1000
    assert result.p_value > 1e-3


def test_mark_frequencies(flat_env):
    """Marks follow the declared law"""
    law = MarkLaw((1.0, 2.0), (0.3, 0.7))
    k = AdditiveKernel.constant(5.0, mark_law=law)
    logs = [simulate_thinning(k, flat_env, 1.0, substream(9, p)) for p in range(2000)]
    report = mark_frequency_check(logs, law)
    assert all(abs(entry["z"]) < 4 for entry in report.values())


def test_channels_use_own_substreams(flat_env):
    """Channel j of a path is the single-channel simulation on its substream"""
    kernels = [AdditiveKernel.constant(3.0), AdditiveKernel.hawkes(1.0, 0.5, 1.0)]
    merged = simulate_channels(kernels, flat_env, 1.0, seed=4, path=2)
    for j, k in enumerate(kernels):
        alone = simulate_thinning(k, flat_env, 1.0, substream(4, 2, j, Stream.EVENTS))
        np.testing.assert_array_equal(merged.channel(j).times, alone.times)


def test_event_log_orders_ties_by_channel():
    """Simultaneous events on two channels keep channel order"""
    log = merge([EventLog([MarkedEvent(0.3, 1.0)], 1.0), EventLog([MarkedEvent(0.3, 2.0)], 1.0)], 1.0)
    assert list(log.channels) == [0, 1]
    assert log.counts(0.3) == 2


def test_event_beyond_horizon_rejected():
    """Events after T are rejected"""
    with pytest.raises(ValueError):
        EventLog([MarkedEvent(1.5, 1.0)], 1.0)


def test_compensated_integral_of_one():
    """int 1 d(N - Lambda) = N_T - 2T for a rate-2 process"""
    log = EventLog([MarkedEvent(0.2, 1.0), MarkedEvent(0.7, 1.0)], 1.0)
    result = integrate_against(
        lambda t, r, j: np.ones_like(t), log, compensated=True,
        lambda_path=lambda times: np.full(times.shape, 2.0),
    )
    assert result.at(1.0) == pytest.approx(0.0, abs=1e-12)
    assert result.at(0.5) == pytest.approx(1.0 - 1.0, abs=1e-12)


def test_random_norm_weights_by_intensity():
    """||u||^2 = u^2 lambda for one channel"""
    assert random_norm(np.array([[2.0]]), np.array([3.0])) == pytest.approx(np.sqrt(12.0))


def test_regime_partition_layout():
    """Intervals are laid out row by row with widths Q(i, j)"""
    rk = RegimeKernel.constant([[-1.0, 1.0], [2.0, -2.0]])
    nu = EmpiricalMeasure.dirac(0.0)
    assert partition_intervals(rk, nu, 1) == [(2, (0.0, 1.0))]
    assert partition_intervals(rk, nu, 2) == [(1, (1.0, 3.0))]
    assert q_jump(rk, nu, 1, 0.5) == 1
    assert q_jump(rk, nu, 1, 1.5) == 0
    assert q_jump(rk, nu, 2, 1.5) == -1


def test_regime_rows_above_bound_rejected():
    """A row mass above H0 violates the declared bound"""
    rk = RegimeKernel.constant([[-1.0, 1.0], [2.0, -2.0]], h0=0.5)
    with pytest.raises(MajorantViolationError):
        rk.Q(EmpiricalMeasure.dirac(0.0))


def test_zero_counts_give_defined_fit():
    """All-zero counts against a vanishing mean fit exactly; against mean 2 they are rejected"""
    exact = poisson_count_test(np.zeros(1000, dtype=int), 1e-6)
    assert exact["p_value"] == 1.0
    assert exact["cells"] == 1
    rejected = poisson_count_test(np.zeros(1000, dtype=int), 2.0)
    assert np.isfinite(rejected["p_value"])
    assert rejected["p_value"] < 1e-6
    with pytest.raises(ValueError):
        poisson_count_test(np.array([], dtype=int), 1.0)


def test_event_records_number_channels_from_one():
    """Written records use channels 1..l and read back to the same log"""
    log = merge([EventLog([MarkedEvent(0.25, 1.0)], 1.0), EventLog([MarkedEvent(0.5, 2.0)], 1.0)], 1.0)
    text = dumps(log)
    records = text.splitlines()[1:]
    assert [row.split()[1] for row in records] == ["1", "2"]
    assert loads(text) == log
    with pytest.raises(ValueError, match="channel 0"):
        loads("horizon 1.0 channels 1\n0.5 0 1.0\n")


def _random_kernel(rng: np.random.Generator) -> AdditiveKernel:
    if rng.random() < 0.5:
        excitation = Excitation(ExcitationFamily.EXPONENTIAL, a=float(rng.uniform(0.0, 2.0)), b=float(rng.uniform(0.0, 3.0)))
    else:
        edges = np.cumsum(np.concatenate([[0.0], rng.uniform(0.1, 1.0, size=3)]))
        values = np.sort(rng.uniform(0.0, 2.0, size=3))[::-1]
        excitation = Excitation(ExcitationFamily.PIECEWISE, edges=tuple(edges), values=tuple(values))
    scale = float(rng.uniform(0.0, 1.5))
    return AdditiveKernel(
        baseline=Baseline(table_times=(0.0, float(rng.uniform(0.5, 4.5))), table_values=tuple(rng.uniform(0.0, 3.0, size=2))),
        environment=EnvironmentTerm(mean_functional(), scale=scale, bound=2.0 * scale),
        excitation=excitation,
    )


def test_dominating_rate_bounds_intensity_on_window():
    """The majorant dominates lambda on (t_from, t_to] for random kernels, histories and windows"""
    T = 5.0
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        kernel = _random_kernel(rng)
        levels = rng.uniform(0.0, 2.0, size=2)
        env = EnvironmentPath([0.0, float(rng.uniform(0.5, 4.5))], [EmpiricalMeasure.dirac(v) for v in levels], T)
        history = EventLog([MarkedEvent(float(t), 1.0) for t in np.unique(rng.uniform(0.01, T, size=rng.integers(0, 8)))], T)
        t_from = float(rng.uniform(0.0, T - 0.1))
        t_to = float(rng.uniform(t_from + 0.05, T))
        rate = dominating_rate(kernel, history, t_from, t_to)
        window = np.linspace(t_from, t_to, 101)[1:]
        lam = kernel.intensity_path(window, history.times[history.times <= t_from], env)
        assert np.all(lam <= rate + 1e-12 * max(rate, 1.0))


def test_random_norm_parallelogram_law():
    """||u + v||^2 + ||u - v||^2 = 2 ||u||^2 + 2 ||v||^2 and the inner product induces the norm"""
    rng = np.random.default_rng(8)
    for _ in range(100):
        n, l, R = rng.integers(1, 4, size=3)
        u = rng.normal(size=(n, l, R))
        v = rng.normal(size=(n, l, R))
        K = rng.uniform(0.0, 3.0, size=(l, R))
        lhs = random_norm(u + v, K) ** 2 + random_norm(u - v, K) ** 2
        rhs = 2 * random_norm(u, K) ** 2 + 2 * random_norm(v, K) ** 2
        assert lhs == pytest.approx(rhs, rel=1e-12)
        assert random_inner(u, u, K) == pytest.approx(random_norm_sq(u, K), rel=1e-12)


def test_compensated_integral_has_zero_mean():
    """int r d(N - K) of a marked Hawkes process averages to zero at every grid time"""
    T = 1.0
    env = EnvironmentPath.constant(EmpiricalMeasure.dirac(0.0), T)
    law = MarkLaw((1.0, 3.0), (0.5, 0.5))
    k = AdditiveKernel.hawkes(1.0, 0.5, 1.0, mark_law=law)
    check_times = np.linspace(0.1, T, 10)
    values = []
    for p in range(2000):
        log = simulate_thinning(k, env, T, substream(31, p))
        integral = integrate_against(
            lambda t, r, j: np.asarray(r, dtype=float), log, compensated=True,
            lambda_path=lambda times, hist=log.times: k.intensity_path(times, hist, env),
            mark_laws=[law],
        )
        values.append([integral.at(t) for t in check_times])
    values = np.array(values)
    mean = values.mean(axis=0)
    se = values.std(axis=0, ddof=1) / np.sqrt(values.shape[0])
    assert np.all(np.abs(mean) <= 3 * se)
