"""Experiment kinds: build kernels, environments and models from a run config and execute them"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pandera import DataFrameSchema
from scipy import stats

from src.data.contracts import (
    CONTINUATION_SCHEMA,
    COUNTS_SCHEMA,
    EVENTS_SCHEMA,
    PATHS_SCHEMA,
    REGIME_SCHEMA,
    RICCATI_SCHEMA,
    CheckKind,
    CheckResult,
    EnvironmentConfig,
    ExperimentKind,
    KernelConfig,
    RunConfig,
)
from src.data.generator import EnvironmentGenerator, EnvironmentKind, Stream, substream
from src.errors import ConfigError
from src.measures.empirical import EmpiricalMeasure, mean_functional
from src.models.hamiltonian import build_hamiltonian_fbsde, lq_hamiltonian_spec
from src.models.linear import build_one_way_model, build_zero_model
from src.models.lq import (
    LQParams,
    build_lq_model,
    continuation_feedback,
    riccati_closed_form,
    riccati_comparison,
    riccati_reference,
)
from src.models.regime import (
    empirical_generator,
    holding_times,
    occupation_fraction,
    simulate_regime_chain,
)
from src.monitoring.metrics import MetricsCollector
from src.pointproc.diagnostics import kernel_compensator, pooled_time_rescale
from src.pointproc.intensity import (
    AdditiveKernel,
    Baseline,
    EnvironmentTerm,
    Excitation,
    ExcitationFamily,
    MarkLaw,
    RegimeKernel,
)
from src.pointproc.thinning import simulate_channels
from src.solvers.backward_bsde import BackwardSolution, lsmc_solve, orthogonality_report
from src.solvers.basis import BasisSpec
from src.solvers.bundle import NoiseSpec, PathBundle
from src.solvers.coupled_solver import continuation_solve
from src.solvers.duality import duality_from_processes, solution_legs
from src.solvers.forward_sde import euler_simulate, moment_report
from src.solvers.model import FBSDEModel, MonotonicityConstants
from src.solvers.monotonicity import check_g_monotonicity
from src.solvers.norms import WeightedNormParams, norm_equivalence_check, star_components

logger = logging.getLogger(__name__)

KS_THRESHOLD = 0.01
RESCALE_EVENTS = 1000


@dataclass
class ExperimentResult:
    """Tables to write, check outcomes and flat summary numbers"""
    tables: List[Tuple[str, pd.DataFrame, DataFrameSchema]] = field(default_factory=list)
    checks: Dict[str, CheckResult] = field(default_factory=dict)
    summary: Dict[str, float] = field(default_factory=dict)


# Builders

def build_kernel(kc: KernelConfig):
    """AdditiveKernel or RegimeKernel for one configured channel"""
    if kc.kind == "regime":
        base = np.asarray(kc.rate_matrix, dtype=float)
        if kc.rate_on_mean is None:
            return RegimeKernel.constant(base, kc.h0)
        slope = np.asarray(kc.rate_on_mean, dtype=float)
        off_base = base - np.diag(np.diag(base))
        off_slope = slope - np.diag(np.diag(slope))

        def rates(nu: EmpiricalMeasure) -> np.ndarray:
            off = off_base + off_slope * float(nu.mean()[0])
            return off - np.diag(off.sum(axis=1))

        return RegimeKernel(base.shape[0], rates, kc.h0)

    environment = None
    if kc.env_scale > 0:
        environment = EnvironmentTerm(mean_functional(), scale=kc.env_scale, bound=kc.env_bound)
    excitation = Excitation()
    if kc.kind == "hawkes" and kc.excitation_a > 0:
        excitation = Excitation(ExcitationFamily.EXPONENTIAL, a=kc.excitation_a, b=kc.excitation_b)
    return AdditiveKernel(
        baseline=Baseline(level=kc.rate),
        environment=environment,
        excitation=excitation,
        mark_law=MarkLaw(tuple(kc.marks), tuple(kc.mark_probs)),
    )


def build_environment(ec: EnvironmentConfig, horizon: float) -> EnvironmentGenerator:
    return EnvironmentGenerator(
        EmpiricalMeasure(ec.atoms),
        horizon,
        kind=EnvironmentKind(ec.kind),
        step_times=ec.step_times or None,
        step_values=[EmpiricalMeasure(a) for a in ec.step_atoms] or None,
        shock_rate=ec.shock_rate,
        shock_scale=ec.shock_scale,
        clip_radius=ec.clip_radius,
    )


def build_noise(config: RunConfig) -> NoiseSpec:
    return NoiseSpec(kernels=tuple(build_kernel(k) for k in config.kernels), brownian_dim=config.brownian_dim)


def lq_params(config: RunConfig) -> LQParams:
    """LQParams from the model section; the single channel must be additive"""
    mc = config.model
    if len(config.kernels) != 1 or config.kernels[0].kind == "regime" or config.brownian_dim != 1:
        raise ConfigError("model.builder: linear-quadratic models need one additive channel and brownian_dim 1")
    try:
        return LQParams(
            b=mc.b, f=mc.f, sigma=mc.sigma, gamma=mc.gamma, f1=mc.f1, f2=mc.f2, g=mc.g,
            horizon=config.horizon,
            x0=EmpiricalMeasure(mc.x0_atoms) if mc.x0_atoms else list(mc.x0),
            kernel=build_kernel(config.kernels[0]),
            environment=build_environment(config.environment, config.horizon),
        )
    except ValueError as e:
        raise ConfigError(f"model: {e}") from e


def build_model(config: RunConfig) -> FBSDEModel:
    """Named model builder applied to the config"""
    mc = config.model
    x0 = EmpiricalMeasure(mc.x0_atoms) if mc.x0_atoms else list(mc.x0)
    if mc.builder == "lq":
        return build_lq_model(lq_params(config), f_hat=mc.f_hat, beta1=mc.beta1, feedback=mc.feedback)
    if mc.builder == "hamiltonian-lq":
        p = lq_params(config)
        f_hat = p.f_hat if mc.f_hat is None else mc.f_hat
        spec = lq_hamiltonian_spec(p.b_hat, f_hat, p.f2, p.sigma, p.gamma, p.g)
        beta1 = max(p.f_hat, 0.0) if mc.beta1 is None else mc.beta1
        return build_hamiltonian_fbsde(
            spec, p.noise(), p.environment_generator(), x0, p.horizon,
            betas=MonotonicityConstants(beta1=beta1, beta2=0.0, beta3=p.g),
            functionals=[mean_functional()],
            name="hamiltonian-lq",
            feedback=continuation_feedback(beta1, mc.feedback),
        )
    if len(config.kernels) != 1 or config.brownian_dim != 1:
        raise ConfigError("model.builder: scalar models need one jump channel and brownian_dim 1")
    kernel = build_kernel(config.kernels[0])
    if isinstance(kernel, RegimeKernel):
        raise ConfigError("model.builder: scalar models need an additive channel")
    environment = build_environment(config.environment, config.horizon)
    if mc.builder == "one-way":
        return build_one_way_model(mc.sigma, mc.gamma, x0, config.horizon, kernel, environment)
    return build_zero_model(x0, config.horizon, kernel, environment)


def settings_basis(config: RunConfig) -> BasisSpec:
    return BasisSpec(degree=config.solver.basis_degree, ridge_alpha=config.solver.ridge_alpha)


# Tables

def node_frame(bundle: PathBundle, rows: int, X: np.ndarray, sol: Optional[BackwardSolution] = None) -> pd.DataFrame:
    """Node-indexed records: x, y and the martingale increment into each node"""
    P, N1 = min(rows, X.shape[0]), X.shape[1]
    data = {
        "path": np.repeat(np.arange(P), N1),
        "step": np.tile(np.arange(N1), P),
        "time": np.tile(bundle.grid.times, P),
    }
    for i in range(X.shape[2]):
        data[f"x{i}"] = X[:P, :, i].reshape(-1)
    if sol is not None:
        dm = np.concatenate([np.zeros((P, 1, sol.M.shape[2])), sol.dM[:P]], axis=1)
        for i in range(sol.Y.shape[2]):
            data[f"y{i}"] = sol.Y[:P, :, i].reshape(-1)
            data[f"dm{i}"] = dm[:, :, i].reshape(-1)
    return pd.DataFrame(data)


def step_frame(bundle: PathBundle, rows: int, sol: BackwardSolution) -> pd.DataFrame:
    """Step-indexed records of the integrands Z and U"""
    P, N = min(rows, sol.Z.shape[0]), sol.Z.shape[1]
    data = {
        "path": np.repeat(np.arange(P), N),
        "step": np.tile(np.arange(N), P),
        "time": np.tile(bundle.grid.times[:-1], P),
    }
    n, k = sol.Z.shape[2:]
    for i in range(n):
        for c in range(k):
            data[f"z{i}_{c}"] = sol.Z[:P, :, i, c].reshape(-1)
        for j in range(sol.U.shape[3]):
            for r in range(sol.U.shape[4]):
                data[f"u{i}_{j}_{r}"] = sol.U[:P, :, i, j, r].reshape(-1)
    return pd.DataFrame(data)


def _solution_tables(config: RunConfig, bundle: PathBundle, X: np.ndarray, sol: BackwardSolution):
    return [
        ("paths", node_frame(bundle, config.saved_paths, X, sol), PATHS_SCHEMA),
        ("integrands", step_frame(bundle, config.saved_paths, sol), PATHS_SCHEMA),
    ]


# Checks

def tolerance_check(name: str, value: float, bound: float, what: str) -> CheckResult:
    result = CheckResult(name, numbers={"value": float(value), "bound": float(bound)})
    if not value <= bound:
        result.add_violation(CheckKind.TOLERANCE, f"{what} = {value:.4g} exceeds {bound:.4g}", worst_slack=bound - value)
    return result


def mean_within(name: str, samples: np.ndarray, target: float, sigmas: float = 3.0) -> CheckResult:
    """|mean - target| <= sigmas * SE"""
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / np.sqrt(samples.size)) if samples.size > 1 else float("inf")
    result = CheckResult(name, numbers={"mean": mean, "se": se, "target": float(target)})
    if abs(mean - target) > sigmas * se:
        result.add_violation(
            CheckKind.TOLERANCE,
            f"mean {mean:.6g} differs from {target:.6g} by more than {sigmas:g} SE ({se:.3g})",
            worst_slack=sigmas * se - abs(mean - target),
        )
    return result


def orthogonality_check(sol: BackwardSolution, bundle: PathBundle, sigmas: float = 3.0) -> CheckResult:
    """Total covariation of M with W and N~ against zero, with per-step z-scores reported"""
    report = orthogonality_report(sol, bundle)
    result = CheckResult("orthogonality", numbers=dict(report))
    dM = sol.dM
    with_w = np.einsum("pmn,pmk->pnk", dM, bundle.dW).reshape(bundle.n_paths, -1)
    with_n = np.einsum("pmn,pmjr->pnjr", dM, bundle.compensated()).reshape(bundle.n_paths, -1)
    worst = 0.0
    for prod in (with_w, with_n):
        se = prod.std(axis=0, ddof=1) / np.sqrt(prod.shape[0])
        z = np.where(se > 0, np.abs(prod.mean(axis=0)) / np.where(se > 0, se, 1.0), 0.0)
        worst = max(worst, float(z.max()) if z.size else 0.0)
    result.numbers["total_max_z"] = worst
    if worst > sigmas:
        result.add_violation(CheckKind.ORTHOGONALITY, f"covariation of M with the noise at {worst:.2f} SE", worst_slack=sigmas - worst)
    return result


def sandwich_check(model: FBSDEModel, sol: BackwardSolution, bundle: PathBundle, beta: Optional[float]) -> CheckResult:
    params = WeightedNormParams.from_profile(model.driver.profile, bundle.grid, beta=beta)
    lower, value, upper = norm_equivalence_check(sol, params, bundle)
    return CheckResult("norm_sandwich", numbers={"lower": lower, "value": value, "upper": upper, "beta": params.beta})


# Experiments

def simulate_pointproc(config: RunConfig, metrics: MetricsCollector) -> ExperimentResult:
    """Event logs of every channel, counts per path and the law checks"""
    result = ExperimentResult()
    kernels = [build_kernel(k) for k in config.kernels]
    envs = build_environment(config.environment, config.horizon).generate_batch(config.seed, config.paths)
    T = config.horizon
    logs = [simulate_channels(kernels, envs[p], T, config.seed, p) for p in range(config.paths)]
    counts = np.array([[int(np.sum(log.channels == j)) for j in range(len(kernels))] for log in logs])
    metrics.record_events(int(counts.sum()))

    saved = logs[:config.saved_paths]
    result.tables.append(("events", pd.DataFrame({
        "path": np.concatenate([np.full(len(log), p) for p, log in enumerate(saved)]).astype(int),
        "time": np.concatenate([log.times for log in saved]),
        "channel": np.concatenate([log.channels for log in saved]).astype(int) + 1,
        "mark": np.concatenate([log.marks for log in saved]),
    }), EVENTS_SCHEMA))
    result.tables.append(("counts", pd.DataFrame({
        "path": np.repeat(np.arange(config.paths), len(kernels)),
        "channel": np.tile(np.arange(1, len(kernels) + 1), config.paths),
        "count": counts.reshape(-1),
    }), COUNTS_SCHEMA))

    for j, (kc, kernel) in enumerate(zip(config.kernels, kernels)):
        # records and keys number channels 1..l
        label = j + 1
        c = counts[:, j].astype(float)
        result.summary[f"mean_count_{label}"] = float(c.mean())
        result.summary[f"mean_count_se_{label}"] = float(c.std(ddof=1) / np.sqrt(c.size)) if c.size > 1 else float("nan")
        if isinstance(kernel, RegimeKernel):
            continue
        if kc.kind == "constant" and kc.env_scale == 0:
            result.checks[f"mean_count_{label}"] = mean_within(f"mean_count_{label}", c, kc.rate * T)
        if kernel.excitation.active and kc.env_scale == 0:
            branching = kernel.excitation.branching_ratio()
            if branching < 1:
                result.summary[f"stationary_rate_{label}"] = kc.rate / (1.0 - branching)
                result.summary[f"empirical_rate_{label}"] = float(c.mean() / T)
        chosen, comps, total = [], [], 0
        for p, log in enumerate(logs):
            if total >= RESCALE_EVENTS:
                break
            own = log.channel(j)
            chosen.append(own)
            comps.append(kernel_compensator(kernel, own, envs[p]))
            total += len(own)
        rescale = pooled_time_rescale(chosen, comps)
        check = CheckResult(f"time_rescaling_{label}", numbers={
            "events": float(rescale.interarrivals.size), "ks_statistic": rescale.ks_statistic, "p_value": rescale.p_value,
        })
        if rescale.p_value <= KS_THRESHOLD:
            check.add_violation(CheckKind.TOLERANCE, f"KS p-value {rescale.p_value:.3g} <= {KS_THRESHOLD}", rescale.p_value - KS_THRESHOLD)
        result.checks[check.check] = check
    return result


def simulate_regime(config: RunConfig, metrics: MetricsCollector) -> ExperimentResult:
    """Replicated regime chains with occupation, generator and holding-time diagnostics"""
    regime_cfg = next((k for k in config.kernels if k.kind == "regime"), None)
    if regime_cfg is None:
        raise ConfigError("kernels: simulate-regime needs a regime kernel")
    rk = build_kernel(regime_cfg)
    n = rk.n_states
    envs = build_environment(config.environment, config.horizon).generate_batch(config.seed, config.paths)
    paths = [
        simulate_regime_chain(rk, envs[p], 1, config.horizon, substream(config.seed, p, 0, Stream.REGIME))
        for p in range(config.paths)
    ]
    metrics.record_events(sum(p.jumps for p in paths))
    result = ExperimentResult()
    saved = paths[:config.saved_paths]
    result.tables.append(("regime", pd.DataFrame({
        "path": np.concatenate([np.full(len(p.times), i) for i, p in enumerate(saved)]).astype(int),
        "time": np.concatenate([p.times for p in saved]),
        "state": np.concatenate([p.states for p in saved]).astype(int),
    }), REGIME_SCHEMA))

    for s in rk.states:
        frac, se = occupation_fraction(paths, s, n)
        result.summary[f"occupation_{s}"] = frac
        result.summary[f"occupation_se_{s}"] = se
    gen = empirical_generator(paths, n)
    for i in range(n):
        for j in range(n):
            if i != j:
                result.summary[f"rate_{i + 1}_{j + 1}"] = float(gen["rates"][i, j])

    constant = regime_cfg.rate_on_mean is None
    if constant:
        Q = np.asarray(regime_cfg.rate_matrix, dtype=float)
        # stationary law: left null vector of Q
        A = np.vstack([Q.T, np.ones(n)])
        pi = np.linalg.lstsq(A, np.append(np.zeros(n), 1.0), rcond=None)[0]
        fractions = np.array([p.occupation(n)[0] / p.horizon for p in paths])
        result.checks["occupation_1"] = mean_within("occupation_1", fractions, float(pi[0]))
        exit_rate = -Q[0, 0]
        holds = holding_times(paths, 1)
        if exit_rate > 0 and holds.size:
            ks = stats.kstest(holds, "expon", args=(0.0, 1.0 / exit_rate))
            check = CheckResult("holding_times_1", numbers={
                "holds": float(holds.size), "ks_statistic": float(ks.statistic), "p_value": float(ks.pvalue),
            })
            if ks.pvalue <= KS_THRESHOLD:
                check.add_violation(CheckKind.TOLERANCE, f"KS p-value {ks.pvalue:.3g} <= {KS_THRESHOLD}", ks.pvalue - KS_THRESHOLD)
            result.checks[check.check] = check
    return result


def solve_forward(config: RunConfig, metrics: MetricsCollector) -> ExperimentResult:
    """Uncoupled Euler simulation of the model's forward leg"""
    model = build_model(config)
    bundle = model.build_bundle(config.steps, config.paths, config.seed)
    metrics.record_events(int(bundle.dN.sum()))
    X = euler_simulate(model.forward, bundle)
    result = ExperimentResult()
    result.tables.append(("paths", node_frame(bundle, config.saved_paths, X), PATHS_SCHEMA))
    result.summary.update(moment_report(X, bundle.grid.times).to_dict())
    return result


def solve_backward(config: RunConfig, metrics: MetricsCollector) -> ExperimentResult:
    """LSMC solve of the model's backward leg along the uncoupled forward paths"""
    model = build_model(config)
    bundle = model.build_bundle(config.steps, config.paths, config.seed)
    metrics.record_events(int(bundle.dN.sum()))
    X = euler_simulate(model.forward, bundle)
    sol = lsmc_solve(model.driver, model.evaluate_terminal(bundle, X[:, -1]), bundle, settings_basis(config), X)
    result = ExperimentResult()
    result.tables.extend(_solution_tables(config, bundle, X, sol))
    result.checks["orthogonality"] = orthogonality_check(sol, bundle)
    result.checks["norm_sandwich"] = sandwich_check(model, sol, bundle, config.solver.beta)
    result.summary["y0_mean"] = float(sol.Y[:, 0].mean())
    result.summary.update({f"norm_{k}": v for k, v in star_components(sol, bundle, X).items()})
    return result


def _coupled(config: RunConfig, metrics: MetricsCollector, model: FBSDEModel, bundle: PathBundle, result: ExperimentResult):
    solution, report = continuation_solve(model, bundle, config.solver, settings_basis(config), metrics=metrics)
    result.tables.extend(_solution_tables(config, bundle, solution.X, solution.backward))
    result.tables.append(("continuation", pd.DataFrame([r.to_dict() for r in report.records]), CONTINUATION_SCHEMA))
    result.checks.update(report.checks)
    result.checks["orthogonality"] = orthogonality_check(solution.backward, bundle)
    result.checks["norm_sandwich"] = sandwich_check(model, solution.backward, bundle, config.solver.beta)
    result.summary.update(report.summary())
    result.summary["y0_mean"] = float(solution.Y[:, 0].mean())
    return solution


def solve_coupled(config: RunConfig, metrics: MetricsCollector) -> ExperimentResult:
    """Continuation solve of the full system"""
    model = build_model(config)
    bundle = model.build_bundle(config.steps, config.paths, config.seed)
    metrics.record_events(int(bundle.dN.sum()))
    result = ExperimentResult()
    _coupled(config, metrics, model, bundle, result)
    return result


def verify_monotonicity(config: RunConfig, metrics: MetricsCollector) -> ExperimentResult:
    """Sampled G-monotonicity verifier on the declared constants"""
    model = build_model(config)
    bundle = model.build_bundle(config.steps, config.paths, config.seed)
    check = check_g_monotonicity(model, bundle, count=config.checks, seed=config.seed)
    result = ExperimentResult(checks={"g_monotonicity": check})
    result.summary.update(check.numbers)
    result.summary.update({"beta1": model.betas.beta1, "beta2": model.betas.beta2, "beta3": model.betas.beta3})
    if model.stated_beta1 is not None:
        result.summary["stated_beta1"] = float(model.stated_beta1)
    return result


def verify_duality(config: RunConfig, metrics: MetricsCollector) -> ExperimentResult:
    """Product-rule identity along the solved system"""
    model = build_model(config)
    bundle = model.build_bundle(config.steps, config.paths, config.seed)
    metrics.record_events(int(bundle.dN.sum()))
    result = ExperimentResult()
    solution = _coupled(config, metrics, model, bundle, result)
    legs = solution_legs(model, solution.X, solution.backward, bundle)
    duality = duality_from_processes(
        solution.X, solution.backward, legs["B"], legs["S"], legs["Gm"], legs["F"], model.G, bundle
    )
    result.checks["ito_duality"] = duality.to_check()
    result.summary.update({"duality_lhs": duality.lhs, "duality_rhs": duality.rhs, "duality_se": duality.mc_error})
    return result


def reproduce_lq(config: RunConfig, metrics: MetricsCollector) -> ExperimentResult:
    """Continuation solve of the linear-quadratic system against its Riccati reference"""
    if config.model.builder not in ("lq", "hamiltonian-lq"):
        raise ConfigError("model.builder: reproduce-lq needs a linear-quadratic model")
    params = lq_params(config)
    model = build_model(config)
    bundle = model.build_bundle(config.steps, config.paths, config.seed)
    metrics.record_events(int(bundle.dN.sum()))
    ref = riccati_reference(params, bundle.grid)
    closed = riccati_closed_form(params, bundle.grid.times)
    result = ExperimentResult()
    solution = _coupled(config, metrics, model, bundle, result)
    errors = riccati_comparison(ref, solution, bundle)
    closed_gap = float(np.max(np.abs(ref.p - closed)))
    result.tables.append(("riccati", pd.DataFrame({
        "step": np.arange(ref.p.size), "time": ref.times, "p": ref.p,
    }), RICCATI_SCHEMA))
    result.checks["riccati_y"] = tolerance_check("riccati_y", errors["y_error"], 0.05, "relative Y error")
    result.checks["riccati_z"] = tolerance_check("riccati_z", errors["z_error"], 0.10, "relative Z error")
    result.checks["riccati_u"] = tolerance_check("riccati_u", errors["u_error"], 0.10, "relative U error")
    result.checks["residual_martingale"] = tolerance_check("residual_martingale", errors["m_ratio"], 0.01, "M to Y ratio")
    result.checks["riccati_closed_form"] = tolerance_check("riccati_closed_form", closed_gap, 1e-8, "RK4 vs closed form")
    result.summary.update(errors)
    result.summary["closed_form_gap"] = closed_gap
    return result


EXPERIMENTS: Dict[ExperimentKind, Callable[[RunConfig, MetricsCollector], ExperimentResult]] = {
    ExperimentKind.SIMULATE_POINTPROC: simulate_pointproc,
    ExperimentKind.SIMULATE_REGIME: simulate_regime,
    ExperimentKind.SOLVE_FORWARD: solve_forward,
    ExperimentKind.SOLVE_BACKWARD: solve_backward,
    ExperimentKind.SOLVE_COUPLED: solve_coupled,
    ExperimentKind.VERIFY_MONOTONICITY: verify_monotonicity,
    ExperimentKind.VERIFY_DUALITY: verify_duality,
    ExperimentKind.REPRODUCE_LQ: reproduce_lq,
}


def run_experiment(config: RunConfig, metrics: Optional[MetricsCollector] = None) -> ExperimentResult:
    """Dispatch on the experiment kind"""
    metrics = metrics or MetricsCollector()
    logger.info("running %s (seed %d)", config.experiment.value, config.seed)
    result = EXPERIMENTS[config.experiment](config, metrics)
    for name, check in result.checks.items():
        metrics.record_check(name, check.passed)
    return result
