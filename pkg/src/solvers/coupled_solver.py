"""Method of continuation for the fully coupled FBSDE"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.data.contracts import CheckResult, SolverSettings
from src.errors import CoefficientError, PicardDivergenceError, StepUnderflowError
from src.monitoring.metrics import MetricsCollector
from src.solvers.backward_bsde import BackwardSolution, Driver, lsmc_solve
from src.solvers.basis import BasisSpec
from src.solvers.bundle import PathBundle
from src.solvers.duality import solution_legs
from src.solvers.forward_sde import CouplingInput, ForwardCoefficients, euler_from_offsets, euler_simulate
from src.solvers.model import Case, FBSDEModel
from src.solvers.monotonicity import check_g_monotonicity
from src.solvers.norms import star_components

logger = logging.getLogger(__name__)

PRECHECK_SAMPLES = 1000
# inner alpha0-system tolerance relative to picard_tol
INNER_TOL_FACTOR = 0.1


@dataclass
class Offsets:
    """(B, S, Gm, F, zeta) grid processes shifting the base system"""
    B: np.ndarray
    S: np.ndarray
    Gm: np.ndarray
    F: np.ndarray
    zeta: np.ndarray

    @classmethod
    def zeros(cls, bundle: PathBundle, d: int, n: int) -> "Offsets":
        P, N = bundle.n_paths, bundle.steps
        return cls(
            B=np.zeros((P, N, d)),
            S=np.zeros((P, N, d, bundle.brownian_dim)),
            Gm=np.zeros((P, N, d, bundle.channels, bundle.mark_cells)),
            F=np.zeros((P, N, n)),
            zeta=np.zeros((P, n)),
        )

    def __add__(self, other: "Offsets") -> "Offsets":
        return Offsets(
            B=self.B + other.B,
            S=self.S + other.S,
            Gm=self.Gm + other.Gm,
            F=self.F + other.F,
            zeta=self.zeta + other.zeta,
        )


@dataclass
class FBSDESolution:
    """Forward path X (P, N+1, d) with the backward solution"""
    X: np.ndarray
    backward: BackwardSolution

    @property
    def Y(self) -> np.ndarray:
        return self.backward.Y

    @property
    def Z(self) -> np.ndarray:
        return self.backward.Z

    @property
    def U(self) -> np.ndarray:
        return self.backward.U

    @property
    def M(self) -> np.ndarray:
        return self.backward.M

    @classmethod
    def zeros(cls, bundle: PathBundle, d: int, n: int) -> "FBSDESolution":
        X = np.zeros((bundle.n_paths, bundle.steps + 1, d))
        X[:] = bundle.x0[:, None, :]
        return cls(X=X, backward=BackwardSolution.zeros(bundle, n))

    def minus(self, other: "FBSDESolution") -> "FBSDESolution":
        b, o = self.backward, other.backward
        return FBSDESolution(
            X=self.X - other.X,
            backward=BackwardSolution(Y=b.Y - o.Y, Z=b.Z - o.Z, U=b.U - o.U, M=b.M - o.M),
        )

    def norm(self, bundle: PathBundle) -> float:
        """Plain solution norm including sup |X|^2"""
        return float(np.sqrt(sum(star_components(self.backward, bundle, self.X).values())))


@dataclass
class ContinuationState:
    """Current continuation level, step size, offsets and iterate"""
    alpha: float
    eps: float
    offsets: Offsets
    iterate: FBSDESolution


@dataclass
class PicardRecord:
    """One fixed-point loop at a trial level"""
    alpha_from: float
    eps: float
    iterations: int = 0
    inner_sweeps: int = 0
    distances: List[float] = field(default_factory=list)
    converged: bool = False

    @property
    def ratios(self) -> List[float]:
        d = self.distances
        return [b / a for a, b in zip(d, d[1:]) if a > 0]

    def to_dict(self) -> Dict[str, float]:
        ratios = self.ratios
        return {
            "alpha_from": self.alpha_from,
            "eps": self.eps,
            "iterations": float(self.iterations),
            "inner_sweeps": float(self.inner_sweeps),
            "last_distance": self.distances[-1] if self.distances else float("nan"),
            "last_ratio": ratios[-1] if ratios else float("nan"),
            "converged": float(self.converged),
        }


@dataclass
class SolverReport:
    """Per-level record of a continuation run and its final numbers"""
    case: Case
    records: List[PicardRecord] = field(default_factory=list)
    alpha: float = 0.0
    halvings: int = 0
    theoretical_step: Optional[float] = None
    norms: Dict[str, float] = field(default_factory=dict)
    checks: Dict[str, CheckResult] = field(default_factory=dict)

    @property
    def accepted_steps(self) -> int:
        return sum(r.converged for r in self.records)

    @property
    def picard_iterations(self) -> int:
        return sum(r.iterations for r in self.records)

    @property
    def inner_sweeps(self) -> int:
        return sum(r.inner_sweeps for r in self.records)

    def summary(self) -> Dict[str, float]:
        """Flat machine-readable record"""
        out = {
            "alpha": self.alpha,
            "accepted_steps": float(self.accepted_steps),
            "halvings": float(self.halvings),
            "picard_iterations": float(self.picard_iterations),
            "inner_sweeps": float(self.inner_sweeps),
            "theoretical_step": self.theoretical_step if self.theoretical_step is not None else float("nan"),
        }
        out.update({f"norm_{k}": v for k, v in self.norms.items()})
        out.update({f"check_{k}": float(c.passed) for k, c in self.checks.items()})
        return out


def _check_case(model: FBSDEModel, case: Case) -> None:
    d, n = model.forward.dim, model.driver.dim
    if (case == Case.D_LT_N and d > n) or (case == Case.D_GE_N and d < n):
        raise ValueError(f"case {case.value} inconsistent with d={d}, n={n}")


def solve_decoupled_base(
    model: FBSDEModel,
    offsets: Offsets,
    bundle: PathBundle,
    case: Optional[Case] = None,
    feedback: float = 1.0,
    basis: Optional[BasisSpec] = None,
    state: Optional[np.ndarray] = None,
) -> FBSDESolution:
    """
    Solve the base system whose coupling runs in one direction only

    d < n: X from the offsets, then Y with driver F + feedback * G X and
    terminal zeta + G X_T. d >= n: Y with driver F and terminal zeta, then X
    with the offsets minus feedback * G^T (Y, Z, U).

    Args:
        model: Supplies G and dimensions
        offsets: Shifts (B, S, Gm, F, zeta)
        bundle: Shared noise
        case: Leg order; the model's dispatch if None
        feedback: Weight of the G-feedback term
        basis: Regression basis
        state: Forward path used as regression state when the backward leg
            is solved first (x0 if None)

    Returns:
        FBSDESolution
    """
    case = case or model.case
    _check_case(model, case)
    G = model.G
    n = model.driver.dim

    if case == Case.D_LT_N:
        X = euler_from_offsets(bundle, offsets.B, offsets.S, offsets.Gm)
        GX = np.einsum("nd,pmd->pmn", G, X)
        driver = Driver(f=lambda ctx, x, y, z, u: offsets.F[:, ctx.step] + feedback * GX[:, ctx.step], dim=n)
        sol = lsmc_solve(driver, offsets.zeta + GX[:, -1], bundle, basis, X)
        return FBSDESolution(X=X, backward=sol)

    driver = Driver(f=lambda ctx, x, y, z, u: offsets.F[:, ctx.step], dim=n)
    sol = lsmc_solve(driver, offsets.zeta, bundle, basis, state)
    B = offsets.B - feedback * np.einsum("nd,pmn->pmd", G, sol.Y[:, :-1])
    S = offsets.S - feedback * np.einsum("nd,pmnk->pmdk", G, sol.Z)
    Gm = offsets.Gm - feedback * np.einsum("nd,pmnjr->pmdjr", G, sol.U)
    X = euler_from_offsets(bundle, B, S, Gm)
    return FBSDESolution(X=X, backward=sol)


def continuation_offsets(
    model: FBSDEModel,
    theta: FBSDESolution,
    bundle: PathBundle,
    weight: float,
    feedback: Optional[float] = None,
) -> Offsets:
    """
    Offsets contributed by a frozen iterate at a given weight

    d < n: weight * (b, sigma, gamma, f - c G x, g(x_T) - G x_T).
    d >= n: weight * (b + c G^T y, sigma + c G^T z, gamma + c G^T u, f, g(x_T)).
    c is the model's base feedback unless given.
    """
    d, n, _, _ = model.dims
    if weight == 0.0:
        return Offsets.zeros(bundle, d, n)
    c = model.base_feedback if feedback is None else feedback
    legs = solution_legs(model, theta.X, theta.backward, bundle)
    G = model.G
    if model.case == Case.D_LT_N:
        GX = np.einsum("nd,pmd->pmn", G, theta.X)
        return Offsets(
            B=weight * legs["B"],
            S=weight * legs["S"],
            Gm=weight * legs["Gm"],
            F=weight * (legs["F"] - c * GX[:, :-1]),
            zeta=weight * (legs["g"] - GX[:, -1]),
        )
    return Offsets(
        B=weight * (legs["B"] + c * np.einsum("nd,pmn->pmd", G, theta.Y[:, :-1])),
        S=weight * (legs["S"] + c * np.einsum("nd,pmnk->pmdk", G, theta.Z)),
        Gm=weight * (legs["Gm"] + c * np.einsum("nd,pmnjr->pmdjr", G, theta.U)),
        F=weight * legs["F"],
        zeta=weight * legs["g"],
    )


def _forward_level(
    model: FBSDEModel,
    alpha: float,
    B: np.ndarray,
    S: np.ndarray,
    Gm: np.ndarray,
    bundle: PathBundle,
    coupling: CouplingInput,
) -> np.ndarray:
    """Euler for offsets + alpha * (b, sigma, gamma) with the state live"""
    P = bundle.n_paths
    d, _, k, _ = model.dims
    l, R = bundle.channels, bundle.mark_cells
    fwd = model.forward
    coef = ForwardCoefficients(
        b=lambda ctx, x, y, z, u: B[:, ctx.step] + alpha * np.broadcast_to(fwd.b(ctx, x, y, z, u), (P, d)),
        sigma=lambda ctx, x, y, z, u: S[:, ctx.step] + alpha * np.broadcast_to(fwd.sigma(ctx, x, y, z, u), (P, d, k)),
        gamma=lambda ctx, x, y, z, u: Gm[:, ctx.step] + alpha * np.broadcast_to(fwd.gamma(ctx, x, y, z, u), (P, d, l, R)),
        dim=d,
    )
    return euler_simulate(coef, bundle, coupling)


def solve_level(
    model: FBSDEModel,
    alpha: float,
    offsets: Offsets,
    inner: FBSDESolution,
    bundle: PathBundle,
    feedback: Optional[float] = None,
    basis: Optional[BasisSpec] = None,
) -> FBSDESolution:
    """
    One sweep on the alpha-system, each leg reading the other from `inner`

    d < n: X solves dX = B + alpha b(X, inner) (and likewise sigma, gamma),
    then Y solves the BSDE with driver F + alpha f + (1 - alpha) c G X and
    terminal zeta + alpha g(X_T) + (1 - alpha) G X_T. d >= n: Y first along
    inner.X with driver F + alpha f and terminal zeta + alpha g, then X with
    the offsets minus (1 - alpha) c G^T (Y, Z, U). At alpha = 0 this is the
    decoupled base and needs no inner iterate.

    Args:
        model: Coupled model
        alpha: Continuation level in [0, 1]
        offsets: Shifts (B, S, Gm, F, zeta)
        inner: Previous iterate supplying the cross leg
        bundle: Shared noise
        feedback: Base G-feedback c (the model's if None)
        basis: Regression basis

    Returns:
        FBSDESolution
    """
    c = model.base_feedback if feedback is None else feedback
    if alpha == 0.0:
        return solve_decoupled_base(model, offsets, bundle, feedback=c, basis=basis, state=inner.X)

    P = bundle.n_paths
    n = model.driver.dim
    G = model.G
    f = model.driver.f
    weight = 1.0 - alpha

    if model.case == Case.D_LT_N:
        X = _forward_level(
            model, alpha, offsets.B, offsets.S, offsets.Gm, bundle, CouplingInput(inner.Y, inner.Z, inner.U)
        )
        GX = np.einsum("nd,pmd->pmn", G, X)
        driver = Driver(
            f=lambda ctx, x, y, z, u: (
                offsets.F[:, ctx.step]
                + alpha * np.broadcast_to(f(ctx, x, y, z, u), (P, n))
                + weight * c * GX[:, ctx.step]
            ),
            dim=n,
            profile=model.driver.profile,
        )
        terminal = offsets.zeta + alpha * model.evaluate_terminal(bundle, X[:, -1]) + weight * GX[:, -1]
        return FBSDESolution(X=X, backward=lsmc_solve(driver, terminal, bundle, basis, X))

    driver = Driver(
        f=lambda ctx, x, y, z, u: offsets.F[:, ctx.step] + alpha * np.broadcast_to(f(ctx, x, y, z, u), (P, n)),
        dim=n,
        profile=model.driver.profile,
    )
    terminal = offsets.zeta + alpha * model.evaluate_terminal(bundle, inner.X[:, -1])
    sol = lsmc_solve(driver, terminal, bundle, basis, inner.X)
    B = offsets.B - weight * c * np.einsum("nd,pmn->pmd", G, sol.Y[:, :-1])
    S = offsets.S - weight * c * np.einsum("nd,pmnk->pmdk", G, sol.Z)
    Gm = offsets.Gm - weight * c * np.einsum("nd,pmnjr->pmdjr", G, sol.U)
    X = _forward_level(model, alpha, B, S, Gm, bundle, CouplingInput(sol.Y, sol.Z, sol.U))
    return FBSDESolution(X=X, backward=sol)


class _ContinuationMap:
    """
    Fixed-point map at level alpha0 + eps with the eps part frozen

    The alpha0-system is solved by inner sweeps until the relative iterate
    distance drops below INNER_TOL_FACTOR * picard_tol.
    """

    def __init__(self, model: FBSDEModel, bundle: PathBundle, basis: BasisSpec, settings: SolverSettings):
        self.model = model
        self.bundle = bundle
        self.basis = basis
        self.max_sweeps = settings.inner_max_iter
        self.tol = INNER_TOL_FACTOR * settings.picard_tol
        self.feedback = model.base_feedback

    def base(self, offsets: Offsets, state: Optional[np.ndarray]) -> FBSDESolution:
        return solve_decoupled_base(
            self.model, offsets, self.bundle, feedback=self.feedback, basis=self.basis, state=state
        )

    def __call__(self, theta: FBSDESolution, alpha0: float, eps: float) -> Tuple[FBSDESolution, int, bool]:
        """Returns (iterate, inner sweeps, whether the inner loop converged)"""
        offsets = continuation_offsets(self.model, theta, self.bundle, eps, self.feedback)
        if alpha0 == 0.0:
            return self.base(offsets, theta.X), 1, True
        inner = theta
        for sweep in range(1, self.max_sweeps + 1):
            new = solve_level(self.model, alpha0, offsets, inner, self.bundle, self.feedback, self.basis)
            dist = _relative_distance(new, inner, self.bundle)
            inner = new
            if dist <= self.tol:
                return inner, sweep, True
            if not np.isfinite(dist):
                break
        logger.debug("inner loop at alpha0=%.4g stopped after %d sweeps", alpha0, sweep)
        return inner, sweep, False


def _relative_distance(new: FBSDESolution, old: FBSDESolution, bundle: PathBundle) -> float:
    gap = new.minus(old).norm(bundle)
    scale = new.norm(bundle)
    if gap == 0.0:
        return 0.0
    return gap / scale if scale > 0 else float("inf")


def _picard(
    phi: _ContinuationMap,
    start: FBSDESolution,
    alpha0: float,
    eps: float,
    settings: SolverSettings,
    bundle: PathBundle,
    metrics: Optional[MetricsCollector],
) -> Tuple[FBSDESolution, PicardRecord]:
    record = PicardRecord(alpha_from=alpha0, eps=eps)
    theta = start
    growth = 0
    for j in range(settings.picard_max_iter):
        try:
            new, sweeps, inner_ok = phi(theta, alpha0, eps)
        except CoefficientError as e:
            logger.debug("picard %d at %.4g+%.4g: %s", j + 1, alpha0, eps, e)
            break
        record.inner_sweeps += sweeps
        if not inner_ok:
            break
        dist = _relative_distance(new, theta, bundle)
        record.iterations = j + 1
        record.distances.append(dist)
        if metrics is not None:
            metrics.record_picard(dist, sweeps)
        if len(record.distances) > 1 and record.distances[-2] > 0:
            logger.debug("picard %d at %.4g+%.4g: distance %.3e ratio %.3f (%d sweeps)",
                         j + 1, alpha0, eps, dist, dist / record.distances[-2], sweeps)
        theta = new
        if not np.isfinite(dist):
            break
        if dist <= settings.picard_tol:
            record.converged = True
            break
        growth = growth + 1 if len(record.distances) > 1 and dist > record.distances[-2] else 0
        if growth >= settings.divergence_patience:
            break
    return theta, record


def continuation_solve(
    model: FBSDEModel,
    bundle: PathBundle,
    settings: Optional[SolverSettings] = None,
    basis: Optional[BasisSpec] = None,
    initial_guess: Optional[FBSDESolution] = None,
    metrics: Optional[MetricsCollector] = None,
    precheck: bool = True,
) -> Tuple[FBSDESolution, SolverReport]:
    """
    Solve the coupled FBSDE by continuation from the decoupled base

    Starting at alpha = 0, each step freezes the current iterate, builds the
    eps-shifted offsets, solves the alpha-system under them by inner sweeps
    and iterates this map until the relative iterate distance falls below
    picard_tol. A non-finite coefficient or an inner loop that does not
    settle within inner_max_iter sweeps counts as divergence. A converged step advances alpha
    by eps; a diverging one (distance growing divergence_patience times in a
    row, or picard_max_iter reached) halves eps. A final backward pass with
    the full driver and terminal g(X_T) makes Y_T = g(X_T) hold path-wise.

    Args:
        model: Coupled model
        bundle: Shared noise reused by every iterate
        settings: Continuation and Picard settings
        basis: Regression basis (degree from settings if None)
        initial_guess: Warm start of the first Picard loop
        metrics: Optional telemetry sink
        precheck: Run the monotonicity verifier first (warning only)

    Returns:
        (solution, SolverReport)

    Raises:
        StepUnderflowError: eps fell below eps_min after progress was made
        PicardDivergenceError: no step could be taken from alpha = 0
    """
    settings = settings or SolverSettings()
    basis = basis or BasisSpec(degree=settings.basis_degree, ridge_alpha=settings.ridge_alpha)
    d, n, _, _ = model.dims
    report = SolverReport(case=model.case, theoretical_step=model.theoretical_step)
    if report.theoretical_step is not None:
        logger.info("theoretical continuation step for %s: %.3g", model.name, report.theoretical_step)

    if precheck:
        mono = check_g_monotonicity(model, bundle, count=PRECHECK_SAMPLES, seed=bundle.seed or 0)
        report.checks["g_monotonicity"] = mono
        if not mono.passed:
            logger.warning("continuing although %s fails the monotonicity pre-check", model.name)

    phi = _ContinuationMap(model, bundle, basis, settings)
    state = ContinuationState(
        alpha=0.0,
        eps=settings.eps_init,
        offsets=Offsets.zeros(bundle, d, n),
        iterate=phi.base(Offsets.zeros(bundle, d, n), None),
    )
    if not np.all(np.isfinite(state.iterate.X)) or not np.all(np.isfinite(state.iterate.Y)):
        raise PicardDivergenceError(f"decoupled base of {model.name} is not finite")
    warm = initial_guess

    while state.alpha < 1.0:
        eps = min(state.eps, 1.0 - state.alpha)
        start = warm if warm is not None else state.iterate
        theta, record = _picard(phi, start, state.alpha, eps, settings, bundle, metrics)
        report.records.append(record)

        if record.converged:
            warm = None
            state.alpha = 1.0 if 1.0 - (state.alpha + eps) < 1e-12 else state.alpha + eps
            state.iterate = theta
            state.offsets = continuation_offsets(model, theta, bundle, eps)
            logger.info("continuation step accepted: alpha=%.4f (eps=%.4g, %d iterations)",
                        state.alpha, eps, record.iterations)
            if metrics is not None:
                metrics.record_step(accepted=True, alpha=state.alpha, eps=eps, ratios=record.ratios)
            continue

        report.halvings += 1
        state.eps = eps / 2.0
        logger.info("continuation step halved at alpha=%.4f: eps %.4g -> %.4g", state.alpha, eps, state.eps)
        if metrics is not None:
            metrics.record_step(accepted=False, alpha=state.alpha, eps=state.eps, ratios=record.ratios)
        if state.eps < settings.eps_min:
            if state.alpha == 0.0:
                raise PicardDivergenceError(
                    f"no continuation step from the decoupled base of {model.name} (eps < {settings.eps_min:g})"
                )
            raise StepUnderflowError(f"eps {state.eps:g} < eps_min {settings.eps_min:g} at alpha={state.alpha:.4f}")

    X = state.iterate.X
    terminal = model.evaluate_terminal(bundle, X[:, -1])
    final = FBSDESolution(X=X, backward=lsmc_solve(model.driver, terminal, bundle, basis, X))
    report.alpha = state.alpha
    report.norms = star_components(final.backward, bundle, final.X)
    return final, report


@dataclass
class UniquenessResult:
    """Relative distance between two continuation runs"""
    discrepancy: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.discrepancy <= self.tolerance


def uniqueness_probe(
    model: FBSDEModel,
    bundle: PathBundle,
    guesses: Tuple[Optional[FBSDESolution], Optional[FBSDESolution]],
    settings: Optional[SolverSettings] = None,
    basis: Optional[BasisSpec] = None,
) -> Tuple[UniquenessResult, FBSDESolution, FBSDESolution]:
    """
    Run continuation from two initial guesses on the same bundle

    Returns the relative plain-norm distance of the two solutions, to be
    compared with 10 x picard_tol.
    """
    settings = settings or SolverSettings()
    first, _ = continuation_solve(model, bundle, settings, basis, guesses[0], precheck=False)
    second, _ = continuation_solve(model, bundle, settings, basis, guesses[1], precheck=False)
    discrepancy = _relative_distance(first, second, bundle)
    result = UniquenessResult(discrepancy=discrepancy, tolerance=10.0 * settings.picard_tol)
    logger.info("uniqueness probe: discrepancy %.3e (tolerance %.1e)", discrepancy, result.tolerance)
    return result, first, second
