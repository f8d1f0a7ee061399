"""Discrete solution norms, the weighted norm and the a priori stability check"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from src.errors import NormSandwichError
from src.pointproc.integrals import random_norm_sq
from src.solvers.backward_bsde import BackwardSolution, Driver, LipschitzProfile
from src.solvers.bundle import PathBundle
from src.solvers.grid import TimeGrid

logger = logging.getLogger(__name__)

SANDWICH_RTOL = 1e-12


def _per_path(
    sol: BackwardSolution,
    bundle: PathBundle,
    X: Optional[np.ndarray] = None,
    weights: Optional[np.ndarray] = None,
) -> Dict[str, np.ndarray]:
    """Per-path contributions of each norm component, weights on the N+1 nodes"""
    N = bundle.steps
    w = np.ones(N + 1) if weights is None else np.asarray(weights, dtype=float)
    dt = bundle.dt
    out = {}
    if X is not None:
        out["X"] = np.max(w[None, :] * np.sum(X ** 2, axis=2), axis=1)
    out["Y"] = np.max(w[None, :] * np.sum(sol.Y ** 2, axis=2), axis=1)
    out["Z"] = np.sum(w[None, :-1] * np.sum(sol.Z ** 2, axis=(2, 3)) * dt[None, :], axis=1)
    out["U"] = np.sum(w[None, :-1] * random_norm_sq(sol.U, bundle.kernel_mass) * dt[None, :], axis=1)
    out["M"] = np.sum(w[None, :-1] * np.sum(sol.dM ** 2, axis=2), axis=1)
    return out


def star_components(
    sol: BackwardSolution,
    bundle: PathBundle,
    X: Optional[np.ndarray] = None,
) -> Dict[str, float]:
    """
    Squared components of the plain solution norm

    X and Y: E[max_m |.|^2]; Z: E[sum |Z|^2 dt]; U: E[sum ||U||_K^2 dt];
    M: E[sum |dM|^2].
    """
    return {k: float(v.mean()) for k, v in _per_path(sol, bundle, X).items()}


def star_norm_sq(sol: BackwardSolution, bundle: PathBundle, X: Optional[np.ndarray] = None) -> float:
    return float(sum(star_components(sol, bundle, X).values()))


def star_norm(sol: BackwardSolution, bundle: PathBundle, X: Optional[np.ndarray] = None) -> float:
    return float(np.sqrt(star_norm_sq(sol, bundle, X)))


def difference(a: BackwardSolution, b: BackwardSolution) -> BackwardSolution:
    return BackwardSolution(Y=a.Y - b.Y, Z=a.Z - b.Z, U=a.U - b.U, M=a.M - b.M)


@dataclass(frozen=True)
class WeightedNormParams:
    """
    Weight e^{beta A_t} with A_t = int_0^t alpha_s^2 ds

    alpha_sq is given per grid step; A is accumulated with left sums.
    """
    alpha_sq: np.ndarray
    beta: float
    k_lower: float
    k_upper: float

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if np.any(np.asarray(self.alpha_sq) < 0):
            raise ValueError("alpha^2 must be nonnegative")

    @classmethod
    def from_profile(
        cls,
        profile: LipschitzProfile,
        grid: TimeGrid,
        beta: Optional[float] = None,
    ) -> "WeightedNormParams":
        """Constant alpha^2 = max(sqrt(K_y), K^W, K^lambda); beta defaults to 2 / K_*"""
        params = cls(
            alpha_sq=np.full(grid.steps, profile.alpha_sq),
            beta=2.0 / profile.k_lower if beta is None else float(beta),
            k_lower=profile.k_lower,
            k_upper=profile.k_upper,
        )
        params.validate(grid)
        return params

    def A(self, grid: TimeGrid) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(np.asarray(self.alpha_sq) * grid.dt)])

    def weights(self, grid: TimeGrid) -> np.ndarray:
        return np.exp(self.beta * self.A(grid))

    def validate(self, grid: TimeGrid) -> None:
        """K_* t <= A_t <= K^* T on every node"""
        A = self.A(grid)
        t = grid.times
        tol = 1e-12 * max(1.0, self.k_upper * grid.horizon)
        if np.any(A < self.k_lower * t - tol) or np.any(A > self.k_upper * grid.horizon + tol):
            raise ValueError(
                f"A_t leaves [K_* t, K^* T] with K_*={self.k_lower}, K^*={self.k_upper}"
            )

    def upper_factor(self, grid: TimeGrid) -> float:
        return float(np.exp(self.beta * self.k_upper * grid.horizon))


def weighted_norm(sol: BackwardSolution, params: WeightedNormParams, bundle: PathBundle) -> float:
    """
    Squared weighted norm

    E[max_m w_m |Y_m|^2] + E sum w_m (|Z_m|^2 + ||U_m||_K^2) dt_m + E sum w_m |dM_m|^2
    with w_m = exp(beta A_{t_m}).
    """
    parts = _per_path(sol, bundle, weights=params.weights(bundle.grid))
    return float(sum(v.mean() for v in parts.values()))


def norm_equivalence_check(
    sol: BackwardSolution,
    params: WeightedNormParams,
    bundle: PathBundle,
) -> Tuple[float, float, float]:
    """
    Sandwich plain <= weighted <= exp(beta K^* T) plain

    Returns:
        (lower, value, upper)

    Raises:
        NormSandwichError: Either inequality fails on the computed values
    """
    lower = star_norm_sq(sol, bundle)
    value = weighted_norm(sol, params, bundle)
    upper = params.upper_factor(bundle.grid) * lower
    slack = SANDWICH_RTOL * max(upper, 1e-300)
    if value < lower - slack or value > upper + slack:
        raise NormSandwichError(f"weighted norm {value:.6g} outside [{lower:.6g}, {upper:.6g}]")
    return lower, value, upper


@dataclass
class GapReport:
    """Distances between two solutions and between their inputs"""
    solution_gap: float
    solution_gap_se: float
    terminal_gap: float
    driver_gap: float
    level: Optional[float] = None

    def to_dict(self) -> Dict[str, float]:
        return {
            "level": self.level if self.level is not None else float("nan"),
            "solution_gap": self.solution_gap,
            "solution_gap_se": self.solution_gap_se,
            "terminal_gap": self.terminal_gap,
            "driver_gap": self.driver_gap,
        }


def apriori_gap_check(
    sol1: BackwardSolution,
    sol2: BackwardSolution,
    driver1: Driver,
    driver2: Driver,
    zeta1: np.ndarray,
    zeta2: np.ndarray,
    bundle: PathBundle,
    X: Optional[np.ndarray] = None,
) -> GapReport:
    """
    Solution gap against input gaps for two solves on one bundle

    The driver gap E sum |f1 - f2| dt is evaluated along sol2.
    """
    P = bundle.n_paths
    per_path = sum(_per_path(difference(sol1, sol2), bundle).values())
    dz = (np.asarray(zeta1, dtype=float) - np.asarray(zeta2, dtype=float)).reshape(P, -1)
    if X is None:
        X = np.repeat(bundle.x0[:, None, :], bundle.steps + 1, axis=1)

    driver_gap = np.zeros(P)
    for m in range(bundle.steps):
        ctx = bundle.context(m)
        args = (ctx, X[:, m], sol2.Y[:, m], sol2.Z[:, m], sol2.U[:, m])
        delta = np.asarray(driver1.f(*args), dtype=float) - np.asarray(driver2.f(*args), dtype=float)
        driver_gap += np.linalg.norm(delta.reshape(P, -1), axis=1) * ctx.dt

    se = float(per_path.std(ddof=1) / np.sqrt(P)) if P > 1 else 0.0
    return GapReport(
        solution_gap=float(per_path.mean()),
        solution_gap_se=se,
        terminal_gap=float(np.mean(np.sum(dz ** 2, axis=1))),
        driver_gap=float(driver_gap.mean()),
    )


@dataclass
class GapFamilyReport:
    """Gaps along a geometrically shrinking perturbation family"""
    gaps: List[GapReport] = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        """Each gap at most the previous one plus 3 standard errors"""
        return all(
            b.solution_gap <= a.solution_gap + 3.0 * a.solution_gap_se
            for a, b in zip(self.gaps, self.gaps[1:])
        )

    @property
    def passed(self) -> bool:
        return self.monotone and bool(self.gaps) and self.gaps[-1].solution_gap <= self.gaps[0].solution_gap


def apriori_gap_family(
    solve_at: Callable[[float], Tuple[BackwardSolution, Driver, np.ndarray]],
    bundle: PathBundle,
    initial_level: float,
    levels: int = 4,
    shrink: float = 2.0,
    X: Optional[np.ndarray] = None,
) -> GapFamilyReport:
    """
    Compare the unperturbed solve (level 0) with solves at initial_level / shrink^k

    Args:
        solve_at: level -> (solution, driver, terminal) on the shared bundle
        bundle: Shared noise
        initial_level: Largest perturbation size
        levels: Number of perturbation levels
        shrink: Geometric factor between levels

    Returns:
        GapFamilyReport; `monotone` is the stability verdict
    """
    base_sol, base_driver, base_zeta = solve_at(0.0)
    report = GapFamilyReport()
    for k in range(levels):
        level = initial_level / shrink ** k
        sol, driver, zeta = solve_at(level)
        gap = apriori_gap_check(sol, base_sol, driver, base_driver, zeta, base_zeta, bundle, X)
        gap.level = level
        report.gaps.append(gap)
        logger.debug("gap at level %.4g: %.6g (se %.2g)", level, gap.solution_gap, gap.solution_gap_se)
    return report
