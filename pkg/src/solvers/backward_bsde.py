"""Least-squares Monte Carlo solver for the BSDE with an orthogonal martingale part"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from src.errors import CoefficientError, DimensionMismatchError
from src.solvers.basis import BasisSpec, design_matrix, regress
from src.solvers.bundle import PathBundle

logger = logging.getLogger(__name__)

DEGENERATE_RATE = 1e-8
IMPLICIT_TOL = 1e-14
IMPLICIT_MAX_SWEEPS = 50


@dataclass(frozen=True)
class LipschitzProfile:
    """
    Driver constants: k_y (lower-bar K), k_w (K^W), k_jump (K^lambda), k_env (K^0),
    with declared bounds k_lower = K_* and k_upper = K^*
    """
    k_y: float = 1.0
    k_w: float = 1.0
    k_jump: float = 1.0
    k_env: float = 1.0
    k_lower: Optional[float] = None
    k_upper: Optional[float] = None

    def __post_init__(self):
        values = (self.k_y, self.k_w, self.k_jump, self.k_env)
        if min(values) <= 0:
            raise ValueError("Lipschitz profile entries must be positive")
        lower = min(values) if self.k_lower is None else self.k_lower
        upper = max(values) if self.k_upper is None else self.k_upper
        if not 0 < lower <= min(values) or max(values) > upper:
            raise ValueError(f"profile {values} not within declared bounds [{lower}, {upper}]")
        object.__setattr__(self, "k_lower", float(lower))
        object.__setattr__(self, "k_upper", float(upper))

    @property
    def alpha_sq(self) -> float:
        """max(sqrt(K_y), K^W, K^lambda)"""
        return max(np.sqrt(self.k_y), self.k_w, self.k_jump)


@dataclass(frozen=True)
class Driver:
    """Generator f(ctx, x, y, z, u) -> (P, n) with its Lipschitz profile"""
    f: Callable[..., np.ndarray]
    dim: int = 1
    profile: LipschitzProfile = field(default_factory=LipschitzProfile)


@dataclass
class BackwardSolution:
    """Y (P, N+1, n), Z (P, N, n, k), U (P, N, n, l, R), M (P, N+1, n)"""
    Y: np.ndarray
    Z: np.ndarray
    U: np.ndarray
    M: np.ndarray

    @property
    def dM(self) -> np.ndarray:
        return np.diff(self.M, axis=1)

    @classmethod
    def zeros(cls, bundle: PathBundle, n: int) -> "BackwardSolution":
        P, N = bundle.n_paths, bundle.steps
        return cls(
            Y=np.zeros((P, N + 1, n)),
            Z=np.zeros((P, N, n, bundle.brownian_dim)),
            U=np.zeros((P, N, n, bundle.channels, bundle.mark_cells)),
            M=np.zeros((P, N + 1, n)),
        )


def lsmc_solve(
    driver: Driver,
    terminal: np.ndarray,
    bundle: PathBundle,
    basis: Optional[BasisSpec] = None,
    X: Optional[np.ndarray] = None,
) -> BackwardSolution:
    """
    Backward induction with regression-based conditional expectations

    At each node m: Yhat_m regresses Y_{m+1}; Z_m regresses
    (Y_{m+1} - Yhat_m) dW^T / dt; U_m regresses (Y_{m+1} - Yhat_m) dN~ / (K dt)
    per mark cell (zero where K dt < 1e-8); Y_m = Yhat_m + f(t_m, X_m, Y_m, Z_m, U_m) dt
    solved by fixed-point sweeps; dM is the realized residual
    Y_{m+1} - Yhat_m - Z_m dW - U_m dN~.

    Args:
        driver: Generator and Lipschitz profile
        terminal: zeta per path, (P, n) or (P,)
        bundle: Shared noise
        basis: Regression basis (degree 2 default)
        X: Forward state (P, N+1, d) for the driver and the basis; the
            constant path x0 if None

    Returns:
        BackwardSolution
    """
    basis = basis or BasisSpec()
    P, N = bundle.n_paths, bundle.steps
    zeta = np.asarray(terminal, dtype=float).reshape(P, -1)
    n = zeta.shape[1]
    if n != driver.dim:
        raise DimensionMismatchError(f"terminal has dimension {n}, driver expects {driver.dim}")
    if X is None:
        X = np.repeat(bundle.x0[:, None, :], N + 1, axis=1)

    sol = BackwardSolution.zeros(bundle, n)
    sol.Y[:, N] = zeta
    dN_tilde = bundle.compensated()
    k, l, R = bundle.brownian_dim, bundle.channels, bundle.mark_cells
    dM = np.zeros((P, N, n))

    for m in range(N - 1, -1, -1):
        ctx = bundle.context(m)
        dt = ctx.dt
        A = design_matrix(basis, bundle, X[:, m], m)
        y_next = sol.Y[:, m + 1]
        y_hat = regress(A, y_next, basis.ridge_alpha)
        resid = y_next - y_hat

        k_dt = bundle.kernel_mass[:, m] * dt
        live = k_dt >= DEGENERATE_RATE
        z_target = resid[:, :, None] * bundle.dW[:, m][:, None, :] / dt
        u_target = np.where(
            live[:, None],
            resid[:, :, None, None] * dN_tilde[:, m][:, None] / np.where(live, k_dt, 1.0)[:, None],
            0.0,
        )
        fitted = regress(A, np.concatenate([z_target.reshape(P, -1), u_target.reshape(P, -1)], axis=1), basis.ridge_alpha)
        z = fitted[:, : n * k].reshape(P, n, k)
        u = fitted[:, n * k:].reshape(P, n, l, R) * live[:, None]

        y = y_hat.copy()
        for _ in range(IMPLICIT_MAX_SWEEPS):
            f_val = np.asarray(driver.f(ctx, X[:, m], y, z, u), dtype=float).reshape(P, n)
            if not np.all(np.isfinite(f_val)):
                raise CoefficientError("f", m, ctx.t)
            y_new = y_hat + f_val * dt
            done = np.max(np.abs(y_new - y)) <= IMPLICIT_TOL * (1.0 + np.max(np.abs(y_new)))
            y = y_new
            if done:
                break

        sol.Y[:, m] = y
        sol.Z[:, m] = z
        sol.U[:, m] = u
        dM[:, m] = (
            resid
            - np.einsum("pik,pk->pi", z, bundle.dW[:, m])
            - np.einsum("pijr,pjr->pi", u, dN_tilde[:, m])
        )

    sol.M[:, 1:] = np.cumsum(dM, axis=1)
    return sol


def orthogonality_report(sol: BackwardSolution, bundle: PathBundle) -> dict:
    """
    Covariation of dM with dW and dN~ per step, as z-scores

    Returns the largest |mean| / SE over steps and components for each noise.
    """
    dM = sol.dM
    P = dM.shape[0]

    def worst(prod: np.ndarray) -> float:
        mean = prod.mean(axis=0)
        se = prod.std(axis=0, ddof=1) / np.sqrt(P)
        z = np.where(se > 0, np.abs(mean) / np.where(se > 0, se, 1.0), 0.0)
        return float(z.max()) if z.size else 0.0

    with_w = dM[:, :, :, None] * bundle.dW[:, :, None, :]
    with_n = dM[:, :, :, None, None] * bundle.compensated()[:, :, None]
    step_means = dM.mean(axis=0)
    step_se = dM.std(axis=0, ddof=1) / np.sqrt(P)
    mean_z = np.where(step_se > 0, np.abs(step_means) / np.where(step_se > 0, step_se, 1.0), 0.0)
    return {
        "dW_max_z": worst(with_w),
        "dN_max_z": worst(with_n),
        "increment_mean_max_z": float(mean_z.max()) if mean_z.size else 0.0,
    }
