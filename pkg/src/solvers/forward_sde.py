"""Euler scheme for the jump-diffusion forward SDE in a fixed environment"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from src.errors import CoefficientError, DimensionMismatchError
from src.solvers.bundle import PathBundle, StepContext

logger = logging.getLogger(__name__)

# (ctx, x, y, z, u) -> array; y, z, u are None for uncoupled evaluation
Coefficient = Callable[..., np.ndarray]


@dataclass(frozen=True)
class ForwardCoefficients:
    """
    Drift b -> (P, d), volatility sigma -> (P, d, k), jump gamma -> (P, d, l, R)

    gamma is read at the left limit X_{t-} and paired with the mark cells of
    the bundle.
    """
    b: Coefficient
    sigma: Coefficient
    gamma: Coefficient
    dim: int = 1
    lipschitz: Dict[str, float] = field(default_factory=dict)


@dataclass
class CouplingInput:
    """Grid processes (Y, Z, U) frozen from a previous iterate"""
    Y: np.ndarray
    Z: np.ndarray
    U: np.ndarray


def _checked(name: str, value: np.ndarray, ctx: StepContext) -> np.ndarray:
    value = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(value)):
        raise CoefficientError(name, ctx.step, ctx.t)
    return value


def euler_step(
    x: np.ndarray,
    drift: np.ndarray,
    vol: np.ndarray,
    jump: np.ndarray,
    dt: float,
    dW: np.ndarray,
    dN_tilde: np.ndarray,
) -> np.ndarray:
    """x + b dt + sigma dW + sum gamma (dN - K dt)"""
    return (
        x
        + drift * dt
        + np.einsum("pdk,pk->pd", vol, dW)
        + np.einsum("pdjr,pjr->pd", jump, dN_tilde)
    )


def euler_simulate(
    coef: ForwardCoefficients,
    bundle: PathBundle,
    coupling: Optional[CouplingInput] = None,
) -> np.ndarray:
    """
    Simulate X on the bundle grid

    Args:
        coef: Forward coefficients
        bundle: Shared noise; x0 taken from the bundle
        coupling: Frozen (Y, Z, U) fed to coupled coefficients

    Returns:
        X of shape (P, N+1, d)

    Raises:
        CoefficientError: NaN or overflow, naming the step
    """
    if bundle.x0.shape[1] != coef.dim:
        raise DimensionMismatchError(f"x0 has dimension {bundle.x0.shape[1]}, coefficients expect {coef.dim}")
    P, N = bundle.n_paths, bundle.steps
    X = np.empty((P, N + 1, coef.dim))
    X[:, 0] = bundle.x0
    dN_tilde = bundle.compensated()

    with np.errstate(over="ignore", invalid="ignore"):
        for m in range(N):
            ctx = bundle.context(m)
            x = X[:, m]
            y = z = u = None
            if coupling is not None:
                y, z, u = coupling.Y[:, m], coupling.Z[:, m], coupling.U[:, m]
            drift = _checked("b", coef.b(ctx, x, y, z, u), ctx)
            vol = _checked("sigma", coef.sigma(ctx, x, y, z, u), ctx)
            jump = _checked("gamma", coef.gamma(ctx, x, y, z, u), ctx)
            X[:, m + 1] = euler_step(x, drift, vol, jump, ctx.dt, bundle.dW[:, m], dN_tilde[:, m])
            if not np.all(np.isfinite(X[:, m + 1])):
                raise CoefficientError("X", m + 1, float(bundle.grid.times[m + 1]))
    return X


def euler_from_offsets(
    bundle: PathBundle,
    B: np.ndarray,
    S: np.ndarray,
    G: np.ndarray,
    x0: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Forward SDE whose coefficients are known grid processes

    Args:
        bundle: Shared noise
        B: Drift (P, N, d)
        S: Volatility (P, N, d, k)
        G: Jump coefficient (P, N, d, l, R)
        x0: Initial values (bundle.x0 if None)

    Returns:
        X of shape (P, N+1, d)
    """
    x0 = bundle.x0 if x0 is None else x0
    P, N = bundle.n_paths, bundle.steps
    dN_tilde = bundle.compensated()
    increments = (
        B * bundle.dt[None, :, None]
        + np.einsum("pmdk,pmk->pmd", S, bundle.dW)
        + np.einsum("pmdjr,pmjr->pmd", G, dN_tilde)
    )
    X = np.empty((P, N + 1, x0.shape[1]))
    X[:, 0] = x0
    X[:, 1:] = x0[:, None, :] + np.cumsum(increments, axis=1)
    return X


@dataclass
class MomentReport:
    """Per-time sample statistics of a path ensemble"""
    times: np.ndarray
    mean: np.ndarray
    second_moment: np.ndarray
    variance: np.ndarray
    sup_norm: float
    sup_norm_se: float

    def to_dict(self) -> Dict[str, float]:
        return {
            "terminal_mean": float(np.ravel(self.mean[-1])[0]),
            "terminal_variance": float(np.ravel(self.variance[-1])[0]),
            "sup_norm": float(self.sup_norm),
            "sup_norm_se": float(self.sup_norm_se),
        }


def moment_report(paths: np.ndarray, times: Optional[np.ndarray] = None) -> MomentReport:
    """
    Empirical moments of paths shaped (P, N+1) or (P, N+1, d)

    Returns mean, E|X_t|^2, unbiased variance per component and
    the estimate of E[sup_t |X_t|^2] with its standard error.
    """
    X = np.asarray(paths, dtype=float)
    if X.ndim == 2:
        X = X[:, :, None]
    if X.shape[0] < 2:
        raise ValueError("moment_report needs at least two paths")
    sq = np.sum(X ** 2, axis=2)
    sup = sq.max(axis=1)
    return MomentReport(
        times=np.arange(X.shape[1], dtype=float) if times is None else np.asarray(times),
        mean=X.mean(axis=0),
        second_moment=sq.mean(axis=0),
        variance=X.var(axis=0, ddof=1),
        sup_norm=float(sup.mean()),
        sup_norm_se=float(sup.std(ddof=1) / np.sqrt(sup.size)),
    )


def coarsen_increments(dW: np.ndarray, factor: int = 2) -> np.ndarray:
    """Sum consecutive Brownian increments along the step axis"""
    P, N, k = dW.shape
    if N % factor:
        raise ValueError(f"{N} steps not divisible by {factor}")
    return dW.reshape(P, N // factor, factor, k).sum(axis=2)


def lipschitz_spot_check(
    fn: Coefficient,
    ctx: StepContext,
    declared: float,
    dim: int,
    rng: np.random.Generator,
    scale: float = 1.0,
) -> Dict[str, float]:
    """
    Largest sampled difference quotient in x against a declared constant

    Evaluates fn at P random pairs (x, x') drawn around 0 with the given
    scale; y, z, u are not perturbed.
    """
    P = ctx.n_paths
    x = rng.normal(0.0, scale, size=(P, dim))
    x_prime = rng.normal(0.0, scale, size=(P, dim))
    diff = np.asarray(fn(ctx, x, None, None, None)) - np.asarray(fn(ctx, x_prime, None, None, None))
    num = np.sqrt(np.sum(diff.reshape(P, -1) ** 2, axis=1))
    den = np.linalg.norm(x - x_prime, axis=1)
    worst = float(np.max(num / den))
    return {"declared": float(declared), "observed": worst, "passed": worst <= declared * (1.0 + 1e-9)}
