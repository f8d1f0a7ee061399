"""Ito product-rule duality between forward and backward legs"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from src.data.contracts import CheckKind, CheckResult
from src.errors import NoiseMismatchError
from src.pointproc.integrals import random_inner
from src.solvers.backward_bsde import BackwardSolution, Driver, lsmc_solve
from src.solvers.basis import BasisSpec
from src.solvers.bundle import PathBundle
from src.solvers.forward_sde import euler_from_offsets
from src.solvers.model import FBSDEModel

logger = logging.getLogger(__name__)


@dataclass
class ForwardLegs:
    """Drift B (P, N, d), volatility S (P, N, d, k), jump Gm (P, N, d, l, R), x0 (P, d)"""
    B: np.ndarray
    S: np.ndarray
    Gm: np.ndarray
    x0: Optional[np.ndarray] = None


@dataclass
class BackwardLegs:
    """Driver values F (P, N, n) and terminal zeta (P, n)"""
    F: np.ndarray
    zeta: np.ndarray


@dataclass
class DualityResult:
    """Sample means of both sides of the product rule with the error budget"""
    lhs: float
    rhs: float
    mc_error: float
    slack: float

    @property
    def gap(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def passed(self) -> bool:
        return self.gap <= 3.0 * self.mc_error + self.slack

    def to_check(self, name: str = "ito_duality") -> CheckResult:
        result = CheckResult(name, numbers={
            "lhs": self.lhs, "rhs": self.rhs, "mc_error": self.mc_error, "slack": self.slack,
        })
        if not self.passed:
            result.add_violation(
                CheckKind.DUALITY,
                f"|lhs - rhs| = {self.gap:.3g} exceeds 3 SE + slack = {3 * self.mc_error + self.slack:.3g}",
                worst_slack=3.0 * self.mc_error + self.slack - self.gap,
            )
        return result


def _check_shapes(bundle: PathBundle, **arrays: np.ndarray) -> None:
    P, N = bundle.n_paths, bundle.steps
    for name, arr in arrays.items():
        if arr.shape[0] != P:
            raise NoiseMismatchError(f"{name} has {arr.shape[0]} paths, bundle has {P}")
        if name in ("X", "Y", "M"):
            if arr.shape[1] != N + 1:
                raise NoiseMismatchError(f"{name} has {arr.shape[1]} nodes, grid has {N + 1}")
        elif arr.shape[1] != N:
            raise NoiseMismatchError(f"{name} has {arr.shape[1]} steps, grid has {N}")


def duality_from_processes(
    X: np.ndarray,
    sol: BackwardSolution,
    B: np.ndarray,
    S: np.ndarray,
    Gm: np.ndarray,
    F: np.ndarray,
    G: np.ndarray,
    bundle: PathBundle,
    discretization_constant: float = 1.0,
) -> DualityResult:
    """
    Product rule for (G X . Y) on grid processes that share one noise

    lhs = E[G X_T . Y_T] - E[G X_0 . Y_0]
    rhs = E sum [-(G X . F) + (G B . Y) + (G S : Z) + <G Gm, U>_K] dt

    The error budget is 3 standard errors of the per-path difference plus
    discretization_constant * max dt.
    """
    _check_shapes(bundle, X=X, Y=sol.Y, Z=sol.Z, U=sol.U, B=B, S=S, Gm=Gm, F=F)
    G = np.atleast_2d(np.asarray(G, dtype=float))
    P = bundle.n_paths
    dt = bundle.dt

    GX = np.einsum("nd,pmd->pmn", G, X)
    lhs_p = np.sum(GX[:, -1] * sol.Y[:, -1], axis=1) - np.sum(GX[:, 0] * sol.Y[:, 0], axis=1)
    integrand = (
        -np.sum(GX[:, :-1] * F, axis=2)
        + np.sum(np.einsum("nd,pmd->pmn", G, B) * sol.Y[:, :-1], axis=2)
        + np.sum(np.einsum("nd,pmdk->pmnk", G, S) * sol.Z, axis=(2, 3))
        + random_inner(np.einsum("nd,pmdjr->pmnjr", G, Gm), sol.U, bundle.kernel_mass)
    )
    rhs_p = np.sum(integrand * dt[None, :], axis=1)
    diff = lhs_p - rhs_p
    se = float(diff.std(ddof=1) / np.sqrt(P)) if P > 1 else 0.0
    return DualityResult(
        lhs=float(lhs_p.mean()),
        rhs=float(rhs_p.mean()),
        mc_error=se,
        slack=discretization_constant * float(dt.max()),
    )


def ito_duality_check(
    forward: ForwardLegs,
    backward: BackwardLegs,
    G: np.ndarray,
    bundle: PathBundle,
    basis: Optional[BasisSpec] = None,
    discretization_constant: float = 1.0,
) -> Tuple[DualityResult, np.ndarray, BackwardSolution]:
    """
    Solve both legs on one bundle and compare the two sides of the product rule

    X follows the forward offsets; (Y, Z, U, M) solves the backward equation
    with driver values F and terminal zeta.

    Returns:
        (DualityResult, X, backward solution)

    Raises:
        NoiseMismatchError: Legs not shaped for the bundle
    """
    _check_shapes(bundle, B=forward.B, S=forward.S, Gm=forward.Gm, F=backward.F)
    X = euler_from_offsets(bundle, forward.B, forward.S, forward.Gm, forward.x0)
    F = np.asarray(backward.F, dtype=float)
    n = F.shape[2]
    driver = Driver(f=lambda ctx, x, y, z, u: F[:, ctx.step], dim=n)
    sol = lsmc_solve(driver, backward.zeta, bundle, basis, X)
    result = duality_from_processes(
        X, sol, forward.B, forward.S, forward.Gm, F, G, bundle, discretization_constant
    )
    logger.info("duality: lhs %.6g rhs %.6g (se %.2g)", result.lhs, result.rhs, result.mc_error)
    return result, X, sol


def solution_legs(model: FBSDEModel, X: np.ndarray, sol: BackwardSolution, bundle: PathBundle) -> Dict[str, np.ndarray]:
    """Coefficients (b, sigma, gamma, f) along an iterate and g at X_T"""
    P, N = bundle.n_paths, bundle.steps
    d, n, k, _ = model.dims
    l, R = bundle.channels, bundle.mark_cells
    legs = {
        "B": np.empty((P, N, d)),
        "S": np.empty((P, N, d, k)),
        "Gm": np.empty((P, N, d, l, R)),
        "F": np.empty((P, N, n)),
    }
    for m in range(N):
        ctx = bundle.context(m)
        args = (ctx, X[:, m], sol.Y[:, m], sol.Z[:, m], sol.U[:, m])
        legs["B"][:, m] = np.broadcast_to(model.forward.b(*args), (P, d))
        legs["S"][:, m] = np.broadcast_to(model.forward.sigma(*args), (P, d, k))
        legs["Gm"][:, m] = np.broadcast_to(model.forward.gamma(*args), (P, d, l, R))
        legs["F"][:, m] = np.broadcast_to(model.driver.f(*args), (P, n))
    legs["g"] = model.evaluate_terminal(bundle, X[:, N])
    return legs


def uniqueness_identity(
    model: FBSDEModel,
    first: Tuple[np.ndarray, BackwardSolution],
    second: Tuple[np.ndarray, BackwardSolution],
    bundle: PathBundle,
    discretization_constant: float = 1.0,
) -> DualityResult:
    """
    Product rule on the difference of two solved instances

    With legs evaluated along each solution, lhs is
    E[G dX_T . dg] - E[G dX_0 . dY_0] and rhs is E int dA . d(X, Y, Z, U) dt.
    """
    (X1, s1), (X2, s2) = first, second
    legs1 = solution_legs(model, X1, s1, bundle)
    legs2 = solution_legs(model, X2, s2, bundle)
    d_sol = BackwardSolution(Y=s1.Y - s2.Y, Z=s1.Z - s2.Z, U=s1.U - s2.U, M=s1.M - s2.M)
    return duality_from_processes(
        X1 - X2,
        d_sol,
        legs1["B"] - legs2["B"],
        legs1["S"] - legs2["S"],
        legs1["Gm"] - legs2["Gm"],
        legs1["F"] - legs2["F"],
        model.G,
        bundle,
        discretization_constant,
    )
