"""Sampled verifier for the G-monotonicity condition"""

import logging
from typing import Optional

import numpy as np

from src.data.contracts import CheckKind, CheckResult
from src.data.generator import Stream, substream
from src.pointproc.integrals import random_inner, random_norm_sq
from src.solvers.bundle import PathBundle
from src.solvers.model import FBSDEModel

logger = logging.getLogger(__name__)

SLACK_TOLERANCE = 1e-10


def _pairing(model: FBSDEModel, ctx, x, y, z, u, x2, y2, z2, u2) -> np.ndarray:
    """(A(theta) - A(theta')) . (theta - theta') per sample, A = (-G^T f, G b, G sigma, G gamma)"""
    G = model.G
    fw, dr = model.forward, model.driver
    d_f = np.asarray(dr.f(ctx, x, y, z, u)) - np.asarray(dr.f(ctx, x2, y2, z2, u2))
    d_b = np.asarray(fw.b(ctx, x, y, z, u)) - np.asarray(fw.b(ctx, x2, y2, z2, u2))
    d_s = np.asarray(fw.sigma(ctx, x, y, z, u)) - np.asarray(fw.sigma(ctx, x2, y2, z2, u2))
    d_g = np.asarray(fw.gamma(ctx, x, y, z, u)) - np.asarray(fw.gamma(ctx, x2, y2, z2, u2))
    P = x.shape[0]
    d_s = np.broadcast_to(d_s, (P,) + d_s.shape[-2:])
    d_g = np.broadcast_to(d_g, (P,) + d_g.shape[-3:])
    dx, dy, dz, du = x - x2, y - y2, z - z2, u - u2

    term_x = -np.sum((d_f.reshape(P, -1) @ G) * dx, axis=1)
    term_y = np.sum((d_b.reshape(P, -1) @ G.T) * dy, axis=1)
    term_z = np.sum(np.einsum("nd,pdk->pnk", G, d_s) * dz, axis=(1, 2))
    term_u = random_inner(np.einsum("nd,pdjr->pnjr", G, d_g), du, ctx.kernel_mass)
    return term_x + term_y + term_z + term_u


def check_g_monotonicity(
    model: FBSDEModel,
    bundle: PathBundle,
    count: int = 10_000,
    seed: int = 0,
    scale: float = 1.0,
    result: Optional[CheckResult] = None,
) -> CheckResult:
    """
    Test the declared constants on sampled tuples

    Each tuple takes a random (path, step) context from the bundle and two
    points (x, y, z, u), (x', y', z', u') drawn N(0, scale^2). It checks

        delta A . delta theta <= -beta1 |G dx|^2 - beta2 (|G^T dy|^2 + |G^T dz|^2 + |G^T du|^2_K)

    and, at the terminal context, (g(x) - g(x')) . G dx >= beta3 |G dx|^2.

    Args:
        model: Model with declared constants
        bundle: Supplies environment features and kernel masses
        count: Number of sampled tuples
        seed: Sampling seed
        scale: Spread of the sampled points

    Returns:
        CheckResult with worst slacks in `numbers` and one violation entry
        per failing inequality naming the worst tuple
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    result = result or CheckResult("g_monotonicity")
    rng = substream(seed, 0, 0, Stream.SAMPLING)
    d, n, k, _ = model.dims
    l, R = bundle.channels, bundle.mark_cells
    G = model.G
    b1, b2, b3 = model.betas.beta1, model.betas.beta2, model.betas.beta3

    def draw(*shape):
        return rng.normal(0.0, scale, size=(count,) + shape)

    x, x2 = draw(d), draw(d)
    y, y2 = draw(n), draw(n)
    z, z2 = draw(n, k), draw(n, k)
    u, u2 = draw(n, l, R), draw(n, l, R)
    rows = rng.integers(0, bundle.n_paths, size=count)
    steps = rng.integers(0, bundle.steps, size=count)

    slack = np.empty(count)
    for m in np.unique(steps):
        sel = np.flatnonzero(steps == m)
        ctx = bundle.context(int(m)).take(rows[sel])
        lhs = _pairing(model, ctx, x[sel], y[sel], z[sel], u[sel], x2[sel], y2[sel], z2[sel], u2[sel])
        dx, dy, dz, du = x[sel] - x2[sel], y[sel] - y2[sel], z[sel] - z2[sel], u[sel] - u2[sel]
        gdx = np.sum((dx @ G.T) ** 2, axis=1)
        penalty = (
            np.sum((dy @ G) ** 2, axis=1)
            + np.sum(np.einsum("nd,pnk->pdk", G, dz) ** 2, axis=(1, 2))
            + random_norm_sq(np.einsum("nd,pnjr->pdjr", G, du), ctx.kernel_mass)
        )
        slack[sel] = (-b1 * gdx - b2 * penalty) - lhs

    term_ctx = bundle.context(bundle.steps).take(rows)
    gdx = (x - x2) @ G.T
    d_g = model.terminal(term_ctx, x) - model.terminal(term_ctx, x2)
    terminal_slack = np.sum(np.asarray(d_g).reshape(count, n) * gdx, axis=1) - b3 * np.sum(gdx ** 2, axis=1)

    tol = SLACK_TOLERANCE * max(1.0, scale ** 2)
    worst = int(np.argmin(slack))
    worst_terminal = int(np.argmin(terminal_slack))
    result.numbers.update({
        "samples": float(count),
        "worst_slack": float(slack[worst]),
        "worst_terminal_slack": float(terminal_slack[worst_terminal]),
        "violations": float(np.sum(slack < -tol)),
        "terminal_violations": float(np.sum(terminal_slack < -tol)),
    })
    if slack[worst] < -tol:
        result.add_violation(
            CheckKind.MONOTONICITY,
            f"{int(np.sum(slack < -tol))} of {count} tuples violate the operator inequality; "
            f"worst at step {int(steps[worst])}, x={x[worst].tolist()}, x'={x2[worst].tolist()}, "
            f"y={y[worst].tolist()}, y'={y2[worst].tolist()}",
            worst_slack=float(slack[worst]),
        )
    if terminal_slack[worst_terminal] < -tol:
        result.add_violation(
            CheckKind.TERMINAL_MONOTONICITY,
            f"{int(np.sum(terminal_slack < -tol))} of {count} tuples violate the terminal inequality; "
            f"worst x={x[worst_terminal].tolist()}, x'={x2[worst_terminal].tolist()}",
            worst_slack=float(terminal_slack[worst_terminal]),
        )
    if not result.is_valid:
        logger.warning("model %s fails G-monotonicity: %s", model.name, result.violations[-1]["reason"])
    return result
