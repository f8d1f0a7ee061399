"""Adjoint FBSDE generated by a one-dimensional Hamiltonian"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Union

import numpy as np

from src.data.generator import EnvironmentGenerator, Stream, substream
from src.errors import DegenerateJumpError
from src.measures.empirical import EmpiricalMeasure, MeasureFunctional
from src.solvers.backward_bsde import Driver, LipschitzProfile
from src.solvers.bundle import NoiseSpec, PathBundle, StepContext
from src.solvers.forward_sde import ForwardCoefficients
from src.solvers.model import FBSDEModel, MonotonicityConstants

logger = logging.getLogger(__name__)

FD_STEP = 1e-6

# (ctx, x) -> values; x is (P, 1)
BaseFunction = Callable[[StepContext, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class HamiltonianSpec:
    """
    Base coefficients of H = f + y b + z sigma + sum_r u_r K_r gamma_r + (c/2) y^2

    b, sigma, f, g return (P,); gamma returns (P,) or (P, R). Each d*
    field is the x-derivative of the matching coefficient; a missing one is
    replaced by a central difference with step 1e-6 (1 + |x|).
    """
    b: BaseFunction
    sigma: BaseFunction
    gamma: BaseFunction
    f: BaseFunction
    g: BaseFunction
    db: Optional[BaseFunction] = None
    dsigma: Optional[BaseFunction] = None
    dgamma: Optional[BaseFunction] = None
    df: Optional[BaseFunction] = None
    dg: Optional[BaseFunction] = None
    control_weight: float = 0.0

    def derivative(self, name: str) -> BaseFunction:
        supplied = getattr(self, "d" + name)
        return supplied if supplied is not None else finite_difference(getattr(self, name))


def finite_difference(fn: BaseFunction) -> BaseFunction:
    """Central difference in x with step 1e-6 (1 + |x|)"""

    def derivative(ctx: StepContext, x: np.ndarray) -> np.ndarray:
        h = FD_STEP * (1.0 + np.abs(x))
        up = np.asarray(fn(ctx, x + h), dtype=float)
        down = np.asarray(fn(ctx, x - h), dtype=float)
        scale = h.reshape((x.shape[0],) + (1,) * (up.ndim - 1))
        return (up - down) / (2.0 * scale)

    return derivative


def _column(values, P: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(values, dtype=float).reshape(P, -1)[:, :1], (P, 1))


def _marks(values, P: int, R: int) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return np.broadcast_to(arr, (P, R))


def _mass(ctx: StepContext, R: int) -> np.ndarray:
    return ctx.kernel_mass[:, 0, :R]


def hamiltonian(spec: HamiltonianSpec, ctx: StepContext, x, y, z, u) -> np.ndarray:
    """H at (x, y, z, u) with y (P, 1), z (P, 1, 1), u (P, 1, 1, R); returns (P,)"""
    P = x.shape[0]
    R = u.shape[-1]
    gam = _marks(spec.gamma(ctx, x), P, R)
    return (
        _column(spec.f(ctx, x), P)[:, 0]
        + y[:, 0] * _column(spec.b(ctx, x), P)[:, 0]
        + z[:, 0, 0] * _column(spec.sigma(ctx, x), P)[:, 0]
        + np.sum(u[:, 0, 0] * _mass(ctx, R) * gam, axis=1)
        + 0.5 * spec.control_weight * y[:, 0] ** 2
    )


def hamiltonian_gradient(spec: HamiltonianSpec, ctx: StepContext, x, y, z, u) -> Dict[str, np.ndarray]:
    """Partial derivatives of H in x, y, z and u, shaped like their arguments"""
    P = x.shape[0]
    R = u.shape[-1]
    K = _mass(ctx, R)
    gam = _marks(spec.gamma(ctx, x), P, R)
    dx = (
        _column(spec.derivative("f")(ctx, x), P)
        + y * _column(spec.derivative("b")(ctx, x), P)
        + z[:, :, 0] * _column(spec.derivative("sigma")(ctx, x), P)
        + np.sum(u[:, 0, 0] * K * _marks(spec.derivative("gamma")(ctx, x), P, R), axis=1)[:, None]
    )
    return {
        "x": dx,
        "y": _column(spec.b(ctx, x), P) + spec.control_weight * y,
        "z": _column(spec.sigma(ctx, x), P)[:, :, None],
        "u": (K * gam)[:, None, None, :],
    }


def build_hamiltonian_fbsde(
    spec: HamiltonianSpec,
    noise: NoiseSpec,
    environment: EnvironmentGenerator,
    x0: Union[List[float], EmpiricalMeasure],
    horizon: float,
    betas: MonotonicityConstants,
    functionals: Optional[List[MeasureFunctional]] = None,
    profile: Optional[LipschitzProfile] = None,
    name: str = "hamiltonian",
    feedback: Optional[float] = None,
) -> FBSDEModel:
    """
    Forward-backward system of a Hamiltonian

    Forward coefficients (dH/dy, dH/dz, (1/K) dH/du) = (b + c y, sigma,
    gamma); driver dH/dx; terminal dg/dx. The noise must have one jump
    channel.

    Raises:
        DegenerateJumpError: zero kernel mass on a mark cell while
            forming (1/K) dH/du
    """
    if noise.channels != 1:
        raise ValueError("the Hamiltonian builder handles a single jump channel")
    R = noise.mark_table().shape[1]
    dg = spec.derivative("g")

    def _u(u, P):
        return np.zeros((P, 1, 1, R)) if u is None else u

    def _y(y, P):
        return np.zeros((P, 1)) if y is None else y

    def drift(ctx, x, y, z, u):
        return _column(spec.b(ctx, x), x.shape[0]) + spec.control_weight * _y(y, x.shape[0])

    def vol(ctx, x, y, z, u):
        return _column(spec.sigma(ctx, x), x.shape[0])[:, :, None]

    def jump(ctx, x, y, z, u):
        P = x.shape[0]
        K = _mass(ctx, R)
        if np.any(K <= 0.0):
            raise DegenerateJumpError(f"zero jump intensity at step {ctx.step} (t={ctx.t:.6g})")
        du_H = K * _marks(spec.gamma(ctx, x), P, R)
        return (du_H / K)[:, None, None, :]

    def generator(ctx, x, y, z, u):
        P = x.shape[0]
        y = _y(y, P)
        z = np.zeros((P, 1, 1)) if z is None else z
        return hamiltonian_gradient(spec, ctx, x, y, z, _u(u, P))["x"]

    def terminal(ctx, x):
        return _column(dg(ctx, x), x.shape[0]).copy()

    return FBSDEModel(
        name=name,
        forward=ForwardCoefficients(b=drift, sigma=vol, gamma=jump, dim=1),
        driver=Driver(f=generator, dim=1, profile=profile or LipschitzProfile()),
        terminal=terminal,
        G=np.eye(1),
        betas=betas,
        noise=noise,
        environment=environment,
        x0=x0,
        horizon=horizon,
        functionals=functionals,
        feedback=feedback,
    )


def _mean(ctx: StepContext, x: np.ndarray) -> np.ndarray:
    m = ctx.features_left.get("mean")
    return np.zeros(x.shape[0]) if m is None else np.asarray(m, dtype=float)


def lq_hamiltonian_spec(b_hat: float, f_hat: float, f2: float, sigma: float, gamma: float, g: float) -> HamiltonianSpec:
    """
    Base coefficients whose Hamiltonian system is the linear-quadratic model

    b = b_hat (x - m), f = f_hat (x - m)^2 / 2, g = g (x - m)^2 / 2 with
    control weight -1/f2; derivatives are supplied analytically.
    """

    def centered(ctx, x):
        return x[:, 0] - _mean(ctx, x)

    return HamiltonianSpec(
        b=lambda ctx, x: b_hat * centered(ctx, x),
        sigma=lambda ctx, x: np.full(x.shape[0], sigma),
        gamma=lambda ctx, x: np.full(x.shape[0], gamma),
        f=lambda ctx, x: 0.5 * f_hat * centered(ctx, x) ** 2,
        g=lambda ctx, x: 0.5 * g * centered(ctx, x) ** 2,
        db=lambda ctx, x: np.full(x.shape[0], b_hat),
        dsigma=lambda ctx, x: np.zeros(x.shape[0]),
        dgamma=lambda ctx, x: np.zeros(x.shape[0]),
        df=lambda ctx, x: f_hat * centered(ctx, x),
        dg=lambda ctx, x: g * centered(ctx, x),
        control_weight=-1.0 / f2,
    )


def gradient_check(
    spec: HamiltonianSpec,
    bundle: PathBundle,
    count: int = 1000,
    seed: int = 0,
    scale: float = 1.0,
) -> Dict[str, float]:
    """
    Compare the gradient of H against central differences of H itself

    Points are drawn N(0, scale^2) at random (path, step) contexts of the
    bundle.

    Returns:
        Largest relative error per argument, |a - fd| / max(1, |fd|)
    """
    rng = substream(seed, 0, 0, Stream.SAMPLING)
    R = bundle.mark_cells
    x = rng.normal(0.0, scale, (count, 1))
    y = rng.normal(0.0, scale, (count, 1))
    z = rng.normal(0.0, scale, (count, 1, 1))
    u = rng.normal(0.0, scale, (count, 1, 1, R))
    rows = rng.integers(0, bundle.n_paths, size=count)
    steps = rng.integers(0, bundle.steps, size=count)
    errors = {"x": 0.0, "y": 0.0, "z": 0.0, "u": 0.0}

    for m in np.unique(steps):
        sel = np.flatnonzero(steps == m)
        ctx = bundle.context(int(m)).take(rows[sel])
        args = {"x": x[sel], "y": y[sel], "z": z[sel], "u": u[sel]}
        grad = hamiltonian_gradient(spec, ctx, **args)
        for name, value in args.items():
            flat = value.reshape(sel.size, -1)
            numeric = np.empty_like(flat)
            for c in range(flat.shape[1]):
                h = FD_STEP * (1.0 + np.abs(flat[:, c]))
                up, down = flat.copy(), flat.copy()
                up[:, c] += h
                down[:, c] -= h
                shifted_up = dict(args, **{name: up.reshape(value.shape)})
                shifted_down = dict(args, **{name: down.reshape(value.shape)})
                numeric[:, c] = (hamiltonian(spec, ctx, **shifted_up) - hamiltonian(spec, ctx, **shifted_down)) / (2 * h)
            analytic = grad[name].reshape(sel.size, -1)
            rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
            errors[name] = max(errors[name], float(rel.max()))
    logger.debug("Hamiltonian gradient check: %s", errors)
    return errors


def derivative_check(
    spec: HamiltonianSpec,
    bundle: PathBundle,
    count: int = 1000,
    seed: int = 0,
) -> Dict[str, float]:
    """Largest relative error of each supplied base derivative against central differences"""
    rng = substream(seed, 1, 0, Stream.SAMPLING)
    x = rng.normal(0.0, 1.0, (count, 1))
    rows = rng.integers(0, bundle.n_paths, size=count)
    steps = rng.integers(0, bundle.steps, size=count)
    errors: Dict[str, float] = {}
    for name in ("b", "sigma", "gamma", "f", "g"):
        supplied = getattr(spec, "d" + name)
        if supplied is None:
            continue
        numeric_fn = finite_difference(getattr(spec, name))
        worst = 0.0
        for m in np.unique(steps):
            sel = np.flatnonzero(steps == m)
            ctx = bundle.context(int(m)).take(rows[sel])
            a = np.asarray(supplied(ctx, x[sel]), dtype=float)
            fd = np.asarray(numeric_fn(ctx, x[sel]), dtype=float)
            a, fd = np.broadcast_arrays(a, fd)
            worst = max(worst, float((np.abs(a - fd) / np.maximum(1.0, np.abs(fd))).max()))
        errors[name] = worst
    return errors
