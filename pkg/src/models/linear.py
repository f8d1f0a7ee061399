"""Small linear models used as oracles: one-way coupling and the zero model"""

from typing import Optional, Sequence, Union

import numpy as np

from src.data.generator import EnvironmentGenerator
from src.measures.empirical import EmpiricalMeasure
from src.pointproc.intensity import AdditiveKernel
from src.solvers.backward_bsde import Driver
from src.solvers.bundle import NoiseSpec
from src.solvers.forward_sde import ForwardCoefficients
from src.solvers.model import FBSDEModel, MonotonicityConstants


def _default_noise(kernel: Optional[AdditiveKernel]) -> NoiseSpec:
    return NoiseSpec(kernels=(kernel or AdditiveKernel.constant(1.0),), brownian_dim=1)


def _default_environment(environment: Optional[EnvironmentGenerator], horizon: float) -> EnvironmentGenerator:
    return environment or EnvironmentGenerator(EmpiricalMeasure.dirac(0.0), horizon)


def build_one_way_model(
    sigma: float = 0.3,
    gamma: float = 0.2,
    x0: Union[Sequence[float], EmpiricalMeasure] = (1.0,),
    horizon: float = 1.0,
    kernel: Optional[AdditiveKernel] = None,
    environment: Optional[EnvironmentGenerator] = None,
) -> FBSDEModel:
    """
    Forward leg free of (Y, Z, U); backward leg reads X

    b(x) = -x, sigma and gamma constant, f(x, y) = x - y, g(x) = x. With
    G = 1 it satisfies the monotonicity condition with beta1 = 1, beta2 = 0,
    beta3 = 1.
    """
    noise = _default_noise(kernel)
    R = noise.mark_table().shape[1]
    return FBSDEModel(
        name="one-way",
        forward=ForwardCoefficients(
            b=lambda ctx, x, y, z, u: -x,
            sigma=lambda ctx, x, y, z, u: np.full((x.shape[0], 1, 1), sigma),
            gamma=lambda ctx, x, y, z, u: np.full((x.shape[0], 1, 1, R), gamma),
            lipschitz={"b": 1.0, "sigma": 0.0, "gamma": 0.0},
        ),
        driver=Driver(f=lambda ctx, x, y, z, u: x - y, dim=1),
        terminal=lambda ctx, x: x,
        G=np.eye(1),
        betas=MonotonicityConstants(beta1=1.0, beta2=0.0, beta3=1.0),
        noise=noise,
        environment=_default_environment(environment, horizon),
        x0=x0 if isinstance(x0, EmpiricalMeasure) else list(x0),
        horizon=horizon,
    )


def build_zero_model(
    x0: Union[Sequence[float], EmpiricalMeasure] = (0.0,),
    horizon: float = 1.0,
    kernel: Optional[AdditiveKernel] = None,
    environment: Optional[EnvironmentGenerator] = None,
) -> FBSDEModel:
    """All coefficients and the terminal value vanish"""
    noise = _default_noise(kernel)
    R = noise.mark_table().shape[1]
    return FBSDEModel(
        name="zero",
        forward=ForwardCoefficients(
            b=lambda ctx, x, y, z, u: np.zeros_like(x),
            sigma=lambda ctx, x, y, z, u: np.zeros((x.shape[0], 1, 1)),
            gamma=lambda ctx, x, y, z, u: np.zeros((x.shape[0], 1, 1, R)),
        ),
        driver=Driver(f=lambda ctx, x, y, z, u: np.zeros_like(x), dim=1),
        terminal=lambda ctx, x: np.zeros_like(x),
        G=np.eye(1),
        betas=MonotonicityConstants(beta1=0.0, beta2=0.0, beta3=0.0),
        noise=noise,
        environment=_default_environment(environment, horizon),
        x0=x0 if isinstance(x0, EmpiricalMeasure) else list(x0),
        horizon=horizon,
    )
