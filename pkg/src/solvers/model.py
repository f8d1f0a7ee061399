"""Coupled FBSDE model: coefficients, coupling matrix G and monotonicity constants"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.data.generator import EnvironmentGenerator
from src.errors import DimensionMismatchError
from src.measures.empirical import EmpiricalMeasure, MeasureFunctional
from src.solvers.backward_bsde import Driver
from src.solvers.bundle import NoiseSpec, PathBundle, StepContext, build_bundle
from src.solvers.forward_sde import ForwardCoefficients

logger = logging.getLogger(__name__)

# (ctx, x) -> (P, n)
Terminal = Callable[[StepContext, np.ndarray], np.ndarray]


class Case(str, Enum):
    """Which leg of the base system is free of the other"""
    D_LT_N = "d_lt_n"
    D_GE_N = "d_ge_n"


@dataclass(frozen=True)
class MonotonicityConstants:
    """beta1, beta2, beta3 of the G-monotonicity condition"""
    beta1: float = 0.0
    beta2: float = 0.0
    beta3: float = 0.0

    def __post_init__(self):
        if min(self.beta1, self.beta2, self.beta3) < 0:
            raise ValueError("monotonicity constants must be nonnegative")

    def hypothesis_gaps(self) -> List[str]:
        """Standing inequalities beta1 + beta2 > 0 and beta2 + beta3 > 0 that fail"""
        gaps = []
        if self.beta1 + self.beta2 <= 0:
            gaps.append("beta1 + beta2 > 0")
        if self.beta2 + self.beta3 <= 0:
            gaps.append("beta2 + beta3 > 0")
        return gaps


@dataclass
class FBSDEModel:
    """
    Forward coefficients (b, sigma, gamma), driver f, terminal g, coupling G

    Coefficients may read every argument (x, y, z, u); G is n x d.
    """
    name: str
    forward: ForwardCoefficients
    driver: Driver
    terminal: Terminal
    G: np.ndarray
    betas: MonotonicityConstants
    noise: NoiseSpec
    environment: EnvironmentGenerator
    x0: Union[EmpiricalMeasure, Sequence[float]]
    horizon: float = 1.0
    functionals: Optional[Sequence[MeasureFunctional]] = None
    stated_beta1: Optional[float] = None
    c_lower: Optional[float] = None
    feedback: Optional[float] = None
    notes: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
        d, n = self.forward.dim, self.driver.dim
        if self.G.shape != (n, d):
            raise DimensionMismatchError(f"G has shape {self.G.shape}, expected ({n}, {d})")
        if np.linalg.svd(self.G, compute_uv=False).min() <= 1e-10:
            raise ValueError("G must have full rank")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")

        if self.feedback is not None and self.feedback < 0:
            raise ValueError("base feedback must be nonnegative")
        for gap in self.betas.hypothesis_gaps():
            logger.warning("model %s: declared constants fail %s", self.name, gap)
        b = self.betas
        if self.case == Case.D_LT_N and not (self.base_feedback > 0 and b.beta3 > 0):
            logger.warning("model %s: d <= n continuation expects a positive feedback and beta3 > 0", self.name)
        if self.case == Case.D_GE_N and self.base_feedback <= 0:
            logger.warning("model %s: d >= n continuation expects a positive feedback", self.name)
        if self.stated_beta1 is not None and not np.isclose(self.stated_beta1, b.beta1):
            self.notes.append(f"stated beta1 {self.stated_beta1:g} differs from declared {b.beta1:g}")

    @property
    def dims(self) -> Tuple[int, int, int, int]:
        """(d, n, k, l)"""
        return self.forward.dim, self.driver.dim, self.noise.brownian_dim, self.noise.channels

    @property
    def case(self) -> Case:
        d, n = self.forward.dim, self.driver.dim
        if d < n:
            return Case.D_LT_N
        if d > n:
            return Case.D_GE_N
        b = self.betas
        if b.beta2 == 0 or (b.beta1 > 0 and b.beta3 > 0):
            return Case.D_LT_N
        return Case.D_GE_N

    @property
    def base_feedback(self) -> float:
        """
        Weight of the G-feedback in the continuation base

        beta1 (forward-first base) or beta2 (backward-first base) unless set
        explicitly. The monotonicity verifier always checks the declared
        constants, never this weight.
        """
        if self.feedback is not None:
            return float(self.feedback)
        return self.betas.beta1 if self.case == Case.D_LT_N else self.betas.beta2

    @property
    def c_G(self) -> Optional[float]:
        """c with x . Gx = c |x|^2 for all x, when G is square and its symmetric part is scalar"""
        if self.G.shape[0] != self.G.shape[1]:
            return None
        sym = 0.5 * (self.G + self.G.T)
        c = float(sym[0, 0])
        return c if np.allclose(sym, c * np.eye(sym.shape[0]), atol=1e-12) else None

    @property
    def theoretical_step(self) -> Optional[float]:
        """Continuation step 1 / (8 c) when the contraction constant c is declared"""
        if self.c_lower is None or self.c_lower <= 0:
            return None
        return 1.0 / (8.0 * self.c_lower)

    def build_bundle(self, steps: int, n_paths: int, seed: int, keep_events: bool = False) -> PathBundle:
        return build_bundle(
            self.noise,
            self.environment,
            self.horizon,
            steps,
            n_paths,
            seed,
            self.x0,
            functionals=self.functionals,
            keep_events=keep_events,
        )

    def evaluate_terminal(self, bundle: PathBundle, X_T: np.ndarray) -> np.ndarray:
        """g at the terminal node for every path, (P, n)"""
        ctx = bundle.context(bundle.steps)
        value = np.asarray(self.terminal(ctx, X_T), dtype=float)
        return value.reshape(bundle.n_paths, self.driver.dim)
