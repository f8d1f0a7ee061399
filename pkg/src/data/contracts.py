"""Run configuration, check results and result-table contracts using Pydantic and Pandera"""

import math
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import numpy as np
import pandas as pd
import pandera as pa
from pandera import Check, Column, DataFrameSchema
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.errors import ConfigError


class CheckKind(str, Enum):
    """Types of structural check failures"""
    MONOTONICITY = "monotonicity"
    TERMINAL_MONOTONICITY = "terminal_monotonicity"
    DUALITY = "duality"
    ORTHOGONALITY = "orthogonality"
    NORM_SANDWICH = "norm_sandwich"
    LIPSCHITZ = "lipschitz"
    TOLERANCE = "tolerance"


class CheckResult:
    """Outcome of a structural check"""
    def __init__(
        self,
        check: str,
        is_valid: bool = True,
        violations: List[Dict[str, Any]] = None,
        numbers: Optional[Dict[str, float]] = None,
    ):
        self.check = check
        self.is_valid = is_valid
        self.violations = violations or []
        self.numbers = numbers or {}

    @property
    def passed(self) -> bool:
        return self.is_valid

    def add_violation(
        self,
        kind: CheckKind,
        reason: str,
        worst_slack: float = float("nan"),
        severity: str = "high",
    ):
        """Add a violation to the result"""
        self.violations.append({
            "timestamp": datetime.now().isoformat(),
            "check": self.check,
            "kind": kind.value,
            "reason": reason,
            "worst_slack": float(worst_slack),
            "severity": severity,
        })
        self.is_valid = False


class ExperimentKind(str, Enum):
    """Experiments the runner knows"""
    SIMULATE_POINTPROC = "simulate-pointproc"
    SIMULATE_REGIME = "simulate-regime"
    SOLVE_FORWARD = "solve-forward"
    SOLVE_BACKWARD = "solve-backward"
    SOLVE_COUPLED = "solve-coupled"
    VERIFY_MONOTONICITY = "verify-monotonicity"
    VERIFY_DUALITY = "verify-duality"
    REPRODUCE_LQ = "reproduce-lq"


SOLVER_EXPERIMENTS = {
    ExperimentKind.SOLVE_BACKWARD,
    ExperimentKind.SOLVE_COUPLED,
    ExperimentKind.VERIFY_DUALITY,
    ExperimentKind.REPRODUCE_LQ,
}


class KernelConfig(BaseModel):
    """One jump channel"""
    kind: Literal["constant", "hawkes", "regime"] = Field("constant", description="Kernel family")
    rate: float = Field(1.0, ge=0, description="Baseline intensity")
    excitation_a: float = Field(0.0, ge=0, description="Exponential excitation height")
    excitation_b: float = Field(1.0, gt=0, description="Exponential excitation decay")
    env_scale: float = Field(0.0, ge=0, description="Weight on the environment mean")
    env_bound: Optional[float] = Field(None, gt=0, description="Bound of the environment term")
    marks: List[float] = Field(default_factory=lambda: [1.0], min_length=1, description="Mark values")
    mark_probs: List[float] = Field(default_factory=lambda: [1.0], min_length=1, description="Mark probabilities")
    rate_matrix: Optional[List[List[float]]] = Field(None, description="Regime generator at the base environment")
    rate_on_mean: Optional[List[List[float]]] = Field(None, description="Off-diagonal rates added per unit of m(nu)")
    h0: Optional[float] = Field(None, gt=0, description="Bound on every off-diagonal row sum")

    @model_validator(mode='after')
    def validate_kernel(self):
        """Mark law and regime generator consistency"""
        if len(self.marks) != len(self.mark_probs):
            raise ValueError('marks and mark_probs must have the same length')
        if abs(sum(self.mark_probs) - 1.0) > 1e-12:
            raise ValueError('mark_probs must sum to 1')
        if self.env_scale > 0 and self.env_bound is None:
            raise ValueError('env_bound is required when env_scale > 0')
        if self.kind == "regime":
            if self.rate_matrix is None:
                raise ValueError('regime kernels need rate_matrix')
            n = len(self.rate_matrix)
            if any(len(row) != n for row in self.rate_matrix):
                raise ValueError('rate_matrix must be square')
            if self.rate_on_mean is not None and (
                len(self.rate_on_mean) != n or any(len(row) != n for row in self.rate_on_mean)
            ):
                raise ValueError('rate_on_mean must match rate_matrix')
            if self.rate_on_mean is not None and self.h0 is None:
                raise ValueError('environment-dependent rates need h0')
        return self


class EnvironmentConfig(BaseModel):
    """Environment flow of empirical measures"""
    kind: Literal["constant", "steps", "common_shock"] = Field("constant", description="Flow type")
    atoms: List[List[float]] = Field(default_factory=lambda: [[0.0]], min_length=1, description="Atoms of nu_0")
    step_times: List[float] = Field(default_factory=list, description="Breakpoints of a step flow")
    step_atoms: List[List[List[float]]] = Field(default_factory=list, description="Atoms in force from each breakpoint")
    shock_rate: float = Field(0.0, ge=0, description="Common shock rate")
    shock_scale: float = Field(0.0, ge=0, description="Common shock standard deviation")
    clip_radius: Optional[float] = Field(None, gt=0, description="Clip atoms into [-R, R]")

    @field_validator('step_times')
    @classmethod
    def increasing_times(cls, v):
        """Breakpoints are positive and strictly increasing"""
        if any(t <= 0 for t in v) or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError('step_times must be positive and strictly increasing')
        return v

    @model_validator(mode='after')
    def validate_steps(self):
        if len(self.step_times) != len(self.step_atoms):
            raise ValueError('one atom list per step time is required')
        dims = {len(a) for a in self.atoms} | {len(a) for atoms in self.step_atoms for a in atoms}
        if len(dims) != 1:
            raise ValueError('all atoms must share one dimension')
        return self

    @property
    def dim(self) -> int:
        return len(self.atoms[0])


class ModelConfig(BaseModel):
    """Named model builder with its scalar parameters"""
    builder: Literal["lq", "hamiltonian-lq", "one-way", "zero"] = Field("lq", description="Model builder")
    b: float = Field(-2.0, description="Drift coefficient")
    f: float = Field(1.0, description="Cross coefficient")
    sigma: float = Field(0.2, description="Volatility")
    gamma: float = Field(0.1, description="Jump coefficient")
    f1: float = Field(2.0, description="State cost")
    f2: float = Field(1.0, description="Control cost")
    g: float = Field(1.0, description="Terminal weight")
    x0: List[float] = Field(default_factory=lambda: [1.0], min_length=1, description="Initial state")
    x0_atoms: Optional[List[List[float]]] = Field(None, description="Sample X0 from these atoms instead")
    beta1: Optional[float] = Field(None, ge=0, description="Override of the declared beta1")
    f_hat: Optional[float] = Field(None, description="Override of f_hat in the coefficients only")
    feedback: Optional[float] = Field(None, gt=0, description="Continuation base feedback (declared beta1, floored, if unset)")


class SolverSettings(BaseModel):
    """Continuation, Picard and regression settings"""
    picard_tol: float = Field(1e-6, gt=0, description="Relative iterate distance for convergence")
    picard_max_iter: int = Field(200, ge=1, description="Picard iterations per level")
    eps_init: float = Field(0.25, gt=0, le=1, description="Initial continuation step")
    eps_min: float = Field(1.0 / 1024, gt=0, description="Smallest continuation step")
    inner_max_iter: int = Field(50, ge=1, description="Picard sweeps on the alpha0-system per outer iterate")
    basis_degree: int = Field(2, ge=0, description="Total degree of the regression basis")
    ridge_alpha: float = Field(1e-10, gt=0, description="Ridge weight for rank-deficient bases")
    beta: Optional[float] = Field(None, ge=0, description="Weighted-norm exponent (2/K_* if unset)")
    divergence_patience: int = Field(3, ge=1, description="Growing distances before the step is halved")

    @model_validator(mode='after')
    def validate_steps(self):
        if self.eps_min > self.eps_init:
            raise ValueError('eps_min must not exceed eps_init')
        return self


class RunConfig(BaseModel):
    """One seeded experiment"""
    experiment: ExperimentKind = Field(..., description="Experiment kind")
    seed: int = Field(..., ge=0, description="Master seed")
    horizon: float = Field(1.0, gt=0, description="Terminal time T")
    steps: int = Field(50, ge=2, description="Uniform grid steps N")
    paths: int = Field(10_000, ge=2, description="Monte Carlo paths P")
    brownian_dim: int = Field(1, ge=1, description="Brownian dimension k")
    kernels: List[KernelConfig] = Field(default_factory=lambda: [KernelConfig()], description="Jump channels")
    environment: EnvironmentConfig = Field(default_factory=EnvironmentConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    solver: SolverSettings = Field(default_factory=SolverSettings)
    checks: int = Field(10_000, ge=1, description="Sampled tuples for the monotonicity verifier")
    saved_paths: int = Field(100, ge=1, description="Paths written to result tables")
    output_dir: str = Field("runs", min_length=1, description="Parent of run directories")
    threads: Optional[int] = Field(None, ge=1, description="BLAS thread cap")

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode='after')
    def validate_paths(self):
        """Regression experiments need at least as many paths as basis functions"""
        if self.experiment in SOLVER_EXPERIMENTS:
            q = self.basis_dimension
            if self.paths < q:
                raise ValueError(f'paths: must be >= basis dimension {q}')
        return self

    @property
    def basis_dimension(self) -> int:
        """Polynomial terms in (X, environment mean) plus regime indicators"""
        inputs = len(self.model.x0) + (1 if self.environment.dim == 1 else 0)
        q = math.comb(inputs + self.solver.basis_degree, self.solver.basis_degree)
        for k in self.kernels:
            if k.kind == "regime":
                q += len(k.rate_matrix) - 1
        return q


def load_config(source: Union[str, Path]) -> RunConfig:
    """
    Parse a JSON run configuration

    Raises:
        ConfigError: Field-level messages joined as 'loc: msg'
    """
    path = Path(source)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        return RunConfig.model_validate_json(text)
    except ValidationError as e:
        parts = []
        for err in e.errors():
            loc = ".".join(str(p) for p in err["loc"])
            parts.append(f"{loc}: {err['msg']}" if loc else err["msg"])
        raise ConfigError("; ".join(parts)) from e


_finite = Check(lambda s: np.isfinite(s), error="values must be finite")

EVENTS_SCHEMA = DataFrameSchema({
    "path": Column(int, checks=Check.greater_than_or_equal_to(0)),
    "time": Column(float, checks=Check.greater_than(0)),
    "channel": Column(int, checks=Check.greater_than_or_equal_to(1)),
    "mark": Column(float, checks=_finite),
})

COUNTS_SCHEMA = DataFrameSchema({
    "path": Column(int, checks=Check.greater_than_or_equal_to(0)),
    "channel": Column(int, checks=Check.greater_than_or_equal_to(1)),
    "count": Column(int, checks=Check.greater_than_or_equal_to(0)),
})

PATHS_SCHEMA = DataFrameSchema({
    "path": Column(int, checks=Check.greater_than_or_equal_to(0)),
    "step": Column(int, checks=Check.greater_than_or_equal_to(0)),
    "time": Column(float, checks=Check.greater_than_or_equal_to(0)),
    r"^(x|y|z|u|dm|p)[\d_]*$": Column(float, regex=True, checks=_finite),
})

REGIME_SCHEMA = DataFrameSchema({
    "path": Column(int, checks=Check.greater_than_or_equal_to(0)),
    "time": Column(float, checks=Check.greater_than_or_equal_to(0)),
    "state": Column(int, checks=Check.greater_than_or_equal_to(1)),
})

SUMMARY_SCHEMA = DataFrameSchema({
    "metric": Column(str, checks=Check.str_length(min_value=1)),
    "value": Column(float, nullable=True),
})


def validate_table(df: pd.DataFrame, schema: DataFrameSchema, name: str) -> pd.DataFrame:
    """Validate a result table before it is written"""
    try:
        return schema.validate(df)
    except pa.errors.SchemaError as e:
        raise ValueError(f"result table {name} failed validation: {e}") from e


CONTINUATION_SCHEMA = DataFrameSchema({
    "alpha_from": Column(float, checks=Check.in_range(0.0, 1.0)),
    "eps": Column(float, checks=Check.greater_than(0)),
    "iterations": Column(float, checks=Check.greater_than_or_equal_to(0)),
    "inner_sweeps": Column(float, checks=Check.greater_than_or_equal_to(0)),
    "last_distance": Column(float, nullable=True),
    "last_ratio": Column(float, nullable=True),
    "converged": Column(float, checks=Check.isin([0.0, 1.0])),
})

RICCATI_SCHEMA = DataFrameSchema({
    "step": Column(int, checks=Check.greater_than_or_equal_to(0)),
    "time": Column(float, checks=Check.greater_than_or_equal_to(0)),
    "p": Column(float, checks=_finite),
})
