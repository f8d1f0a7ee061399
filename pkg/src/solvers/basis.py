"""Regression bases and least-squares conditional expectations"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.linear_model import LinearRegression, Ridge
from sklearn.preprocessing import PolynomialFeatures

from src.errors import RegressionError
from src.solvers.bundle import PathBundle

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BasisSpec:
    """
    Polynomial basis of total degree `degree` in (X_m, environment features[, W_m]),
    plus regime indicators with the first state dropped
    """
    degree: int = 2
    use_features: bool = True
    include_brownian: bool = False
    include_regime: bool = True
    ridge_alpha: float = 1e-10

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("basis degree must be nonnegative")
        if self.ridge_alpha <= 0:
            raise ValueError("ridge weight must be positive")

    def nominal_dimension(self, state_dim: int, n_features: int = 0, n_states: int = 0, brownian_dim: int = 0) -> int:
        """Number of columns before zero-variance columns are dropped"""
        inputs = state_dim + (n_features if self.use_features else 0) + (brownian_dim if self.include_brownian else 0)
        poly = PolynomialFeatures(self.degree).fit(np.zeros((1, max(inputs, 1))))
        cols = poly.n_output_features_ if inputs else 1
        if self.include_regime and n_states > 1:
            cols += n_states - 1
        return int(cols)


def design_matrix(spec: BasisSpec, bundle: PathBundle, x: np.ndarray, m: int) -> np.ndarray:
    """
    Basis evaluated at node m

    Columns with zero sample variance are dropped, except the constant.

    Args:
        spec: Basis specification
        bundle: Path bundle supplying features, W and regime states
        x: State at node m, (P, d)
        m: Node index

    Returns:
        (P, q) design matrix with the constant in column 0
    """
    parts = [x]
    if spec.use_features:
        parts.extend(v[:, m:m + 1] for _, v in sorted(bundle.features.items()))
    if spec.include_brownian:
        parts.append(bundle.W[:, m])
    inputs = np.concatenate(parts, axis=1)
    A = PolynomialFeatures(degree=spec.degree, include_bias=True).fit_transform(inputs)
    keep = np.ptp(A, axis=0) > 0
    keep[0] = True
    A = A[:, keep]

    if spec.include_regime and bundle.regime is not None:
        states = bundle.regime[:, m]
        levels = np.unique(states)
        dummies = [(states == s).astype(float) for s in levels[1:]]
        if dummies:
            A = np.column_stack([A] + dummies)
    return A


def regress(A: np.ndarray, target: np.ndarray, ridge_alpha: float = 1e-10) -> np.ndarray:
    """
    Least-squares projection of target columns on span(A)

    Falls back to a ridge fit (weight ridge_alpha) when A is rank deficient.

    Args:
        A: (P, q) design matrix
        target: (P,) or (P, s) regression targets

    Returns:
        Fitted values with the shape of target

    Raises:
        RegressionError: fewer paths than basis functions
    """
    P, q = A.shape
    if P < q:
        raise RegressionError(f"{P} paths cannot fit a basis of dimension {q}")
    y = np.asarray(target, dtype=float)
    flat = y.reshape(P, -1)
    model = LinearRegression(fit_intercept=False).fit(A, flat)
    s = model.singular_
    if np.sum(s > s.max() * max(P, q) * np.finfo(float).eps) < q:
        logger.warning("rank-deficient basis (%d columns), using ridge alpha=%g", q, ridge_alpha)
        model = Ridge(alpha=ridge_alpha, fit_intercept=False).fit(A, flat)
    fitted = model.predict(A)
    return fitted.reshape(y.shape)


def normal_equation_residual(A: np.ndarray, target: np.ndarray, fitted: np.ndarray) -> float:
    """max |A^T (target - fitted)| relative to max |A^T target|"""
    r = (np.asarray(target) - np.asarray(fitted)).reshape(A.shape[0], -1)
    scale = np.abs(A.T @ np.asarray(target).reshape(A.shape[0], -1)).max()
    return float(np.abs(A.T @ r).max() / max(scale, 1.0))


def basis_dimension(spec: BasisSpec, bundle: PathBundle, state_dim: int, n_states: Optional[int] = None) -> int:
    """Nominal basis dimension for a bundle (used for path-count validation)"""
    states = n_states
    if states is None and bundle.regime is not None:
        states = int(bundle.regime.max())
    return spec.nominal_dimension(state_dim, len(bundle.features), states or 0, bundle.brownian_dim)
