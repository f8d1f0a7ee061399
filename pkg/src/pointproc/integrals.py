"""Jump integrals against the lifted counting measure and the intensity-weighted random norm"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from src.pointproc.events import EventLog
from src.pointproc.intensity import MarkLaw

Integrand = Callable[[np.ndarray, np.ndarray, int], np.ndarray]


@dataclass(frozen=True)
class StepProcess:
    """Process values on a time vector"""
    times: np.ndarray
    values: np.ndarray

    def at(self, t: float) -> float:
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        return float(self.values[max(idx, 0)])


def integrate_against(
    U: Integrand,
    log: EventLog,
    compensated: bool = False,
    lambda_path: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    mark_laws: Optional[Sequence[MarkLaw]] = None,
    grid: Optional[np.ndarray] = None,
) -> StepProcess:
    """
    Integral of U against the marked counting measure, optionally compensated

    Args:
        U: Predictable integrand U(t, r, channel) accepting numpy arrays
        log: Realized events
        compensated: Subtract the time integral of U against K(s, dr) ds
        lambda_path: times -> intensity, shape (len,) or (len, channels)
        mark_laws: Mark law per channel (delta_1 if None)
        grid: Output times; defaults to 1001 points on [0, T]

    Returns:
        StepProcess on the union of grid and event times
    """
    horizon = log.horizon
    if grid is None:
        grid = np.linspace(0.0, horizon, 1001)
    times = np.union1d(np.asarray(grid, dtype=float), log.times)

    values = np.zeros(times.shape)
    for j in range(log.n_channels):
        keep = log.channels == j
        tau = log.times[keep]
        if tau.size:
            jumps = np.asarray(U(tau, log.marks[keep], j), dtype=float).reshape(-1)
            cum = np.concatenate([[0.0], np.cumsum(jumps)])
            values += cum[np.searchsorted(tau, times, side="right")]

    if compensated:
        if lambda_path is None:
            raise ValueError("compensated integral needs lambda_path")
        lam = np.asarray(lambda_path(times), dtype=float)
        if lam.ndim == 1:
            lam = lam[:, None]
        laws = list(mark_laws) if mark_laws is not None else [MarkLaw()] * log.n_channels
        density = np.zeros(times.shape)
        for j, law in enumerate(laws):
            for r, q in zip(law.marks, law.probs):
                density += q * lam[:, j] * np.asarray(U(times, np.full(times.shape, r), j), dtype=float).reshape(-1)
        # trapezoid rule on the refined grid
        increments = 0.5 * (density[1:] + density[:-1]) * np.diff(times)
        values -= np.concatenate([[0.0], np.cumsum(increments)])

    return StepProcess(times, values)


def random_norm_sq(U: np.ndarray, kernel_mass: np.ndarray) -> np.ndarray:
    """
    Batched squared random norm sum_{i,j,r} U_ijr^2 K_jr

    Args:
        U: (..., n, l, R) jump integrand per mark cell
        kernel_mass: (..., l, R) kernel mass K(t, {r}) per channel

    Returns:
        Array of shape (...)
    """
    K = np.asarray(kernel_mass, dtype=float)
    if np.any(K < 0):
        raise ValueError("kernel mass must be nonnegative")
    return np.sum(U ** 2 * K[..., None, :, :], axis=(-3, -2, -1))


def random_inner(U: np.ndarray, V: np.ndarray, kernel_mass: np.ndarray) -> np.ndarray:
    """Inner product inducing the random norm"""
    K = np.asarray(kernel_mass, dtype=float)
    return np.sum(U * V * K[..., None, :, :], axis=(-3, -2, -1))


def random_norm(
    u: Union[np.ndarray, Callable[[float], np.ndarray]],
    kernel_mass: np.ndarray,
    marks: Optional[Sequence[float]] = None,
) -> float:
    """
    Intensity-weighted trace norm of a mark-indexed matrix

    Args:
        u: Matrix (n, l) constant in the mark, array (n, l, R), or callable
            r -> (n, l) evaluated on marks
        kernel_mass: (l,) unmarked intensities or (l, R) masses K(t, {r})
        marks: Mark values, required for callable u

    Returns:
        (sum_r tr(u(r) diag(K(t, {r})) u(r)^T))^(1/2)
    """
    K = np.asarray(kernel_mass, dtype=float)
    if np.any(K < 0):
        raise ValueError("kernel mass must be nonnegative")
    if K.ndim == 1:
        K = K[:, None]
    if callable(u):
        if marks is None:
            raise ValueError("callable integrand needs the mark values")
        arr = np.stack([np.atleast_2d(np.asarray(u(r), dtype=float)) for r in marks], axis=-1)
    else:
        arr = np.asarray(u, dtype=float)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim == 2:
            arr = np.repeat(arr[:, :, None], K.shape[1], axis=2)
    return float(np.sqrt(random_norm_sq(arr, K)))
