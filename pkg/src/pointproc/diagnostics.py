"""Compensator time-change and goodness-of-fit diagnostics for simulated point processes"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence

import numpy as np
from scipy import stats

from src.errors import NonMonotoneCompensatorError
from src.measures.environment import EnvironmentPath
from src.pointproc.events import EventLog
from src.pointproc.intensity import AdditiveKernel, MarkLaw

KS_PVALUE_THRESHOLD = 0.01


@dataclass
class RescaleResult:
    """Transformed interarrivals and the KS test against Exp(1)"""
    interarrivals: np.ndarray
    ks_statistic: float
    p_value: float

    @property
    def passed(self) -> bool:
        return self.p_value > KS_PVALUE_THRESHOLD


def kernel_compensator(kernel: AdditiveKernel, log: EventLog, env: EnvironmentPath) -> Callable[[np.ndarray], np.ndarray]:
    """Lambda(t) of a single-channel log simulated from kernel"""
    return lambda times: kernel.compensator(times, log.times, env)


def time_rescale_diagnostic(log: EventLog, compensator: Callable[[np.ndarray], np.ndarray]) -> RescaleResult:
    """
    Time-rescaling check of a realized intensity

    Args:
        log: Events of one channel
        compensator: t -> Lambda(t) = int_0^t lambda_s ds of the intensity used

    Returns:
        RescaleResult with Lambda(tau_i) - Lambda(tau_{i-1}) and the KS test

    Raises:
        NonMonotoneCompensatorError: Lambda decreases between events
    """
    points = np.concatenate([[0.0], log.times])
    cumulative = np.asarray(compensator(points), dtype=float)
    gaps = np.diff(cumulative)
    if np.any(gaps < 0):
        bad = int(np.flatnonzero(gaps < 0)[0])
        raise NonMonotoneCompensatorError(f"compensator decreases before event {bad} at t={points[bad + 1]:.6g}")
    if gaps.size == 0:
        return RescaleResult(gaps, 0.0, 1.0)
    result = stats.kstest(gaps, "expon")
    return RescaleResult(gaps, float(result.statistic), float(result.pvalue))


def pooled_time_rescale(logs: Sequence[EventLog], compensators: Sequence[Callable]) -> RescaleResult:
    """Rescale several independent logs and test the pooled interarrivals"""
    parts: List[np.ndarray] = [time_rescale_diagnostic(log, comp).interarrivals for log, comp in zip(logs, compensators)]
    pooled = np.concatenate(parts) if parts else np.array([])
    if pooled.size == 0:
        return RescaleResult(pooled, 0.0, 1.0)
    result = stats.kstest(pooled, "expon")
    return RescaleResult(pooled, float(result.statistic), float(result.pvalue))


def poisson_count_test(counts: np.ndarray, mean: float, min_expected: float = 5.0) -> Dict[str, float]:
    """
    Chi-square goodness of fit of counts against Poisson(mean)

    Cells with small expectation are merged into the upper tail. When the
    merging leaves a single cell the fit is exact and the p-value is 1.

    Raises:
        ValueError: no counts
    """
    counts = np.asarray(counts, dtype=int)
    n = counts.size
    if n == 0:
        raise ValueError("poisson_count_test needs at least one count")
    k_max = int(max(counts.max(initial=0), stats.poisson.ppf(0.999, mean)))
    expected = n * stats.poisson.pmf(np.arange(k_max + 1), mean)
    # merge the upper tail until every cell has enough mass
    top = k_max
    while top > 0 and n * stats.poisson.sf(top - 1, mean) < min_expected:
        top -= 1
    exp_cells = np.append(expected[:top], n * stats.poisson.sf(top - 1, mean))
    obs_cells = np.append(np.bincount(np.minimum(counts, top), minlength=top + 1)[:top], np.sum(counts >= top))
    # drop leading cells with tiny expectation into their neighbour
    while exp_cells.size > 2 and exp_cells[0] < min_expected:
        exp_cells = np.concatenate([[exp_cells[0] + exp_cells[1]], exp_cells[2:]])
        obs_cells = np.concatenate([[obs_cells[0] + obs_cells[1]], obs_cells[2:]])
    if exp_cells.size < 2:
        return {"statistic": 0.0, "p_value": 1.0, "cells": int(exp_cells.size)}
    exp_cells = exp_cells * obs_cells.sum() / exp_cells.sum()
    result = stats.chisquare(obs_cells, exp_cells)
    return {
        "statistic": float(result.statistic),
        "p_value": float(result.pvalue),
        "cells": int(exp_cells.size),
    }


def mark_frequency_check(logs: Sequence[EventLog], law: MarkLaw) -> Dict[float, Dict[str, float]]:
    """Empirical mark frequencies against the mark law, with z-scores"""
    marks = np.concatenate([log.marks for log in logs]) if logs else np.array([])
    total = marks.size
    report: Dict[float, Dict[str, float]] = {}
    for r, q in zip(law.marks, law.probs):
        freq = float(np.mean(marks == r)) if total else 0.0
        se = np.sqrt(q * (1.0 - q) / total) if total else np.inf
        report[r] = {
            "expected": float(q),
            "observed": freq,
            "z": float((freq - q) / se) if se > 0 else 0.0,
        }
    return report
