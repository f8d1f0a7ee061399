"""Prometheus metrics collection"""

import math
from pathlib import Path
from typing import Optional, Sequence, Union

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile


class MetricsCollector:
    """Collects solver telemetry on a private registry"""

    def __init__(self, registry: Optional[CollectorRegistry] = None):
        """
        Initialize metrics

        Args:
            registry: Registry to register on (a fresh one if None)
        """
        self.registry = registry or CollectorRegistry()

        # Continuation metrics
        self.picard_iterations = Counter(
            'fbsde_picard_iterations_total',
            'Total Picard iterations',
            registry=self.registry,
        )

        self.inner_sweeps = Counter(
            'fbsde_inner_sweeps_total',
            'Total inner sweeps on the alpha0-system',
            registry=self.registry,
        )

        self.iterate_distance = Histogram(
            'fbsde_iterate_distance',
            'Relative distance between successive Picard iterates',
            buckets=[1e-12, 1e-9, 1e-6, 1e-4, 1e-2, 1e-1, 1.0, 10.0],
            registry=self.registry,
        )

        self.continuation_steps = Counter(
            'fbsde_continuation_steps_total',
            'Continuation steps by outcome',
            ['outcome'],  # outcome: accepted, halved
            registry=self.registry,
        )

        self.alpha = Gauge(
            'fbsde_continuation_alpha',
            'Current continuation level',
            registry=self.registry,
        )

        self.eps = Gauge(
            'fbsde_continuation_eps',
            'Current continuation step',
            registry=self.registry,
        )

        self.contraction_ratio = Gauge(
            'fbsde_contraction_ratio',
            'Last empirical ratio of successive iterate distances',
            registry=self.registry,
        )

        # Check metrics
        self.check_outcomes = Counter(
            'fbsde_check_outcomes_total',
            'Structural check outcomes',
            ['check', 'outcome'],
            registry=self.registry,
        )

        # Simulation metrics
        self.events_simulated = Counter(
            'fbsde_events_simulated_total',
            'Accepted point-process events',
            registry=self.registry,
        )

    def record_picard(self, distance: float, sweeps: int = 1):
        """
        Record one Picard iteration

        Args:
            distance: Relative iterate distance
            sweeps: Inner sweeps spent on the alpha0-system
        """
        self.picard_iterations.inc()
        self.inner_sweeps.inc(sweeps)
        if math.isfinite(distance):
            self.iterate_distance.observe(distance)

    def record_step(self, accepted: bool, alpha: float, eps: float, ratios: Sequence[float] = ()):
        """
        Record a continuation step

        Args:
            accepted: Whether the step converged
            alpha: Level after the step
            eps: Step size in force after the step
            ratios: Empirical contraction ratios of the loop
        """
        self.continuation_steps.labels(outcome="accepted" if accepted else "halved").inc()
        self.alpha.set(alpha)
        self.eps.set(eps)
        if ratios:
            self.contraction_ratio.set(ratios[-1])

    def record_check(self, check: str, passed: bool):
        """Record a structural check outcome"""
        self.check_outcomes.labels(check=check, outcome="pass" if passed else "fail").inc()

    def record_events(self, count: int):
        """Record simulated events"""
        self.events_simulated.inc(count)

    def write(self, path: Union[str, Path]):
        """Write the registry in text exposition format"""
        write_to_textfile(str(path), self.registry)
