"""Time grids: uniform steps refined by event times and environment breakpoints"""

from typing import Iterable, Optional

import numpy as np

MERGE_TOLERANCE = 1e-12


class TimeGrid:
    """Strictly increasing times 0 = t_0 < ... < t_N = T"""

    def __init__(self, times: np.ndarray):
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("a grid needs at least two times")
        if times[0] != 0.0:
            raise ValueError("grid must start at 0")
        if np.any(np.diff(times) <= 0):
            raise ValueError("grid times must be strictly increasing")
        times.setflags(write=False)
        self._times = times

    @classmethod
    def build(
        cls,
        horizon: float,
        steps: int,
        event_times: Optional[Iterable[float]] = None,
        breakpoints: Optional[Iterable[float]] = None,
    ) -> "TimeGrid":
        """
        Uniform grid with N steps, refined by extra times

        Extra times within 1e-12 of an existing node are merged into it.
        """
        if horizon <= 0 or steps < 1:
            raise ValueError("need T > 0 and at least one step")
        times = np.linspace(0.0, horizon, steps + 1)
        extra = []
        for source in (event_times, breakpoints):
            if source is not None:
                extra.extend(float(t) for t in source if 0.0 < t < horizon)
        if extra:
            merged = np.union1d(times, np.asarray(extra))
            keep = np.concatenate([[True], np.diff(merged) > MERGE_TOLERANCE])
            merged = merged[keep]
            merged[-1] = horizon
            times = merged
        return cls(times)

    @property
    def times(self) -> np.ndarray:
        return self._times

    @property
    def steps(self) -> int:
        return self._times.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self._times)

    @property
    def horizon(self) -> float:
        return float(self._times[-1])

    def cell_of(self, t: np.ndarray) -> np.ndarray:
        """Index m of the cell (t_m, t_{m+1}] containing t"""
        idx = np.searchsorted(self._times, np.asarray(t, dtype=float), side="left") - 1
        return np.clip(idx, 0, self.steps - 1)

    def refined(self) -> "TimeGrid":
        """Grid with every cell halved"""
        mids = 0.5 * (self._times[1:] + self._times[:-1])
        return TimeGrid(np.sort(np.concatenate([self._times, mids])))

    def __len__(self) -> int:
        return self._times.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return np.array_equal(self._times, other._times)
