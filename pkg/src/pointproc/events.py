"""Marked events and event logs (the lifting of the counting process)"""

from dataclasses import dataclass
from typing import Iterable, List, Optional

import numpy as np


@dataclass(frozen=True)
class MarkedEvent:
    """
    A single jump: time, mark and channel

    channel is a 0-based index in memory; written records (event logs,
    result tables, check names) number channels 1..l.
    """
    time: float
    mark: float
    channel: int = 0

    def __post_init__(self):
        if not self.time > 0.0:
            raise ValueError(f"event time must be positive, got {self.time}")
        if self.channel < 0:
            raise ValueError(f"invalid channel {self.channel}")


class EventLog:
    """Sorted marked events on (0, T], ties across channels ordered by channel"""

    def __init__(self, events: Iterable[MarkedEvent], horizon: float, channels: int = 1):
        """
        Args:
            events: Events in any order
            horizon: Terminal time T
            channels: Number of channels l
        """
        evs = sorted(events, key=lambda e: (e.time, e.channel))
        times = np.array([e.time for e in evs], dtype=float)
        marks = np.array([e.mark for e in evs], dtype=float)
        chans = np.array([e.channel for e in evs], dtype=int)

        if times.size and times[-1] > horizon:
            raise ValueError(f"event at {times[-1]} beyond horizon {horizon}")
        if chans.size and chans.max() >= channels:
            raise ValueError(f"channel {chans.max()} outside 0..{channels - 1}")
        for j in range(channels):
            tj = times[chans == j]
            if np.any(np.diff(tj) <= 0):
                raise ValueError(f"channel {j} times are not strictly increasing")

        for arr in (times, marks, chans):
            arr.setflags(write=False)
        self._times = times
        self._marks = marks
        self._channels = chans
        self.horizon = float(horizon)
        self.n_channels = int(channels)

    @classmethod
    def from_arrays(cls, times, marks, channels, horizon: float, n_channels: int = 1) -> "EventLog":
        events = [
            MarkedEvent(float(t), float(r), int(c))
            for t, r, c in zip(np.asarray(times), np.asarray(marks), np.asarray(channels))
        ]
        return cls(events, horizon, n_channels)

    @classmethod
    def empty(cls, horizon: float, channels: int = 1) -> "EventLog":
        return cls([], horizon, channels)

    @property
    def times(self) -> np.ndarray:
        return self._times

    @property
    def marks(self) -> np.ndarray:
        return self._marks

    @property
    def channels(self) -> np.ndarray:
        return self._channels

    def __len__(self) -> int:
        return int(self._times.size)

    def __iter__(self):
        for t, r, c in zip(self._times, self._marks, self._channels):
            yield MarkedEvent(float(t), float(r), int(c))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EventLog):
            return NotImplemented
        return (
            self.horizon == other.horizon
            and self.n_channels == other.n_channels
            and np.array_equal(self._times, other._times)
            and np.array_equal(self._marks, other._marks)
            and np.array_equal(self._channels, other._channels)
        )

    def channel(self, j: int) -> "EventLog":
        """Sub-log of a single channel (re-indexed to channel 0)"""
        keep = self._channels == j
        return EventLog.from_arrays(self._times[keep], self._marks[keep], np.zeros(int(keep.sum()), dtype=int), self.horizon)

    def before(self, t: float, inclusive: bool = False) -> "EventLog":
        """History strictly before t (or up to and including t)"""
        keep = self._times <= t if inclusive else self._times < t
        return EventLog.from_arrays(
            self._times[keep], self._marks[keep], self._channels[keep], self.horizon, self.n_channels
        )

    def with_event(self, event: MarkedEvent) -> "EventLog":
        return EventLog(list(self) + [event], self.horizon, self.n_channels)

    def counts(self, t: float, channel: Optional[int] = None) -> int:
        """N_t, optionally for one channel"""
        mask = self._times <= t
        if channel is not None:
            mask &= self._channels == channel
        return int(mask.sum())

    def counting_path(self, times: np.ndarray, channel: Optional[int] = None) -> np.ndarray:
        """N evaluated on a time vector"""
        src = self._times if channel is None else self._times[self._channels == channel]
        return np.searchsorted(src, np.asarray(times, dtype=float), side="right").astype(float)


def merge(logs: List[EventLog], horizon: float) -> EventLog:
    """Merge per-channel logs (log k becomes channel k)"""
    events = []
    for k, log in enumerate(logs):
        events.extend(MarkedEvent(e.time, e.mark, k) for e in log)
    return EventLog(events, horizon, channels=max(len(logs), 1))


def dumps(log: EventLog) -> str:
    """Line records ``time channel mark`` (channel in 1..l) after a ``horizon T channels l`` header"""
    lines = [f"horizon {log.horizon!r} channels {log.n_channels}"]
    for e in log:
        lines.append(f"{e.time!r} {e.channel + 1} {e.mark!r}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> EventLog:
    """Parse the output of dumps"""
    rows = [line for line in text.splitlines() if line.strip()]
    header = rows[0].split()
    if len(header) != 4 or header[0] != "horizon" or header[2] != "channels":
        raise ValueError(f"bad event log header: {rows[0]!r}")
    events = []
    for row in rows[1:]:
        t, c, r = row.split()
        if int(c) < 1:
            raise ValueError(f"event record channel {c} outside 1..{header[3]}")
        events.append(MarkedEvent(float(t), float(r), int(c) - 1))
    return EventLog(events, float(header[1]), int(header[3]))
