"""Online change-point detectors driven one observation at a time.

Four scanning strategies share one state machine:

* ``FULL``      -- every split ``1 <= s < t`` (two-sample statistic).
* ``WINDOW``    -- anchored statistic over the last ``gamma`` observations.
* ``GEOMETRIC`` -- splits ``t - 2**(j-1)``, ``j = 1..floor(log2 t)``.
* ``MULTI``     -- anchored scan since the last declared change; restarts
  after each alarm instead of halting.

An alarm is raised at time ``t`` when any scanned statistic strictly exceeds
the schedule's boundary at ``t``. The reported split is the one with the
largest statistic among the scanned splits (ties go to the smallest split).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator

import numpy as np

from .core import PreconditionError, PrefixSumBuffer, anchored_scan, contrast
from .thresholds import ScheduleKind, ThresholdSchedule

__all__ = [
    "Mode",
    "DetectorConfig",
    "Verdict",
    "Declaration",
    "ChangePointLog",
    "DetectorHaltedError",
    "OnlineDetector",
    "step_full",
    "step_window",
    "step_geometric",
    "step_multi",
    "reset",
    "geometric_splits",
]


class Mode(str, enum.Enum):
    FULL = "full"
    WINDOW = "window"
    GEOMETRIC = "geometric"
    MULTI = "multi"


_COMPATIBLE = {
    Mode.FULL: {ScheduleKind.ALPHA, ScheduleKind.ARL},
    Mode.WINDOW: {ScheduleKind.WINDOW},
    Mode.GEOMETRIC: {ScheduleKind.ALPHA},
    Mode.MULTI: {ScheduleKind.MULTI},
}


class DetectorHaltedError(RuntimeError):
    """A single-change detector was stepped after it raised its alarm."""


@dataclass(frozen=True)
class DetectorConfig:
    mode: Mode
    schedule: ThresholdSchedule
    window_gamma: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.schedule.kind not in _COMPATIBLE[self.mode]:
            raise PreconditionError(
                f"{self.mode.value} mode cannot use a {self.schedule.kind.value} schedule"
            )
        if self.mode is Mode.WINDOW:
            gamma = self.schedule.gamma if self.window_gamma is None else int(self.window_gamma)
            if gamma != self.schedule.gamma:
                raise PreconditionError("window_gamma must match the schedule's gamma")
            object.__setattr__(self, "window_gamma", gamma)
        elif self.window_gamma is not None:
            raise PreconditionError("window_gamma only applies to window mode")

    def with_scale(self, scale: float) -> "DetectorConfig":
        return replace(self, schedule=self.schedule.with_scale(scale))


@dataclass(frozen=True)
class Verdict:
    alarm: bool
    time: int
    argmax_split: int
    statistic: float
    threshold: float


@dataclass(frozen=True)
class Declaration:
    time: int
    split: int
    statistic: float
    threshold: float


@dataclass
class ChangePointLog:
    declared: list[Declaration] = field(default_factory=list)

    def append(self, item: Declaration) -> None:
        if self.declared and item.time <= self.declared[-1].time:
            raise PreconditionError("declared times must be strictly increasing")
        self.declared.append(item)

    @property
    def times(self) -> list[int]:
        return [d.time for d in self.declared]

    def __len__(self) -> int:
        return len(self.declared)

    def __iter__(self) -> Iterator[Declaration]:
        return iter(self.declared)


def geometric_splits(t: int) -> np.ndarray:
    """Splits ``t - 2**(j-1)`` for ``j = 1..floor(log2 t)``, in scan order."""
    if t < 2:
        return np.empty(0, dtype=np.int64)
    J = int(t).bit_length() - 1
    return t - (np.int64(1) << np.arange(J, dtype=np.int64))


class _Ring:
    """Last ``size`` observations, kept contiguous by writing every value twice."""

    __slots__ = ("size", "_data", "_pos", "_filled")

    def __init__(self, size: int) -> None:
        self.size = size
        self._data = np.zeros(2 * size, dtype=np.float64)
        self._pos = 0
        self._filled = 0

    def push(self, x: float) -> None:
        self._data[self._pos] = x
        self._data[self._pos + self.size] = x
        self._pos = (self._pos + 1) % self.size
        self._filled = min(self._filled + 1, self.size)

    def view(self) -> np.ndarray:
        """Oldest-to-newest retained observations."""
        start = self._pos + self.size - self._filled
        return self._data[start : self._pos + self.size]

    def clear(self) -> None:
        self._data[:] = 0.0
        self._pos = 0
        self._filled = 0


class OnlineDetector:
    """Mutable detector state: time, partial sums, restart point and alarm log.

    ``start_time`` (multi mode only) begins the run as if a change had just
    been declared at that global time, so thresholds use the global clock.
    """

    def __init__(self, config: DetectorConfig, start_time: int = 0) -> None:
        if start_time and config.mode is not Mode.MULTI:
            raise PreconditionError("start_time is only meaningful in multi mode")
        if start_time < 0:
            raise PreconditionError("start_time must be nonnegative")
        self.config = config
        self.start_time = int(start_time)
        self._ring = _Ring(config.window_gamma) if config.mode is Mode.WINDOW else None
        self.reset()

    # state -----------------------------------------------------------------

    def reset(self) -> "OnlineDetector":
        self.t = self.start_time
        self.refresh_e = self.start_time
        self.buffer = PrefixSumBuffer()
        self.alarms = ChangePointLog()
        self.halted = False
        if self._ring is not None:
            self._ring.clear()
        return self

    @property
    def mode(self) -> Mode:
        return self.config.mode

    def threshold(self, t: int | None = None) -> float:
        return float(self.config.schedule(self.t if t is None else t))

    def candidate_splits(self, t: int | None = None) -> np.ndarray:
        """Global split indices scanned at time ``t`` (default: current time)."""
        t = self.t if t is None else t
        mode = self.config.mode
        if mode is Mode.FULL:
            return np.arange(1, t, dtype=np.int64)
        if mode is Mode.GEOMETRIC:
            return geometric_splits(t)
        if mode is Mode.WINDOW:
            e = max(t - self.config.window_gamma, 0)
            return np.arange(e + 1, t, dtype=np.int64)
        return np.arange(self.refresh_e + 1, t, dtype=np.int64)

    # stepping --------------------------------------------------------------

    def step(self, x: float) -> Verdict:
        if self.halted:
            raise DetectorHaltedError("detector already raised its alarm; call reset()")
        self.t += 1
        t = self.t
        mode = self.config.mode
        if mode is Mode.WINDOW:
            self._ring.push(x)
            stats, splits = self._scan_window(t)
        else:
            self.buffer.push(x)
            if mode is Mode.MULTI:
                # buffer holds only the segment after the last restart
                local_t = t - self.refresh_e
                local = np.arange(1, local_t, dtype=np.int64)
                stats = anchored_scan(self.buffer, 0, local, local_t)
                splits = local + self.refresh_e
            else:
                splits = self.candidate_splits(t)
                stats = anchored_scan(self.buffer, 0, splits, t)
        threshold = self.threshold(t)
        if splits.size == 0:
            return Verdict(False, t, 0, 0.0, threshold)
        k = int(np.argmax(stats))
        stat = float(stats[k])
        split = int(splits[k])
        alarm = stat > threshold
        if alarm:
            self.alarms.append(Declaration(t, split, stat, threshold))
            if mode is Mode.MULTI:
                self.refresh_e = t
                self.buffer.clear()
            else:
                self.halted = True
        return Verdict(alarm, t, split, stat, threshold)

    def _scan_window(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        data = self._ring.view()
        n = data.size
        e = t - n
        S = np.zeros(n + 1, dtype=np.float64)
        S[1:] = data
        np.add.accumulate(S, out=S)
        local = np.arange(1, n, dtype=np.int64)
        stats = contrast(S[local], S[n] - S[local], local, n - local)
        return stats, local + e

    def run(self, xs: Iterable[float]) -> list[Verdict]:
        """Step through ``xs``; single-change modes stop after their alarm."""
        out = []
        for x in xs:
            v = self.step(float(x))
            out.append(v)
            if self.halted:
                break
        return out

    def first_alarm(self, xs: Iterable[float]) -> Verdict | None:
        for x in xs:
            v = self.step(float(x))
            if v.alarm:
                return v
        return None

    def __repr__(self) -> str:
        return (
            f"OnlineDetector(mode={self.config.mode.value}, t={self.t}, "
            f"alarms={self.alarms.times}, halted={self.halted})"
        )


def _checked(state: OnlineDetector, mode: Mode, x: float) -> Verdict:
    if state.config.mode is not mode:
        raise PreconditionError(f"detector is in {state.config.mode.value} mode, not {mode.value}")
    return state.step(x)


def step_full(state: OnlineDetector, x: float) -> Verdict:
    return _checked(state, Mode.FULL, x)


def step_window(state: OnlineDetector, x: float) -> Verdict:
    return _checked(state, Mode.WINDOW, x)


def step_geometric(state: OnlineDetector, x: float) -> Verdict:
    return _checked(state, Mode.GEOMETRIC, x)


def step_multi(state: OnlineDetector, x: float) -> Verdict:
    return _checked(state, Mode.MULTI, x)


def reset(state: OnlineDetector) -> OnlineDetector:
    return state.reset()
