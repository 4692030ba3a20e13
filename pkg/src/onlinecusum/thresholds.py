"""Threshold schedules for the online CUSUM detectors.

Every schedule is ``scale * constant * sigma * sqrt(log(argument))``; the
``scale`` knob multiplies the theoretical constant so that simulation-based
calibration keeps the ``sqrt(log)`` shape.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .core import PreconditionError

__all__ = [
    "ScheduleKind",
    "ThresholdSchedule",
    "FeasibilityReport",
    "ALPHA_CONSTANT",
    "ARL_CONSTANT",
    "WINDOW_CONSTANT",
    "MULTI_CONSTANT",
    "threshold_alpha",
    "threshold_arl",
    "threshold_window",
    "threshold_multi",
    "snr_feasibility",
    "DEFAULT_C_SNR",
    "DEFAULT_C_D",
]

ALPHA_CONSTANT = 2.0**1.5
ARL_CONSTANT = math.sqrt(6.0)
WINDOW_CONSTANT = math.sqrt(2.0)
MULTI_CONSTANT = 4.0

# Reporting defaults only; never used on a detection path.
DEFAULT_C_SNR = 20.0
DEFAULT_C_D = 10.0


class ScheduleKind(str, enum.Enum):
    ALPHA = "alpha"
    ARL = "arl"
    WINDOW = "window"
    MULTI = "multi"


@dataclass(frozen=True)
class ThresholdSchedule:
    kind: ScheduleKind
    sigma: float
    alpha: float | None = None
    gamma: int | None = None
    scale: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise PreconditionError(f"sigma must be positive and finite, got {self.sigma}")
        if not self.scale > 0:
            raise PreconditionError(f"scale must be positive, got {self.scale}")
        if self.kind in (ScheduleKind.ALPHA, ScheduleKind.WINDOW, ScheduleKind.MULTI):
            if self.alpha is None or not 0 < self.alpha < 1:
                raise PreconditionError(f"{self.kind.value} schedule needs alpha in (0, 1)")
        if self.kind in (ScheduleKind.ARL, ScheduleKind.WINDOW):
            if self.gamma is None or int(self.gamma) != self.gamma or self.gamma < 2:
                raise PreconditionError(f"{self.kind.value} schedule needs integer gamma >= 2")
            object.__setattr__(self, "gamma", int(self.gamma))

    @classmethod
    def alpha_control(cls, sigma: float, alpha: float, scale: float = 1.0) -> "ThresholdSchedule":
        return cls(ScheduleKind.ALPHA, sigma, alpha=alpha, scale=scale)

    @classmethod
    def arl_control(cls, sigma: float, gamma: int, scale: float = 1.0) -> "ThresholdSchedule":
        return cls(ScheduleKind.ARL, sigma, gamma=gamma, scale=scale)

    @classmethod
    def window_control(
        cls, sigma: float, alpha: float, gamma: int, scale: float = 1.0
    ) -> "ThresholdSchedule":
        return cls(ScheduleKind.WINDOW, sigma, alpha=alpha, gamma=gamma, scale=scale)

    @classmethod
    def multi_control(cls, sigma: float, alpha: float, scale: float = 1.0) -> "ThresholdSchedule":
        return cls(ScheduleKind.MULTI, sigma, alpha=alpha, scale=scale)

    @classmethod
    def undetectable(
        cls, sigma: float, alpha: float, c_b: float, scale: float = 1.0
    ) -> "ThresholdSchedule":
        """Alpha-control shape with leading constant ``c_b`` instead of ``2**1.5``."""
        return cls.alpha_control(sigma, alpha, scale=scale * c_b / ALPHA_CONSTANT)

    def with_scale(self, scale: float) -> "ThresholdSchedule":
        return replace(self, scale=scale)

    @property
    def time_varying(self) -> bool:
        return self.kind in (ScheduleKind.ALPHA, ScheduleKind.MULTI)

    def __call__(self, t):
        """Boundary value at time ``t`` (ignored by constant schedules)."""
        if self.kind is ScheduleKind.ALPHA:
            return threshold_alpha(t, self)
        if self.kind is ScheduleKind.MULTI:
            return threshold_multi(t, self)
        if self.kind is ScheduleKind.ARL:
            return threshold_arl(self)
        return threshold_window(self)


def _sqrt_log(arg):
    if np.ndim(arg) == 0:
        if not arg > 1:
            raise PreconditionError(f"logarithm argument must exceed 1, got {arg}")
        return math.sqrt(math.log(arg))
    arg = np.asarray(arg, dtype=np.float64)
    if np.any(arg <= 1):
        raise PreconditionError("logarithm argument must exceed 1 (t/alpha <= 1)")
    return np.sqrt(np.log(arg))


def _over_alpha(t, alpha: float):
    return t / alpha if np.ndim(t) == 0 else np.asarray(t, dtype=np.float64) / alpha


def _require(sched: ThresholdSchedule, kind: ScheduleKind) -> None:
    if sched.kind is not kind:
        raise PreconditionError(f"expected a {kind.value} schedule, got {sched.kind.value}")


def threshold_alpha(t, sched: ThresholdSchedule):
    """``scale * 2**1.5 * sigma * sqrt(log(t / alpha))``; ``t`` may be an array."""
    _require(sched, ScheduleKind.ALPHA)
    return sched.scale * ALPHA_CONSTANT * sched.sigma * _sqrt_log(_over_alpha(t, sched.alpha))


def threshold_arl(sched: ThresholdSchedule) -> float:
    _require(sched, ScheduleKind.ARL)
    return sched.scale * ARL_CONSTANT * sched.sigma * _sqrt_log(2.0 ** (1 / 3) * (sched.gamma + 1))


def threshold_window(sched: ThresholdSchedule) -> float:
    _require(sched, ScheduleKind.WINDOW)
    return sched.scale * WINDOW_CONSTANT * sched.sigma * _sqrt_log(2.0 * sched.gamma**2 / sched.alpha)


def threshold_multi(u, sched: ThresholdSchedule):
    """``scale * 4 * sigma * sqrt(log(u / alpha))`` with ``u`` the global time."""
    _require(sched, ScheduleKind.MULTI)
    return sched.scale * MULTI_CONSTANT * sched.sigma * _sqrt_log(_over_alpha(u, sched.alpha))


@dataclass(frozen=True)
class FeasibilityReport:
    snr: float
    bound: float
    feasible: bool
    delay_bound: float


def snr_feasibility(
    delta: int,
    kappa: float,
    sigma: float,
    alpha: float,
    c_snr: float = DEFAULT_C_SNR,
    c_d: float = DEFAULT_C_D,
) -> FeasibilityReport:
    """Compare ``delta * kappa**2 / sigma**2`` with ``c_snr * log(delta / alpha)``."""
    if not kappa > 0 or not sigma > 0:
        raise PreconditionError("kappa and sigma must be positive")
    if delta < 1 or not 0 < alpha < 1:
        raise PreconditionError("need delta >= 1 and alpha in (0, 1)")
    log_term = math.log(delta / alpha)
    if log_term <= 0:
        raise PreconditionError("need delta / alpha > 1")
    snr = delta * kappa**2 / sigma**2
    bound = c_snr * log_term
    return FeasibilityReport(
        snr=snr,
        bound=bound,
        feasible=snr >= bound,
        delay_bound=c_d * sigma**2 / kappa**2 * log_term,
    )
