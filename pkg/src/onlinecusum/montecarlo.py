"""Seeded Monte Carlo experiments for the online CUSUM detectors.

Every replication draws its own stream from a Philox generator keyed by
``seed ^ replication``; reports are therefore reproducible bit for bit and
replications can be farmed out to worker processes in any order.
"""

from __future__ import annotations

import enum
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from typing import Any, Callable, Protocol, Sequence

import numpy as np
from scipy import optimize, special

from .core import MeanFunction, PreconditionError
from .detectors import DetectorConfig, Mode, OnlineDetector
from .thresholds import (
    DEFAULT_C_D,
    DEFAULT_C_SNR,
    FeasibilityReport,
    ScheduleKind,
    snr_feasibility,
)

__all__ = [
    "NoiseFamily",
    "Noise",
    "ScenarioSpec",
    "BootstrapScenario",
    "ExperimentReport",
    "SweepCell",
    "SweepReport",
    "CalibrationError",
    "replication_rng",
    "gen_piecewise",
    "run_replications",
    "binomial_halfwidth",
    "binomial_margin",
    "max_window_rate",
    "estimate_false_alarm",
    "estimate_arl",
    "estimate_delay",
    "critical_scales",
    "calibrate_scale",
    "phase_transition_sweep",
]

_SEED_LIMIT = 2**64
Z95 = 1.959963984540054


class CalibrationError(RuntimeError):
    """No scale inside the calibration bracket reaches the target rate."""


def replication_rng(seed: int, replication: int) -> np.random.Generator:
    """Counter-based generator for one replication: Philox keyed by ``seed ^ replication``."""
    if not 0 <= seed < _SEED_LIMIT:
        raise PreconditionError("seed must be a 64-bit unsigned integer")
    if replication < 0:
        raise PreconditionError("replication index must be nonnegative")
    return np.random.Generator(np.random.Philox(key=int(seed) ^ int(replication)))


# -- scenarios ---------------------------------------------------------------


class NoiseFamily(str, enum.Enum):
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"
    RADEMACHER = "rademacher"


@dataclass(frozen=True)
class Noise:
    """Centred sub-Gaussian noise.

    ``scale`` is the standard deviation for Gaussian noise, the half-width
    ``a`` for Uniform(-a, a) and the magnitude ``c`` for Rademacher noise.
    In all three cases ``scale`` is also a valid variance proxy, i.e.
    ``E exp(lam * X) <= exp(lam**2 * scale**2 / 2)``.
    """

    family: NoiseFamily = NoiseFamily.GAUSSIAN
    scale: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", NoiseFamily(self.family))
        if not (self.scale >= 0 and math.isfinite(self.scale)):
            raise PreconditionError("noise scale must be finite and >= 0")

    @classmethod
    def gaussian(cls, sigma: float) -> "Noise":
        return cls(NoiseFamily.GAUSSIAN, sigma)

    @classmethod
    def uniform(cls, a: float) -> "Noise":
        return cls(NoiseFamily.UNIFORM, a)

    @classmethod
    def rademacher(cls, c: float) -> "Noise":
        return cls(NoiseFamily.RADEMACHER, c)

    @property
    def variance_proxy(self) -> float:
        return self.scale

    @property
    def psi2_norm(self) -> float:
        """Orlicz-psi2 norm: ``inf{u > 0 : E exp(X**2 / u**2) <= 2}``."""
        if self.scale == 0:
            return 0.0
        if self.family is NoiseFamily.GAUSSIAN:
            # E exp(X^2/u^2) = (1 - 2 s^2/u^2)^(-1/2)
            return self.scale * math.sqrt(8.0 / 3.0)
        if self.family is NoiseFamily.RADEMACHER:
            return self.scale / math.sqrt(math.log(2.0))
        # Uniform(-a, a): E exp(X^2/u^2) = sqrt(pi)/2 * erfi(r) / r with r = a/u
        r = optimize.brentq(lambda r: math.sqrt(math.pi) / 2 * special.erfi(r) / r - 2.0, 1e-6, 3.0)
        return self.scale / r

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.scale == 0:
            return np.zeros(n)
        if self.family is NoiseFamily.GAUSSIAN:
            return self.scale * rng.standard_normal(n)
        if self.family is NoiseFamily.UNIFORM:
            return rng.uniform(-self.scale, self.scale, n)
        return self.scale * (2.0 * rng.integers(0, 2, n) - 1.0)


@dataclass(frozen=True)
class ScenarioSpec:
    mean: MeanFunction
    noise: Noise
    horizon: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.horizon < 2:
            raise PreconditionError("horizon must be >= 2")
        if not 0 <= self.seed < _SEED_LIMIT:
            raise PreconditionError("seed must be a 64-bit unsigned integer")

    @classmethod
    def null(
        cls, horizon: int, sigma: float = 1.0, seed: int = 0, level: float = 0.0,
        family: NoiseFamily = NoiseFamily.GAUSSIAN,
    ) -> "ScenarioSpec":
        return cls(MeanFunction.constant(level), Noise(family, sigma), horizon, seed)

    @classmethod
    def single_change(
        cls, delta: int, kappa: float, horizon: int, sigma: float = 1.0, seed: int = 0,
        family: NoiseFamily = NoiseFamily.GAUSSIAN,
    ) -> "ScenarioSpec":
        return cls(MeanFunction.single(delta, kappa), Noise(family, sigma), horizon, seed)

    @property
    def has_change(self) -> bool:
        return bool(self.mean.change_points)

    def with_horizon(self, horizon: int) -> "ScenarioSpec":
        return replace(self, horizon=horizon)

    def generate(self, replication: int = 0) -> np.ndarray:
        rng = replication_rng(self.seed, replication)
        return self.mean.means(self.horizon) + self.noise.sample(rng, self.horizon)


def gen_piecewise(spec: ScenarioSpec, replication: int = 0) -> np.ndarray:
    return spec.generate(replication)


@dataclass(frozen=True)
class BootstrapScenario:
    """Null scenario that resamples a recorded pre-change sample with replacement."""

    history: tuple[float, ...]
    horizon: int
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "history", tuple(float(v) for v in self.history))
        if not self.history:
            raise PreconditionError("bootstrap history is empty")
        if self.horizon < 2:
            raise PreconditionError("horizon must be >= 2")

    has_change = False

    def with_horizon(self, horizon: int) -> "BootstrapScenario":
        return replace(self, horizon=horizon)

    def generate(self, replication: int = 0) -> np.ndarray:
        rng = replication_rng(self.seed, replication)
        data = np.asarray(self.history)
        return data[rng.integers(0, data.size, self.horizon)]


class _Scenario(Protocol):
    horizon: int
    seed: int
    has_change: bool

    def generate(self, replication: int = ...) -> np.ndarray: ...

    def with_horizon(self, horizon: int) -> Any: ...


# -- replication engine ------------------------------------------------------


def _alarm_times(config: DetectorConfig, scenario: _Scenario, replication: int) -> tuple[int, ...]:
    det = OnlineDetector(config)
    if config.mode is Mode.MULTI:
        det.run(scenario.generate(replication))
        return tuple(det.alarms.times)
    v = det.first_alarm(scenario.generate(replication))
    return () if v is None else (v.time,)


def run_replications(
    fn: Callable[[int], Any], replications: int, workers: int = 1
) -> list[Any]:
    """Evaluate ``fn(r)`` for ``r = 0..replications-1``; results stay in index order."""
    if workers <= 1:
        return [fn(r) for r in range(replications)]
    chunk = max(1, replications // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(replications), chunksize=chunk))


def _collect(config: DetectorConfig, scenario: _Scenario, replications: int, workers: int):
    if replications < 1:
        raise PreconditionError("need at least one replication")
    return run_replications(partial(_alarm_times, config, scenario), replications, workers)


def binomial_halfwidth(p: float, n: int, z: float = Z95) -> float:
    return z * math.sqrt(p * (1 - p) / n)


def binomial_margin(p: float, n: int) -> float:
    """Two standard errors of a Bernoulli(p) frequency over ``n`` draws."""
    return 2.0 * math.sqrt(p * (1 - p) / n)


def max_window_rate(first_alarms: Sequence[int | None], width: int, replications: int) -> float:
    """``max_v #{v < t <= v + width} / replications`` over observed alarm times."""
    times = np.sort([t for t in first_alarms if t is not None])
    if times.size == 0:
        return 0.0
    # any window can be slid so its right end sits on an alarm time
    lo = np.searchsorted(times, times - width, side="right")
    counts = np.arange(1, times.size + 1) - lo
    return float(counts.max()) / replications


def _quantiles(values: Sequence[float]) -> dict[str, float] | None:
    if len(values) == 0:
        return None
    arr = np.asarray(values, dtype=np.float64)
    q50, q90 = np.quantile(arr, [0.5, 0.9])
    return {"0.5": float(q50), "0.9": float(q90), "1.0": float(arr.max())}


@dataclass
class ExperimentReport:
    experiment: str
    mode: str
    replications: int
    horizon: int
    seed: int
    false_alarm_rate: float
    false_alarm_halfwidth: float
    arl_censored_mean: float | None = None
    censor_cap: int | None = None
    delay_quantiles: dict[str, float] | None = None
    delay_bound_used: float | None = None
    violations: int = 0
    detection_rate: float | None = None
    miss_rate: float | None = None
    envelope_failure_rate: float | None = None
    extras: dict[str, Any] = field(default_factory=dict)
    stopping_times: list[list[int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not 0.0 <= self.false_alarm_rate <= 1.0:
            raise PreconditionError("false-alarm rate outside [0, 1]")
        q = self.delay_quantiles
        if q is not None and not q["0.5"] <= q["0.9"] <= q["1.0"]:
            raise PreconditionError("delay quantiles must be nondecreasing")

    def first_alarms(self) -> list[int | None]:
        return [times[0] if times else None for times in self.stopping_times]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentReport":
        return cls(**data)


def _base_report(experiment, config, scenario, replications, times, cap=None) -> ExperimentReport:
    first = [t[0] if t else None for t in times]
    horizon = scenario.horizon
    alarms = sum(t is not None for t in first)
    rate = alarms / replications
    cap = horizon if cap is None else cap
    censored = [cap if t is None else min(t, cap) for t in first]
    return ExperimentReport(
        experiment=experiment,
        mode=config.mode.value,
        replications=replications,
        horizon=horizon,
        seed=scenario.seed,
        false_alarm_rate=rate,
        false_alarm_halfwidth=binomial_halfwidth(rate, replications),
        arl_censored_mean=float(np.mean(censored)),
        censor_cap=cap,
        stopping_times=[list(t) for t in times],
    )


# -- experiments -------------------------------------------------------------


def estimate_false_alarm(
    config: DetectorConfig, null_spec: _Scenario, replications: int, workers: int = 1
) -> ExperimentReport:
    """Fraction of no-change runs that alarm at any time up to the horizon."""
    if null_spec.has_change:
        raise PreconditionError("false-alarm estimation needs a no-change scenario")
    times = _collect(config, null_spec, replications, workers)
    report = _base_report("false_alarm", config, null_spec, replications, times)
    if config.mode is Mode.WINDOW:
        report.extras["window_width"] = config.window_gamma
        report.extras["max_window_alarm_rate"] = max_window_rate(
            report.first_alarms(), config.window_gamma, replications
        )
    return report


def estimate_arl(
    config: DetectorConfig, null_spec: _Scenario, cap: int, replications: int, workers: int = 1
) -> ExperimentReport:
    """Censored average run length plus the early-alarm frequency ``P(t <= gamma + 2)``."""
    if config.schedule.kind is not ScheduleKind.ARL:
        raise PreconditionError("ARL estimation needs an ARL-control schedule")
    if null_spec.has_change:
        raise PreconditionError("ARL estimation needs a no-change scenario")
    gamma = config.schedule.gamma
    if cap < gamma + 2:
        raise PreconditionError(f"cap must be >= gamma + 2 = {gamma + 2}")
    scenario = null_spec.with_horizon(cap)
    times = _collect(config, scenario, replications, workers)
    report = _base_report("arl", config, scenario, replications, times, cap=cap)
    first = report.first_alarms()
    p_early = sum(t is not None and t <= gamma + 2 for t in first) / replications
    p_gamma = sum(t is not None and t <= gamma for t in first) / replications
    floor = gamma * (1 - p_gamma)
    report.extras.update(
        gamma=gamma,
        p_alarm_by_gamma_plus_2=p_early,
        p_alarm_by_gamma=p_gamma,
        arl_floor=floor,
        arl_consistent=bool(report.arl_censored_mean >= floor),
    )
    return report


def _delay_log_argument(config: DetectorConfig, delta: int) -> float:
    sched = config.schedule
    if sched.kind is ScheduleKind.ARL:
        return float(sched.gamma)
    if sched.kind is ScheduleKind.WINDOW:
        return 2.0 * sched.gamma**2 / sched.alpha
    return delta / sched.alpha


def estimate_delay(
    config: DetectorConfig,
    spec: ScenarioSpec,
    replications: int,
    c_d: float = DEFAULT_C_D,
    workers: int = 1,
) -> ExperimentReport:
    """Detection delays against the envelope ``c_d * sigma**2 / kappa**2 * log(...)``.

    Single-change modes: with ``delta = eta_1 - 1`` pre-change observations a
    run is a false alarm if ``t <= delta``, a violation if ``t - delta``
    exceeds the envelope (or it never alarms although the horizon covers the
    envelope). Multi mode: a run succeeds when each change ``eta_k`` whose
    envelope fits in the horizon gets exactly one declaration in
    ``(eta_k - 1, eta_k - 1 + bound_k]`` and nothing is declared elsewhere.
    """
    if not spec.has_change:
        raise PreconditionError("delay estimation needs a scenario with a change")
    if config.mode is Mode.MULTI:
        return _estimate_multi_delay(config, spec, replications, c_d, workers)
    if len(spec.mean.change_points) != 1:
        raise PreconditionError("single-change modes need exactly one change point")
    delta = spec.mean.pre_change_size
    kappa = spec.mean.jumps[0]
    sigma = config.schedule.sigma
    bound = c_d * sigma**2 / kappa**2 * math.log(_delay_log_argument(config, delta))
    times = _collect(config, spec, replications, workers)
    report = _base_report("delay", config, spec, replications, times)
    first = report.first_alarms()
    covered = spec.horizon >= delta + bound
    false_alarms = sum(t is not None and t <= delta for t in first)
    misses = sum(t is None for t in first)
    delays = [t - delta for t in first if t is not None and t > delta]
    violations = sum(d > bound for d in delays) + (misses if covered else 0)
    report.false_alarm_rate = false_alarms / replications
    report.false_alarm_halfwidth = binomial_halfwidth(report.false_alarm_rate, replications)
    report.delay_quantiles = _quantiles(delays)
    report.delay_bound_used = bound
    report.violations = violations
    report.detection_rate = len(delays) / replications
    report.miss_rate = misses / replications
    report.envelope_failure_rate = (false_alarms + violations) / replications
    report.extras.update(delta=delta, kappa=kappa, c_d=c_d, envelope_covered=covered)
    return report


def _estimate_multi_delay(config, spec, replications, c_d, workers) -> ExperimentReport:
    sched = config.schedule
    cps = spec.mean.change_points
    spacing = spec.mean.min_spacing
    log_term = math.log(spacing / sched.alpha)
    bounds = [c_d * sched.sigma**2 / k**2 * log_term for k in spec.mean.jumps]
    times = _collect(config, spec, replications, workers)
    report = _base_report("delay", config, spec, replications, times)
    horizon = spec.horizon
    per_change = [[] for _ in cps]
    detected = [0] * len(cps)
    failures = spurious_runs = 0
    for declared in times:
        ok = True
        claimed = set()
        for k, (eta, bound) in enumerate(zip(cps, bounds)):
            last = eta - 1  # final pre-change index, as delta in the single-change case
            if last >= horizon:
                continue
            hits = [t for t in declared if last < t <= last + bound]
            claimed.update(hits)
            if hits:
                detected[k] += 1
                per_change[k].append(hits[0] - last)
            if last + bound <= horizon:
                ok &= len(hits) == 1
            else:
                ok &= len(hits) <= 1
        spurious = len(set(declared) - claimed) > 0
        spurious_runs += spurious
        failures += not (ok and not spurious)
    report.false_alarm_rate = spurious_runs / replications
    report.false_alarm_halfwidth = binomial_halfwidth(report.false_alarm_rate, replications)
    all_delays = [d for ds in per_change for d in ds]
    report.delay_quantiles = _quantiles(all_delays)
    report.delay_bound_used = max(bounds)
    report.violations = failures
    report.envelope_failure_rate = failures / replications
    report.detection_rate = sum(detected) / (replications * len(cps))
    report.extras.update(
        c_d=c_d,
        min_spacing=spacing,
        per_change=[
            {
                "eta": eta,
                "kappa": kappa,
                "bound": bound,
                "detected_fraction": detected[k] / replications,
                "delay_quantiles": _quantiles(per_change[k]),
            }
            for k, (eta, kappa, bound) in enumerate(zip(cps, spec.mean.jumps, bounds))
        ],
    )
    return report


# -- calibration -------------------------------------------------------------


def _critical_scale(config: DetectorConfig, scenario: _Scenario, upper: float, replication: int) -> float:
    """Largest ``statistic / unit_threshold`` seen before the first alarm at scale ``upper``."""
    det = OnlineDetector(config.with_scale(upper))
    worst = 0.0
    for x in scenario.generate(replication):
        v = det.step(float(x))
        if v.statistic > 0.0:
            worst = max(worst, v.statistic * upper / v.threshold)
        if v.alarm:
            break
    return worst


def critical_scales(
    config: DetectorConfig, null_spec: _Scenario, replications: int, upper: float = 10.0,
    workers: int = 1,
) -> np.ndarray:
    """Per-replication scale below which the run raises a false alarm.

    Values above ``upper`` are only known to exceed it. The empirical false
    alarm rate at scale ``c <= upper`` is ``mean(critical > c)``.
    """
    if null_spec.has_change:
        raise PreconditionError("calibration needs a no-change scenario")
    if replications < 1:
        raise PreconditionError("need at least one replication")
    fn = partial(_critical_scale, config, null_spec, upper)
    return np.asarray(run_replications(fn, replications, workers), dtype=np.float64)


def calibrate_scale(
    config: DetectorConfig,
    null_spec: _Scenario,
    target: float,
    replications: int,
    tol: float = 1e-3,
    bracket: tuple[float, float] = (0.1, 10.0),
    workers: int = 1,
) -> float:
    """Smallest scale in ``bracket`` (to within ``tol``) with false-alarm rate <= ``target``.

    All candidate scales are evaluated on the same replications, so the
    empirical rate is a nonincreasing step function of the scale and
    bisection is exact.
    """
    if not 0 < target < 1:
        raise PreconditionError("target must lie in (0, 1)")
    lo, hi = bracket
    if not 0 < lo < hi:
        raise PreconditionError("bracket must satisfy 0 < lo < hi")
    crit = critical_scales(config, null_spec, replications, upper=hi, workers=workers)

    def rate(c: float) -> float:
        return float(np.mean(crit > c))

    if rate(lo) <= target:
        return lo
    if rate(hi) > target:
        raise CalibrationError(
            f"false-alarm rate {rate(hi):.4f} at scale {hi} still exceeds target {target}"
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if rate(mid) <= target:
            hi = mid
        else:
            lo = mid
    return hi


# -- phase-transition sweep --------------------------------------------------


@dataclass
class SweepCell:
    delta: int
    kappa: float
    sigma: float
    alpha: float
    snr: float
    snr_bound: float
    feasible: bool
    detection_frequency: float
    false_alarm_frequency: float
    median_delay: float | None
    delay_rate: float | None
    empirical_delay_constant: float | None


@dataclass
class SweepReport:
    mode: str
    replications: int
    horizon: int
    seed: int
    cells: list[SweepCell]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _cell_config(config: DetectorConfig, sigma: float, alpha: float) -> DetectorConfig:
    sched = config.schedule
    if sched.kind is ScheduleKind.ARL:
        return replace(config, schedule=replace(sched, sigma=sigma))
    return replace(config, schedule=replace(sched, sigma=sigma, alpha=alpha))


def phase_transition_sweep(
    grid: Sequence[tuple[int, float, float, float]],
    config: DetectorConfig,
    replications: int,
    horizon: int = 2000,
    seed: int = 0,
    c_snr: float = DEFAULT_C_SNR,
    c_d: float = DEFAULT_C_D,
    workers: int = 1,
) -> SweepReport:
    """Detection frequency and median delay over a grid of ``(delta, kappa, sigma, alpha)``.

    ``detection_frequency`` counts any alarm within the horizon, so with
    ``kappa = 0`` it is a pure false-alarm frequency. Each cell is labelled
    with its signal-to-noise ratio against ``c_snr * log(delta / alpha)``.
    """
    cells = []
    for delta, kappa, sigma, alpha in grid:
        cfg = _cell_config(config, sigma, alpha)
        spec = ScenarioSpec.single_change(delta, kappa, horizon, sigma=sigma, seed=seed)
        first = [t[0] if t else None for t in _collect(cfg, spec, replications, workers)]
        if kappa > 0:
            feas = snr_feasibility(delta, kappa, sigma, alpha, c_snr, c_d)
            rate_unit = sigma**2 / kappa**2 * math.log(delta / alpha)
        else:
            feas = FeasibilityReport(0.0, c_snr * math.log(delta / alpha), False, math.inf)
            rate_unit = None
        delays = [t - delta for t in first if t is not None and t > delta]
        median = float(np.median(delays)) if delays else None
        cells.append(
            SweepCell(
                delta=int(delta),
                kappa=float(kappa),
                sigma=float(sigma),
                alpha=float(alpha),
                snr=feas.snr,
                snr_bound=feas.bound,
                feasible=feas.feasible,
                detection_frequency=sum(t is not None for t in first) / replications,
                false_alarm_frequency=sum(t is not None and t <= delta for t in first) / replications,
                median_delay=median,
                delay_rate=rate_unit,
                empirical_delay_constant=(
                    median / rate_unit if median is not None and rate_unit else None
                ),
            )
        )
    return SweepReport(config.mode.value, replications, horizon, seed, cells)
