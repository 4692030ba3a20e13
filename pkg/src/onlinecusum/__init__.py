"""Online CUSUM change-point detection with false-alarm and run-length control."""

from .core import (
    MeanFunction,
    PreconditionError,
    PrefixSumBuffer,
    cusum_anchored,
    cusum_two_sample,
    population_cusum,
)
from .detectors import (
    ChangePointLog,
    DetectorConfig,
    DetectorHaltedError,
    Mode,
    OnlineDetector,
    Verdict,
)
from .montecarlo import (
    CalibrationError,
    ExperimentReport,
    Noise,
    ScenarioSpec,
    calibrate_scale,
    estimate_arl,
    estimate_delay,
    estimate_false_alarm,
    gen_piecewise,
    phase_transition_sweep,
)
from .thresholds import ScheduleKind, ThresholdSchedule, snr_feasibility

__version__ = "0.1.0"
