"""Command-line shell: stream ingestion, online detection and experiment runners.

Subcommands::

    onlinecusum detect    [INPUT|-]  stream observations, emit JSONL alarm events
    onlinecusum simulate             Monte Carlo false-alarm / ARL / delay report
    onlinecusum calibrate            simulation-calibrated threshold scale
    onlinecusum sweep                phase-transition grid report

Options may also come from a JSON file given with ``--config``; flags win.
Exit status of ``detect``: 0 no alarm, 2 alarm(s) declared, 1 error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, fields, replace
from typing import IO, Any, Iterable, Iterator

from .core import PreconditionError
from .detectors import DetectorConfig, Mode, OnlineDetector
from .montecarlo import (
    BootstrapScenario,
    CalibrationError,
    NoiseFamily,
    ScenarioSpec,
    calibrate_scale,
    estimate_arl,
    estimate_delay,
    estimate_false_alarm,
    phase_transition_sweep,
)
from .thresholds import ThresholdSchedule

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ALARM = 2

EVENT_KEYS = ("t", "s", "stat", "thr", "mode")


class StreamParseError(ValueError):
    def __init__(self, message: str, lineno: int | None = None) -> None:
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno is not None else message)


class StreamValidationError(StreamParseError):
    """Parsed value is not a finite real number."""


@dataclass(frozen=True)
class StreamRecord:
    index: int | None
    value: float


def _finite(value: float, lineno: int | None) -> float:
    if not math.isfinite(value):
        raise StreamValidationError(f"non-finite observation {value!r}", lineno)
    return value


def ingest_record(line: str, fmt: str = "csv", lineno: int | None = None) -> StreamRecord:
    """Parse one observation. CSV uses the last field, JSONL the key ``"x"``."""
    text = line.strip()
    if not text:
        raise StreamParseError("empty line", lineno)
    if fmt == "csv":
        row = next(csv.reader([text]))
        try:
            value = float(row[-1])
        except (ValueError, IndexError):
            raise StreamParseError(f"last field is not numeric: {text!r}", lineno) from None
        index = None
        if len(row) > 1:
            with contextlib.suppress(ValueError):
                index = int(row[0])
        return StreamRecord(index, _finite(value, lineno))
    if fmt == "jsonl":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise StreamParseError(f"invalid JSON ({exc.msg})", lineno) from None
        if not isinstance(obj, dict) or "x" not in obj:
            raise StreamParseError('expected an object with key "x"', lineno)
        value = obj["x"]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise StreamParseError(f'"x" is not a number: {value!r}', lineno)
        index = obj.get("t", obj.get("index"))
        if isinstance(index, bool) or not isinstance(index, int):
            index = None
        return StreamRecord(index, _finite(float(value), lineno))
    raise PreconditionError(f"unknown input format {fmt!r}")


def read_stream(lines: Iterable[str], fmt: str) -> Iterator[StreamRecord]:
    """Yield records, skipping blank lines and ``#`` comments."""
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        yield ingest_record(stripped, fmt, lineno)


@dataclass
class RunConfig:
    mode: str = "full"
    threshold: str = "alpha"
    sigma: float | None = None
    alpha: float | None = 0.05
    gamma: int | None = None
    scale: float = 1.0
    window_gamma: int | None = None
    horizon: int | None = None
    format: str = "csv"
    output: str | None = None
    seed: int = 0
    # experiment options (simulate / calibrate / sweep)
    experiment: str = "false-alarm"
    replications: int = 200
    delta: int | None = None
    kappa: float | None = None
    noise: str = "gaussian"
    noise_scale: float | None = None
    cap: int | None = None
    c_d: float = 10.0
    target: float = 0.05
    tol: float = 1e-3
    history: str | None = None
    grid: list[list[float]] | None = None
    workers: int = 1

    @classmethod
    def from_mapping(cls, data: dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise PreconditionError(f"unknown configuration keys: {', '.join(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def schedule(self) -> ThresholdSchedule:
        if self.sigma is None:
            raise PreconditionError("sigma is required (--sigma)")
        mode = Mode(self.mode)
        if mode is Mode.WINDOW:
            gamma = self.window_gamma if self.window_gamma is not None else self.gamma
            if gamma is None:
                raise PreconditionError("window mode needs --gamma")
            return ThresholdSchedule.window_control(self.sigma, self.alpha, gamma, self.scale)
        if mode is Mode.MULTI:
            return ThresholdSchedule.multi_control(self.sigma, self.alpha, self.scale)
        if self.threshold == "arl":
            if mode is not Mode.FULL:
                raise PreconditionError("ARL thresholds are only available in full mode")
            if self.gamma is None:
                raise PreconditionError("ARL threshold needs --gamma")
            return ThresholdSchedule.arl_control(self.sigma, self.gamma, self.scale)
        if self.threshold != "alpha":
            raise PreconditionError(f"unknown threshold kind {self.threshold!r}")
        return ThresholdSchedule.alpha_control(self.sigma, self.alpha, self.scale)

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(Mode(self.mode), self.schedule())


def format_event(verdict, mode: str) -> str:
    event = {
        "t": verdict.time,
        "s": verdict.argmax_split,
        "stat": verdict.statistic,
        "thr": verdict.threshold,
        "mode": mode,
    }
    return json.dumps(event)


def run_detection(config: RunConfig, lines: Iterable[str], out: IO[str]) -> tuple[int, list[str]]:
    """Feed a stream into the configured detector; write one JSONL line per alarm.

    Single-change modes stop reading at their alarm. Returns the exit status
    and the emitted event lines.
    """
    detector = OnlineDetector(config.detector_config())
    mode = detector.mode.value
    events = []
    for n, record in enumerate(read_stream(lines, config.format), start=1):
        if config.horizon is not None and n > config.horizon:
            break
        verdict = detector.step(record.value)
        if verdict.alarm:
            line = format_event(verdict, mode)
            events.append(line)
            out.write(line + "\n")
            out.flush()
            if detector.halted:
                break
    return (EXIT_ALARM if events else EXIT_OK), events


def parse_event(line: str) -> dict[str, Any]:
    """Validate one emitted alarm event against the published schema."""
    obj = json.loads(line)
    if not isinstance(obj, dict) or tuple(obj) != EVENT_KEYS:
        raise StreamParseError(f"event keys must be {EVENT_KEYS}")
    if not all(isinstance(obj[k], int) and not isinstance(obj[k], bool) for k in ("t", "s")):
        raise StreamParseError("event t and s must be integers")
    if not all(isinstance(obj[k], float) for k in ("stat", "thr")):
        raise StreamParseError("event stat and thr must be numbers")
    Mode(obj["mode"])
    return obj


# -- experiments -------------------------------------------------------------


def _load_history(path: str) -> list[float]:
    fmt = "jsonl" if path.endswith((".jsonl", ".json")) else "csv"
    with open(path) as fh:
        return [r.value for r in read_stream(fh, fmt)]


def _scenario(cfg: RunConfig, horizon: int) -> ScenarioSpec:
    noise_scale = cfg.noise_scale if cfg.noise_scale is not None else cfg.sigma
    family = NoiseFamily(cfg.noise)
    if cfg.delta is None or not cfg.kappa:
        return ScenarioSpec.null(horizon, noise_scale, cfg.seed, family=family)
    return ScenarioSpec.single_change(cfg.delta, cfg.kappa, horizon, noise_scale, cfg.seed, family)


def simulate(cfg: RunConfig) -> dict[str, Any]:
    det = cfg.detector_config()
    horizon = cfg.horizon or 2000
    if cfg.experiment == "false-alarm":
        if cfg.history:
            spec = BootstrapScenario(_load_history(cfg.history), horizon, cfg.seed)
        else:
            spec = _scenario(replace(cfg, delta=None), horizon)
        report = estimate_false_alarm(det, spec, cfg.replications, cfg.workers)
    elif cfg.experiment == "arl":
        cap = cfg.cap if cfg.cap is not None else 2 * (det.schedule.gamma or 0) + 2
        spec = _scenario(replace(cfg, delta=None), cap)
        report = estimate_arl(det, spec, cap, cfg.replications, cfg.workers)
    elif cfg.experiment == "delay":
        if cfg.delta is None or not cfg.kappa:
            raise PreconditionError("delay experiment needs --delta and --kappa")
        report = estimate_delay(det, _scenario(cfg, horizon), cfg.replications, cfg.c_d, cfg.workers)
    else:
        raise PreconditionError(f"unknown experiment {cfg.experiment!r}")
    return report.to_dict()


def calibrate(cfg: RunConfig) -> dict[str, Any]:
    det = cfg.detector_config()
    horizon = cfg.horizon or 2000
    if cfg.history:
        spec = BootstrapScenario(_load_history(cfg.history), horizon, cfg.seed)
    else:
        spec = _scenario(replace(cfg, delta=None), horizon)
    scale = calibrate_scale(det, spec, cfg.target, cfg.replications, tol=cfg.tol, workers=cfg.workers)
    return {
        "scale": scale,
        "target": cfg.target,
        "replications": cfg.replications,
        "horizon": horizon,
        "seed": cfg.seed,
        "mode": det.mode.value,
    }


def sweep(cfg: RunConfig) -> dict[str, Any]:
    if not cfg.grid:
        raise PreconditionError("sweep needs a grid of [delta, kappa, sigma, alpha] cells")
    det = cfg.detector_config()
    grid = [(int(d), float(k), float(s), float(a)) for d, k, s, a in cfg.grid]
    report = phase_transition_sweep(
        grid, det, cfg.replications, horizon=cfg.horizon or 2000, seed=cfg.seed,
        c_d=cfg.c_d, workers=cfg.workers,
    )
    return report.to_dict()


# -- argument parsing ----------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="JSON file with default options")
    p.add_argument("--mode", choices=[m.value for m in Mode], default=S)
    p.add_argument("--threshold", choices=["alpha", "arl"], default=S,
                   help="threshold family in full mode")
    p.add_argument("--sigma", type=float, default=S, help="sub-Gaussian noise factor")
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--gamma", type=int, default=S, help="ARL target or window length")
    p.add_argument("--scale", type=float, default=S, help="multiplier on the threshold constant")
    p.add_argument("--horizon", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--output", "-o", default=S)


class _Parser(argparse.ArgumentParser):
    # exit status 2 is reserved for "alarm declared"
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = _Parser(prog="onlinecusum", description="Online CUSUM change-point detection.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="run a detector over a CSV/JSONL stream")
    _add_common(p)
    p.add_argument("input", nargs="?", default="-", help="input file, '-' for stdin")
    p.add_argument("--format", choices=["csv", "jsonl"], default=S)

    p = sub.add_parser("simulate", help="Monte Carlo experiment report")
    _add_common(p)
    p.add_argument("--experiment", choices=["false-alarm", "arl", "delay"], default=S)
    p.add_argument("--replications", "-R", type=int, default=S)
    p.add_argument("--delta", type=int, default=S, help="pre-change sample size")
    p.add_argument("--kappa", type=float, default=S, help="jump size")
    p.add_argument("--noise", choices=[f.value for f in NoiseFamily], default=S)
    p.add_argument("--noise-scale", dest="noise_scale", type=float, default=S)
    p.add_argument("--cap", type=int, default=S, help="censoring cap for ARL runs")
    p.add_argument("--c-d", dest="c_d", type=float, default=S, help="delay envelope constant")
    p.add_argument("--history", default=S, help="bootstrap null data (CSV/JSONL)")
    p.add_argument("--workers", type=int, default=S)

    p = sub.add_parser("calibrate", help="calibrate the threshold scale by simulation")
    _add_common(p)
    p.add_argument("--target", type=float, default=S, help="target false-alarm rate")
    p.add_argument("--replications", "-R", type=int, default=S)
    p.add_argument("--tol", type=float, default=S)
    p.add_argument("--noise", choices=[f.value for f in NoiseFamily], default=S)
    p.add_argument("--noise-scale", dest="noise_scale", type=float, default=S)
    p.add_argument("--history", default=S, help="bootstrap null data (CSV/JSONL)")
    p.add_argument("--workers", type=int, default=S)

    p = sub.add_parser("sweep", help="phase-transition sweep over (delta, kappa, sigma, alpha)")
    _add_common(p)
    p.add_argument("--grid", type=json.loads, default=S,
                   help='JSON list of [delta, kappa, sigma, alpha] cells')
    p.add_argument("--replications", "-R", type=int, default=S)
    p.add_argument("--c-d", dest="c_d", type=float, default=S)
    p.add_argument("--workers", type=int, default=S)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    options = dict(vars(args))
    options.pop("command", None)
    options.pop("input", None)
    merged: dict[str, Any] = {}
    path = options.pop("config", None)
    if path:
        with open(path) as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise PreconditionError("config file must contain a JSON object")
        merged.update(loaded)
    merged.update(options)
    return RunConfig.from_mapping(merged)


@contextlib.contextmanager
def _open_out(path: str | None):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w") as fh:
            yield fh


@contextlib.contextmanager
def _open_in(path: str):
    if path == "-":
        yield sys.stdin
    else:
        with open(path) as fh:
            yield fh


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "detect":
            with _open_in(args.input) as src, _open_out(cfg.output) as out:
                status, _ = run_detection(cfg, src, out)
            return status
        runner = {"simulate": simulate, "calibrate": calibrate, "sweep": sweep}[args.command]
        doc = runner(cfg)
        with _open_out(cfg.output) as out:
            out.write(json.dumps(doc) + "\n")
        return EXIT_OK
    except (OSError, ValueError, CalibrationError, RuntimeError) as exc:
        print(f"onlinecusum: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
