"""Prefix-sum storage and exact CUSUM contrasts.

Both the two-sample statistic and the anchored (three-index) statistic are
evaluated from stored partial sums, so a single split costs O(1) and a scan
over all splits at time ``t`` costs O(t).
"""

from __future__ import annotations

import bisect
import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "PreconditionError",
    "PrefixSumBuffer",
    "MeanFunction",
    "push",
    "contrast",
    "cusum_two_sample",
    "cusum_anchored",
    "anchored_scan",
    "population_cusum",
]


class PreconditionError(ValueError):
    """Raised when an index or parameter contract is violated."""


class PrefixSumBuffer:
    """Growable array of running sums ``sums[s] = x_1 + ... + x_s``.

    ``sums[0]`` is always 0. Every push performs exactly one floating-point
    addition onto the previous trailing sum, in ingestion order.
    """

    __slots__ = ("_sums", "_count")

    def __init__(self, capacity: int = 64) -> None:
        self._sums = np.zeros(max(int(capacity), 2), dtype=np.float64)
        self._count = 0

    @classmethod
    def from_values(cls, values: Sequence[float] | np.ndarray) -> "PrefixSumBuffer":
        buf = cls(capacity=len(values) + 1)
        buf.extend(values)
        return buf

    @property
    def count(self) -> int:
        return self._count

    @property
    def sums(self) -> np.ndarray:
        """Read-only view of ``sums[0..count]``."""
        view = self._sums[: self._count + 1]
        view.flags.writeable = False
        return view

    def __len__(self) -> int:
        return self._count + 1

    def __getitem__(self, s: int) -> float:
        if not 0 <= s <= self._count:
            raise IndexError(f"prefix index {s} outside [0, {self._count}]")
        return float(self._sums[s])

    def _reserve(self, n: int) -> None:
        need = self._count + 1 + n
        if need > self._sums.size:
            grown = np.zeros(max(need, 2 * self._sums.size), dtype=np.float64)
            grown[: self._count + 1] = self._sums[: self._count + 1]
            self._sums = grown

    def push(self, x: float) -> "PrefixSumBuffer":
        self._reserve(1)
        self._sums[self._count + 1] = self._sums[self._count] + x
        self._count += 1
        return self

    def extend(self, values: Sequence[float] | np.ndarray) -> "PrefixSumBuffer":
        """Push many values; bit-identical to repeated :meth:`push`."""
        values = np.asarray(values, dtype=np.float64)
        n = values.size
        if n == 0:
            return self
        self._reserve(n)
        seg = self._sums[self._count : self._count + n + 1]
        # add.accumulate is strictly sequential, unlike np.sum
        seg[1:] = values
        np.add.accumulate(seg, out=seg)
        self._count += n
        return self

    def clear(self) -> None:
        self._sums[:] = 0.0
        self._count = 0

    def __repr__(self) -> str:
        return f"PrefixSumBuffer(count={self._count})"


def push(buffer: PrefixSumBuffer, x: float) -> PrefixSumBuffer:
    return buffer.push(x)


@dataclass(frozen=True)
class MeanFunction:
    """Piecewise-constant mean: level ``levels[k]`` holds on ``[cp[k-1], cp[k] - 1]``.

    Indices are 1-based with an implicit first change point at 1, so an
    observation ``l`` has mean ``levels[k]`` where ``k`` is the number of
    change points ``<= l``.
    """

    change_points: tuple[int, ...]
    levels: tuple[float, ...]

    def __post_init__(self) -> None:
        cps = tuple(int(c) for c in self.change_points)
        levels = tuple(float(v) for v in self.levels)
        object.__setattr__(self, "change_points", cps)
        object.__setattr__(self, "levels", levels)
        if len(levels) != len(cps) + 1:
            raise PreconditionError("need exactly one more level than change points")
        if any(c < 2 for c in cps):
            raise PreconditionError("change points must be >= 2")
        if any(b <= a for a, b in zip(cps, cps[1:])):
            raise PreconditionError("change points must be strictly increasing")
        if any(a == b for a, b in zip(levels, levels[1:])):
            raise PreconditionError("adjacent levels must differ")

    @classmethod
    def constant(cls, level: float = 0.0) -> "MeanFunction":
        return cls((), (level,))

    @classmethod
    def single(cls, delta: int, kappa: float, base: float = 0.0) -> "MeanFunction":
        """``delta`` pre-change observations, then a jump of size ``kappa``."""
        if delta < 1:
            raise PreconditionError("delta must be >= 1")
        if kappa == 0:
            return cls.constant(base)
        return cls((delta + 1,), (base, base + kappa))

    @property
    def jumps(self) -> tuple[float, ...]:
        return tuple(abs(b - a) for a, b in zip(self.levels, self.levels[1:]))

    @property
    def min_spacing(self) -> int | None:
        """Smallest gap between consecutive change points, counting 1 as the first."""
        if not self.change_points:
            return None
        pts = (1,) + self.change_points
        return min(b - a for a, b in zip(pts, pts[1:]))

    @property
    def pre_change_size(self) -> int | None:
        """Number of observations before the first change (``eta_1 - 1``)."""
        return self.change_points[0] - 1 if self.change_points else None

    def mean_at(self, l: int) -> float:
        if l < 1:
            raise PreconditionError("observation indices start at 1")
        return self.levels[bisect.bisect_right(self.change_points, l)]

    def means(self, horizon: int) -> np.ndarray:
        idx = np.searchsorted(self.change_points, np.arange(1, horizon + 1), side="right")
        return np.asarray(self.levels, dtype=np.float64)[idx]


def contrast(left_sum, right_sum, n_left, n_right):
    """Weighted absolute difference between a left block sum and a right block sum.

    Evaluated as ``sqrt(nl * nr / n) * |left / nl - right / nr|``, which is the
    usual two-weight form rearranged so that a constant segment gives exactly 0.
    Shared by every CUSUM variant so that equal inputs give bit-equal outputs.
    Accepts scalars or aligned numpy arrays; counts are converted to float64,
    which is exact for counts below 2**26.
    """
    nl = np.asarray(n_left, dtype=np.float64)
    nr = np.asarray(n_right, dtype=np.float64)
    return np.sqrt(nl * nr / (nl + nr)) * np.abs(left_sum / nl - right_sum / nr)


def _check_indices(buffer: PrefixSumBuffer, e: int, s: int, t: int) -> None:
    if not (0 <= e < s < t <= buffer.count):
        raise PreconditionError(
            f"need 0 <= e < s < t <= {buffer.count}, got e={e}, s={s}, t={t}"
        )


def cusum_two_sample(buffer: PrefixSumBuffer, s: int, t: int) -> float:
    """Two-sample CUSUM of ``x_1..x_s`` against ``x_{s+1}..x_t``."""
    if s < 1:
        raise PreconditionError(f"need s >= 1, got s={s}")
    _check_indices(buffer, 0, s, t)
    S = buffer._sums
    return float(contrast(S[s] - S[0], S[t] - S[s], s, t - s))


def cusum_anchored(buffer: PrefixSumBuffer, e: int, s: int, t: int) -> float:
    """CUSUM of ``x_{e+1}..x_s`` against ``x_{s+1}..x_t``; ignores data up to ``e``."""
    _check_indices(buffer, e, s, t)
    S = buffer._sums
    return float(contrast(S[s] - S[e], S[t] - S[s], s - e, t - s))


def anchored_scan(buffer: PrefixSumBuffer, e: int, splits: np.ndarray, t: int) -> np.ndarray:
    """Vectorised :func:`cusum_anchored` over an array of splits (unchecked)."""
    S = buffer._sums
    left = S[splits] - S[e]
    right = S[t] - S[splits]
    return contrast(left, right, splits - e, t - splits)


def population_cusum(f: MeanFunction, s: int, t: int, e: int = 0) -> float:
    """Noiseless counterpart of :func:`cusum_anchored` computed from the mean levels."""
    if not 0 <= e < s < t:
        raise PreconditionError(f"need 0 <= e < s < t, got e={e}, s={s}, t={t}")
    prefix = list(itertools.accumulate((f.mean_at(l) for l in range(1, t + 1)), initial=0.0))
    return float(contrast(prefix[s] - prefix[e], prefix[t] - prefix[s], s - e, t - s))
