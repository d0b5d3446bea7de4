"""Trace container, CSV persistence, chronological splits and standardization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "Trace",
    "TraceFormatError",
    "SplitSpec",
    "Standardizer",
    "write_trace",
    "read_trace",
    "split_chronological",
    "fit_standardizer",
]

DEFAULT_START = datetime(2024, 1, 1)
HEADER = "timestamp,demand"


class TraceFormatError(ValueError):
    """Raised when a trace file cannot be parsed."""


@dataclass(frozen=True)
class Trace:
    """Evenly spaced demand series (Mbps averaged over each tick)."""

    values: np.ndarray
    granularity_ms: int = 10
    start_time: datetime = field(default=DEFAULT_START)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 1:
            raise ValueError("trace needs a 1-d array with at least one value")
        if not np.all(np.isfinite(values)):
            raise ValueError("trace values must be finite")
        if np.any(values < 0):
            raise ValueError("trace values must be non-negative")
        if int(self.granularity_ms) <= 0:
            raise ValueError(f"granularity_ms must be positive, got {self.granularity_ms}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "granularity_ms", int(self.granularity_ms))

    def __len__(self) -> int:
        return self.values.size

    def timestamps(self) -> list[datetime]:
        step = timedelta(milliseconds=self.granularity_ms)
        return [self.start_time + i * step for i in range(len(self))]

    def timestamp_ms(self) -> np.ndarray:
        """Milliseconds since ``start_time`` for every tick."""
        return np.arange(len(self), dtype=np.int64) * self.granularity_ms

    def slice(self, start: int, stop: int) -> "Trace":
        return Trace(
            self.values[start:stop],
            self.granularity_ms,
            self.start_time + timedelta(milliseconds=start * self.granularity_ms),
        )


def _fmt_time(t: datetime) -> str:
    return t.isoformat(timespec="milliseconds")


def write_trace(trace: Trace, path: str | Path) -> None:
    path = Path(path)
    step = timedelta(milliseconds=trace.granularity_ms)
    lines = [HEADER]
    t = trace.start_time
    for v in trace.values:
        # repr gives the shortest string that round-trips exactly
        lines.append(f"{_fmt_time(t)},{float(v)!r}")
        t += step
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc


def read_trace(path: str | Path) -> Trace:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read trace from {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise TraceFormatError(f"{path}: missing '{HEADER}' header")
    times: list[datetime] = []
    values: list[float] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise TraceFormatError(f"{path}:{lineno}: expected 2 columns, got {len(parts)}")
        try:
            times.append(datetime.fromisoformat(parts[0].strip()))
            values.append(float(parts[1]))
        except ValueError as exc:
            raise TraceFormatError(f"{path}:{lineno}: {exc}") from exc
    if not values:
        raise TraceFormatError(f"{path}: no data rows")

    if len(times) == 1:
        granularity = 10
    else:
        granularity = round((times[1] - times[0]) / timedelta(milliseconds=1))
        if granularity <= 0:
            raise TraceFormatError(f"{path}: non-increasing timestamps at line 3")
        step = timedelta(milliseconds=granularity)
        for i in range(1, len(times)):
            if times[i] - times[i - 1] != step:
                raise TraceFormatError(
                    f"{path}:{i + 2}: uneven spacing (expected {granularity} ms)"
                )
    try:
        return Trace(np.array(values), granularity, times[0])
    except ValueError as exc:
        raise TraceFormatError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.7
    val_frac: float = 0.1
    test_frac: float = 0.2

    def __post_init__(self) -> None:
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if min(fracs) <= 0:
            raise ValueError("split fractions must be positive")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fracs)}")


def split_chronological(trace: Trace, spec: SplitSpec = SplitSpec()) -> tuple[Trace, Trace, Trace]:
    """Contiguous (train, val, test) partition; flooring remainder goes to train."""
    n = len(trace)
    if n < 10:
        raise ValueError(f"need at least 10 values to split, got {n}")
    n_val = math.floor(n * spec.val_frac)
    n_test = math.floor(n * spec.test_frac)
    n_train = n - n_val - n_test
    a, b = n_train, n_train + n_val
    return trace.slice(0, a), trace.slice(a, b), trace.slice(b, n)


@dataclass(frozen=True)
class Standardizer:
    mean: float
    std: float

    def __post_init__(self) -> None:
        if not self.std > 0:
            raise ValueError("standardizer std must be positive")

    def apply(self, values: Sequence[float] | np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def invert(self, values: Sequence[float] | np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.std + self.mean


def fit_standardizer(train: Trace | np.ndarray) -> Standardizer:
    """Mean and sample (n-1) standard deviation of the training split."""
    x = train.values if isinstance(train, Trace) else np.asarray(train, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least 2 values to fit a standardizer")
    std = float(np.std(x, ddof=1))
    if std == 0.0:
        raise ValueError("cannot standardize a constant series")
    return Standardizer(float(np.mean(x)), std)
