"""Calendar features down to the millisecond, each scaled to [-0.5, 0.5]."""

from __future__ import annotations

from datetime import datetime

import numpy as np

FEATURE_NAMES = ("month", "day", "weekday", "hour", "minute", "second", "millisecond")
N_TIME_FEATURES = len(FEATURE_NAMES)

_DAY_MS = 86_400_000


def time_embed(timestamps, granularity_ms: int | None = None) -> np.ndarray:
    """Feature matrix ``(n, 7)`` for a sequence of datetimes.

    With ``granularity_ms`` the spacing is taken as given instead of being
    recomputed from every timestamp.
    """
    ts = list(timestamps)
    if not ts:
        return np.zeros((0, N_TIME_FEATURES))
    if granularity_ms is not None:
        offsets = np.arange(len(ts), dtype=np.int64) * int(granularity_ms)
    else:
        offsets = np.array([round((t - ts[0]).total_seconds() * 1000) for t in ts], dtype=np.int64)
    return calendar_features(ts[0], offsets)


def calendar_features(start: datetime, offsets_ms) -> np.ndarray:
    """Features for ``start + offsets_ms`` (integer milliseconds), vectorized."""
    offsets = np.asarray(offsets_ms, dtype=np.int64)
    base_ms = (
        ((start.hour * 60 + start.minute) * 60 + start.second) * 1000 + start.microsecond // 1000
    )
    total = base_ms + offsets
    day_offset = total // _DAY_MS
    in_day = total % _DAY_MS

    hour = in_day // 3_600_000
    minute = (in_day // 60_000) % 60
    second = (in_day // 1000) % 60
    ms = in_day % 1000

    day0 = np.datetime64(start.date(), "D")
    days = day0 + day_offset.astype("timedelta64[D]")
    months = days.astype("datetime64[M]")
    month = months.astype(np.int64) % 12 + 1
    dom = (days - months.astype("datetime64[D]")).astype(np.int64) + 1
    weekday = (days.astype(np.int64) - 4) % 7  # 1970-01-01 was a Thursday; Monday = 0

    return np.column_stack(
        [
            (month - 1) / 11.0 - 0.5,
            (dom - 1) / 30.0 - 0.5,
            weekday / 6.0 - 0.5,
            hour / 23.0 - 0.5,
            minute / 59.0 - 0.5,
            second / 59.0 - 0.5,
            ms / 999.0 - 0.5,
        ]
    ).astype(np.float64)
