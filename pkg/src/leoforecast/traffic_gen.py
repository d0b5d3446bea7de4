"""Self-similar demand from superposed heavy-tailed ON/OFF sources.

Each source alternates ON and OFF periods whose lengths are Pareto
distributed; summing many such binary series gives an aggregate whose
Hurst parameter is ``(3 - a_min) / 2`` for the smallest shape ``a_min``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .trace_io import Trace

__all__ = [
    "ParetoSpec",
    "SourceSpec",
    "ScenarioSpec",
    "SCENARIOS",
    "WARMUP_TICKS",
    "pareto_sample",
    "generate_source",
    "superpose",
    "aggregate",
    "hurst_from_shape",
    "scenario",
    "generate_scenario",
]

log = logging.getLogger(__name__)

WARMUP_TICKS = 10_000
BASE_TICK_MS = 10

# name -> (number of sources, Pareto shape)
SCENARIOS: dict[str, tuple[int, float]] = {
    "high": (750, 1.04),
    "medium": (500, 1.6),
    "low": (250, 1.9),
}


@dataclass(frozen=True)
class ParetoSpec:
    shape_a: float
    scale_xm: float = 1.0

    def __post_init__(self) -> None:
        if not self.shape_a > 1:
            raise ValueError(f"Pareto shape must exceed 1 for a finite mean, got {self.shape_a}")
        if not self.scale_xm >= 1:
            raise ValueError(f"Pareto scale must be at least one tick, got {self.scale_xm}")

    @property
    def mean(self) -> float:
        return self.shape_a * self.scale_xm / (self.shape_a - 1)


@dataclass(frozen=True)
class SourceSpec:
    on: ParetoSpec
    off: ParetoSpec
    rate_mbps: float = 1.0

    def __post_init__(self) -> None:
        if not self.rate_mbps > 0:
            raise ValueError("rate_mbps must be positive")

    @property
    def shape_min(self) -> float:
        return min(self.on.shape_a, self.off.shape_a)


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    num_sources_M: int
    shape_a: float
    tick_ms: int = BASE_TICK_MS
    num_ticks: int = 60_000
    seed: int = 0
    rate_mbps: float = 1.0
    scale_xm: float = 1.0
    warmup_ticks: int = field(default=WARMUP_TICKS)

    def __post_init__(self) -> None:
        if self.num_sources_M < 1 or self.num_ticks < 1 or self.tick_ms < 1:
            raise ValueError("num_sources_M, num_ticks and tick_ms must be positive")
        if not 1 < self.shape_a < 2:
            raise ValueError(
                f"shape_a={self.shape_a} gives H outside (0.5, 1); scenarios need 1 < a < 2"
            )

    @property
    def hurst(self) -> float:
        return hurst_from_shape(self.shape_a)

    def source_spec(self) -> SourceSpec:
        period = ParetoSpec(self.shape_a, self.scale_xm)
        return SourceSpec(period, period, self.rate_mbps)


def scenario(name: str, num_ticks: int = 60_000, seed: int = 0, **overrides) -> ScenarioSpec:
    """Preset for the ``high``/``medium``/``low`` demand intervals."""
    try:
        m, a = SCENARIOS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
    return ScenarioSpec(name, m, a, num_ticks=num_ticks, seed=seed, **overrides)


def pareto_sample(spec: ParetoSpec, u: float | np.ndarray) -> float | np.ndarray:
    """Inverse-CDF Pareto draw: ``xm * u**(-1/a)`` for ``u`` in (0, 1]."""
    arr = np.asarray(u, dtype=np.float64)
    if np.any(~((arr > 0) & (arr <= 1))):
        raise ValueError("u must lie in (0, 1]")
    out = spec.scale_xm * arr ** (-1.0 / spec.shape_a)
    return float(out) if out.ndim == 0 else out


def _durations(spec: ParetoSpec, rng: np.random.Generator, size: int, cap: int) -> np.ndarray:
    u = 1.0 - rng.random(size)  # (0, 1]
    d = np.ceil(pareto_sample(spec, u))
    # cap before the int cast: heavy tails overflow int64 otherwise
    return np.minimum(d, cap).astype(np.int64)


def _on_intervals(
    spec: SourceSpec, num_ticks: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Start/stop tick indices of every ON run inside ``[0, num_ticks)``."""
    state_on = bool(rng.random() < 0.5)
    mean_cycle = spec.on.mean + spec.off.mean
    chunk = max(16, int(1.2 * num_ticks / mean_cycle) + 16)
    starts: list[np.ndarray] = []
    stops: list[np.ndarray] = []
    t = 0
    while t < num_ticks:
        first, second = (spec.on, spec.off) if state_on else (spec.off, spec.on)
        d1 = _durations(first, rng, chunk, num_ticks)
        d2 = _durations(second, rng, chunk, num_ticks)
        lengths = np.empty(2 * chunk, dtype=np.int64)
        lengths[0::2] = d1
        lengths[1::2] = d2
        ends = t + np.cumsum(lengths)
        begins = ends - lengths
        on_slot = slice(0, None, 2) if state_on else slice(1, None, 2)
        b, e = begins[on_slot], ends[on_slot]
        keep = b < num_ticks
        starts.append(b[keep])
        stops.append(np.minimum(e[keep], num_ticks))
        t = int(ends[-1])
        # both halves of the chunk were consumed, so the next chunk starts in the same state
    return np.concatenate(starts), np.concatenate(stops)


def generate_source(spec: SourceSpec, num_ticks: int, rng: np.random.Generator) -> np.ndarray:
    """Binary ON/OFF series of length ``num_ticks`` (1 while ON).

    The initial state is a fair coin flip followed by a full-length first
    period. Period lengths are Pareto draws rounded up to whole ticks.
    """
    if num_ticks < 1:
        raise ValueError("num_ticks must be at least 1")
    starts, stops = _on_intervals(spec, num_ticks, rng)
    edges = np.zeros(num_ticks + 1, dtype=np.int64)
    np.add.at(edges, starts, 1)
    np.add.at(edges, stops, -1)
    return np.cumsum(edges[:-1]).astype(np.int8)


def superpose(
    sources: Sequence[np.ndarray] | Iterable[np.ndarray],
    rate_mbps: float = 1.0,
    granularity_ms: int = BASE_TICK_MS,
) -> Trace:
    """Per-tick demand ``rate_mbps * sum_m W_m(t)``."""
    total: np.ndarray | None = None
    for w in sources:
        w = np.asarray(w)
        if total is None:
            total = w.astype(np.int64)
        elif w.shape != total.shape:
            raise ValueError(f"source length mismatch: {w.shape} vs {total.shape}")
        else:
            total = total + w
    if total is None:
        raise ValueError("need at least one source")
    return Trace(rate_mbps * total.astype(np.float64), granularity_ms)


def aggregate(trace: Trace, m: int) -> Trace:
    """Block means over non-overlapping windows of ``m`` ticks."""
    if m < 1:
        raise ValueError(f"aggregation level must be >= 1, got {m}")
    n_blocks = len(trace) // m
    dropped = len(trace) - n_blocks * m
    if dropped:
        log.warning("aggregate: dropping %d trailing ticks (m=%d)", dropped, m)
    if n_blocks == 0:
        raise ValueError(f"trace of length {len(trace)} is shorter than one block of {m}")
    x = trace.values[: n_blocks * m].reshape(n_blocks, m).mean(axis=1)
    return Trace(x, trace.granularity_ms * m, trace.start_time)


def hurst_from_shape(a: float) -> float:
    if not 1 < a < 3:
        raise ValueError(f"shape must lie in (1, 3), got {a}")
    return (3.0 - a) / 2.0


def generate_scenario(spec: ScenarioSpec) -> Trace:
    """Aggregate demand trace at ``spec.tick_ms`` granularity.

    Sources get independent child streams of ``spec.seed``. A warm-up of
    ``spec.warmup_ticks`` base ticks is simulated and discarded. If
    ``tick_ms`` is a multiple of the 10 ms base tick, the base-rate trace is
    block-averaged so the result still has ``num_ticks`` samples.
    """
    if spec.tick_ms % BASE_TICK_MS:
        raise ValueError(f"tick_ms must be a multiple of {BASE_TICK_MS}")
    factor = spec.tick_ms // BASE_TICK_MS
    base_ticks = spec.num_ticks * factor
    total_ticks = spec.warmup_ticks + base_ticks
    src = spec.source_spec()
    children = np.random.SeedSequence(spec.seed).spawn(spec.num_sources_M)

    counts = np.zeros(total_ticks + 1, dtype=np.int64)
    for child in children:
        rng = np.random.Generator(np.random.Philox(child))
        starts, stops = _on_intervals(src, total_ticks, rng)
        np.add.at(counts, starts, 1)
        np.add.at(counts, stops, -1)
    active = np.cumsum(counts[:-1])[spec.warmup_ticks :]
    base = Trace(spec.rate_mbps * active.astype(np.float64), BASE_TICK_MS)
    return aggregate(base, factor) if factor > 1 else base
