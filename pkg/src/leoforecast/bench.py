"""Rolling-origin benchmark over scenario x granularity x seq_len x pred_len x model.

Every cell scores forecasts on the standardized test split (training-split
mean and standard deviation). ARIMA and FARIMA are refit on every input
window; the transformer is trained once per cell and then predicts every
window in a single forward pass. Completed cells are appended to a JSON-lines
journal so an interrupted run can resume.
"""

from __future__ import annotations

import csv
import fcntl
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable

import numpy as np

from .config import as_list, coerce, read_flat_config
from .farima import fit_arima, fit_farima, forecast
from .trace_io import Standardizer, Trace, fit_standardizer, split_chronological
from .traffic_gen import SCENARIOS, generate_scenario, scenario
from .transformer.model import TransformerConfig
from .transformer.training import WindowSet, predict_batch, train

__all__ = [
    "MODELS",
    "GridSpec",
    "CellResult",
    "mse",
    "evaluation_windows",
    "make_datasets",
    "run_cell",
    "run_grid",
    "load_results",
    "emit_tables",
    "winner_report",
]

log = logging.getLogger(__name__)

MODELS = ("informer_like", "farima", "arima")
JOURNAL = "journal.jsonl"
FAIL_LIMIT = 0.05
TIE_DECIMALS = 4


@dataclass(frozen=True)
class GridSpec:
    scenarios: tuple[str, ...] = ("high", "medium", "low")
    granularities_ms: tuple[int, ...] = (10, 100, 1000)
    seq_lens: tuple[int, ...] = (64, 128, 256, 512)
    pred_lens: tuple[int, ...] = (1, 12, 24, 48)
    models: tuple[str, ...] = MODELS
    eval_stride: int | None = None  # None means stride = pred_len
    seed: int = 0
    num_samples: int = 60_000
    p: int = 2
    q: int = 0
    fit_method: str = "css"
    farima_d: float | None = None  # None re-estimates d on every window
    arima_d: int | None = None  # None picks 0 or 1 by variance comparison
    transformer: tuple[tuple[str, object], ...] = ()

    def __post_init__(self) -> None:
        for name in ("scenarios", "granularities_ms", "seq_lens", "pred_lens", "models"):
            if not getattr(self, name):
                raise ValueError(f"grid field {name} is empty")
        bad = set(self.scenarios) - set(SCENARIOS)
        if bad:
            raise ValueError(f"unknown scenarios {sorted(bad)}")
        bad = set(self.models) - set(MODELS)
        if bad:
            raise ValueError(f"unknown models {sorted(bad)}; choose from {MODELS}")
        if self.eval_stride is not None and self.eval_stride < 1:
            raise ValueError("eval_stride must be positive")
        # catch bad transformer keys before hours of work
        TransformerConfig.from_dict(dict(self.transformer))

    @classmethod
    def from_file(cls, path: str | Path) -> "GridSpec":
        return cls.from_mapping(read_flat_config(path))

    @classmethod
    def from_mapping(cls, raw: dict[str, str]) -> "GridSpec":
        lists = {"scenarios", "granularities_ms", "seq_lens", "pred_lens", "models"}
        known = {f.name for f in fields(cls)} - {"transformer"}
        kwargs: dict = {}
        tcfg: dict = {}
        for key, value in raw.items():
            if key.startswith("transformer."):
                tcfg[key.split(".", 1)[1]] = coerce(value)
            elif key in lists:
                kwargs[key] = tuple(as_list(value))
            elif key in known:
                kwargs[key] = coerce(value)
            else:
                raise ValueError(f"unknown grid key {key!r}")
        kwargs["transformer"] = tuple(sorted(tcfg.items()))
        return cls(**kwargs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["transformer"] = dict(self.transformer)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def stride(self, pred_len: int) -> int:
        return self.eval_stride or pred_len

    def transformer_config(self, seq_len: int, pred_len: int) -> TransformerConfig:
        values = {"seed": self.seed, **dict(self.transformer), "seq_len": seq_len, "pred_len": pred_len}
        return TransformerConfig.from_dict(values)

    def cells(self) -> list[tuple[str, int, int, int, str]]:
        return [
            (s, g, L, h, m)
            for s in self.scenarios
            for g in self.granularities_ms
            for L in self.seq_lens
            for h in self.pred_lens
            for m in self.models
        ]


@dataclass(frozen=True)
class CellResult:
    scenario: str
    granularity_ms: int
    seq_len: int
    pred_len: int
    model: str
    mse: float
    n_windows: int
    n_failed: int = 0
    wall_time_s: float = 0.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.mse) or self.mse < 0:
            raise ValueError(f"invalid MSE {self.mse} for {self.key}")
        if self.n_windows < 1:
            raise ValueError(f"cell {self.key} scored no windows")

    @property
    def key(self) -> tuple[str, int, int, int, str]:
        return (self.scenario, self.granularity_ms, self.seq_len, self.pred_len, self.model)

    @property
    def flagged(self) -> bool:
        return self.n_failed > FAIL_LIMIT * (self.n_windows + self.n_failed)


class CellFailed(RuntimeError):
    """No window of a cell could be scored."""


def mse(y_true, y_pred) -> float:
    a = np.asarray(y_true, dtype=np.float64).ravel()
    b = np.asarray(y_pred, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("mse of empty arrays")
    return float(np.mean((a - b) ** 2))


def window_starts(n: int, seq_len: int, pred_len: int, stride: int) -> np.ndarray:
    if n < seq_len + pred_len:
        raise ValueError(f"series of length {n} is shorter than seq_len + pred_len = {seq_len + pred_len}")
    return np.arange((n - seq_len - pred_len) // stride + 1) * stride


def evaluation_windows(test, seq_len: int, pred_len: int, stride: int | None = None):
    """Inputs ``(W, seq_len)`` and targets ``(W, pred_len)`` with origins ``stride`` apart.

    W = floor((n - seq_len - pred_len) / stride) + 1; stride defaults to pred_len.
    """
    values = test.values if isinstance(test, Trace) else np.asarray(test, dtype=np.float64)
    stride = stride or pred_len
    starts = window_starts(values.size, seq_len, pred_len, stride)
    inputs = values[starts[:, None] + np.arange(seq_len)]
    targets = values[starts[:, None] + seq_len + np.arange(pred_len)]
    return inputs, targets


@dataclass
class Dataset:
    train: Trace
    val: Trace
    test: Trace
    scaler: Standardizer = field(init=False)

    def __post_init__(self) -> None:
        self.scaler = fit_standardizer(self.train)


def dataset_seed(grid_seed: int, scenario_name: str) -> int:
    return grid_seed * 1000 + sorted(SCENARIOS).index(scenario_name)


def make_datasets(grid: GridSpec) -> dict[tuple[str, int], Dataset]:
    out = {}
    for name in grid.scenarios:
        for gran in grid.granularities_ms:
            spec = scenario(name, num_ticks=grid.num_samples, seed=dataset_seed(grid.seed, name), tick_ms=gran)
            out[(name, gran)] = Dataset(*split_chronological(generate_scenario(spec)))
    return out


_FIT_ERRORS = (ValueError, RuntimeError, FloatingPointError, np.linalg.LinAlgError)


def _classical_cell(grid: GridSpec, data: Dataset, seq_len: int, pred_len: int, kind: str):
    z = data.scaler.apply(data.test.values)
    inputs, targets = evaluation_windows(z, seq_len, pred_len, grid.stride(pred_len))
    fit = fit_farima if kind == "farima" else fit_arima
    d = grid.farima_d if kind == "farima" else grid.arima_d
    total, count, failed = 0.0, 0, 0
    for x, y in zip(inputs, targets):
        try:
            with np.errstate(all="ignore"):
                pred = forecast(fit(x, grid.p, grid.q, method=grid.fit_method, d=d), x, pred_len)
            if not np.all(np.isfinite(pred)):
                raise FloatingPointError("non-finite forecast")
        except _FIT_ERRORS as exc:
            failed += 1
            log.debug("%s fit failed: %s", kind, exc)
            continue
        total += float(np.sum((pred - y) ** 2))
        count += 1
    if count == 0:
        raise CellFailed(f"every {kind} window failed")
    return total / (count * pred_len), count, failed


def _transformer_cell(grid: GridSpec, data: Dataset, seq_len: int, pred_len: int):
    cfg = grid.transformer_config(seq_len, pred_len)
    trained = train(data.train, data.val, cfg, scaler=data.scaler)
    windows = WindowSet.from_trace(data.test, data.scaler, cfg, stride=grid.stride(pred_len))
    pred = predict_batch(trained, windows, windows.starts)
    _, _, _, y = windows.batch(windows.starts)
    return mse(y, pred), len(windows), 0


def run_cell(grid: GridSpec, cell: tuple, data: Dataset) -> CellResult:
    """Score one (scenario, granularity, seq_len, pred_len, model) cell."""
    name, gran, seq_len, pred_len, kind = cell
    tic = time.perf_counter()
    if kind == "informer_like":
        value, n, failed = _transformer_cell(grid, data, seq_len, pred_len)
    elif kind in ("farima", "arima"):
        value, n, failed = _classical_cell(grid, data, seq_len, pred_len, kind)
    else:
        raise ValueError(f"unknown model {kind!r}")
    return CellResult(name, gran, seq_len, pred_len, kind, value, n, failed, time.perf_counter() - tic)


# --------------------------------------------------------------------------
# journal


def _append(path: Path, record: dict) -> None:
    line = json.dumps(record, sort_keys=True) + "\n"
    with open(path, "a", encoding="utf-8") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            fh.write(line)
            fh.flush()
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def _read_journal(path: Path) -> tuple[dict | None, list[CellResult]]:
    grid, results = None, []
    if not path.exists():
        return grid, results
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            log.warning("skipping truncated journal line")  # crash mid-write
            continue
        if "grid" in rec:
            grid = rec["grid"]
        else:
            results.append(CellResult(**rec["cell"]))
    return grid, results


def load_results(out_dir: str | Path) -> list[CellResult]:
    _, results = _read_journal(Path(out_dir) / JOURNAL)
    return results


def _job(grid: GridSpec, cell: tuple, data: Dataset):
    try:
        return run_cell(grid, cell, data), None
    except CellFailed as exc:
        return None, str(exc)


def run_grid(
    grid: GridSpec,
    out_dir: str | Path,
    resume: bool = False,
    workers: int = 1,
    datasets: dict | None = None,
) -> tuple[list[CellResult], list[str]]:
    """Run every cell not yet journaled. Returns (results, problems)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    journal = out / JOURNAL
    done: dict[tuple, CellResult] = {}
    if resume:
        saved_grid, previous = _read_journal(journal)
        if saved_grid is not None and saved_grid != grid.to_dict():
            raise ValueError(f"{journal} was written for a different grid")
        done = {r.key: r for r in previous}
    if not resume or not journal.exists():
        journal.write_text("")
        _append(journal, {"grid": grid.to_dict()})

    todo = [c for c in grid.cells() if c not in done]
    log.info("%d cells done, %d to run", len(done), len(todo))
    datasets = datasets or make_datasets(grid)
    problems: list[str] = []

    def record(cell, result, error):
        if result is None:
            problems.append(f"{cell}: {error}")
            return
        done[cell] = result
        _append(journal, {"cell": asdict(result)})
        log.info("%s mse %.4f (%d windows, %d failed, %.1fs)", cell, result.mse,
                 result.n_windows, result.n_failed, result.wall_time_s)

    if workers <= 1:
        for cell in todo:
            record(cell, *_job(grid, cell, datasets[cell[:2]]))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [(c, pool.submit(_job, grid, c, datasets[c[:2]])) for c in todo]
            for cell, fut in futures:
                record(cell, *fut.result())

    results = [done[c] for c in grid.cells() if c in done]
    problems += [f"{r.key}: {r.n_failed} failed windows" for r in results if r.flagged]
    return results, problems


# --------------------------------------------------------------------------
# reporting


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def _best_models(results: Iterable[CellResult]) -> set[tuple]:
    """Keys of results tied for the lowest MSE (to 4 decimals) within their case."""
    cases: dict[tuple, list[CellResult]] = {}
    for r in results:
        cases.setdefault(r.key[:4], []).append(r)
    best = set()
    for group in cases.values():
        low = min(round(r.mse, TIE_DECIMALS) for r in group)
        best.update(r.key for r in group if round(r.mse, TIE_DECIMALS) == low)
    return best


def winner_report(results: Iterable[CellResult]) -> dict[str, int]:
    """Cases won per model; tied models each get the win."""
    results = list(results)
    counts = {m: 0 for m in MODELS if any(r.model == m for r in results)}
    for key in _best_models(results):
        counts[key[4]] += 1
    return counts


def _table_rows(results: list[CellResult], name: str):
    rs = [r for r in results if r.scenario == name]
    columns = sorted({(r.granularity_ms, r.seq_len) for r in rs})
    rows = sorted({(r.pred_len, MODELS.index(r.model)) for r in rs})
    lookup = {r.key: r for r in rs}
    best = _best_models(rs)
    header = ["pred_len", "model"] + [f"{g}ms/L{L}" for g, L in columns]
    body = []
    for pred, mi in rows:
        model = MODELS[mi]
        line = [str(pred), model]
        for g, L in columns:
            r = lookup.get((name, g, L, pred, model))
            line.append("" if r is None else _fmt(r.mse) + ("*" if r.key in best else ""))
        body.append(line)
    return header, body


def _render_text(header: list[str], body: list[list[str]]) -> str:
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in [header] + body]
    return "\n".join(lines) + "\n"


def results_csv(results: list[CellResult]) -> str:
    """Long-format CSV without timing columns, so reruns compare byte for byte."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "granularity_ms", "seq_len", "pred_len", "model", "mse", "n_windows", "n_failed"])
    for r in sorted(results, key=lambda r: (r.scenario, r.granularity_ms, r.seq_len, r.pred_len, MODELS.index(r.model))):
        w.writerow([r.scenario, r.granularity_ms, r.seq_len, r.pred_len, r.model, repr(r.mse), r.n_windows, r.n_failed])
    return buf.getvalue()


def emit_tables(results: list[CellResult], out_dir: str | Path) -> list[Path]:
    """Write per-scenario tables (CSV and aligned text), the long CSV and winner counts.

    In the tables ``*`` marks the best model(s) of each (pred_len, column) case.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    long_path = out / "results.csv"
    long_path.write_text(results_csv(results))
    written.append(long_path)
    for name in sorted({r.scenario for r in results}, key=list(SCENARIOS).index):
        header, body = _table_rows(results, name)
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows([header] + body)
        for suffix, text in (("csv", buf.getvalue()), ("txt", _render_text(header, body))):
            path = out / f"table_{name}.{suffix}"
            path.write_text(text)
            written.append(path)
    counts = winner_report(results)
    path = out / "winners.txt"
    path.write_text("".join(f"{m}: {n}\n" for m, n in counts.items()))
    written.append(path)
    return written
