import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leoforecast import bench
from leoforecast.bench import CellResult, GridSpec, emit_tables, evaluation_windows, mse, winner_report
from leoforecast.config import parse_flat_config
from leoforecast.trace_io import Trace, fit_standardizer, split_chronological
from leoforecast.traffic_gen import generate_scenario, scenario

TINY_GRID = """
# two seq lengths, one horizon, classical models only
scenarios = low
granularities_ms = 10
seq_lens = 64, 96
pred_lens = 12
models = farima, arima
num_samples = 2000
seed = 3
"""


def test_mse_examples():
    assert mse([1, 2, 3], [1, 2, 3]) == 0.0
    assert mse([1, 2], [2, 2]) == 0.5
    with pytest.raises(ValueError):
        mse([1, 2], [1])
    with pytest.raises(ValueError):
        mse([], [])


def test_standardized_mean_baseline():
    x = generate_scenario(scenario("low", num_ticks=20_000, seed=0)).values
    tr, _, te = split_chronological(Trace(x))
    z = fit_standardizer(tr).apply(te.values)
    assert mse(z, np.zeros_like(z)) == pytest.approx(np.mean(z**2))
    # the test split has roughly unit variance after train-split standardization
    assert 0.8 < mse(z, np.zeros_like(z)) < 1.25


@settings(max_examples=60)
@given(n=st.integers(2, 400), seq=st.integers(1, 100), pred=st.integers(1, 50), stride=st.integers(1, 60))
def test_window_count(n, seq, pred, stride):
    x = np.arange(n, dtype=float)
    if n < seq + pred:
        with pytest.raises(ValueError):
            evaluation_windows(x, seq, pred, stride)
        return
    inputs, targets = evaluation_windows(x, seq, pred, stride)
    assert len(inputs) == (n - seq - pred) // stride + 1
    assert inputs.shape[1] == seq and targets.shape[1] == pred
    np.testing.assert_array_equal(targets[:, 0], inputs[:, -1] + 1)
    np.testing.assert_array_equal(np.diff(inputs[:, 0]), stride)


def test_default_stride_is_pred_len():
    inputs, targets = evaluation_windows(np.arange(100.0), 10, 12)
    assert np.all(np.diff(inputs[:, 0]) == 12)


def _result(model, value, pred=1, seq=64, gran=10, name="low", failed=0):
    return CellResult(name, gran, seq, pred, model, value, 10, failed, 0.0)


def test_winner_report_ties():
    same = [_result(m, 0.5, pred) for pred in (1, 12) for m in bench.MODELS]
    assert winner_report(same) == {m: 2 for m in bench.MODELS}
    tied = [_result("farima", 0.91231), _result("arima", 0.91234), _result("informer_like", 0.95)]
    assert winner_report(tied) == {"informer_like": 0, "farima": 1, "arima": 1}
    split = [_result("farima", 0.91234), _result("arima", 0.91236), _result("informer_like", 0.95)]
    assert winner_report(split) == {"informer_like": 0, "farima": 1, "arima": 0}


def test_winner_counts_cover_every_case():
    rng = np.random.default_rng(0)
    results = [_result(m, float(rng.random()), pred, seq) for pred in (1, 12, 24) for seq in (64, 128)
               for m in bench.MODELS]
    assert sum(winner_report(results).values()) >= 6


def test_cell_result_invariants():
    with pytest.raises(ValueError):
        _result("arima", float("nan"))
    with pytest.raises(ValueError):
        CellResult("low", 10, 64, 1, "arima", 1.0, 0)
    assert _result("arima", 1.0, failed=1).flagged is True  # 1 of 11 windows failed
    assert CellResult("low", 10, 64, 1, "arima", 1.0, 100, 5).flagged is False


def test_grid_file_parsing(tmp_path):
    path = tmp_path / "grid.txt"
    path.write_text(TINY_GRID + "transformer.epochs = 2\ntransformer.d_model = 16\n")
    grid = GridSpec.from_file(path)
    assert grid.seq_lens == (64, 96) and grid.models == ("farima", "arima") and grid.seed == 3
    cfg = grid.transformer_config(64, 12)
    assert (cfg.epochs, cfg.d_model, cfg.seq_len, cfg.pred_len, cfg.seed) == (2, 16, 64, 12, 3)
    with pytest.raises(ValueError):
        GridSpec.from_mapping(parse_flat_config("bogus = 1"))
    with pytest.raises(ValueError):
        GridSpec.from_mapping(parse_flat_config("transformer.bogus = 1"))
    with pytest.raises(ValueError):
        GridSpec.from_mapping(parse_flat_config("models = prophet"))


def test_full_grid_size():
    grid = GridSpec()
    assert len({c[:4] for c in grid.cells()}) == 144
    assert len(grid.cells()) == 432


def test_classical_cell_refits_each_window():
    grid = GridSpec.from_mapping(parse_flat_config(TINY_GRID))
    data = bench.make_datasets(grid)[("low", 10)]
    res = bench.run_cell(grid, ("low", 10, 64, 12, "farima"), data)
    n_test = len(data.test)
    assert res.n_windows + res.n_failed == (n_test - 64 - 12) // 12 + 1
    assert 0 < res.mse < 3
    again = bench.run_cell(grid, ("low", 10, 64, 12, "farima"), data)
    assert again.mse == res.mse


def test_run_grid_resume_and_tables(tmp_path):
    grid = GridSpec.from_mapping(parse_flat_config(TINY_GRID))
    out = tmp_path / "run"
    results, problems = bench.run_grid(grid, out)
    assert len(results) == 4 and not problems
    emit_tables(results, out)
    first = (out / "results.csv").read_text()

    # drop the last cell and leave a torn line, as after a crash mid-write
    lines = (out / "journal.jsonl").read_text().splitlines()
    (out / "journal.jsonl").write_text("\n".join(lines[:-1]) + '\n{"cell": {"scen')
    resumed, _ = bench.run_grid(grid, out, resume=True)
    assert [r.key for r in resumed] == [r.key for r in results]
    assert [r.mse for r in resumed] == [r.mse for r in results]
    emit_tables(resumed, out)
    assert (out / "results.csv").read_text() == first

    text = (out / "table_low.txt").read_text()
    assert "10ms/L64" in text and "*" in text
    header = (out / "table_low.csv").read_text().splitlines()[0]
    assert header == "pred_len,model,10ms/L64,10ms/L96"
    assert (out / "winners.txt").read_text().startswith("farima:")

    other = GridSpec.from_mapping(parse_flat_config(TINY_GRID.replace("seed = 3", "seed = 4")))
    with pytest.raises(ValueError, match="different grid"):
        bench.run_grid(other, out, resume=True)


def test_journal_records_are_json(tmp_path):
    grid = GridSpec.from_mapping(parse_flat_config(TINY_GRID.replace("seq_lens = 64, 96", "seq_lens = 64")))
    bench.run_grid(grid, tmp_path)
    records = [json.loads(line) for line in (tmp_path / "journal.jsonl").read_text().splitlines()]
    assert "grid" in records[0] and all("cell" in r for r in records[1:])
