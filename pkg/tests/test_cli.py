import numpy as np
import pytest

from leoforecast.cli import main
from leoforecast.trace_io import read_trace


@pytest.fixture
def trace_file(tmp_path):
    path = tmp_path / "medium.csv"
    assert main(["generate", "--scenario", "medium", "--ticks", "3000", "--seed", "1", "--out", str(path)]) == 0
    return path


def test_generate_roundtrip(trace_file):
    t = read_trace(trace_file)
    assert len(t) == 3000 and t.granularity_ms == 10 and np.all(t.values >= 0)


def test_analyze(trace_file, capsys):
    assert main(["analyze", "--in", str(trace_file), "--method", "vt"]) == 0
    out = capsys.readouterr().out
    assert "variance_time" in out and "H " in out


def test_fit_and_forecast(trace_file, capsys):
    assert main(["fit", "--in", str(trace_file), "--window", "512"]) == 0
    assert "order" in capsys.readouterr().out
    assert main(["forecast", "--in", str(trace_file), "--model", "arima", "--h", "5", "--window", "256"]) == 0
    lines = capsys.readouterr().out.split()
    assert len(lines) == 5 and all(np.isfinite(float(v)) for v in lines)


def test_train_writes_model(trace_file, tmp_path, capsys):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("epochs = 1\nd_model = 8\nn_heads = 2\nd_ff = 16\nmax_train_windows = 64\n")
    out = tmp_path / "m.bin"
    rc = main(["train", "--in", str(trace_file), "--seq-len", "32", "--pred-len", "4",
               "--config", str(cfg), "--out", str(out)])
    assert rc == 0 and out.read_bytes()[:4] == b"LEOF"


def test_bench_and_report(tmp_path, capsys):
    grid = tmp_path / "grid.txt"
    grid.write_text("scenarios = high\ngranularities_ms = 10\nseq_lens = 64\npred_lens = 12\n"
                    "models = arima\nnum_samples = 2000\n")
    out = tmp_path / "run"
    assert main(["bench", "--grid", str(grid), "--out", str(out)]) == 0
    assert (out / "results.csv").exists()
    capsys.readouterr()
    assert main(["report", "--in", str(out), "--format", "csv"]) == 0
    assert "arima" in capsys.readouterr().out


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["analyze", "--in", str(tmp_path / "missing.csv")]) == 2
    assert main(["report", "--in", str(tmp_path)]) == 1
    with pytest.raises(SystemExit):
        main(["generate", "--scenario", "nope", "--out", "x"])
