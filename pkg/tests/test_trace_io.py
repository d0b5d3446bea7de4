from datetime import datetime

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from leoforecast.trace_io import (
    SplitSpec,
    Trace,
    TraceFormatError,
    fit_standardizer,
    read_trace,
    split_chronological,
    write_trace,
)

demand = arrays(np.float64, st.integers(1, 200), elements=st.floats(0, 1e6, allow_nan=False))


def test_single_value_file(tmp_path):
    t = Trace(np.array([0.0]), 10, datetime(2024, 1, 1))
    write_trace(t, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines == ["timestamp,demand", "2024-01-01T00:00:00.000,0.0"]


def test_timestamp_format(tmp_path):
    write_trace(Trace(np.ones(3), 10), tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[2].startswith("2024-01-01T00:00:00.010,")


def test_sixty_thousand_rows(tmp_path):
    write_trace(Trace(np.arange(60_000, dtype=float), 10), tmp_path / "t.csv")
    assert len((tmp_path / "t.csv").read_text().splitlines()) == 60_001


@settings(max_examples=30, deadline=None)
@given(values=demand, gran=st.sampled_from([10, 100, 1000, 7]))
def test_round_trip(tmp_path_factory, values, gran):
    path = tmp_path_factory.mktemp("rt") / "t.csv"
    t = Trace(values, gran, datetime(2024, 3, 5, 12, 0, 0, 120_000))
    write_trace(t, path)
    back = read_trace(path)
    assert back.granularity_ms == gran
    assert back.start_time == t.start_time
    np.testing.assert_allclose(back.values, t.values, rtol=1e-9, atol=0)


@pytest.mark.parametrize(
    "body, match",
    [
        ("", "header"),
        ("timestamp,demand\n", "no data"),
        ("timestamp,demand\n2024-01-01T00:00:00.000,1\n2024-01-01T00:00:00.010\n", ":3:"),
        ("timestamp,demand\n2024-01-01T00:00:00.000,x\n", ":2:"),
        (
            "timestamp,demand\n2024-01-01T00:00:00.000,1\n2024-01-01T00:00:00.010,1\n"
            "2024-01-01T00:00:00.030,1\n",
            "uneven",
        ),
        ("timestamp,demand\n2024-01-01T00:00:00.000,-1\n", "non-negative"),
    ],
)
def test_read_errors(tmp_path, body, match):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(TraceFormatError, match=match):
        read_trace(path)


def test_missing_file_reports_path(tmp_path):
    with pytest.raises(OSError, match="nope.csv"):
        read_trace(tmp_path / "nope.csv")


@pytest.mark.parametrize("bad", [[], [1.0, np.nan], [-0.5], [[1.0, 2.0]]])
def test_trace_invariants(bad):
    with pytest.raises(ValueError):
        Trace(np.array(bad))


def test_trace_is_immutable():
    t = Trace(np.ones(4))
    with pytest.raises(ValueError):
        t.values[0] = 2.0


@pytest.mark.parametrize("n, expected", [(60_000, (42_000, 6_000, 12_000)), (11, (8, 1, 2))])
def test_split_sizes(n, expected):
    parts = split_chronological(Trace(np.arange(n, dtype=float)))
    assert tuple(len(p) for p in parts) == expected


def test_split_ten_values():
    # floor(1.0) = 1 and floor(2.0) = 2 leave nothing over, so train gets 7
    parts = split_chronological(Trace(np.arange(10, dtype=float)))
    assert tuple(len(p) for p in parts) == (7, 1, 2)


@settings(max_examples=40, deadline=None)
@given(values=arrays(np.float64, st.integers(10, 500), elements=st.floats(0, 100)))
def test_split_partition(values):
    t = Trace(values, 100)
    tr, va, te = split_chronological(t)
    np.testing.assert_array_equal(np.concatenate([tr.values, va.values, te.values]), t.values)
    assert va.start_time == t.timestamps()[len(tr)]
    assert te.start_time == t.timestamps()[len(tr) + len(va)]


def test_split_precondition():
    with pytest.raises(ValueError):
        split_chronological(Trace(np.ones(9)))
    with pytest.raises(ValueError):
        SplitSpec(0.7, 0.2, 0.2)
    with pytest.raises(ValueError):
        SplitSpec(1.0, 0.0, 0.0)


def test_standardizer_hand_values():
    s = fit_standardizer(np.array([1.0, 2.0, 3.0]))
    assert (s.mean, s.std) == (2.0, 1.0)
    np.testing.assert_array_equal(s.apply([1, 2, 3]), [-1.0, 0.0, 1.0])


def test_standardizer_constant():
    with pytest.raises(ValueError):
        fit_standardizer(Trace(np.full(5, 3.0)))


@settings(max_examples=40, deadline=None)
@given(values=arrays(np.float64, st.integers(2, 300), elements=st.floats(0, 1e4)))
def test_standardizer_round_trip(values):
    if np.ptp(values) < 1e-6:
        return
    s = fit_standardizer(values)
    z = s.apply(values)
    np.testing.assert_allclose(s.invert(z), values, rtol=1e-9, atol=1e-9 * np.abs(values).max())
    assert abs(z.mean()) < 1e-8
    assert abs(z.std(ddof=1) - 1.0) < 1e-8
