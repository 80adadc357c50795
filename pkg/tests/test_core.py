import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tsad_triage.core import (
    Dataset,
    DatasetError,
    Interval,
    TimeSeries,
    discover_datasets,
    is_true_positive,
    load_manifest,
    load_ucr_file,
    overlap_length,
    parse_ucr_filename,
    write_manifest,
)


def write_lines(path, values):
    path.write_text("\n".join(str(v) for v in values) + "\n")
    return path


@pytest.mark.parametrize(
    "a, b, expected",
    [((100, 200), (150, 250), 50), ((100, 200), (200, 300), 0), ((0, 10), (0, 10), 10), ((0, 5), (7, 9), 0)],
)
def test_overlap_length(a, b, expected):
    assert overlap_length(Interval(*a), Interval(*b)) == expected


def test_true_positive_rule():
    anomaly = Interval(100, 200)
    assert is_true_positive(Interval(150, 250), anomaly)
    assert not is_true_positive(Interval(201, 300), anomaly)
    assert is_true_positive(Interval(199, 199 + 30), anomaly)
    assert not is_true_positive(Interval(200, 230), anomaly)


intervals = st.tuples(st.integers(0, 500), st.integers(1, 200)).map(lambda p: Interval(p[0], p[0] + p[1]))


@given(intervals, intervals)
def test_overlap_symmetric(a, b):
    assert overlap_length(a, b) == overlap_length(b, a)
    assert 0 <= overlap_length(a, b) <= min(a.length, b.length)


@given(intervals)
def test_overlap_self(a):
    assert overlap_length(a, a) == a.length


def test_interval_rejects_empty_and_negative():
    with pytest.raises(ValueError):
        Interval(5, 5)
    with pytest.raises(ValueError):
        Interval(-1, 3)


def test_time_series_rejects_non_finite_and_empty():
    with pytest.raises(ValueError):
        TimeSeries("x", [1.0, float("nan")])
    with pytest.raises(ValueError):
        TimeSeries("x", [1.0, float("inf")])
    with pytest.raises(ValueError):
        TimeSeries("x", [])
    ts = TimeSeries("x", [1, 2, 3])
    assert len(ts) == 3
    with pytest.raises(ValueError):
        ts.values[0] = 9


def test_load_toy_file(tmp_path):
    path = write_lines(tmp_path / "001_UCR_Anomaly_toy_5_7_8.txt", range(10))
    ds = load_ucr_file(path)
    assert ds.name == "toy"
    assert ds.train.values.tolist() == [0, 1, 2, 3, 4]
    assert ds.test.values.tolist() == [5, 6, 7, 8, 9]
    assert ds.anomaly == Interval(2, 4)
    assert ds.context == ""


def test_parse_error_names_line(tmp_path):
    path = tmp_path / "001_UCR_Anomaly_toy_5_7_8.txt"
    path.write_text("1\n2\nabc\n4\n")
    with pytest.raises(DatasetError, match=":3:"):
        load_ucr_file(path)


def test_missing_metadata(tmp_path):
    path = write_lines(tmp_path / "plain.txt", range(10))
    with pytest.raises(DatasetError, match="no manifest"):
        load_ucr_file(path)


def test_anomaly_outside_file(tmp_path):
    path = write_lines(tmp_path / "001_UCR_Anomaly_toy_5_7_12.txt", range(10))
    with pytest.raises(DatasetError, match="outside"):
        load_ucr_file(path)


def test_manifest_wins_over_filename(tmp_path):
    path = write_lines(tmp_path / "001_UCR_Anomaly_toy_5_7_8.txt", range(20))
    write_manifest(tmp_path / "001_UCR_Anomaly_toy_5_7_8.json", data_file=path.name, train_end=8,
                   anomaly_start=10, anomaly_end=14, context="ctx")
    ds = load_ucr_file(path)
    assert len(ds.train) == 8 and len(ds.test) == 12
    assert ds.anomaly == Interval(2, 7)
    assert ds.context == "ctx"
    assert ds.name == "toy"


def test_standalone_manifest(tmp_path):
    write_lines(tmp_path / "series.txt", range(30))
    write_manifest(tmp_path / "meta.json", data_file="series.txt", train_end=10, anomaly_start=20,
                   anomaly_end=20, context="c", name="mine")
    ds = load_manifest(tmp_path / "meta.json")
    assert ds.name == "mine" and ds.anomaly == Interval(10, 11)
    found = discover_datasets(tmp_path)
    assert found == [((tmp_path / "series.txt").resolve(), (tmp_path / "meta.json").resolve())]


def test_manifest_missing_fields(tmp_path):
    write_lines(tmp_path / "series.txt", range(30))
    (tmp_path / "series.json").write_text(json.dumps({"train_end": 3}))
    with pytest.raises(DatasetError, match="missing"):
        load_ucr_file(tmp_path / "series.txt")


def test_parse_filename_with_underscores_in_name():
    meta = parse_ucr_filename("025_UCR_Anomaly_CIMIS44AirTemperature5_4000_4852_4900.txt")
    assert (meta.name, meta.train_end, meta.anomaly_start, meta.anomaly_end) == (
        "CIMIS44AirTemperature5", 4000, 4852, 4900)
    assert parse_ucr_filename("readme.txt") is None


@given(
    st.integers(2, 60).flatmap(
        lambda n: st.tuples(
            st.just(n),
            st.integers(1, n - 1).flatmap(
                lambda te: st.tuples(
                    st.just(te),
                    st.integers(te, n - 1).flatmap(lambda a0: st.tuples(st.just(a0), st.integers(a0, n - 1))),
                )
            ),
        )
    )
)
def test_loader_round_trip(tmp_path_factory, params):
    n, (train_end, (a0, a1)) = params
    d = tmp_path_factory.mktemp("rt")
    values = np.round(np.random.default_rng(n).normal(size=n), 6)
    path = d / f"007_UCR_Anomaly_rt_{train_end}_{a0}_{a1}.txt"
    path.write_text("\n".join(repr(float(v)) for v in values))
    ds = load_ucr_file(path)
    assert np.array_equal(ds.train.values, values[:train_end])
    assert np.array_equal(ds.test.values, values[train_end:])
    assert ds.anomaly == Interval(a0 - train_end, a1 - train_end + 1)
    assert 0 <= ds.anomaly.start < ds.anomaly.end <= len(ds.test)


def test_dataset_rejects_anomaly_past_test():
    with pytest.raises(ValueError):
        Dataset("x", TimeSeries("a", [1, 2]), TimeSeries("b", [1, 2]), Interval(1, 3))
