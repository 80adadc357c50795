import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsad_triage.core import Dataset, Interval, TimeSeries, overlap_length
from tsad_triage.detector import (
    CalibrationError,
    DetectionRun,
    DetectorError,
    DetectorParams,
    build_index,
    calibrate_threshold,
    derive_window_length,
    detect,
    knn_distance,
    max_anomaly_score,
    prediction_window,
    run_detector,
)

from conftest import brute_force_knn


@pytest.mark.parametrize("n, h", [(300, 300), (10, 30), (100, 110), (1, 30), (272, 300), (27, 30), (28, 31)])
def test_derive_window_length(n, h):
    assert derive_window_length(n) == h


def test_derive_window_length_exact_ceiling():
    # 1.1 * 50 is 55.000000000000007 in binary; the rule must still give 55
    assert derive_window_length(50) == 55
    assert derive_window_length(130) == 143


def test_build_index_counts():
    train = TimeSeries("t", [1, 2, 3, 4, 5])
    idx = build_index(train, 2)
    assert len(idx) == 4
    assert [idx.window(i).tolist() for i in range(4)] == [[1, 2], [2, 3], [3, 4], [4, 5]]
    assert len(build_index(train, 5)) == 1
    with pytest.raises(DetectorError):
        build_index(train, 6)


def test_knn_examples():
    idx = build_index(TimeSeries("t", [1, 2, 3, 4, 5]), 2)
    assert knn_distance([1, 2], idx, 1) == (0.0, 0)
    d, s = knn_distance([1, 2], idx, 2)
    assert s == 1 and d == pytest.approx(math.sqrt(2), abs=1e-12)
    with pytest.raises(DetectorError):
        knn_distance([1, 2], idx, 5)
    with pytest.raises(DetectorError):
        knn_distance([1, 2, 3], idx, 1)


def test_knn_ties_prefer_smaller_start():
    idx = build_index(TimeSeries("t", [0, 1, 0, 1, 0, 1]), 2)
    # windows (0,1) at 0, 2, 4 are identical
    assert knn_distance([0, 1], idx, 1) == (0.0, 0)
    assert knn_distance([0, 1], idx, 2) == (0.0, 2)
    assert knn_distance([0, 1], idx, 3) == (0.0, 4)


def test_knn_farthest_window():
    rng = np.random.default_rng(3)
    train = rng.normal(size=40)
    idx = build_index(TimeSeries("t", train), 5)
    q = rng.normal(size=5)
    assert knn_distance(q, idx, len(idx)) == pytest.approx(brute_force_knn(train, 5, q, len(idx)), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(
    st.integers(0, 2**32 - 1),
    st.integers(1, 20),
    st.integers(0, 180),
    st.integers(1, 3),
    st.sampled_from([1.0, 1e-3, 1e3]),
)
def test_knn_matches_exhaustive_sort(seed, h, extra, k, scale):
    rng = np.random.default_rng(seed)
    n = h + k - 1 + extra
    train = np.round(rng.normal(size=n) * scale, 3)
    idx = build_index(TimeSeries("t", train), h)
    q = train[rng.integers(0, n - h + 1) :][:h] + rng.normal(size=h) * scale * rng.choice([0.0, 1e-6, 0.5])
    d, s = knn_distance(q, idx, k)
    od, os_ = brute_force_knn(train, h, q, k)
    assert abs(d - od) <= 1e-9 * max(1.0, od)
    assert s == os_ or abs(d - od) <= 1e-12


def test_knn_exact_under_cancellation():
    # large offset, near-duplicate periodic windows: the dot-product shortcut alone would misorder these
    rng = np.random.default_rng(7)
    base = np.tile(rng.normal(size=50), 60) + 1e4
    train = base + rng.normal(size=base.size) * 1e-7
    idx = build_index(TimeSeries("t", train), 50)
    queries = np.stack([train[i : i + 50] + 1e-8 for i in range(0, 2000, 137)])
    d, s = idx.knn_batch(queries, 3)
    windows = np.lib.stride_tricks.sliding_window_view(train, 50)
    for qi, q in enumerate(queries):
        exact = np.sqrt(((windows - q) ** 2).sum(axis=1))
        order = np.lexsort((np.arange(exact.size), exact))
        assert s[qi] == order[2]
        assert d[qi] == pytest.approx(exact[order[2]], abs=1e-12)


def _flat_train_dataset(test_values, anomaly):
    return Dataset("d", TimeSeries("tr", [0.0]), TimeSeries("te", test_values), anomaly)


def test_calibrate_threshold_examples():
    ds = _flat_train_dataset([0, 2, 3, 5, 0, 7], Interval(1, 4))
    idx = build_index(ds.train, 1)
    params = DetectorParams(h=1, k=1, test_stride=1)
    assert calibrate_threshold(ds.test, ds.anomaly, idx, params) == pytest.approx(4.5)

    ds = _flat_train_dataset([1, 10, 1, 1], Interval(1, 2))
    assert calibrate_threshold(ds.test, ds.anomaly, idx, params) == pytest.approx(9.0)


def test_calibration_impossible_when_no_window_overlaps():
    ds = _flat_train_dataset([0, 1, 2, 3, 4, 5, 6], Interval(6, 7))
    idx = build_index(ds.train, 1)
    # stride 4 scores windows at 0 and 4 only
    with pytest.raises(CalibrationError):
        calibrate_threshold(ds.test, ds.anomaly, idx, DetectorParams(h=1, k=1, test_stride=4))


def test_detect_identical_test_is_empty():
    train = TimeSeries("tr", np.sin(np.arange(200) / 5))
    test = TimeSeries("te", train.values[20:150])
    idx = build_index(train, 30)
    assert detect(test, idx, DetectorParams(h=30, k=1, tau=1e-9)) == []


@pytest.mark.parametrize("T, h, stride", [(100, 30, 10), (101, 30, None), (30, 30, None), (95, 7, 3)])
def test_detect_zero_threshold_counts(T, h, stride):
    rng = np.random.default_rng(T)
    idx = build_index(TimeSeries("tr", rng.normal(size=80)), h)
    params = DetectorParams(h=h, k=1, tau=0.0, test_stride=stride)
    dets = detect(TimeSeries("te", rng.normal(size=T)), idx, params)
    s = params.stride
    assert len(dets) == (T - h) // s + 1
    assert [d.interval.start for d in dets] == list(range(0, T - h + 1, s))
    assert all(d.interval.length == h for d in dets)


def test_detect_rejects_short_test():
    idx = build_index(TimeSeries("tr", np.arange(50.0)), 10)
    with pytest.raises(DetectorError):
        detect(TimeSeries("te", np.arange(5.0)), idx, DetectorParams(h=10))


def test_default_stride_is_third_of_window():
    assert DetectorParams(h=100).stride == 33
    assert DetectorParams(h=2).stride == 1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 5), st.floats(0, 5))
def test_threshold_monotone_and_scores_bounded(seed, t1, t2):
    rng = np.random.default_rng(seed)
    idx = build_index(TimeSeries("tr", rng.normal(size=120)), 12)
    test = TimeSeries("te", rng.normal(size=200))
    lo, hi = sorted((t1, t2))
    d_lo = detect(test, idx, DetectorParams(h=12, tau=lo))
    d_hi = detect(test, idx, DetectorParams(h=12, tau=hi))
    assert len(d_hi) <= len(d_lo)
    assert all(d.score >= hi for d in d_hi)
    assert detect(test, idx, DetectorParams(h=12, tau=lo)) == d_lo


def test_calibrated_detector_finds_spike(toy_dataset):
    run = run_detector(toy_dataset)
    assert run.auto_calibrated
    assert run.params.h == 33
    assert any(overlap_length(d.interval, toy_dataset.anomaly) > 0 for d in run.detections)
    idx = build_index(toy_dataset.train, run.params.h)
    top = max_anomaly_score(toy_dataset.test, toy_dataset.anomaly, idx, run.params)
    above = detect(toy_dataset.test, idx, run.params.with_tau(1.01 * top))
    assert not any(overlap_length(d.interval, toy_dataset.anomaly) > 0 for d in above)
    for d in run.detections:
        assert 0 <= d.nn_start <= len(toy_dataset.train) - run.params.h
        assert len(prediction_window(toy_dataset, d)) == run.params.h


def test_prediction_window_out_of_range(toy_dataset):
    run = run_detector(toy_dataset)
    bad = type(run.detections[0])(run.detections[0].interval, 1.0, 10_000)
    with pytest.raises(DetectorError, match="nn_start"):
        prediction_window(toy_dataset, bad)


def test_detection_run_round_trip(tmp_path, toy_dataset):
    run = run_detector(toy_dataset)
    run.write(tmp_path / "d.json")
    again = DetectionRun.read(tmp_path / "d.json")
    assert again == run
    assert set(again.to_dict()["detections"][0]) == {"start", "end", "score", "nn_start"}
