"""k-nearest-neighbour sliding window detector.

Every stride-1 window of the (anomaly-free) training series is indexed. A test
window is scored by the Euclidean distance to its k-th nearest training window
and flagged when that distance reaches ``tau``. The k-th neighbour also serves
as the "prediction" shown to the verifier.

Search is exact. Squared distances are first computed for all training windows
with the expansion ``|q|^2 + |w|^2 - 2 q.w`` (one matrix product per query
batch); windows whose approximate distance cannot reach the k-th smallest are
discarded using a rounding-error bound, and the survivors are re-scored with
direct differences. The result is identical to sorting all exact distances.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import Dataset, Interval, TimeSeries, overlap_length

logger = logging.getLogger(__name__)

H_MIN = 30
H_MAX = 300
DEFAULT_K = 3
THRESHOLD_FRACTION = 0.9

# query rows x training windows per matrix-product block
_BLOCK_ELEMS = 1 << 23


class DetectorError(ValueError):
    pass


class CalibrationError(DetectorError):
    """No strided test window overlaps the anomaly, so no threshold can detect it."""


@dataclass(frozen=True)
class DetectorParams:
    h: int
    k: int = DEFAULT_K
    tau: float = 0.0
    test_stride: int | None = None
    h_min: int = H_MIN
    h_max: int = H_MAX

    def __post_init__(self) -> None:
        if self.h < 1:
            raise DetectorError(f"window length must be positive, got {self.h}")
        if self.k < 1:
            raise DetectorError(f"k must be positive, got {self.k}")
        if not self.tau >= 0 or not math.isfinite(self.tau):
            raise DetectorError(f"tau must be a finite non-negative number, got {self.tau}")
        if self.test_stride is None:
            object.__setattr__(self, "test_stride", default_stride(self.h))
        elif self.test_stride < 1:
            raise DetectorError(f"test_stride must be >= 1, got {self.test_stride}")

    @property
    def stride(self) -> int:
        """Test-window stride; defaults to ``max(1, h // 3)``."""
        return self.test_stride  # type: ignore[return-value]

    def with_tau(self, tau: float) -> DetectorParams:
        return DetectorParams(self.h, self.k, tau, self.test_stride, self.h_min, self.h_max)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> DetectorParams:
        return cls(
            h=int(d["h"]),
            k=int(d.get("k", DEFAULT_K)),
            tau=float(d.get("tau", 0.0)),
            test_stride=d.get("test_stride"),
            h_min=int(d.get("h_min", H_MIN)),
            h_max=int(d.get("h_max", H_MAX)),
        )


@dataclass(frozen=True)
class Detection:
    interval: Interval
    score: float
    nn_start: int

    @property
    def start(self) -> int:
        return self.interval.start

    def to_dict(self) -> dict[str, Any]:
        return {
            "start": self.interval.start,
            "end": self.interval.end,
            "score": self.score,
            "nn_start": self.nn_start,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Detection:
        return cls(Interval(int(d["start"]), int(d["end"])), float(d["score"]), int(d["nn_start"]))


def default_stride(h: int) -> int:
    return max(1, h // 3)


def derive_window_length(anomaly_length: int, h_min: int = H_MIN, h_max: int = H_MAX) -> int:
    """Window 10% longer than the anomaly, clamped to ``[h_min, h_max]``."""
    if anomaly_length < 1:
        raise DetectorError(f"anomaly length must be positive, got {anomaly_length}")
    # integer arithmetic: ceil(1.1 * n) == ceil(11 n / 10) without float error
    h = -(-11 * anomaly_length // 10)
    return min(max(h, h_min), h_max)


class WindowIndex:
    """All stride-1 windows of length ``h`` over a training series.

    Windows are implicit (a strided view); squared norms are precomputed.
    Read-only after construction.
    """

    def __init__(self, source: TimeSeries, h: int) -> None:
        if h < 1:
            raise DetectorError(f"window length must be positive, got {h}")
        if len(source) < h:
            raise DetectorError(f"series {source.name!r} of length {len(source)} is shorter than window {h}")
        self.source = source
        self.h = h
        self.windows = sliding_window_view(source.values, h)
        self.sq_norms = np.einsum("ij,ij->i", self.windows, self.windows)
        self._max_sq_norm = float(self.sq_norms.max())

    def __len__(self) -> int:
        return self.windows.shape[0]

    @property
    def count(self) -> int:
        return len(self)

    def window(self, start: int) -> np.ndarray:
        if not 0 <= start < len(self):
            raise IndexError(f"window start {start} outside index of {len(self)} windows")
        return self.windows[start]

    def knn_batch(self, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """k-th nearest neighbour distance and start offset for each query row."""
        queries = np.ascontiguousarray(queries, dtype=np.float64)
        if queries.ndim != 2 or queries.shape[1] != self.h:
            raise DetectorError(f"queries must have shape (m, {self.h}), got {queries.shape}")
        n = len(self)
        if not 1 <= k <= n:
            raise DetectorError(f"k={k} exceeds the {n} available historical windows")
        m = queries.shape[0]
        dist = np.empty(m, dtype=np.float64)
        starts = np.empty(m, dtype=np.int64)
        if m == 0:
            return dist, starts

        q_sq = np.einsum("ij,ij->i", queries, queries)
        rows = max(1, min(m, _BLOCK_ELEMS // n))
        # bound on |approx - exact| squared distance for the expansion
        eps = np.finfo(np.float64).eps
        for lo in range(0, m, rows):
            hi = min(m, lo + rows)
            block = queries[lo:hi]
            approx = self._approx_sq_dists(block, q_sq[lo:hi])
            kth = np.partition(approx, k - 1, axis=1)[:, k - 1]
            slack = 4.0 * (self.h + 4) * eps * (q_sq[lo:hi] + self._max_sq_norm) + 1e-300
            for r in range(hi - lo):
                cand = np.flatnonzero(approx[r] <= kth[r] + 2.0 * slack[r])
                diff = self.windows[cand] - block[r]
                exact = np.sqrt(np.einsum("ij,ij->i", diff, diff))
                order = np.lexsort((cand, exact))
                pick = order[k - 1]
                dist[lo + r] = exact[pick]
                starts[lo + r] = cand[pick]
        return dist, starts

    def _approx_sq_dists(self, block: np.ndarray, block_sq: np.ndarray) -> np.ndarray:
        n = len(self)
        out = np.empty((block.shape[0], n), dtype=np.float64)
        step = max(1, _BLOCK_ELEMS // max(1, block.shape[0]))
        for lo in range(0, n, step):
            hi = min(n, lo + step)
            w = np.ascontiguousarray(self.windows[lo:hi])
            out[:, lo:hi] = block_sq[:, None] + self.sq_norms[None, lo:hi] - 2.0 * (block @ w.T)
        return out


def build_index(train: TimeSeries, h: int) -> WindowIndex:
    return WindowIndex(train, h)


def knn_distance(query: Sequence[float] | np.ndarray, index: WindowIndex, k: int) -> tuple[float, int]:
    """Distance to the k-th nearest historical window and that window's start.

    Equal distances are ordered by ascending start offset.
    """
    q = np.asarray(query, dtype=np.float64).reshape(1, -1)
    if q.shape[1] != index.h:
        raise DetectorError(f"query length {q.shape[1]} does not match window length {index.h}")
    d, s = index.knn_batch(q, k)
    return float(d[0]), int(s[0])


def window_starts(test_length: int, h: int, stride: int) -> np.ndarray:
    if test_length < h:
        raise DetectorError(f"test series of length {test_length} is shorter than window {h}")
    return np.arange(0, test_length - h + 1, stride, dtype=np.int64)


def score_windows(test: TimeSeries, index: WindowIndex, params: DetectorParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Score every strided test window: returns (starts, distances, nn_starts)."""
    if params.h != index.h:
        raise DetectorError(f"params.h={params.h} does not match index window length {index.h}")
    starts = window_starts(len(test), params.h, params.stride)
    queries = sliding_window_view(test.values, params.h)[starts]
    dist, nn = index.knn_batch(queries, params.k)
    return starts, dist, nn


def calibrate_threshold(test: TimeSeries, anomaly: Interval, index: WindowIndex, params: DetectorParams) -> float:
    """90% of the largest k-NN distance among strided windows overlapping the anomaly."""
    return THRESHOLD_FRACTION * max_anomaly_score(test, anomaly, index, params)


def max_anomaly_score(test: TimeSeries, anomaly: Interval, index: WindowIndex, params: DetectorParams) -> float:
    starts, dist, _ = score_windows(test, index, params)
    overlapping = [
        d for t, d in zip(starts.tolist(), dist.tolist())
        if overlap_length(Interval(t, t + params.h), anomaly) > 0
    ]
    if not overlapping:
        raise CalibrationError(
            f"no test window (h={params.h}, stride={params.stride}) overlaps anomaly {anomaly}"
        )
    return max(overlapping)


def detect(test: TimeSeries, index: WindowIndex, params: DetectorParams) -> list[Detection]:
    """Flag strided test windows whose k-NN distance is at least ``params.tau``.

    Intervals are emitted in ascending start order and never merged.
    """
    starts, dist, nn = score_windows(test, index, params)
    return [
        Detection(Interval(int(t), int(t) + params.h), float(d), int(s))
        for t, d, s in zip(starts, dist, nn)
        if d >= params.tau
    ]


@dataclass(frozen=True)
class DetectionRun:
    """Detector output for one dataset, with the parameters that produced it."""

    dataset: str
    params: DetectorParams
    detections: tuple[Detection, ...]
    auto_calibrated: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset,
            "auto_calibrated": self.auto_calibrated,
            "params": self.params.to_dict(),
            "detections": [d.to_dict() for d in self.detections],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> DetectionRun:
        return cls(
            dataset=d["dataset"],
            params=DetectorParams.from_dict(d["params"]),
            detections=tuple(Detection.from_dict(x) for x in d["detections"]),
            auto_calibrated=bool(d.get("auto_calibrated", False)),
        )

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path) -> DetectionRun:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def auto_params(
    dataset: Dataset,
    *,
    h: int | None = None,
    k: int = DEFAULT_K,
    tau: float | None = None,
    stride: int | None = None,
) -> tuple[DetectorParams, WindowIndex]:
    """Resolve detector parameters, deriving any left as None from ground truth.

    ``h`` follows the anomaly-length rule and ``tau`` is calibrated against the
    labelled anomaly, so an automatically tuned detector has seen the labels.
    """
    h = derive_window_length(dataset.anomaly.length) if h is None else h
    index = build_index(dataset.train, h)
    params = DetectorParams(h=h, k=k, tau=0.0 if tau is None else tau, test_stride=stride)
    if tau is None:
        params = params.with_tau(calibrate_threshold(dataset.test, dataset.anomaly, index, params))
    logger.debug("%s: h=%d k=%d stride=%d tau=%.6g", dataset.name, params.h, params.k, params.stride, params.tau)
    return params, index


def run_detector(
    dataset: Dataset,
    *,
    h: int | None = None,
    k: int = DEFAULT_K,
    tau: float | None = None,
    stride: int | None = None,
) -> DetectionRun:
    params, index = auto_params(dataset, h=h, k=k, tau=tau, stride=stride)
    detections = detect(dataset.test, index, params)
    return DetectionRun(dataset.name, params, tuple(detections), auto_calibrated=h is None or tau is None)


def prediction_window(dataset: Dataset, detection: Detection) -> np.ndarray:
    """Training samples of the detection's k-th nearest neighbour."""
    h = detection.interval.length
    if not 0 <= detection.nn_start <= len(dataset.train) - h:
        raise DetectorError(
            f"{dataset.name}: detection at {detection.interval} has nn_start={detection.nn_start} "
            f"outside training series of length {len(dataset.train)}"
        )
    return dataset.train.values[detection.nn_start : detection.nn_start + h]

