"""Interval-level evaluation of the triage stage.

Three figures are reported: the share of false-positive intervals removed, the
share of true-positive intervals kept (both pooled over every interval of every
dataset), and the share of datasets where at least one true-positive interval
survived.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .core import Interval, is_true_positive
from .detector import Detection
from .verifier import Classification, Verdict


class EvaluationError(ValueError):
    pass


def label_detections(detections: Sequence[Detection], anomaly: Interval) -> list[bool]:
    """True for each detection overlapping the anomaly."""
    return [is_true_positive(d.interval, anomaly) for d in detections]


@dataclass(frozen=True)
class DatasetRow:
    dataset: str
    tp_total: int
    fp_total: int
    tp_kept: int
    fp_kept: int
    undecided: int = 0
    train_length: int | None = None
    test_length: int | None = None
    anomaly_length: int | None = None

    @property
    def anomaly_detected(self) -> bool:
        return self.tp_kept >= 1

    def __post_init__(self) -> None:
        if not 0 <= self.tp_kept <= self.tp_total or not 0 <= self.fp_kept <= self.fp_total:
            raise EvaluationError(f"{self.dataset}: kept counts exceed totals")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["anomaly_detected"] = self.anomaly_detected
        return d


@dataclass(frozen=True)
class Aggregate:
    tp_total: int
    fp_total: int
    tp_kept: int
    fp_kept: int
    undecided: int
    datasets: int
    datasets_detected: int
    fps_reduced_pct: float | None
    tps_retained_pct: float | None
    anomalies_detected_pct: float | None


@dataclass(frozen=True)
class MetricsReport:
    per_dataset: tuple[DatasetRow, ...]
    aggregate: Aggregate
    label: str = ""
    auto_calibrated: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "auto_calibrated": self.auto_calibrated,
            "aggregate": asdict(self.aggregate),
            "per_dataset": [r.to_dict() for r in self.per_dataset],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> MetricsReport:
        rows = []
        for r in d["per_dataset"]:
            r = {k: v for k, v in r.items() if k != "anomaly_detected"}
            rows.append(DatasetRow(**r))
        return cls(
            per_dataset=tuple(rows),
            aggregate=Aggregate(**d["aggregate"]),
            label=d.get("label", ""),
            auto_calibrated=bool(d.get("auto_calibrated", False)),
        )


@dataclass
class LabeledRun:
    """One dataset's detections with their ground-truth labels and verdicts."""

    dataset: str
    detections: Sequence[Detection]
    anomaly: Interval
    verdicts: Sequence[Verdict]
    lengths: tuple[int | None, int | None] = field(default=(None, None))

    def row(self) -> DatasetRow:
        if len(self.verdicts) != len(self.detections):
            raise EvaluationError(
                f"{self.dataset}: {len(self.detections)} detections but {len(self.verdicts)} verdicts"
            )
        labels = label_detections(self.detections, self.anomaly)
        tp_total = fp_total = tp_kept = fp_kept = undecided = 0
        for det, is_tp, verdict in zip(self.detections, labels, self.verdicts):
            if verdict.detection.interval != det.interval:
                raise EvaluationError(f"{self.dataset}: verdict {verdict.detection.interval} != {det.interval}")
            if verdict.classification is Classification.UNDECIDED:
                undecided += 1
                continue
            kept = verdict.classification is Classification.TRUE_POSITIVE
            if is_tp:
                tp_total += 1
                tp_kept += kept
            else:
                fp_total += 1
                fp_kept += kept
        return DatasetRow(
            self.dataset, tp_total, fp_total, tp_kept, fp_kept, undecided,
            train_length=self.lengths[0],
            test_length=self.lengths[1],
            anomaly_length=self.anomaly.length,
        )


def _pct(num: int, den: int) -> float | None:
    return None if den == 0 else 100.0 * num / den


def aggregate_rows(rows: Sequence[DatasetRow]) -> Aggregate:
    tp_total = sum(r.tp_total for r in rows)
    fp_total = sum(r.fp_total for r in rows)
    tp_kept = sum(r.tp_kept for r in rows)
    fp_kept = sum(r.fp_kept for r in rows)
    detected = sum(r.anomaly_detected for r in rows)
    return Aggregate(
        tp_total=tp_total,
        fp_total=fp_total,
        tp_kept=tp_kept,
        fp_kept=fp_kept,
        undecided=sum(r.undecided for r in rows),
        datasets=len(rows),
        datasets_detected=detected,
        fps_reduced_pct=_pct(fp_total - fp_kept, fp_total),
        tps_retained_pct=_pct(tp_kept, tp_total),
        anomalies_detected_pct=_pct(detected, len(rows)),
    )


def compute_metrics(runs: Sequence[LabeledRun], label: str = "", auto_calibrated: bool = False) -> MetricsReport:
    rows = sorted((run.row() for run in runs), key=lambda r: r.dataset)
    return MetricsReport(tuple(rows), aggregate_rows(rows), label=label, auto_calibrated=auto_calibrated)


def _fmt_pct(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.1f}%"


SUMMARY_COLUMNS = ("Model", "FPs reduced", "TPs retained", "Anomalies detected", "Undecided")
DATASET_COLUMNS = (
    "Dataset", "Train len.", "Test len.", "Anomaly len.", "Num. TPs", "Num. FPs", "TPs kept", "FPs kept", "Undecided",
)


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> list[str]:
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)] if rows else [len(h) for h in header]
    line = lambda cells: "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()  # noqa: E731
    return [line(header), line(["-" * w for w in widths])] + [line(r) for r in rows]


def render_report(report: MetricsReport) -> str:
    """Human-readable summary table followed by the per-dataset table."""
    out: list[str] = []
    if report.auto_calibrated:
        out.append("NOTE: detector parameters were calibrated from ground-truth labels.")
    agg = report.aggregate
    summary_rows = []
    if report.per_dataset:
        summary_rows.append([
            report.label or "verifier",
            _fmt_pct(agg.fps_reduced_pct),
            _fmt_pct(agg.tps_retained_pct),
            _fmt_pct(agg.anomalies_detected_pct),
            str(agg.undecided),
        ])
    out += _table(SUMMARY_COLUMNS, summary_rows)
    out.append("")
    rows = [
        [
            r.dataset,
            "" if r.train_length is None else f"{r.train_length:,}",
            "" if r.test_length is None else f"{r.test_length:,}",
            "" if r.anomaly_length is None else str(r.anomaly_length),
            str(r.tp_total), str(r.fp_total), str(r.tp_kept), str(r.fp_kept), str(r.undecided),
        ]
        for r in report.per_dataset
    ]
    out += _table(DATASET_COLUMNS, rows)
    if report.per_dataset:
        out.append(
            f"Totals: {agg.tp_total} TP / {agg.fp_total} FP intervals; kept {agg.tp_kept} TP / {agg.fp_kept} FP; "
            f"{agg.datasets_detected} of {agg.datasets} datasets detected"
        )
    return "\n".join(out) + "\n"


def write_report(report: MetricsReport, directory: str | Path) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    txt = directory / "report.txt"
    js = directory / "report.json"
    txt.write_text(render_report(report), encoding="utf-8")
    js.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    return txt, js


def read_report(path: str | Path) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# Datasets, lengths and baseline interval counts from the published experiment.
# Columns: name, train length, test length, anomaly length, TP intervals, FP intervals.
REFERENCE_ROSTER: tuple[tuple[str, int, int, int, int, int], ...] = (
    ("1sddb40", 35000, 44795, 620, 4, 1),
    ("2sddb40", 35000, 45001, 300, 2, 31),
    ("CIMIS44AirTemperature5", 4000, 4184, 48, 1, 0),
    ("CIMIS44AirTemperature6", 4000, 4184, 48, 3, 0),
    ("InternalBleeding18", 2300, 5200, 102, 2, 1),
    ("InternalBleeding19", 3000, 4500, 10, 2, 0),
    ("InternalBleeding4", 1000, 6321, 358, 3, 0),
    ("Lab2Cmac011215EPG1", 5000, 25001, 50, 2, 0),
    ("Lab2Cmac011215EPG4", 6000, 24066, 130, 4, 23),
    ("Lab2Cmac011215EPG5", 7000, 22826, 130, 1, 0),
    ("PowerDemand2", 14000, 15931, 360, 3, 32),
    ("TkeepForthMARS", 3500, 7808, 97, 1, 2),
    ("WalkingAceleration5", 2700, 3984, 59, 2, 0),
    ("gaitHunt2", 18500, 45500, 650, 1, 4),
    ("insectEPG1", 3000, 7001, 30, 2, 6),
    ("sddb49", 20000, 60000, 250, 3, 0),
    ("sel840mECG2", 20000, 37001, 370, 2, 29),
    ("tiltAPB1", 100000, 30001, 67, 1, 0),
)
REFERENCE_TOTAL_DETECTIONS = 168
REFERENCE_TOTAL_TPS = 39
