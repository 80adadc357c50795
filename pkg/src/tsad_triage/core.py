"""Domain types, interval arithmetic and dataset ingestion.

Intervals are half-open ``[start, end)`` and 0-based throughout the package.
Datasets follow the UCR anomaly archive layout: a single text file holding the
training prefix followed by the test suffix, with split points encoded in the
filename ``<id>_UCR_Anomaly_<name>_<trainEnd>_<anomStart>_<anomEnd>.<ext>``.
A JSON sidecar manifest may override those split points and supplies the
natural-language context used by the verifier prompt.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

UCR_NAME_RE = re.compile(
    r"^(?P<id>\d+)_UCR_Anomaly_(?P<name>.+)_(?P<train_end>\d+)_(?P<anom_start>\d+)_(?P<anom_end>\d+)$"
)


class DatasetError(ValueError):
    """Raised when a data file or manifest cannot be turned into a Dataset."""


@dataclass(frozen=True)
class Interval:
    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start < 0:
            raise ValueError(f"interval start must be >= 0, got {self.start}")
        if self.start >= self.end:
            raise ValueError(f"empty interval [{self.start}, {self.end})")

    @property
    def length(self) -> int:
        return self.end - self.start

    def __str__(self) -> str:
        return f"[{self.start}, {self.end})"


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Named univariate series. ``values`` is a read-only float64 array."""

    name: str
    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.values, dtype=np.float64).reshape(-1)
        if arr.size < 1:
            raise ValueError(f"time series {self.name!r} is empty")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"time series {self.name!r} contains non-finite samples")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def length(self) -> int:
        return len(self)

    def slice(self, interval: Interval) -> np.ndarray:
        if interval.end > len(self):
            raise IndexError(f"{interval} exceeds series {self.name!r} of length {len(self)}")
        return self.values[interval.start : interval.end]


@dataclass(frozen=True, eq=False)
class Dataset:
    name: str
    train: TimeSeries
    test: TimeSeries
    anomaly: Interval
    context: str = ""
    source: Path | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.anomaly.end > len(self.test):
            raise ValueError(
                f"anomaly {self.anomaly} lies outside test series of length {len(self.test)}"
            )


def overlap_length(a: Interval, b: Interval) -> int:
    return max(0, min(a.end, b.end) - max(a.start, b.start))


def is_true_positive(detection_interval: Interval, anomaly: Interval) -> bool:
    """A detection is a true positive when it shares at least one sample with the anomaly."""
    return overlap_length(detection_interval, anomaly) > 0


@dataclass(frozen=True)
class SplitMetadata:
    """Archive split points. ``anomaly_end`` is inclusive, as in the archive filenames."""

    train_end: int
    anomaly_start: int
    anomaly_end: int
    name: str | None = None
    context: str = ""


def parse_ucr_filename(path: str | Path) -> SplitMetadata | None:
    """Extract split metadata from an archive-style filename, or None if it does not match."""
    m = UCR_NAME_RE.match(Path(path).stem)
    if m is None:
        return None
    return SplitMetadata(
        train_end=int(m["train_end"]),
        anomaly_start=int(m["anom_start"]),
        anomaly_end=int(m["anom_end"]),
        name=m["name"],
    )


def read_samples(path: str | Path) -> np.ndarray:
    """Read one decimal sample per line. Blank lines are skipped."""
    path = Path(path)
    samples: list[float] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                value = float(text)
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: cannot parse sample {text!r}") from None
            if not math.isfinite(value):
                raise DatasetError(f"{path}:{lineno}: non-finite sample {text!r}")
            samples.append(value)
    if not samples:
        raise DatasetError(f"{path}: no samples")
    return np.asarray(samples, dtype=np.float64)


def manifest_path_for(data_path: str | Path) -> Path:
    return Path(data_path).with_suffix(".json")


def read_manifest(path: str | Path) -> tuple[SplitMetadata, Path | None]:
    """Parse a manifest file.

    Returns the split metadata and the data file it points at (resolved relative
    to the manifest), or None when the manifest omits ``data_file``.
    """
    path = Path(path)
    try:
        raw: dict[str, Any] = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"{path}: unreadable manifest: {exc}") from exc
    missing = [k for k in ("train_end", "anomaly_start", "anomaly_end") if k not in raw]
    if missing:
        raise DatasetError(f"{path}: manifest missing fields {missing}")
    try:
        meta = SplitMetadata(
            train_end=int(raw["train_end"]),
            anomaly_start=int(raw["anomaly_start"]),
            anomaly_end=int(raw["anomaly_end"]),
            name=raw.get("name"),
            context=str(raw.get("context", "")),
        )
    except (TypeError, ValueError) as exc:
        raise DatasetError(f"{path}: bad manifest field: {exc}") from exc
    data_file = raw.get("data_file")
    return meta, (path.parent / data_file) if data_file else None


def write_manifest(
    path: str | Path,
    *,
    data_file: str,
    train_end: int,
    anomaly_start: int,
    anomaly_end: int,
    context: str = "",
    name: str | None = None,
) -> None:
    payload: dict[str, Any] = {
        "data_file": data_file,
        "train_end": train_end,
        "anomaly_start": anomaly_start,
        "anomaly_end": anomaly_end,
        "context": context,
    }
    if name is not None:
        payload["name"] = name
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def split_dataset(name: str, samples: np.ndarray, meta: SplitMetadata, source: Path | None = None) -> Dataset:
    total = samples.size
    train_end = meta.train_end
    if not 0 < train_end < total:
        raise DatasetError(f"{name}: train_end={train_end} outside file of {total} samples")
    if not train_end <= meta.anomaly_start <= meta.anomaly_end < total:
        raise DatasetError(
            f"{name}: anomaly bounds [{meta.anomaly_start}, {meta.anomaly_end}] outside "
            f"test region [{train_end}, {total})"
        )
    anomaly = Interval(meta.anomaly_start - train_end, meta.anomaly_end - train_end + 1)
    return Dataset(
        name=name,
        train=TimeSeries(f"{name}/train", samples[:train_end]),
        test=TimeSeries(f"{name}/test", samples[train_end:]),
        anomaly=anomaly,
        context=meta.context,
        source=source,
    )


def load_ucr_file(path: str | Path, manifest: str | Path | None = None) -> Dataset:
    """Load an archive data file into a Dataset.

    Split points come from the sidecar manifest (``<stem>.json`` next to the data
    file, or ``manifest`` if given) when present, otherwise from the filename.
    Archive anomaly bounds are inclusive; the returned anomaly is half-open in
    test coordinates.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"{path}: no such data file")
    from_name = parse_ucr_filename(path)
    manifest = Path(manifest) if manifest is not None else manifest_path_for(path)
    meta = None
    if manifest.is_file():
        meta, _ = read_manifest(manifest)
        if meta.name is None and from_name is not None:
            meta = SplitMetadata(meta.train_end, meta.anomaly_start, meta.anomaly_end, from_name.name, meta.context)
    elif from_name is not None:
        meta = from_name
    if meta is None:
        raise DatasetError(f"{path}: filename carries no split metadata and no manifest found")
    name = meta.name or path.stem
    return split_dataset(name, read_samples(path), meta, source=path)


def load_manifest(path: str | Path) -> Dataset:
    """Load a dataset described by a manifest that names its data file."""
    meta, data_file = read_manifest(path)
    if data_file is None:
        raise DatasetError(f"{path}: manifest has no data_file")
    return load_ucr_file(data_file, manifest=path)


def discover_datasets(directory: str | Path) -> list[tuple[Path, Path | None]]:
    """List ``(data_file, manifest)`` pairs found in ``directory``, sorted by data file.

    A data file qualifies when its name follows the archive convention or a
    manifest refers to it. Manifests may sit next to their data file (same
    stem) or anywhere in ``directory`` with a ``data_file`` field.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"{directory}: not a directory")
    found: dict[Path, Path | None] = {}
    for p in sorted(directory.iterdir()):
        if p.suffix == ".json":
            try:
                _, data_file = read_manifest(p)
            except DatasetError:
                continue
            if data_file is None:
                data_file = next((c for c in p.parent.glob(p.stem + ".*") if c.suffix != ".json"), None)
            if data_file is not None:
                found[data_file.resolve()] = p.resolve()
        elif p.is_file() and parse_ucr_filename(p) is not None:
            found.setdefault(p.resolve(), None)
    return sorted(found.items())
