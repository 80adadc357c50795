"""Synthetic archive-style datasets for offline runs and tests.

Each dataset is a smooth periodic signal with mild noise; the test half holds
one injected distortion and a few benign amplitude wobbles that tend to raise
false alarms.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import Dataset, Interval, SplitMetadata, split_dataset, write_manifest

DISTORTIONS = ("bump", "flat", "noise", "warp", "scale")

CONTEXT = (
    "This data comes from a synthetic periodic sensor. The time series is smooth and repeats "
    "the same shape in every period."
)


def _signal(t: np.ndarray, period: float, rng: np.random.Generator, noise: float) -> np.ndarray:
    phase = 2 * np.pi * t / period
    base = np.sin(phase) + 0.4 * np.sin(2 * phase + 0.7) + 0.15 * np.sin(3 * phase + 1.3)
    return base + rng.normal(0.0, noise, size=t.size)


def make_dataset(
    seed: int,
    *,
    train_length: int = 2000,
    test_length: int = 3000,
    anomaly_length: int | None = None,
    distortion: str | None = None,
    noise: float = 0.03,
    wobbles: int = 4,
    name: str | None = None,
) -> tuple[np.ndarray, SplitMetadata]:
    """Samples of a full file (train followed by test) and its split metadata."""
    rng = np.random.default_rng(seed)
    period = float(rng.uniform(40, 120))
    if anomaly_length is None:
        anomaly_length = int(rng.integers(20, 150))
    if distortion is None:
        distortion = DISTORTIONS[seed % len(DISTORTIONS)]
    total = train_length + test_length
    t = np.arange(total, dtype=np.float64)
    x = _signal(t, period, rng, noise)

    # benign variation: slow amplitude changes the detector may flag
    for _ in range(wobbles):
        c = int(rng.integers(train_length, total - 200))
        w = int(rng.integers(60, 200))
        env = np.exp(-0.5 * ((t - c) / (w / 4)) ** 2)
        x *= 1 + rng.uniform(0.3, 0.6) * env

    lo = int(rng.integers(train_length + test_length // 10, total - test_length // 10 - anomaly_length))
    hi = lo + anomaly_length
    seg = slice(lo, hi)
    if distortion == "bump":
        x[seg] += rng.uniform(0.5, 1.0) * np.hanning(anomaly_length)
    elif distortion == "flat":
        x[seg] = x[lo]
    elif distortion == "noise":
        x[seg] += rng.normal(0.0, 0.25, size=anomaly_length)
    elif distortion == "warp":
        x[seg] = _signal(t[seg] * 1.7, period, rng, noise)
    elif distortion == "scale":
        x[seg] *= rng.uniform(1.3, 1.6)
    else:
        raise ValueError(f"unknown distortion {distortion!r}")

    meta = SplitMetadata(
        train_end=train_length,
        anomaly_start=lo,
        anomaly_end=hi - 1,
        name=name or f"synth{seed:03d}{distortion}",
        context=CONTEXT,
    )
    return x, meta


def synthetic_dataset(seed: int, **kwargs) -> Dataset:
    samples, meta = make_dataset(seed, **kwargs)
    return split_dataset(meta.name or f"synth{seed}", samples, meta)


def anomaly_of(meta: SplitMetadata) -> Interval:
    return Interval(meta.anomaly_start - meta.train_end, meta.anomaly_end - meta.train_end + 1)


def write_archive(directory: str | Path, count: int, *, seed: int = 0, **kwargs) -> list[Path]:
    """Write ``count`` archive-named data files, each with a sidecar manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        samples, meta = make_dataset(seed + i, **kwargs)
        stem = f"{i + 1:03d}_UCR_Anomaly_{meta.name}_{meta.train_end}_{meta.anomaly_start}_{meta.anomaly_end}"
        path = directory / f"{stem}.txt"
        path.write_text("\n".join(f"{v:.6f}" for v in samples) + "\n", encoding="utf-8")
        write_manifest(
            directory / f"{stem}.json",
            data_file=path.name,
            train_end=meta.train_end,
            anomaly_start=meta.anomaly_start,
            anomaly_end=meta.anomaly_end,
            context=meta.context,
            name=meta.name,
        )
        paths.append(path)
    return paths
