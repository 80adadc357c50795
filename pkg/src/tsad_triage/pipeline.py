"""Stage functions behind the command line: detect, render, verify, evaluate.

Every stage reads its inputs from and writes its outputs to ``out_dir``:

    detections/<dataset>.json
    plots/<dataset>/<start>.png
    tables/<dataset>/<start>.txt
    verdicts/<dataset>.json
    report.txt, report.json
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, TypeVar

import yaml

from .cache import CachingClient, ResponseCache
from .core import Dataset, DatasetError, discover_datasets, load_ucr_file
from .detector import DetectionRun, DetectorError, prediction_window, run_detector
from .eval import LabeledRun, MetricsReport, compute_metrics, write_report
from .llm_client import API_KEY_ENV, ChatClient, OpenAICompatibleClient
from .render import render_overlay, serialize_text_table
from .verifier import STUBS, Classification, Mode, VerdictRun, VerifierConfig, VerifierError, make_stub, verify_detections

logger = logging.getLogger(__name__)

T = TypeVar("T")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """One or more datasets failed in a stage; ``kind`` selects the exit code."""

    def __init__(self, message: str, kind: str = "data") -> None:
        super().__init__(message)
        self.kind = kind


@dataclass
class RunConfig:
    datasets: list[Path] = field(default_factory=list)
    out_dir: Path = Path("out")
    cache_dir: Path | None = None
    # None means "derive from ground truth"
    h: int | None = None
    k: int = 3
    tau: float | None = None
    stride: int | None = None
    stub: str | None = None
    verifier: VerifierConfig = field(default_factory=VerifierConfig)
    workers: int = 4

    @property
    def auto_calibrated(self) -> bool:
        return self.h is None or self.tau is None

    @property
    def live(self) -> bool:
        return self.stub is None

    def validate(self) -> None:
        if not self.datasets:
            raise ConfigError("no datasets given")
        if self.stub is not None and self.stub not in STUBS:
            raise ConfigError(f"unknown stub {self.stub!r}; choose from {sorted(STUBS)}")
        if self.stub is not None and self.verifier.endpoint:
            raise ConfigError("a stub verifier and a live endpoint are mutually exclusive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def validate_live(self) -> None:
        if not self.live:
            return
        if not self.verifier.endpoint:
            raise ConfigError("live verification needs an endpoint (or pick a --stub)")
        if not os.environ.get(API_KEY_ENV):
            raise ConfigError(f"live verification needs {API_KEY_ENV} in the environment")


def _auto(value: Any, cast: Callable[[Any], T]) -> T | None:
    if value is None or (isinstance(value, str) and value.strip().lower() == "auto"):
        return None
    return cast(value)


def load_config(path: str | Path | None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Build a RunConfig from a YAML/JSON file plus overrides (None overrides are ignored).

    File layout::

        datasets: [path, ...]         # directories or data files
        out_dir: out
        cache_dir: cache
        detector: {h: auto, k: 3, tau: auto, stride: auto}
        verifier: {mode: vision, votes: 5, model: ..., endpoint: ..., temperature: 1.0, ...}
        stub: oracle | accept_all | reject_all | none
        workers: 4
    """
    raw: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"{path}: cannot read config: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a mapping")
    base = path.parent if path is not None else Path(".")
    det = dict(raw.get("detector") or {})
    ver = dict(raw.get("verifier") or {})
    top = {k: v for k, v in raw.items() if k not in ("detector", "verifier")}

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in ("h", "k", "tau", "stride"):
            det[key] = value
        elif key in {f.name for f in fields(VerifierConfig)}:
            ver[key] = value
        else:
            top[key] = value

    unknown_ver = set(ver) - {f.name for f in fields(VerifierConfig)}
    if unknown_ver:
        raise ConfigError(f"unknown verifier settings {sorted(unknown_ver)}")
    try:
        verifier = VerifierConfig(**ver)
        datasets = top.get("datasets") or []
        if isinstance(datasets, (str, Path)):
            datasets = [datasets]
        stub = top.get("stub")
        if isinstance(stub, str) and stub.lower() == "none":
            stub = None
        cfg = RunConfig(
            datasets=[p if Path(p).is_absolute() else base / p for p in map(Path, datasets)],
            out_dir=Path(top.get("out_dir", "out")),
            cache_dir=Path(top["cache_dir"]) if top.get("cache_dir") else None,
            h=_auto(det.get("h"), int),
            k=int(det.get("k", 3)),
            tau=_auto(det.get("tau"), float),
            stride=_auto(det.get("stride"), int),
            stub=stub,
            verifier=verifier,
            workers=int(top.get("workers", 4)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def dataset_sources(cfg: RunConfig) -> list[tuple[Path, Path | None]]:
    sources: list[tuple[Path, Path | None]] = []
    for p in cfg.datasets:
        if p.is_dir():
            sources.extend(discover_datasets(p))
        elif p.is_file():
            sources.append((p, None))
        else:
            raise StageError(f"{p}: no such dataset file or directory")
    return sources


def load_datasets(cfg: RunConfig) -> tuple[list[Dataset], list[str]]:
    datasets, errors = [], []
    for data, manifest in dataset_sources(cfg):
        try:
            datasets.append(load_ucr_file(data, manifest))
        except DatasetError as exc:
            errors.append(str(exc))
            logger.error("%s", exc)
    names = [d.name for d in datasets]
    dupes = {n for n in names if names.count(n) > 1}
    if dupes:
        raise StageError(f"duplicate dataset names: {sorted(dupes)}")
    return sorted(datasets, key=lambda d: d.name), errors


def _map(cfg: RunConfig, fn: Callable[[Dataset], T], datasets: Iterable[Dataset]) -> list[T]:
    datasets = list(datasets)
    if cfg.workers == 1 or len(datasets) <= 1:
        return [fn(d) for d in datasets]
    with ThreadPoolExecutor(cfg.workers) as pool:
        return list(pool.map(fn, datasets))


def _detections_path(cfg: RunConfig, name: str) -> Path:
    return cfg.out_dir / "detections" / f"{name}.json"


def _verdicts_path(cfg: RunConfig, name: str) -> Path:
    return cfg.out_dir / "verdicts" / f"{name}.json"


def _input_digest(cfg: RunConfig, dataset: Dataset) -> str:
    h = hashlib.sha256()
    h.update(dataset.train.values.tobytes())
    h.update(dataset.test.values.tobytes())
    h.update(repr((dataset.anomaly.start, dataset.anomaly.end, cfg.h, cfg.k, cfg.tau, cfg.stride)).encode())
    return h.hexdigest()


def _write_json(path: Path, payload: dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def _raise_if(errors: list[str], kind: str = "data") -> None:
    if errors:
        raise StageError("; ".join(errors), kind)


def cmd_detect(cfg: RunConfig, *, resume: bool = False) -> dict[str, DetectionRun]:
    """Run the detector on every dataset and write ``detections/<name>.json``.

    Failing datasets are logged and skipped; StageError is raised at the end if any failed.
    """
    datasets, errors = load_datasets(cfg)
    results: dict[str, DetectionRun] = {}

    def one(ds: Dataset) -> tuple[str, DetectionRun | None, str | None]:
        path = _detections_path(cfg, ds.name)
        digest = _input_digest(cfg, ds)
        if resume and path.exists():
            stored = json.loads(path.read_text(encoding="utf-8"))
            if stored.get("input_digest") == digest:
                return ds.name, DetectionRun.from_dict(stored), None
        try:
            run = run_detector(ds, h=cfg.h, k=cfg.k, tau=cfg.tau, stride=cfg.stride)
        except DetectorError as exc:
            logger.error("%s: %s", ds.name, exc)
            return ds.name, None, f"{ds.name}: {exc}"
        _write_json(path, {**run.to_dict(), "input_digest": digest})
        logger.info("%s: %d detections (h=%d, tau=%.4g)", ds.name, len(run.detections), run.params.h, run.params.tau)
        return ds.name, run, None

    for name, run, err in _map(cfg, one, datasets):
        if run is not None:
            results[name] = run
        if err:
            errors.append(err)
    _raise_if(errors)
    return results


def _load_stage_inputs(cfg: RunConfig) -> list[tuple[Dataset, DetectionRun]]:
    datasets, errors = load_datasets(cfg)
    _raise_if(errors)
    pairs = []
    for ds in datasets:
        path = _detections_path(cfg, ds.name)
        if not path.exists():
            raise StageError(f"{path}: missing detections for {ds.name}; run detect first")
        pairs.append((ds, DetectionRun.read(path)))
    return pairs


def cmd_render(cfg: RunConfig) -> list[Path]:
    """One PNG and one text table per detection."""
    written: list[Path] = []
    for ds, run in _load_stage_inputs(cfg):
        plot_dir = cfg.out_dir / "plots" / ds.name
        table_dir = cfg.out_dir / "tables" / ds.name
        plot_dir.mkdir(parents=True, exist_ok=True)
        table_dir.mkdir(parents=True, exist_ok=True)
        for det in run.detections:
            try:
                predicted = prediction_window(ds, det)
            except DetectorError as exc:
                raise StageError(str(exc)) from exc
            actual = ds.test.slice(det.interval)
            png = plot_dir / f"{det.start}.png"
            txt = table_dir / f"{det.start}.txt"
            png.write_bytes(render_overlay(actual, predicted, start=det.start))
            txt.write_text(
                serialize_text_table(actual, predicted, start=det.start, joint_scaling=cfg.verifier.joint_scaling)
                + "\n",
                encoding="utf-8",
            )
            written += [png, txt]
    return written


def make_client(cfg: RunConfig) -> ChatClient:
    if cfg.stub is not None:
        return make_stub(cfg.stub)
    cfg.validate_live()
    client: ChatClient = OpenAICompatibleClient(
        cfg.verifier.endpoint,  # type: ignore[arg-type]
        cfg.verifier.model,
        max_retries=cfg.verifier.max_retries,
        timeout=cfg.verifier.request_timeout,
    )
    if cfg.cache_dir is not None:
        client = CachingClient(client, ResponseCache(cfg.cache_dir))
    return client


def cmd_verify(cfg: RunConfig, client: ChatClient | None = None) -> dict[str, VerdictRun]:
    """Verdicts for every detection, with all raw votes, in ``verdicts/<name>.json``."""
    if client is None:
        client = make_client(cfg)
    pairs = _load_stage_inputs(cfg)
    out: dict[str, VerdictRun] = {}

    def one(pair: tuple[Dataset, DetectionRun]) -> VerdictRun:
        ds, run = pair
        try:
            verdicts = verify_detections(run.detections, ds, client, cfg.verifier)
        except (VerifierError, DetectorError) as exc:
            raise StageError(f"{ds.name}: {exc}") from exc
        vrun = VerdictRun(ds.name, cfg.verifier, tuple(verdicts), client=client.model)
        path = _verdicts_path(cfg, ds.name)
        path.parent.mkdir(parents=True, exist_ok=True)
        vrun.write(path)
        return vrun

    undecided = 0
    for vrun in _map(cfg, one, pairs):  # type: ignore[arg-type]
        out[vrun.dataset] = vrun
        undecided += sum(v.classification is Classification.UNDECIDED for v in vrun.verdicts)
    if undecided and cfg.live and undecided == sum(len(v.verdicts) for v in out.values()):
        raise StageError(f"endpoint unreachable: all {undecided} verdicts undecided", kind="network")
    if undecided:
        logger.warning("%d detections left undecided after transport failures", undecided)
    return out


def cmd_evaluate(cfg: RunConfig) -> MetricsReport:
    runs = []
    for ds, det_run in _load_stage_inputs(cfg):
        path = _verdicts_path(cfg, ds.name)
        if not path.exists():
            raise StageError(f"{path}: missing verdicts for {ds.name}; run verify first")
        try:
            vrun = VerdictRun.read(path, det_run.detections)
        except VerifierError as exc:
            raise StageError(str(exc)) from exc
        runs.append(
            LabeledRun(ds.name, det_run.detections, ds.anomaly, vrun.verdicts, (len(ds.train), len(ds.test)))
        )
    label = _report_label(cfg)
    report = compute_metrics(runs, label=label, auto_calibrated=cfg.auto_calibrated)
    write_report(report, cfg.out_dir)
    return report


def _report_label(cfg: RunConfig) -> str:
    who = f"stub:{cfg.stub}" if cfg.stub else cfg.verifier.model
    parts = [who, cfg.verifier.mode.value if isinstance(cfg.verifier.mode, Mode) else str(cfg.verifier.mode)]
    if not cfg.verifier.use_context:
        parts.append("no dataset context")
    return f"{parts[0]} ({', '.join(parts[1:])})"


def cmd_run(cfg: RunConfig, client: ChatClient | None = None) -> MetricsReport:
    """detect, render, verify and evaluate in sequence.

    Detections are reused when their inputs are unchanged; live responses come
    from the cache when present.
    """
    if client is None:
        cfg.validate_live()
    cmd_detect(cfg, resume=True)
    cmd_render(cfg)
    cmd_verify(cfg, client)
    return cmd_evaluate(cfg)
