"""Command line entry point: ``tsad-triage <command>``."""

from __future__ import annotations

import functools
import logging
import sys
from pathlib import Path
from typing import Any, Callable

import click

from . import pipeline, synthetic
from .core import DatasetError
from .detector import DetectorError
from .eval import render_report
from .llm_client import TransportError
from .pipeline import ConfigError, StageError
from .verifier import VerifierError

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NETWORK = 4

logger = logging.getLogger("tsad_triage")


def _int_or_auto(value: str | None) -> str | int | None:
    if value is None or value == "auto":
        return value
    try:
        return int(value)
    except ValueError:
        raise click.BadParameter(f"expected an integer or 'auto', got {value!r}") from None


def _float_or_auto(value: str | None) -> str | float | None:
    if value is None or value == "auto":
        return value
    try:
        return float(value)
    except ValueError:
        raise click.BadParameter(f"expected a number or 'auto', got {value!r}") from None


def run_options(fn: Callable[..., Any]) -> Callable[..., Any]:
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="YAML or JSON run configuration."),
        click.option("--datasets", multiple=True, type=click.Path(), help="Dataset directory or data file (repeatable)."),
        click.option("--out-dir", type=click.Path(file_okay=False), help="Where stage outputs are written."),
        click.option("--cache-dir", type=click.Path(file_okay=False), help="On-disk LLM response cache."),
        click.option("--h", "h", help="Window length, or 'auto'."),
        click.option("--k", "k", type=int, help="Neighbour rank (default 3)."),
        click.option("--tau", help="Distance threshold, or 'auto'."),
        click.option("--stride", help="Test-window stride, or 'auto' (h // 3)."),
        click.option("--stub", type=click.Choice(["oracle", "accept_all", "reject_all", "none"]), help="Offline verifier."),
        click.option("--mode", type=click.Choice(["vision", "text"]), help="Verifier input view."),
        click.option("--votes", type=int, help="Completions per detection."),
        click.option("--model", help="Model name sent to the endpoint."),
        click.option("--endpoint", help="Base URL of an OpenAI-compatible API."),
        click.option("--temperature", type=float, help="Sampling temperature."),
        click.option("--no-context", is_flag=True, default=False, help="Leave the dataset description out of the prompt."),
        click.option("--verdict-suffix", is_flag=True, default=False, help="Ask for a one-word Yes/No final line."),
        click.option("--workers", type=int, help="Datasets processed concurrently."),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def _config_from(kw: dict[str, Any]) -> pipeline.RunConfig:
    overrides = {
        "datasets": list(kw["datasets"]) or None,
        "out_dir": kw["out_dir"],
        "cache_dir": kw["cache_dir"],
        "h": _int_or_auto(kw["h"]),
        "k": kw["k"],
        "tau": _float_or_auto(kw["tau"]),
        "stride": _int_or_auto(kw["stride"]),
        "stub": kw["stub"],
        "mode": kw["mode"],
        "votes": kw["votes"],
        "model": kw["model"],
        "endpoint": kw["endpoint"],
        "temperature": kw["temperature"],
        "use_context": False if kw["no_context"] else None,
        "append_verdict_suffix": True if kw["verdict_suffix"] else None,
        "workers": kw["workers"],
    }
    if kw["config_path"] is not None and not Path(kw["config_path"]).is_file():
        raise ConfigError(f"{kw['config_path']}: no such config file")
    return pipeline.load_config(kw["config_path"], overrides)


def handle_errors(fn: Callable[..., Any]) -> Callable[..., Any]:
    @functools.wraps(fn)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return fn(*args, **kwargs)
        except (ConfigError, VerifierError) as exc:
            click.echo(f"configuration error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except TransportError as exc:
            click.echo(f"network error: {exc}", err=True)
            sys.exit(EXIT_NETWORK)
        except StageError as exc:
            click.echo(f"{'network' if exc.kind == 'network' else 'data'} error: {exc}", err=True)
            sys.exit(EXIT_NETWORK if exc.kind == "network" else EXIT_DATA)
        except (DatasetError, DetectorError, OSError) as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(EXIT_DATA)

    return wrapper


@click.group()
@click.option("-v", "--verbose", count=True, help="More logging (-v info, -vv debug).")
def cli(verbose: int) -> None:
    """Two-stage time series anomaly triage: k-NN detection, then LLM verification."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@run_options
@handle_errors
def detect(**kw: Any) -> None:
    """Run the k-NN detector and write detections/<dataset>.json."""
    cfg = _config_from(kw)
    runs = pipeline.cmd_detect(cfg)
    total = sum(len(r.detections) for r in runs.values())
    click.echo(f"{len(runs)} datasets, {total} detections -> {cfg.out_dir / 'detections'}")


@cli.command()
@run_options
@handle_errors
def render(**kw: Any) -> None:
    """Write an overlay plot and a text table per detection."""
    cfg = _config_from(kw)
    written = pipeline.cmd_render(cfg)
    click.echo(f"{len(written) // 2} detections rendered under {cfg.out_dir}")


@cli.command()
@run_options
@handle_errors
def verify(**kw: Any) -> None:
    """Classify each detection with the configured verifier."""
    cfg = _config_from(kw)
    runs = pipeline.cmd_verify(cfg)
    n = sum(len(r.verdicts) for r in runs.values())
    click.echo(f"{n} verdicts -> {cfg.out_dir / 'verdicts'}")


@cli.command()
@run_options
@handle_errors
def evaluate(**kw: Any) -> None:
    """Score verdicts against ground truth and write report.txt / report.json."""
    cfg = _config_from(kw)
    click.echo(render_report(pipeline.cmd_evaluate(cfg)), nl=False)


@cli.command()
@run_options
@handle_errors
def run(**kw: Any) -> None:
    """detect, render, verify and evaluate in one go."""
    cfg = _config_from(kw)
    click.echo(render_report(pipeline.cmd_run(cfg)), nl=False)


@cli.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--count", default=18, show_default=True)
@click.option("--seed", default=0, show_default=True)
def synth(out_dir: str, count: int, seed: int) -> None:
    """Write a synthetic archive-style dataset collection for offline runs."""
    paths = synthetic.write_archive(out_dir, count, seed=seed)
    click.echo(f"wrote {len(paths)} datasets to {out_dir}")


if __name__ == "__main__":
    cli()
