"""Views of a flagged window for the verifier.

Two views exist: an overlay plot (observed window in blue, predicted window in
green, raw values) and a text table (``index,blue,green`` rows, each series
scaled to [0, 1] on its own and written with two significant figures).
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class OverlayStyle:
    width_px: int = 800
    height_px: int = 400
    dpi: int = 100
    actual_color: str = "blue"
    prediction_color: str = "green"
    linewidth: float = 1.5
    y_padding: float = 0.05


DEFAULT_STYLE = OverlayStyle()

_AXES_BOX = (0.1, 0.14, 0.87, 0.82)

# Pinned so identical inputs always yield identical PNG bytes.
_RC = {
    "lines.antialiased": True,
    "font.family": "DejaVu Sans",
    "font.size": 10,
    "axes.formatter.useoffset": False,
    "path.simplify": False,
    "savefig.facecolor": "white",
}


def _check_pair(actual: Sequence[float], prediction: Sequence[float], min_len: int) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(actual, dtype=np.float64).reshape(-1)
    p = np.asarray(prediction, dtype=np.float64).reshape(-1)
    if a.size != p.size:
        raise RenderError(f"length mismatch: actual has {a.size} samples, prediction has {p.size}")
    if a.size < min_len:
        raise RenderError(f"need at least {min_len} samples, got {a.size}")
    return a, p


def _y_limits(a: np.ndarray, p: np.ndarray, padding: float) -> tuple[float, float]:
    lo = float(min(a.min(), p.min()))
    hi = float(max(a.max(), p.max()))
    span = hi - lo
    if span == 0.0:
        span = max(abs(lo), 1.0)
    return lo - padding * span, hi + padding * span


def _overlay_figure(a: np.ndarray, p: np.ndarray, start: int, style: OverlayStyle) -> tuple[Figure, list]:
    with plt.rc_context(_RC):
        fig = Figure(figsize=(style.width_px / style.dpi, style.height_px / style.dpi), dpi=style.dpi)
        # fixed axes box: pixel geometry must not depend on tick label widths
        ax = fig.add_axes(_AXES_BOX)
        x = np.arange(start, start + a.size)
        (pred_line,) = ax.plot(x, p, color=style.prediction_color, linewidth=style.linewidth)
        (act_line,) = ax.plot(x, a, color=style.actual_color, linewidth=style.linewidth)
        ax.set_xlim(x[0], x[-1])
        ax.set_ylim(*_y_limits(a, p, style.y_padding))
        ax.set_xlabel("time index")
    return fig, [act_line, pred_line]


def overlay_vertices(
    actual: Sequence[float],
    prediction: Sequence[float],
    style: OverlayStyle = DEFAULT_STYLE,
    start: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates of the blue and green polyline vertices, in that order."""
    a, p = _check_pair(actual, prediction, 2)
    fig, lines = _overlay_figure(a, p, start, style)
    fig.canvas.draw()
    return tuple(line.get_transform().transform(line.get_xydata()) for line in lines)  # type: ignore[return-value]


def render_overlay(
    actual: Sequence[float],
    prediction: Sequence[float],
    style: OverlayStyle = DEFAULT_STYLE,
    start: int = 0,
) -> bytes:
    """PNG of ``actual`` (blue) over ``prediction`` (green) on a shared raw-value axis.

    No legend or title: the prompt refers to the series by colour only.
    """
    a, p = _check_pair(actual, prediction, 2)
    fig, _ = _overlay_figure(a, p, start, style)
    buf = io.BytesIO()
    with plt.rc_context(_RC):
        fig.savefig(buf, format="png", dpi=style.dpi, metadata={"Software": None})
    return buf.getvalue()


def scale_unit(values: Sequence[float]) -> np.ndarray:
    """Affine map onto [0, 1]; a constant series maps to all zeros."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise RenderError("cannot scale an empty series")
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    out = (v - lo) / (hi - lo)
    return np.clip(out, 0.0, 1.0)


def quantize_sigfigs(value: float, figures: int = 2) -> str:
    """Round to ``figures`` significant figures (half away from zero) as plain decimal text.

    Trailing zeros are dropped but one fractional digit is kept, so 0.5 -> "0.5"
    and 1 -> "1.0". Zero renders as "0".
    """
    if figures < 1:
        raise ValueError("figures must be >= 1")
    if value == 0:
        return "0"
    d = Decimal(repr(float(value)))
    exponent = d.adjusted() - figures + 1
    q = d.quantize(Decimal(1).scaleb(exponent), rounding=ROUND_HALF_UP)
    text = format(q.normalize(), "f")
    if "." not in text:
        text += ".0"
    return text


def serialize_text_table(
    actual: Sequence[float],
    prediction: Sequence[float],
    start: int = 0,
    figures: int = 2,
    joint_scaling: bool = False,
) -> str:
    """``index,blue,green`` rows, one per step.

    Each series is scaled to [0, 1] on its own unless ``joint_scaling`` is set,
    in which case both share the min/max of their union.
    """
    a, p = _check_pair(actual, prediction, 1)
    if joint_scaling:
        both = scale_unit(np.concatenate([a, p]))
        blue, green = both[: a.size], both[a.size :]
    else:
        blue, green = scale_unit(a), scale_unit(p)
    return "\n".join(
        f"{start + i},{quantize_sigfigs(b, figures)},{quantize_sigfigs(g, figures)}"
        for i, (b, g) in enumerate(zip(blue.tolist(), green.tolist()))
    )
