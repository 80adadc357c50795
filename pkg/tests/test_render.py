import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from tsad_triage.render import (
    OverlayStyle,
    RenderError,
    overlay_vertices,
    quantize_sigfigs,
    render_overlay,
    scale_unit,
    serialize_text_table,
)


@pytest.mark.parametrize(
    "values, expected",
    [([2, 4, 6], [0.0, 0.5, 1.0]), ([5, 5, 5], [0.0, 0.0, 0.0]), ([-1, 0, 3], [0.0, 0.25, 1.0])],
)
def test_scale_unit_examples(values, expected):
    assert scale_unit(values).tolist() == expected


@pytest.mark.parametrize(
    "value, text",
    [
        (0.12345, "0.12"),
        (0.0012345, "0.0012"),
        (1.0, "1.0"),
        (0.0, "0"),
        (0.5, "0.5"),
        (0.125, "0.13"),
        (0.995, "1.0"),
        (0.1, "0.1"),
        (0.00001234, "0.000012"),
        (0.999, "1.0"),
    ],
)
def test_quantize_examples(value, text):
    assert quantize_sigfigs(value) == text


def test_quantize_other_figures():
    assert quantize_sigfigs(0.123456, 3) == "0.123"
    assert quantize_sigfigs(0.15, 1) == "0.2"


def test_text_table_example():
    # blue [2,4,6] -> 0, .5, 1 and green [6,4,2] -> 1, .5, 0, each scaled on its own
    assert serialize_text_table([2, 4, 6], [6, 4, 2]) == "0,0,1.0\n1,0.5,0.5\n2,1.0,0"


def test_text_table_offsets_and_identity():
    rng = np.random.default_rng(0)
    v = rng.normal(size=300)
    table = serialize_text_table(v, v, start=1200)
    rows = table.split("\n")
    assert len(rows) == 300
    assert rows[0].startswith("1200,") and rows[-1].startswith("1499,")
    assert all(r.split(",")[1] == r.split(",")[2] for r in rows)


def test_text_table_joint_scaling():
    assert serialize_text_table([0, 1], [0, 2], joint_scaling=True) == "0,0,0\n1,0.5,1.0"


def test_text_table_length_mismatch():
    with pytest.raises(RenderError):
        serialize_text_table([1, 2, 3], [1, 2])


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=200)
@given(st.lists(finite, min_size=1, max_size=50))
def test_scale_unit_range(values):
    out = scale_unit(values)
    assert np.all((out >= 0) & (out <= 1))
    if max(values) > min(values):
        assert out[int(np.argmin(values))] == 0.0 and out[int(np.argmax(values))] == 1.0


@settings(max_examples=200)
@given(st.floats(0, 1))
def test_quantize_round_trip(value):
    text = quantize_sigfigs(value)
    assert "e" not in text.lower()
    if value == 0:
        assert text == "0"
        return
    ulp = 10.0 ** (np.floor(np.log10(value)) - 1)
    assert abs(float(text) - value) <= 0.5 * ulp * (1 + 1e-9)


def test_overlay_png_shape_and_determinism():
    a = np.sin(np.linspace(0, 6, 120))
    p = np.cos(np.linspace(0, 6, 120))
    png = render_overlay(a, p, start=500)
    assert png[:8] == b"\x89PNG\r\n\x1a\n"
    assert Image.open(io.BytesIO(png)).size == (800, 400)
    assert render_overlay(a, p, start=500) == png


def test_overlay_colours_present():
    png = render_overlay(np.zeros(50), np.hanning(50))
    img = np.asarray(Image.open(io.BytesIO(png)).convert("RGB")).astype(int)
    blueish = (img[..., 2] > 200) & (img[..., 0] < 60) & (img[..., 1] < 60)
    greenish = (img[..., 1] > 100) & (img[..., 0] < 60) & (img[..., 2] < 60)
    assert blueish.sum() > 100 and greenish.sum() > 100


def test_overlay_identical_series_coincide():
    line = np.linspace(0, 1, 40)
    blue, green = overlay_vertices(line, line)
    assert np.array_equal(blue, green)


def test_overlay_flat_versus_peak():
    flat = np.zeros(41)
    peak = np.concatenate([np.linspace(0, 1, 21), np.linspace(1, 0, 21)[1:]])
    blue, green = overlay_vertices(flat, peak)
    assert np.ptp(blue[:, 1]) == 0
    # green has a single interior maximum
    y = green[:, 1]
    interior_max = [i for i in range(1, len(y) - 1) if y[i] > y[i - 1] and y[i] > y[i + 1]]
    assert interior_max == [20]


def test_overlay_y_axis_padding():
    blue, green = overlay_vertices([0, 10], [5, 5], OverlayStyle())
    ys = np.concatenate([blue[:, 1], green[:, 1]])
    # fixed axes box: bottom at 0.14 * 400, height 0.82 * 400; data span is 1/1.1 of the axis
    axis_lo, axis_h = 0.14 * 400, 0.82 * 400
    assert ys.min() == pytest.approx(axis_lo + axis_h * 0.05 / 1.1)
    assert ys.max() == pytest.approx(axis_lo + axis_h * 1.05 / 1.1)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 100), st.floats(-1000, 1000))
def test_overlay_geometry_affine_invariant(scale, shift):
    a = np.sin(np.linspace(0, 4, 30))
    p = np.cos(np.linspace(0, 4, 30))
    b0, g0 = overlay_vertices(a, p)
    b1, g1 = overlay_vertices(a * scale + shift, p * scale + shift)
    assert np.allclose(b0, b1, atol=1e-6) and np.allclose(g0, g1, atol=1e-6)


def test_overlay_errors():
    with pytest.raises(RenderError):
        render_overlay([1, 2, 3], [1, 2])
    with pytest.raises(RenderError):
        render_overlay([1], [1])
