"""k-NN time series anomaly detection with LLM false-positive triage."""

from .core import Dataset, Interval, TimeSeries, is_true_positive, load_ucr_file, overlap_length
from .detector import (
    Detection,
    DetectorParams,
    WindowIndex,
    build_index,
    calibrate_threshold,
    derive_window_length,
    detect,
    knn_distance,
    run_detector,
)
from .eval import MetricsReport, compute_metrics, label_detections, render_report
from .render import quantize_sigfigs, render_overlay, scale_unit, serialize_text_table
from .verifier import (
    Classification,
    Shape,
    Verdict,
    VerifierConfig,
    Vote,
    build_text_prompt,
    build_vision_prompt,
    filter_detections,
    majority_vote,
    parse_verdict,
    make_stub,
    verify_detection,
    verify_detections,
)

__version__ = "0.1.0"
