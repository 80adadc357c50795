"""Second-stage triage: ask an LLM whether each flagged window is a real anomaly.

The model is shown the flagged window next to its k-th nearest training window
and asked whether the two have the same shape. "Same shape" means the alarm is
a false positive; "different shape" keeps it. Several independent completions
are sampled per detection and combined by majority vote, with unparseable
answers counted as keeping the alarm.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .core import Dataset, is_true_positive
from .detector import Detection, prediction_window
from .llm_client import ChatClient, ChatRequest, TransportError
from .render import DEFAULT_STYLE, OverlayStyle, render_overlay, serialize_text_table

logger = logging.getLogger(__name__)


class Mode(str, enum.Enum):
    VISION = "vision"
    TEXT = "text"


class Shape(str, enum.Enum):
    SAME_SHAPE = "SAME_SHAPE"
    DIFFERENT_SHAPE = "DIFFERENT_SHAPE"
    AMBIGUOUS = "AMBIGUOUS"


class Classification(str, enum.Enum):
    TRUE_POSITIVE = "TRUE_POSITIVE"
    FALSE_POSITIVE = "FALSE_POSITIVE"
    UNDECIDED = "UNDECIDED"


class VerifierError(ValueError):
    pass


@dataclass(frozen=True)
class VerifierConfig:
    mode: Mode = Mode.VISION
    votes: int = 5
    majority: int | None = None
    model: str = "llama3.2-90b-vision-instruct"
    endpoint: str | None = None
    temperature: float = 1.0
    max_retries: int = 4
    request_timeout: float = 120.0
    append_verdict_suffix: bool = False
    use_context: bool = True
    max_in_flight: int = 4
    joint_scaling: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.votes < 1:
            raise VerifierError(f"votes must be >= 1, got {self.votes}")
        if self.majority is None:
            object.__setattr__(self, "majority", -(-self.votes // 2))
        if not 1 <= self.majority <= self.votes:
            raise VerifierError(f"majority {self.majority} outside [1, {self.votes}]")
        if self.max_in_flight < 1:
            raise VerifierError("max_in_flight must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode.value,
            "votes": self.votes,
            "majority": self.majority,
            "model": self.model,
            "temperature": self.temperature,
            "append_verdict_suffix": self.append_verdict_suffix,
            "use_context": self.use_context,
            "joint_scaling": self.joint_scaling,
        }


# Prompt wording. The context sentence is dropped entirely when there is no context.
QUESTION = (
    "Does the blue time series have the same shape as the green time series? "
    "First answer the question focusing on the beginning of the time series, "
    "then the middle, then finally the end."
)
CONTEXT_SENTENCE = (
    "If the answer is Yes, then the blue time series should also match the following description: {context}"
)
VISION_INSTRUCTION = (
    "The time series data are plotted in the given images. Use visual inspection to draw your "
    "conclusions. Consider the shapes of the plotted time series."
)
TEXT_INSTRUCTION = (
    "In the time series data given below, each step is separated by a comma. In your analysis, "
    "try not to repeat large chunk of values in the time series to save space."
)
VERDICT_SUFFIX = "End your response with a final line containing a single word: Yes or No."


def _prompt_head(context: str) -> list[str]:
    parts = [QUESTION]
    if context.strip():
        parts.append(CONTEXT_SENTENCE.format(context=context.strip()))
    return parts


def build_vision_prompt(context: str, append_verdict_suffix: bool = False) -> str:
    parts = _prompt_head(context) + [VISION_INSTRUCTION]
    if append_verdict_suffix:
        parts.append(VERDICT_SUFFIX)
    return "\n".join(parts)


def build_text_prompt(context: str, table: str, append_verdict_suffix: bool = False) -> str:
    parts = _prompt_head(context) + [TEXT_INSTRUCTION]
    if append_verdict_suffix:
        parts.append(VERDICT_SUFFIX)
    return "\n".join(parts) + "\n\n" + table


# Conclusion markers, matched case-insensitively in the tail of a response.
_AFFIRMATIVE = [
    r"\*\*yes\*\*",
    r"answer is:?\s*\**\s*yes\b",
    r"\*\*answer\*\*:?\s*yes\b",
    r"\bhas the same shape\b",
    r"\bmatches the description\b",
    r"^\s*yes\.?\s*$",
]
_NEGATIVE = [
    r"\*\*no\*\*",
    r"answer is:?\s*\**\s*no\b",
    r"\*\*answer\*\*:?\s*no\b",
    r"\bdoes not have the same shape\b",
    r"\bdo not have the same shape\b",
    r"\bdoes not match\b",
    r"^\s*no\.?\s*$",
]
_MARKERS = [(re.compile(p, re.I | re.M), Shape.SAME_SHAPE) for p in _AFFIRMATIVE] + [
    (re.compile(p, re.I | re.M), Shape.DIFFERENT_SHAPE) for p in _NEGATIVE
]
_SENTENCE_END = re.compile(r"[.!?\n]")


def _response_tail(response: str) -> str:
    cut = len(response) * 2 // 3
    # back up to a word boundary so a marker straddling the cut is not split
    while cut > 0 and not response[cut - 1].isspace():
        cut -= 1
    return response[cut:]


def parse_verdict(response: str) -> Shape:
    """Reduce a free-text answer to SAME_SHAPE, DIFFERENT_SHAPE or AMBIGUOUS.

    Only the final third of the response is inspected and the last conclusion
    marker wins. If the sentence holding that marker also carries a marker of
    the opposite polarity the answer is AMBIGUOUS, as it is when no marker is
    found at all.
    """
    tail = _response_tail(response)
    hits: list[tuple[int, int, Shape]] = []
    for pattern, shape in _MARKERS:
        hits.extend((m.start(), m.end(), shape) for m in pattern.finditer(tail))
    if not hits:
        return Shape.AMBIGUOUS
    start, end, shape = max(hits, key=lambda h: (h[0], h[1]))
    sent_lo = max((m.end() for m in _SENTENCE_END.finditer(tail, 0, start)), default=0)
    nxt = _SENTENCE_END.search(tail, end)
    sent_hi = nxt.start() if nxt else len(tail)
    if any(s != shape and sent_lo <= a and b <= sent_hi for a, b, s in hits):
        return Shape.AMBIGUOUS
    return shape


@dataclass(frozen=True)
class Vote:
    raw_response: str
    parsed: Shape

    @classmethod
    def from_response(cls, raw_response: str) -> Vote:
        return cls(raw_response, parse_verdict(raw_response))


@dataclass(frozen=True)
class Verdict:
    detection: Detection
    votes: tuple[Vote, ...]
    classification: Classification
    anomalous_vote_count: int
    error: str | None = None

    @property
    def decided(self) -> bool:
        return self.classification is not Classification.UNDECIDED

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "start": self.detection.interval.start,
            "end": self.detection.interval.end,
            "classification": self.classification.value,
            "anomalous_vote_count": self.anomalous_vote_count,
            "votes": [{"parsed": v.parsed.value, "raw_response": v.raw_response} for v in self.votes],
        }
        if self.error is not None:
            d["error"] = self.error
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any], detection: Detection) -> Verdict:
        if (detection.interval.start, detection.interval.end) != (d["start"], d["end"]):
            raise VerifierError(f"verdict for [{d['start']}, {d['end']}) does not match detection {detection.interval}")
        return cls(
            detection=detection,
            votes=tuple(Vote(v["raw_response"], Shape(v["parsed"])) for v in d["votes"]),
            classification=Classification(d["classification"]),
            anomalous_vote_count=int(d["anomalous_vote_count"]),
            error=d.get("error"),
        )


def count_anomalous(votes: Iterable[Vote]) -> int:
    return sum(v.parsed is not Shape.SAME_SHAPE for v in votes)


def majority_vote(votes: Sequence[Vote], config: VerifierConfig) -> Classification:
    """TRUE_POSITIVE when at least ``config.majority`` votes did not say "same shape"."""
    if len(votes) != config.votes:
        raise VerifierError(f"expected {config.votes} votes, got {len(votes)}")
    if count_anomalous(votes) >= config.majority:
        return Classification.TRUE_POSITIVE
    return Classification.FALSE_POSITIVE


def build_request_parts(
    detection: Detection, dataset: Dataset, config: VerifierConfig, style: OverlayStyle = DEFAULT_STYLE
) -> tuple[str, bytes | None]:
    """Prompt text and optional PNG for one detection."""
    actual = dataset.test.slice(detection.interval)
    predicted = prediction_window(dataset, detection)
    context = dataset.context if config.use_context else ""
    if config.mode is Mode.VISION:
        image = render_overlay(actual, predicted, style, start=detection.interval.start)
        return build_vision_prompt(context, config.append_verdict_suffix), image
    table = serialize_text_table(
        actual, predicted, start=detection.interval.start, joint_scaling=config.joint_scaling
    )
    return build_text_prompt(context, table, config.append_verdict_suffix), None


def verify_detection(
    detection: Detection,
    dataset: Dataset,
    client: ChatClient,
    config: VerifierConfig,
    *,
    pool: ThreadPoolExecutor | None = None,
    style: OverlayStyle = DEFAULT_STYLE,
) -> Verdict:
    """Sample ``config.votes`` independent answers and classify the detection.

    Raises TransportError if any vote cannot be obtained.
    """
    prompt, image = build_request_parts(detection, dataset, config, style)
    hints = {"detection": detection, "dataset": dataset}
    requests = [
        ChatRequest(prompt, image, vote_index=i, temperature=config.temperature, hints=hints)
        for i in range(config.votes)
    ]
    if pool is None:
        responses = [client.complete(r) for r in requests]
    else:
        responses = list(pool.map(client.complete, requests))
    votes = tuple(Vote.from_response(r) for r in responses)
    return Verdict(detection, votes, majority_vote(votes, config), count_anomalous(votes))


def verify_detections(
    detections: Sequence[Detection],
    dataset: Dataset,
    client: ChatClient,
    config: VerifierConfig,
    style: OverlayStyle = DEFAULT_STYLE,
) -> list[Verdict]:
    """Verdicts in detection order. Detections whose votes fail are UNDECIDED."""

    def one(det: Detection, pool: ThreadPoolExecutor) -> Verdict:
        try:
            return verify_detection(det, dataset, client, config, pool=pool, style=style)
        except TransportError as exc:
            logger.warning("%s %s: verdict aborted: %s", dataset.name, det.interval, exc)
            return Verdict(det, (), Classification.UNDECIDED, 0, error=str(exc))

    if config.max_in_flight == 1:
        return [one(d, None) for d in detections]  # type: ignore[arg-type]
    # votes go to their own pool so detection-level tasks cannot starve them
    with ThreadPoolExecutor(config.max_in_flight) as vote_pool, ThreadPoolExecutor(
        config.max_in_flight
    ) as det_pool:
        return list(det_pool.map(lambda d: one(d, vote_pool), detections))


def filter_detections(detections: Sequence[Detection], verdicts: Sequence[Verdict]) -> list[Detection]:
    """Keep the detections judged TRUE_POSITIVE, in their original order."""
    if len(detections) != len(verdicts):
        raise VerifierError(f"{len(detections)} detections but {len(verdicts)} verdicts")
    kept = []
    for det, verdict in zip(detections, verdicts):
        if verdict.detection.interval != det.interval:
            raise VerifierError(f"verdict for {verdict.detection.interval} paired with detection {det.interval}")
        if verdict.classification is Classification.TRUE_POSITIVE:
            kept.append(det)
    return kept


@dataclass(frozen=True)
class VerdictRun:
    dataset: str
    config: VerifierConfig
    verdicts: tuple[Verdict, ...]
    client: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset,
            "client": self.client,
            "config": self.config.to_dict(),
            "verdicts": [v.to_dict() for v in self.verdicts],
        }

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path, detections: Sequence[Detection]) -> VerdictRun:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        if len(d["verdicts"]) != len(detections):
            raise VerifierError(f"{path}: {len(d['verdicts'])} verdicts for {len(detections)} detections")
        return cls(
            dataset=d["dataset"],
            config=VerifierConfig(**d["config"]),
            verdicts=tuple(Verdict.from_dict(v, det) for v, det in zip(d["verdicts"], detections)),
            client=d.get("client", ""),
        )


# Offline stand-ins for a live endpoint. Their answers go through parse_verdict like any other.
SAME_SHAPE_RESPONSE = (
    "The blue time series has the same shape as the green time series at the beginning, "
    "in the middle and at the end.\n**Yes**"
)
DIFFERENT_SHAPE_RESPONSE = (
    "The blue time series does not have the same shape as the green time series.\n**No**"
)


@dataclass
class StubClient:
    """Base for offline verifiers; counts the requests it answers."""

    model: str = "stub"
    calls: int = field(default=0, init=False)

    def complete(self, request: ChatRequest) -> str:
        self.calls += 1
        return DIFFERENT_SHAPE_RESPONSE if self.keeps(request) else SAME_SHAPE_RESPONSE

    def keeps(self, request: ChatRequest) -> bool:
        raise NotImplementedError


@dataclass
class OracleStub(StubClient):
    """Answers from ground truth: different shape exactly when the window overlaps the anomaly."""

    model: str = "stub:oracle"

    def keeps(self, request: ChatRequest) -> bool:
        try:
            detection: Detection = request.hints["detection"]
            dataset: Dataset = request.hints["dataset"]
        except KeyError:
            raise VerifierError("oracle stub needs detection and dataset hints") from None
        return is_true_positive(detection.interval, dataset.anomaly)


@dataclass
class AcceptAllStub(StubClient):
    model: str = "stub:accept_all"

    def keeps(self, request: ChatRequest) -> bool:
        return True


@dataclass
class RejectAllStub(StubClient):
    model: str = "stub:reject_all"

    def keeps(self, request: ChatRequest) -> bool:
        return False


STUBS: dict[str, type[StubClient]] = {
    "oracle": OracleStub,
    "accept_all": AcceptAllStub,
    "reject_all": RejectAllStub,
}


def make_stub(name: str) -> StubClient:
    try:
        return STUBS[name]()
    except KeyError:
        raise VerifierError(f"unknown stub {name!r}; choose from {sorted(STUBS)}") from None
