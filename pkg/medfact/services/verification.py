"""Parsing and rendering of verifier output, plus label projections."""

from __future__ import annotations

import re

from pydantic import ValidationError

from medfact.core.errors import FormatError, ScoreError
from medfact.schemas.domain import (
    SCORE_CLOSE,
    SCORE_OPEN,
    THINK_CLOSE,
    THINK_OPEN,
    LikertScore,
    ThreeWayLabel,
    VerificationReport,
)

_SCORE_BODY = re.compile(r"\s*([+-]?[0-9]+)\s*")


def parse_verification_output(raw: str | bytes) -> VerificationReport:
    """Parse `<think>...</think><score>...</score>` into a report.

    Whitespace around and between the blocks is tolerated. The rationale runs to the
    first closing think tag, so score-like text inside it stays rationale text.
    """

    if isinstance(raw, (bytes, bytearray)):
        raw = bytes(raw).decode("utf-8", errors="replace")
    if not isinstance(raw, str):
        raise FormatError(f"expected text, got {type(raw).__name__}")

    text = raw.strip()
    if not text.startswith(THINK_OPEN):
        raise FormatError("output must start with a think block")

    think_end = text.find(THINK_CLOSE, len(THINK_OPEN))
    if think_end < 0:
        raise FormatError("think block is not closed")
    rationale = text[len(THINK_OPEN):think_end]
    if THINK_OPEN in rationale:
        raise FormatError("nested or duplicated think block")

    rest = text[think_end + len(THINK_CLOSE):].lstrip()
    if not rest.startswith(SCORE_OPEN):
        raise FormatError("think block must be followed by a score block")

    score_end = rest.find(SCORE_CLOSE, len(SCORE_OPEN))
    if score_end < 0:
        raise FormatError("score block is not closed")
    body = rest[len(SCORE_OPEN):score_end]
    if SCORE_OPEN in body:
        raise FormatError("nested score block")
    if rest[score_end + len(SCORE_CLOSE):].strip():
        raise FormatError("unexpected text after the score block")

    rationale = rationale.strip()
    if not rationale:
        raise FormatError("think block is empty")

    match = _SCORE_BODY.fullmatch(body)
    if match is None:
        raise ScoreError(f"score is not an integer: {body!r}")
    digits = match.group(1).lstrip("+-").lstrip("0")
    value = int(match.group(1)) if len(digits) <= 1 else None
    if value not in LikertScore._value2member_map_:
        raise ScoreError(f"score {body.strip()!r} is outside -2..2")

    try:
        return VerificationReport(rationale=rationale, score=LikertScore(value))
    except ValidationError as exc:
        raise FormatError(exc.errors()[0]["msg"]) from exc


def render_verification_output(report: VerificationReport) -> str:
    return f"{THINK_OPEN}{report.rationale}{THINK_CLOSE}{SCORE_OPEN}{int(report.score)}{SCORE_CLOSE}"


def coarse_label(score: LikertScore | int) -> ThreeWayLabel:
    value = int(score)
    if value > 0:
        return ThreeWayLabel.SUPPORT
    if value < 0:
        return ThreeWayLabel.CONTRADICT
    return ThreeWayLabel.NEI


def is_supported(score: LikertScore | int) -> bool:
    return int(score) in (1, 2)
