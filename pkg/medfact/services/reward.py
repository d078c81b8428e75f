"""Rule-based reward for verifier rollouts."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, Optional

from pydantic import BaseModel, Field

from medfact.core.errors import LengthMismatch, ParseError, SchemaError
from medfact.core.jsonl import read_jsonl
from medfact.schemas.domain import LikertScore
from medfact.services.verification import parse_verification_output

logger = logging.getLogger(__name__)

FORMAT_PENALTY = -1.0
REWARD_VALUES = (-1.0, -0.5, 0.0, 0.5, 1.0)


class RewardSummary(BaseModel):
    n: int
    mean_reward: Optional[float]
    format_violation_rate: Optional[float]
    histogram: Dict[str, int]
    rewards: list[float] = Field(default_factory=list)


def reward(raw_output: str, y_true: LikertScore | int) -> float:
    """-1 for malformed output, otherwise 0.5 * (2 - |y_pred - y_true|)."""

    y_true = LikertScore(int(y_true))
    try:
        report = parse_verification_output(raw_output)
    except ParseError:
        return FORMAT_PENALTY
    return 0.5 * (2 - abs(int(report.score) - int(y_true)))


def is_well_formed(raw_output: str) -> bool:
    try:
        parse_verification_output(raw_output)
    except ParseError:
        return False
    return True


def _prediction_text(record: Any, lineno: int) -> str:
    if isinstance(record, str):
        return record
    if isinstance(record, dict) and isinstance(record.get("output"), str):
        return record["output"]
    raise SchemaError(f"prediction line {lineno}: expected a string or an object with 'output'")


def _gold_score(record: Any, lineno: int) -> LikertScore:
    value = record.get("score") if isinstance(record, dict) else record
    if isinstance(value, bool) or not isinstance(value, int) or value not in LikertScore._value2member_map_:
        raise SchemaError(f"gold line {lineno}: expected a score in -2..2, got {value!r}")
    return LikertScore(value)


def score_file(predictions: str | Path, gold: str | Path) -> RewardSummary:
    """Score line-aligned prediction and gold JSONL files."""

    preds = read_jsonl(predictions)
    golds = read_jsonl(gold)
    if len(preds) != len(golds):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(golds)} gold labels")

    rewards: list[float] = []
    violations = 0
    for i, (p, g) in enumerate(zip(preds, golds), start=1):
        text, y_true = _prediction_text(p, i), _gold_score(g, i)
        if not is_well_formed(text):
            violations += 1
        rewards.append(reward(text, y_true))

    histogram = {str(v): 0 for v in REWARD_VALUES}
    for value in rewards:
        histogram[str(value)] += 1

    n = len(rewards)
    summary = RewardSummary(
        n=n,
        mean_reward=sum(rewards) / n if n else None,
        format_violation_rate=violations / n if n else None,
        histogram=histogram,
        rewards=rewards,
    )
    logger.info(
        f"Scored {n} predictions",
        extra={"mean_reward": summary.mean_reward, "format_violations": violations},
    )
    return summary
