"""Core domain types: verdict scale, verifier reports, articles and claims."""

from __future__ import annotations

from enum import Enum, IntEnum

from pydantic import BaseModel, ConfigDict, Field, PositiveInt, field_validator

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
SCORE_OPEN = "<score>"
SCORE_CLOSE = "</score>"


class LikertScore(IntEnum):
    """Five-point agreement scale between an article and a claim."""

    STRONG_CONTRADICTION = -2
    PARTIAL_CONTRADICTION = -1
    NEUTRAL = 0
    PARTIAL_AGREEMENT = 1
    STRONG_AGREEMENT = 2

    @property
    def label(self) -> str:
        return _LIKERT_LABELS[self]


_LIKERT_LABELS = {
    LikertScore.STRONG_CONTRADICTION: "Strong Contradiction",
    LikertScore.PARTIAL_CONTRADICTION: "Partial Contradiction",
    LikertScore.NEUTRAL: "Neutral / Unrelated",
    LikertScore.PARTIAL_AGREEMENT: "Partial Agreement",
    LikertScore.STRONG_AGREEMENT: "Strong Agreement",
}


class ThreeWayLabel(str, Enum):
    SUPPORT = "Support"
    NEI = "NEI"
    CONTRADICT = "Contradict"


class Polarity(str, Enum):
    """Whether a synthetic claim was generated to be supported or refuted."""

    SUPPORTED_BY = "SupportedBy"
    REFUTED_BY = "RefutedBy"

    @property
    def suffix(self) -> str:
        return "S" if self is Polarity.SUPPORTED_BY else "R"


class VerificationReport(BaseModel):
    """Parsed verifier output: a rationale and a Likert score."""

    model_config = ConfigDict(frozen=True)

    rationale: str = Field(..., description="Content of the think block, trimmed")
    score: LikertScore

    @field_validator("rationale")
    @classmethod
    def _check_rationale(cls, value: str) -> str:
        value = value.strip()
        if not value:
            raise ValueError("rationale must not be empty")
        if THINK_OPEN in value or THINK_CLOSE in value:
            raise ValueError("rationale must not contain think tags")
        return value


class Article(BaseModel):
    model_config = ConfigDict(frozen=True)

    pmid: PositiveInt
    title: str
    abstract: str = ""


class Claim(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str = Field(..., min_length=1)
    text: str
    source_pmid: PositiveInt
    polarity: Polarity

    @field_validator("text")
    @classmethod
    def _check_text(cls, value: str) -> str:
        value = value.strip()
        if not value:
            raise ValueError("claim text must not be empty")
        return value
