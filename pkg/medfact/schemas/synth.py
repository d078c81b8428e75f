"""Records produced by the synthetic corpus pipeline."""

from __future__ import annotations

from typing import Dict, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator

from medfact.schemas.domain import Claim, LikertScore, VerificationReport

SCREENER_ID = "screener"


class Pair(BaseModel):
    """A claim paired with one retrieved candidate article."""

    model_config = ConfigDict(frozen=True)

    claim: Claim
    pmid: PositiveInt
    rank: int = Field(..., ge=1)
    cosine: float
    is_source_article: bool


class PanelVerdict(BaseModel):
    """One model's verdict on a pair; `report` is None when the output was unscorable."""

    model_config = ConfigDict(frozen=True)

    model_id: str
    report: Optional[VerificationReport] = None
    error: Optional[str] = None

    @property
    def scorable(self) -> bool:
        return self.report is not None


class PairVerdicts(BaseModel):
    """Verdicts gathered for one pair, as stored in the verdict files."""

    claim_id: str
    pmid: PositiveInt
    verdicts: list[PanelVerdict]


class ConsensusResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    outcome: Literal["agreed", "no-consensus"]
    score: Optional[LikertScore] = None

    @model_validator(mode="after")
    def _score_iff_agreed(self) -> "ConsensusResult":
        if (self.outcome == "agreed") != (self.score is not None):
            raise ValueError("score is set exactly when the panel agreed")
        return self

    @property
    def agreed(self) -> bool:
        return self.outcome == "agreed"

    @classmethod
    def agree(cls, score: int) -> "ConsensusResult":
        return cls(outcome="agreed", score=LikertScore(score))

    @classmethod
    def none(cls) -> "ConsensusResult":
        return cls(outcome="no-consensus")


class TrainingInstance(BaseModel):
    """One row of the synthetic verification corpus."""

    model_config = ConfigDict(frozen=True)

    claim: Claim
    pmid: PositiveInt
    rationale: str
    score: LikertScore
    is_source_article: bool
    rationale_from: str


class Dropped(BaseModel):
    model_config = ConfigDict(frozen=True)

    claim_id: str
    pmid: Optional[int] = None
    reason: str


class WordCountSummary(BaseModel):
    min: int
    max: int
    mean: float
    median: float


class DatasetStats(BaseModel):
    n: int
    unique_claims: int
    unique_articles: int
    score_counts: Dict[str, int]
    score_fractions: Dict[str, float]
    coarse_fractions: Dict[str, float]
    claim_words: WordCountSummary
    rationale_words: WordCountSummary
    article_words: Optional[WordCountSummary] = None
    reference_coarse_fractions: Dict[str, float]
