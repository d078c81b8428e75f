"""Records for the citation and guideline audits."""

from __future__ import annotations

from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, PositiveInt, field_validator, model_validator

from medfact.schemas.domain import LikertScore


class CitationStyle(str, Enum):
    NLM = "NLM"
    AMA = "AMA"
    VANCOUVER = "Vancouver"
    APA = "APA"
    MLA = "MLA"
    PMID = "PMID"
    DOI = "DOI"
    UNKNOWN = "Unknown"

    @classmethod
    def from_text(cls, value: str) -> "CitationStyle":
        for style in cls:
            if style.value.lower() == value.strip().lower():
                return style
        raise ValueError(f"unknown citation style: {value!r}")

    @property
    def is_identifier(self) -> bool:
        return self in (CitationStyle.PMID, CitationStyle.DOI)


class MappingMethod(str, Enum):
    DIRECT = "Direct"
    CITATION_MATCHER = "CitationMatcher"
    ID_CONVERTER = "IdConverter"


class ClaimCitation(BaseModel):
    model_config = ConfigDict(frozen=True)

    claim: str
    citation: str
    style_hint: CitationStyle = CitationStyle.UNKNOWN

    @field_validator("claim", "citation")
    @classmethod
    def _nonempty(cls, value: str) -> str:
        value = value.strip()
        if not value:
            raise ValueError("must not be empty")
        return value


class PmidMapping(BaseModel):
    model_config = ConfigDict(frozen=True)

    status: Literal["mapped", "unmapped"]
    method: MappingMethod
    pmid: Optional[PositiveInt] = None
    reason: Optional[str] = None
    candidates: list[int] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_status(self) -> "PmidMapping":
        if self.status == "mapped" and self.pmid is None:
            raise ValueError("a mapped citation needs a pmid")
        if self.status == "unmapped" and not self.reason:
            raise ValueError("an unmapped citation needs a reason")
        return self

    @property
    def mapped(self) -> bool:
        return self.status == "mapped"

    @classmethod
    def to(cls, pmid: int, method: MappingMethod, candidates: list[int] | None = None) -> "PmidMapping":
        return cls(status="mapped", pmid=pmid, method=method, candidates=candidates or [])

    @classmethod
    def failed(cls, reason: str, method: MappingMethod) -> "PmidMapping":
        return cls(status="unmapped", reason=reason, method=method)


class AuditRecord(BaseModel):
    """A claim, its citation, how the citation resolved and the verifier's verdict."""

    answer_id: str
    claim: str
    citation: str
    normalized: Optional[str] = None
    mapping: PmidMapping
    verdict: Optional[LikertScore] = None
    rationale: Optional[str] = None
    error: Optional[str] = None

    @model_validator(mode="after")
    def _verdict_needs_mapping(self) -> "AuditRecord":
        if self.verdict is not None and not self.mapping.mapped:
            raise ValueError("only mapped citations carry a verdict")
        return self


class MetricEstimate(BaseModel):
    value: Optional[float]
    lo: Optional[float] = None
    hi: Optional[float] = None
    n: int = 0


class AuditMetrics(BaseModel):
    answers: int
    claims: int
    mapped: int
    verified: int
    claims_per_answer: MetricEstimate
    mapping_rate: MetricEstimate
    avg_pmid: MetricEstimate
    hallucination_rate: MetricEstimate
    supported_fraction: MetricEstimate
    supported_count_per_answer: MetricEstimate
    human_reference_avg_pmid: int


class CitationStatement(BaseModel):
    model_config = ConfigDict(frozen=True)

    doc_id: str
    sentence: str
    cited_pmid: PositiveInt
    char_span: Tuple[int, int]

    @field_validator("char_span")
    @classmethod
    def _ordered_span(cls, value: Tuple[int, int]) -> Tuple[int, int]:
        start, end = value
        if start < 0 or end < start:
            raise ValueError("span must satisfy 0 <= start <= end")
        return value


class FlaggedCase(BaseModel):
    model_config = ConfigDict(frozen=True)

    statement: CitationStatement
    verdict: LikertScore
    rationale: str

    @field_validator("verdict")
    @classmethod
    def _negative(cls, value: LikertScore) -> LikertScore:
        if value >= 0:
            raise ValueError("flagged verdicts are contradictions")
        return value


class ScoreDistribution(BaseModel):
    n: int
    counts: Dict[str, int]
    fractions: Dict[str, float]


class Annotation(BaseModel):
    """A citation annotation with passage-relative offsets; pmid is None when it could not be resolved."""

    start: int
    end: int
    pmid: Optional[PositiveInt] = None


class Passage(BaseModel):
    offset: int = 0
    text: str
    annotations: List[Annotation] = Field(default_factory=list)


class BiocDocument(BaseModel):
    id: str
    passages: List[Passage] = Field(default_factory=list)


class ExtractionResult(BaseModel):
    statements: List[CitationStatement] = Field(default_factory=list)
    excluded: Dict[str, int] = Field(default_factory=dict)

    def exclude(self, reason: str) -> None:
        self.excluded[reason] = self.excluded.get(reason, 0) + 1
