from __future__ import annotations

from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from medfact.schemas.domain import ThreeWayLabel


class BenchSource(BaseModel):
    """Evidence for a benchmark claim; title may be empty when the source has none."""

    model_config = ConfigDict(frozen=True)

    title: str = ""
    abstract: str
    pmid: Optional[int] = None


class BenchInstance(BaseModel):
    model_config = ConfigDict(frozen=True)

    dataset: str = Field(..., min_length=1)
    id: Optional[str] = None
    claim: str
    source: BenchSource
    gold: ThreeWayLabel

    @field_validator("claim")
    @classmethod
    def _claim_nonempty(cls, value: str) -> str:
        value = value.strip()
        if not value:
            raise ValueError("claim must not be empty")
        return value


class EvalSummary(BaseModel):
    per_dataset_accuracy: Dict[str, float]
    macro_average: Optional[float]
    n: Dict[str, int]
    unparseable: Dict[str, int] = Field(default_factory=dict)
    confidence_intervals: Dict[str, Tuple[float, float]] = Field(default_factory=dict)


class ConversionResult(BaseModel):
    """Instances converted from one source dataset and the drop count per reason."""

    instances: List[BenchInstance] = Field(default_factory=list)
    dropped: Dict[str, int] = Field(default_factory=dict)

    def drop(self, reason: str, count: int = 1) -> None:
        self.dropped[reason] = self.dropped.get(reason, 0) + count
