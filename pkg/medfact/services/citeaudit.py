"""Citation audit: extraction parsing, normalization, PMID mapping and hallucination metrics."""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from typing import Any, Iterable, Mapping, Optional, Protocol, Sequence

from medfact.core.errors import EmptySet, EmptyText, JsonError, NoIdentifier, SchemaError, ServiceError
from medfact.schemas.audit import (
    AuditMetrics,
    AuditRecord,
    CitationStyle,
    ClaimCitation,
    MappingMethod,
    MetricEstimate,
    PmidMapping,
)
from medfact.schemas.config import BootstrapSettings
from medfact.schemas.domain import Article
from medfact.services.bench import bootstrap_ci
from medfact.services.verification import is_supported

logger = logging.getLogger(__name__)

# mean PMID of the human expert citations, the recency reference line
HUMAN_REFERENCE_AVG_PMID = 27696376

_FENCE = re.compile(r"```(?:json|JSON)?\s*(.*?)```", re.DOTALL)
_ENUMERATION = re.compile(r"^(?:\[\d+\]|\(\d+\)|\d+[.)](?!\d)(?=\s*\S))\s*")
_TRAILING = " .;,"
_PMID_MARKER = re.compile(r"pmid\s*[:#=]?\s*(\d+)", re.IGNORECASE)
_PUBMED_URL = re.compile(r"pubmed(?:\.ncbi\.nlm\.nih\.gov)?/(\d+)", re.IGNORECASE)
_BARE_PMID = re.compile(r"(?<![\w./])\d{6,9}(?![\w/])")
_DOI = re.compile(r"10\.\d{4,9}/\S+")
_DOI_TRAILING = ".,;:)]}>\"'"


class CitationMatcher(Protocol):
    def match(self, citation: str) -> list[int]: ...


class IdConverter(Protocol):
    def to_pmid(self, doi: str) -> Optional[int]: ...


def parse_extraction_json(model_output: str, style_hint: CitationStyle = CitationStyle.UNKNOWN) -> list[ClaimCitation]:
    """Parse the first JSON array in the extractor's output, tolerating code fences."""

    fenced = _FENCE.search(model_output)
    text = fenced.group(1) if fenced else model_output

    decoder = json.JSONDecoder()
    items: Any = None
    position = text.find("[")
    while position >= 0:
        try:
            items, _ = decoder.raw_decode(text, position)
            break
        except json.JSONDecodeError:
            position = text.find("[", position + 1)
    if not isinstance(items, list):
        raise JsonError("no JSON array found in extraction output")

    pairs = []
    for index, item in enumerate(items):
        if not isinstance(item, dict) or "claim" not in item or "citation" not in item:
            raise SchemaError(f"item {index} needs 'claim' and 'citation'")
        claim, citation = item["claim"], item["citation"]
        if not isinstance(claim, str) or not isinstance(citation, str) or not claim.strip() or not citation.strip():
            raise SchemaError(f"item {index}: claim and citation must be nonempty strings")
        pairs.append(ClaimCitation(claim=claim, citation=citation, style_hint=style_hint))
    return pairs


def _clean(raw: str) -> str:
    text = " ".join(raw.split())
    while True:
        cleaned = _ENUMERATION.sub("", text).rstrip(_TRAILING)
        if cleaned == text:
            return text
        text = cleaned


def _extract_pmid(text: str) -> Optional[str]:
    for pattern in (_PMID_MARKER, _PUBMED_URL):
        match = pattern.search(text)
        if match:
            return match.group(1)
    if text.isdigit():
        return text
    match = _BARE_PMID.search(text)
    return match.group(0) if match else None


def _extract_doi(text: str) -> Optional[str]:
    match = _DOI.search(text)
    if match is None:
        return None
    return match.group(0).rstrip(_DOI_TRAILING) or None


def normalize_citation(raw: str, style_hint: CitationStyle) -> str:
    """Strip enumeration and trailing punctuation; reduce PMID/DOI citations to the bare identifier."""

    text = _clean(raw)
    if style_hint is CitationStyle.PMID:
        pmid = _extract_pmid(text)
        if pmid is None or int(pmid) == 0:
            raise NoIdentifier(f"no PMID in citation {raw!r}")
        return str(int(pmid))
    if style_hint is CitationStyle.DOI:
        doi = _extract_doi(text)
        if doi is None:
            raise NoIdentifier(f"no DOI in citation {raw!r}")
        return doi
    if not text:
        raise EmptyText(f"citation {raw!r} is empty after normalization")
    return text


def map_to_pmid(
    citation: str,
    style_hint: CitationStyle,
    articles: Mapping[int, Article],
    matcher: Optional[CitationMatcher] = None,
    idconv: Optional[IdConverter] = None,
) -> PmidMapping:
    """Resolve a normalized citation; service failures become Unmapped("service-error")."""

    if style_hint is CitationStyle.PMID:
        pmid = int(citation)
        if pmid in articles:
            return PmidMapping.to(pmid, MappingMethod.DIRECT)
        return PmidMapping.failed("unknown-pmid", MappingMethod.DIRECT)

    if style_hint is CitationStyle.DOI:
        if idconv is None:
            raise ValueError("DOI citations need an ID converter client")
        try:
            pmid = idconv.to_pmid(citation)
        except ServiceError as exc:
            logger.warning(f"ID converter failed for {citation!r}: {exc}")
            return PmidMapping.failed("service-error", MappingMethod.ID_CONVERTER)
        if pmid is None:
            return PmidMapping.failed("no-match", MappingMethod.ID_CONVERTER)
        return PmidMapping.to(pmid, MappingMethod.ID_CONVERTER)

    if matcher is None:
        raise ValueError("free-text citations need a citation matcher client")
    try:
        candidates = matcher.match(citation)
    except ServiceError as exc:
        logger.warning(f"Citation matcher failed for {citation!r}: {exc}")
        return PmidMapping.failed("service-error", MappingMethod.CITATION_MATCHER)
    if not candidates:
        return PmidMapping.failed("no-match", MappingMethod.CITATION_MATCHER)
    logger.debug(f"Matcher candidates for {citation!r}: {candidates}")
    return PmidMapping.to(candidates[0], MappingMethod.CITATION_MATCHER, list(candidates))


def _estimate(values: Sequence[float], bootstrap: BootstrapSettings) -> MetricEstimate:
    if not values:
        return MetricEstimate(value=None, n=0)
    lo, hi = bootstrap_ci(values, bootstrap.iterations, bootstrap.level, bootstrap.seed)
    return MetricEstimate(value=sum(values) / len(values), lo=lo, hi=hi, n=len(values))


def compute_metrics(
    records: Sequence[AuditRecord],
    answer_ids: Optional[Iterable[str]] = None,
    bootstrap: Optional[BootstrapSettings] = None,
) -> AuditMetrics:
    """Claims per answer, mapping rate, mean PMID, hallucination and support rates, with bootstrap CIs.

    Answers that yielded no claims are only counted when listed in `answer_ids`.
    """

    bootstrap = bootstrap or BootstrapSettings()
    answers = sorted(set(answer_ids or []) | {r.answer_id for r in records})
    if not answers:
        raise EmptySet("no answers to summarise")

    claims_by_answer = Counter(r.answer_id for r in records)
    mapped = [r for r in records if r.mapping.mapped]
    verified = [r for r in mapped if r.verdict is not None]
    supported = [r for r in verified if is_supported(r.verdict)]  # type: ignore[arg-type]
    supported_by_answer = Counter(r.answer_id for r in supported)

    mapped_flags = [1.0 if r.mapping.mapped else 0.0 for r in records]
    supported_flags = [1.0 if is_supported(r.verdict) else 0.0 for r in verified]  # type: ignore[arg-type]
    hallucinated_flags = [1.0 - f for f in supported_flags]

    metrics = AuditMetrics(
        answers=len(answers),
        claims=len(records),
        mapped=len(mapped),
        verified=len(verified),
        claims_per_answer=_estimate([float(claims_by_answer[a]) for a in answers], bootstrap),
        mapping_rate=_estimate(mapped_flags, bootstrap),
        avg_pmid=_estimate([float(r.mapping.pmid) for r in mapped], bootstrap),  # type: ignore[arg-type]
        hallucination_rate=_estimate(hallucinated_flags, bootstrap),
        supported_fraction=_estimate(supported_flags, bootstrap),
        supported_count_per_answer=_estimate([float(supported_by_answer[a]) for a in answers], bootstrap),
        human_reference_avg_pmid=HUMAN_REFERENCE_AVG_PMID,
    )
    logger.info(
        f"Audited {len(records)} claims over {len(answers)} answers",
        extra={"mapped": len(mapped), "verified": len(verified)},
    )
    return metrics
