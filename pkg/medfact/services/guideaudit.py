"""Guideline audit over BioC documents: single-citation statements, worthiness filter,
contradiction flags and stratified review samples."""

from __future__ import annotations

import json
import logging
import random
import re
from collections import Counter
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from medfact.core.errors import BiocSchemaError, IoError, UnparseableAnswer
from medfact.schemas.audit import (
    Annotation,
    BiocDocument,
    CitationStatement,
    ExtractionResult,
    FlaggedCase,
    Passage,
    ScoreDistribution,
)
from medfact.schemas.config import BiocSettings
from medfact.schemas.domain import LikertScore, VerificationReport
from medfact.schemas.gateway import ChatRequest
from medfact.services.gateway import LLMGateway
from medfact.services.prompts import WORTHINESS_PROMPT

logger = logging.getLogger(__name__)

ABBREVIATIONS = ("e.g.", "i.e.", "Fig.", "Figs.", "et al.", "vs.", "approx.", "Ref.", "Refs.", "No.")
CONTRADICTION_STRATA = (LikertScore.PARTIAL_CONTRADICTION, LikertScore.STRONG_CONTRADICTION)

# terminator, an optional bracketed marker, then whitespace and an uppercase letter
_BOUNDARY = re.compile(r"[.!?](?:\s?\[[^\]\n]{1,40}\])?(?=\s+[A-Z])")
_EMPTY_BRACKETS = re.compile(r"\[\s*[,;\s]*\]|\(\s*[,;\s]*\)")
_SPACE_BEFORE_PUNCT = re.compile(r"\s+([.,;:!?])")


def _int(value: Any, what: str) -> int:
    try:
        return int(value)
    except (TypeError, ValueError) as exc:
        raise BiocSchemaError(f"{what} must be an integer, got {value!r}") from exc


def parse_bioc_document(doc: Mapping[str, Any], settings: Optional[BiocSettings] = None) -> BiocDocument:
    """Read the documents -> passages -> annotations subset of BioC JSON.

    Only annotations whose type infon matches the configured citation type are kept.
    """

    settings = settings or BiocSettings()
    if not isinstance(doc, Mapping) or "passages" not in doc:
        raise BiocSchemaError("document needs 'passages'")
    doc_id = str(doc.get("id", ""))
    passages = []
    for p_index, raw in enumerate(doc["passages"]):
        if not isinstance(raw, Mapping) or "text" not in raw:
            raise BiocSchemaError(f"document {doc_id!r} passage {p_index} has no text")
        offset = _int(raw.get("offset", 0), "passage offset")
        annotations = []
        for ann in raw.get("annotations", []) or []:
            infons = ann.get("infons", {}) or {}
            if infons.get("type") != settings.citation_type:
                continue
            locations = ann.get("locations") or []
            if not locations:
                raise BiocSchemaError(f"document {doc_id!r}: citation annotation without location")
            start = _int(locations[0].get("offset"), "annotation offset") - offset
            length = _int(locations[0].get("length"), "annotation length")
            raw_pmid = str(infons.get(settings.pmid_key, "")).strip()
            pmid = int(raw_pmid) if raw_pmid.isdigit() and int(raw_pmid) > 0 else None
            annotations.append(Annotation(start=start, end=start + length, pmid=pmid))
        passages.append(Passage(offset=offset, text=str(raw["text"]), annotations=annotations))
    return BiocDocument(id=doc_id, passages=passages)


def load_bioc_file(path: str | Path, settings: Optional[BiocSettings] = None) -> list[BiocDocument]:
    """A file holds one collection, a list of collections, or a bare document."""

    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BiocSchemaError(f"{path}: invalid JSON ({exc.msg})") from exc

    collections = data if isinstance(data, list) else [data]
    documents = []
    for collection in collections:
        if isinstance(collection, Mapping) and "passages" in collection:
            documents.append(parse_bioc_document(collection, settings))
        elif isinstance(collection, Mapping) and isinstance(collection.get("documents"), list):
            documents.extend(parse_bioc_document(d, settings) for d in collection["documents"])
        else:
            raise BiocSchemaError(f"{path}: expected a BioC collection or document")
    return documents


def _is_abbreviation(text: str, end: int) -> bool:
    head = text[: end + 1]
    for abbreviation in ABBREVIATIONS:
        if head.endswith(abbreviation):
            before = len(head) - len(abbreviation)
            if before == 0 or not head[before - 1].isalnum():
                return True
    return False


def split_sentences(text: str) -> list[tuple[int, int]]:
    """Sentence spans (start, end) with surrounding whitespace excluded."""

    spans = []
    start = 0
    for match in _BOUNDARY.finditer(text):
        if _is_abbreviation(text, match.start()):
            continue
        spans.append((start, match.end()))
        start = match.end()
    spans.append((start, len(text)))

    trimmed = []
    for s, e in spans:
        while s < e and text[s].isspace():
            s += 1
        while e > s and text[e - 1].isspace():
            e -= 1
        if s < e:
            trimmed.append((s, e))
    return trimmed


def _without_markers(text: str, start: int, end: int, cuts: Sequence[tuple[int, int]]) -> str:
    pieces = []
    cursor = start
    for cut_start, cut_end in sorted(cuts):
        cut_start, cut_end = max(cut_start, start), min(cut_end, end)
        if cut_start > cursor:
            pieces.append(text[cursor:cut_start])
        cursor = max(cursor, cut_end)
    pieces.append(text[cursor:end])
    sentence = _EMPTY_BRACKETS.sub("", "".join(pieces))
    sentence = " ".join(sentence.split())
    return _SPACE_BEFORE_PUNCT.sub(r"\1", sentence)


def extract_citation_statements(document: BiocDocument) -> ExtractionResult:
    """Sentences carrying exactly one citation annotation that resolves to a PMID."""

    result = ExtractionResult()
    for passage in document.passages:
        for start, end in split_sentences(passage.text):
            inside = [a for a in passage.annotations if start <= a.start < end]
            if not inside:
                continue
            if len(inside) > 1:
                result.exclude("multi-citation")
                continue
            annotation = inside[0]
            if annotation.pmid is None:
                result.exclude("unresolvable-pmid")
                continue
            sentence = _without_markers(passage.text, start, end, [(annotation.start, annotation.end)])
            if not sentence:
                result.exclude("empty-sentence")
                continue
            result.statements.append(
                CitationStatement(
                    doc_id=document.id,
                    sentence=sentence,
                    cited_pmid=annotation.pmid,
                    char_span=(start, end),
                )
            )
    return result


def worthiness_request(gateway: LLMGateway, claim: str) -> ChatRequest:
    return gateway.request(WORTHINESS_PROMPT, claim=claim)


def worthiness_from_response(content: str) -> bool:
    answer = content.strip().lower()
    if answer == "yes":
        return True
    if answer == "no":
        return False
    raise UnparseableAnswer(f"expected yes or no, got {content!r}")


def worthiness_filter(gateway: LLMGateway, claim: str) -> bool:
    """True when the filter model says the claim can be fact-checked."""

    if not claim.strip():
        raise ValueError("claim must not be empty")
    return worthiness_from_response(gateway.complete(worthiness_request(gateway, claim)).content)


def score_distribution(scores: Iterable[LikertScore | int]) -> ScoreDistribution:
    counts = Counter(int(s) for s in scores)
    n = sum(counts.values())
    keys = [str(s.value) for s in LikertScore]
    return ScoreDistribution(
        n=n,
        counts={k: counts.get(int(k), 0) for k in keys},
        fractions={k: (counts.get(int(k), 0) / n if n else 0.0) for k in keys},
    )


def flag_contradictions(
    verdicts: Sequence[tuple[CitationStatement, VerificationReport]],
) -> tuple[list[FlaggedCase], ScoreDistribution]:
    flagged = [
        FlaggedCase(statement=statement, verdict=report.score, rationale=report.rationale)
        for statement, report in verdicts
        if report.score < 0
    ]
    return flagged, score_distribution(report.score for _, report in verdicts)


def stratified_sample(flagged: Sequence[FlaggedCase], n_per_stratum: int, seed: int) -> list[FlaggedCase]:
    """Seeded sample without replacement per contradiction level; partial first, then strong."""

    sample: list[FlaggedCase] = []
    for stratum_score in CONTRADICTION_STRATA:
        stratum = [case for case in flagged if case.verdict == stratum_score]
        if len(stratum) < n_per_stratum:
            logger.warning(
                f"Stratum {int(stratum_score)} has {len(stratum)} cases, fewer than {n_per_stratum}",
                extra={"stratum": int(stratum_score)},
            )
        rng = random.Random(f"{seed}:{int(stratum_score)}")
        sample.extend(rng.sample(stratum, min(n_per_stratum, len(stratum))))
    return sample
