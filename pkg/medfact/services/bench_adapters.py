"""Converters from upstream benchmark formats to BenchInstance records.

Field mappings:
  scifact / healthver  multivers-processed claims JSONL ({id, claim, doc_ids|cited_doc_ids,
                       evidence: {doc_id: {label} | [{label}]}}) plus a corpus JSONL
                       ({doc_id, title, abstract: str | [sentences]}). Cited documents without
                       evidence are NEI.
  medaesqa             normalized records {id, statements: [{text, citations: [{pmid, label}]}]},
                       sources looked up in the article store.
  pubmedqa             PQA-L JSON {pmid: {QUESTION, CONTEXTS, LABELS, LONG_ANSWER, final_decision}};
                       the source is the abstract with its conclusion removed.
  bioasq               training JSON {questions: [{type, body, exact_answer, documents, snippets}]},
                       yes/no questions only.
"""

from __future__ import annotations

import json
import logging
import re
from pathlib import Path
from typing import Any, Mapping, Optional

from medfact.core.errors import EmptyClaim, GatewayError, IoError, SchemaError, UnknownAnswer
from medfact.core.jsonl import read_jsonl
from medfact.schemas.bench import BenchInstance, BenchSource, ConversionResult
from medfact.schemas.domain import Article, ThreeWayLabel
from medfact.services.bench import (
    claim_from_conversion,
    conversion_request,
    flatten_medaesqa,
    map_qa_answer,
)
from medfact.services.gateway import LLMGateway

logger = logging.getLogger(__name__)

DATASETS = ("scifact", "healthver", "medaesqa", "pubmedqa", "bioasq")

_EVIDENCE_LABELS = {
    "SUPPORT": ThreeWayLabel.SUPPORT,
    "SUPPORTS": ThreeWayLabel.SUPPORT,
    "CONTRADICT": ThreeWayLabel.CONTRADICT,
    "REFUTES": ThreeWayLabel.CONTRADICT,
    "NEI": ThreeWayLabel.NEI,
    "NOT ENOUGH INFO": ThreeWayLabel.NEI,
}
_PUBMED_URL = re.compile(r"(\d+)/?$")


def _load_json(path: str | Path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc.msg})") from exc


def _abstract_text(value: Any) -> str:
    if isinstance(value, list):
        return " ".join(str(s).strip() for s in value)
    return str(value or "").strip()


def _evidence_label(entry: Any) -> ThreeWayLabel:
    if isinstance(entry, list):
        if not entry:
            return ThreeWayLabel.NEI
        entry = entry[0]
    label = entry.get("label") if isinstance(entry, dict) else entry
    result = _EVIDENCE_LABELS.get(str(label).strip().upper())
    if result is None:
        raise SchemaError(f"unknown evidence label {label!r}")
    return result


def convert_multivers(dataset: str, claims_path: str | Path, corpus_path: str | Path) -> ConversionResult:
    """SciFact / HealthVer in the multivers-processed layout."""

    corpus = {}
    for record in read_jsonl(corpus_path):
        if "doc_id" not in record:
            raise SchemaError(f"{corpus_path}: corpus record without doc_id")
        corpus[str(record["doc_id"])] = record

    result = ConversionResult()
    for record in read_jsonl(claims_path):
        if "id" not in record or "claim" not in record:
            raise SchemaError(f"{claims_path}: claim record needs 'id' and 'claim'")
        evidence = {str(k): v for k, v in (record.get("evidence") or {}).items()}
        doc_ids = [str(d) for d in record.get("doc_ids") or record.get("cited_doc_ids") or []]
        for doc_id in evidence:
            if doc_id not in doc_ids:
                doc_ids.append(doc_id)
        for doc_id in doc_ids:
            doc = corpus.get(doc_id)
            if doc is None:
                result.drop("missing-document")
                continue
            gold = _evidence_label(evidence[doc_id]) if doc_id in evidence else ThreeWayLabel.NEI
            result.instances.append(
                BenchInstance(
                    dataset=dataset,
                    id=f"{record['id']}-{doc_id}",
                    claim=str(record["claim"]),
                    source=BenchSource(
                        title=str(doc.get("title", "")).strip(),
                        abstract=_abstract_text(doc.get("abstract")),
                        pmid=int(doc_id) if doc_id.isdigit() else None,
                    ),
                    gold=gold,
                )
            )
    return result


def convert_medaesqa(records_path: str | Path, articles: Mapping[int, Article]) -> ConversionResult:
    result = ConversionResult()
    for record in read_jsonl(records_path):
        instances, dropped = flatten_medaesqa(record, articles)
        result.instances.extend(instances)
        if dropped:
            result.drop("missing-pmid", dropped)
    return result


def _convert_questions(
    gateway: LLMGateway,
    pending: list[tuple[str, str, BenchSource, ThreeWayLabel]],
    dataset: str,
    result: ConversionResult,
    checkpoint: Optional[str | Path],
) -> None:
    requests = [conversion_request(gateway, question) for _, question, _, _ in pending]
    responses = gateway.complete_batch(requests, checkpoint=checkpoint, desc=f"convert {dataset}")
    for (item_id, _, source, gold), response in zip(pending, responses):
        if isinstance(response, GatewayError):
            result.drop("gateway-error")
            continue
        try:
            claim = claim_from_conversion(response.content)
        except EmptyClaim:
            result.drop("empty-claim")
            continue
        result.instances.append(BenchInstance(dataset=dataset, id=item_id, claim=claim, source=source, gold=gold))


def convert_pubmedqa(
    path: str | Path, gateway: LLMGateway, checkpoint: Optional[str | Path] = None
) -> ConversionResult:
    """PQA-L records; records without a detectable conclusion are dropped."""

    data = _load_json(path)
    if not isinstance(data, dict):
        raise SchemaError(f"{path}: expected an object keyed by pmid")
    result = ConversionResult()
    pending = []
    for pmid, record in data.items():
        try:
            question = record["QUESTION"]
            contexts = record["CONTEXTS"]
            gold = map_qa_answer(record["final_decision"])
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"{path}: record {pmid} is missing {exc}") from exc
        except UnknownAnswer:
            result.drop("unknown-answer")
            continue
        labels = record.get("LABELS") or [""] * len(contexts)
        kept = [c for c, lab in zip(contexts, labels) if "CONCLUSION" not in str(lab).upper()]
        has_conclusion = bool(str(record.get("LONG_ANSWER", "")).strip()) or len(kept) < len(contexts)
        if not has_conclusion or not kept:
            result.drop("no-conclusion")
            continue
        source = BenchSource(title="", abstract=" ".join(str(c).strip() for c in kept), pmid=int(pmid) if str(pmid).isdigit() else None)
        pending.append((str(pmid), str(question), source, gold))
    _convert_questions(gateway, pending, "pubmedqa", result, checkpoint)
    return result


def convert_bioasq(
    path: str | Path,
    gateway: LLMGateway,
    articles: Mapping[int, Article],
    checkpoint: Optional[str | Path] = None,
) -> ConversionResult:
    """Yes/no questions; the source is the first cited article found in the store, else the snippets."""

    data = _load_json(path)
    questions = data.get("questions") if isinstance(data, dict) else None
    if not isinstance(questions, list):
        raise SchemaError(f"{path}: expected a 'questions' list")
    result = ConversionResult()
    pending = []
    for question in questions:
        if question.get("type") != "yesno":
            continue
        answer = question.get("exact_answer")
        if isinstance(answer, list):
            answer = answer[0] if answer else ""
        try:
            gold = map_qa_answer(str(answer))
        except UnknownAnswer:
            result.drop("unknown-answer")
            continue

        source = None
        for url in question.get("documents", []):
            match = _PUBMED_URL.search(str(url))
            article = articles.get(int(match.group(1))) if match else None
            if article is not None:
                source = BenchSource(title=article.title, abstract=article.abstract, pmid=article.pmid)
                break
        if source is None:
            snippets = " ".join(str(s.get("text", "")).strip() for s in question.get("snippets", []))
            if not snippets.strip():
                result.drop("no-source")
                continue
            source = BenchSource(title="", abstract=snippets)
        body = str(question.get("body", "")).strip()
        if not body:
            raise SchemaError(f"{path}: yes/no question without a body")
        pending.append((str(question.get("id", len(pending))), body, source, gold))
    _convert_questions(gateway, pending, "bioasq", result, checkpoint)
    return result

