"""Three-way benchmark construction and evaluation."""

from __future__ import annotations

import logging
import math
import re
from collections import defaultdict
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from medfact.core.errors import EmptyClaim, EmptySample, LengthMismatch, ParseError, SchemaError, UnknownAnswer
from medfact.core.jsonl import read_jsonl, read_models
from medfact.schemas.bench import BenchInstance, BenchSource, EvalSummary
from medfact.schemas.config import BootstrapSettings
from medfact.schemas.domain import Article, LikertScore, ThreeWayLabel
from medfact.schemas.gateway import ChatRequest
from medfact.services.gateway import LLMGateway
from medfact.services.prompts import QUESTION_CONVERSION_PROMPT
from medfact.services.verification import coarse_label, parse_verification_output

logger = logging.getLogger(__name__)

BENCH_SCHEMA = "bench_instance"

QA_LABELS = {
    "yes": ThreeWayLabel.SUPPORT,
    "maybe": ThreeWayLabel.NEI,
    "no": ThreeWayLabel.CONTRADICT,
}

MEDAESQA_LABELS = {
    "supporting": ThreeWayLabel.SUPPORT,
    "contradicting": ThreeWayLabel.CONTRADICT,
    "neutral": ThreeWayLabel.NEI,
    "not relevant": ThreeWayLabel.NEI,
}

_MARKER = re.compile(r"\s*\[\d+(?:\s*[,–-]\s*\d+)*\]")
_SPACE_BEFORE_PUNCT = re.compile(r"\s+([.,;:!?])")
_BOOTSTRAP_CHUNK = 256


# --- QA repurposing ----------------------------------------------------------


def conversion_request(gateway: LLMGateway, question: str) -> ChatRequest:
    return gateway.request(QUESTION_CONVERSION_PROMPT, question=question.strip())


def claim_from_conversion(content: str) -> str:
    text = " ".join(content.split())
    if not text:
        raise EmptyClaim("question conversion returned no claim")
    return text


def question_to_claim(gateway: LLMGateway, question: str) -> str:
    """Rewrite a yes/no question as the claim that holds when the answer is yes."""

    response = gateway.complete(conversion_request(gateway, question))
    return claim_from_conversion(response.content)


def map_qa_answer(answer: str) -> ThreeWayLabel:
    label = QA_LABELS.get(str(answer).strip().lower())
    if label is None:
        raise UnknownAnswer(f"answer must be yes, maybe or no, got {answer!r}")
    return label


# --- MedAESQA ------------------------------------------------------------------


def strip_citation_markers(text: str) -> str:
    """Remove bracketed markers like "[3]" or "[1, 2]" and tidy the spacing they leave."""

    text = _MARKER.sub("", text)
    text = " ".join(text.split())
    return _SPACE_BEFORE_PUNCT.sub(r"\1", text)


def _medaesqa_label(value: Any, where: str) -> ThreeWayLabel:
    key = " ".join(str(value).strip().lower().replace("_", " ").replace("-", " ").split())
    label = MEDAESQA_LABELS.get(key)
    if label is None:
        raise SchemaError(f"{where}: unknown label {value!r}")
    return label


def flatten_medaesqa(
    record: Mapping[str, Any], articles: Mapping[int, Article]
) -> tuple[list[BenchInstance], int]:
    """Split one answer into (statement, cited PMID) instances.

    Returns the instances and the number of pairs dropped for missing or unknown PMIDs.
    """

    if "statements" not in record or not isinstance(record["statements"], list):
        raise SchemaError("record needs a 'statements' list")
    record_id = str(record.get("id", ""))
    instances: list[BenchInstance] = []
    dropped = 0
    for s_index, statement in enumerate(record["statements"]):
        where = f"record {record_id!r} statement {s_index}"
        if not isinstance(statement, dict) or "text" not in statement or "citations" not in statement:
            raise SchemaError(f"{where}: needs 'text' and 'citations'")
        claim = strip_citation_markers(str(statement["text"]))
        for citation in statement["citations"]:
            if not isinstance(citation, dict) or "label" not in citation:
                raise SchemaError(f"{where}: citation needs a 'label'")
            gold = _medaesqa_label(citation["label"], where)
            raw_pmid = str(citation.get("pmid", "")).strip()
            article = articles.get(int(raw_pmid)) if raw_pmid.isdigit() else None
            if article is None or not claim:
                dropped += 1
                logger.debug(f"Dropping {where}: pmid {raw_pmid!r} not available")
                continue
            instances.append(
                BenchInstance(
                    dataset="medaesqa",
                    id=f"{record_id}-{s_index}-{article.pmid}",
                    claim=claim,
                    source=BenchSource(title=article.title, abstract=article.abstract, pmid=article.pmid),
                    gold=gold,
                )
            )
    return instances, dropped


# --- evaluation ----------------------------------------------------------------


_NUMERIC_SCORE = re.compile(r"[+-]?\d+(?:\.0*)?")


def _likert_label(value: float) -> Optional[ThreeWayLabel]:
    if not float(value).is_integer() or int(value) not in LikertScore._value2member_map_:
        return None
    return coarse_label(int(value))


def prediction_label(record: Any) -> Optional[ThreeWayLabel]:
    """Coarse label of one prediction line, or None when it cannot be interpreted.

    A line is a Likert score (int, integral float or numeric string), a raw verifier output, or an
    object whose `score` is used unless it is null, in which case its `output` is parsed.
    """

    if isinstance(record, dict):
        record = record.get("score") if record.get("score") is not None else record.get("output")
    if isinstance(record, bool):
        return None
    if isinstance(record, (int, float)):
        return _likert_label(record) if math.isfinite(record) else None
    if isinstance(record, str):
        text = record.strip()
        if _NUMERIC_SCORE.fullmatch(text):
            return _likert_label(float(text))
        try:
            return coarse_label(parse_verification_output(record).score)
        except ParseError:
            return None
    return None


def evaluate(
    predictions: str | Path,
    instances: str | Path,
    bootstrap: Optional[BootstrapSettings] = None,
) -> EvalSummary:
    """Per-dataset accuracy and the unweighted macro average; unparseable predictions count as wrong."""

    preds = read_jsonl(predictions)
    gold = read_models(instances, BenchInstance)
    if len(preds) != len(gold):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(gold)} instances")

    hits: dict[str, list[int]] = defaultdict(list)
    unparseable: dict[str, int] = defaultdict(int)
    for pred, inst in zip(preds, gold):
        label = prediction_label(pred)
        if label is None:
            unparseable[inst.dataset] += 1
        hits[inst.dataset].append(int(label == inst.gold))

    tags = sorted(hits)
    accuracy = {tag: sum(hits[tag]) / len(hits[tag]) for tag in tags}
    macro = sum(accuracy.values()) / len(accuracy) if accuracy else None
    intervals = {}
    if bootstrap is not None:
        intervals = {
            tag: bootstrap_ci(hits[tag], bootstrap.iterations, bootstrap.level, bootstrap.seed)
            for tag in tags
        }

    logger.info(f"Evaluated {len(gold)} predictions", extra={"macro_average": macro})
    return EvalSummary(
        per_dataset_accuracy=accuracy,
        macro_average=macro,
        n={tag: len(hits[tag]) for tag in tags},
        unparseable={tag: unparseable.get(tag, 0) for tag in tags},
        confidence_intervals=intervals,
    )


def _nearest_rank(sorted_values: np.ndarray, p: float) -> float:
    n = len(sorted_values)
    rank = min(max(math.ceil(round(p * n, 9)), 1), n)
    return float(sorted_values[rank - 1])


def bootstrap_ci(
    values: Sequence[float],
    iterations: int = 2000,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap interval of the mean, nearest-rank percentiles."""

    data = np.asarray(values, dtype=np.float64)
    if data.size == 0:
        raise EmptySample("cannot bootstrap an empty sample")
    if iterations < 1:
        raise ValueError("iterations must be at least 1")
    if not 0 < level < 1:
        raise ValueError("level must lie strictly between 0 and 1")

    rng = np.random.default_rng(seed)
    n = data.size
    means = np.empty(iterations, dtype=np.float64)
    for start in range(0, iterations, _BOOTSTRAP_CHUNK):
        stop = min(start + _BOOTSTRAP_CHUNK, iterations)
        idx = rng.integers(0, n, size=(stop - start, n))
        means[start:stop] = data[idx].mean(axis=1)
    means.sort()

    alpha = (1 - level) / 2
    return _nearest_rank(means, alpha), _nearest_rank(means, 1 - alpha)
