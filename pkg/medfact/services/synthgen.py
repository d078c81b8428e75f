"""Claim generation, screening, panel consensus and training-instance assembly."""

from __future__ import annotations

import logging
import random
from collections import Counter
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from medfact.core.errors import EmptyClaim, EmptyList, EmptySet
from medfact.schemas.domain import Article, Claim, LikertScore, Polarity, ThreeWayLabel, VerificationReport
from medfact.schemas.gateway import ChatRequest
from medfact.schemas.synth import (
    ConsensusResult,
    DatasetStats,
    Dropped,
    PanelVerdict,
    TrainingInstance,
    WordCountSummary,
)
from medfact.services.gateway import LLMGateway
from medfact.services.prompts import REFUTED_CLAIM_PROMPT, SUPPORTED_CLAIM_PROMPT, VERIFICATION_PROMPT, article_text
from medfact.services.verification import coarse_label, parse_verification_output

logger = logging.getLogger(__name__)

# label distribution of the full-scale corpus, reported alongside desk-scale stats
REFERENCE_COARSE_FRACTIONS = {
    ThreeWayLabel.SUPPORT.value: 0.383,
    ThreeWayLabel.NEI.value: 0.364,
    ThreeWayLabel.CONTRADICT.value: 0.253,
}


def claim_id(article: Article, polarity: Polarity) -> str:
    return f"{article.pmid}-{polarity.suffix}"


def claim_request(gateway: LLMGateway, article: Article, polarity: Polarity) -> ChatRequest:
    prompt = SUPPORTED_CLAIM_PROMPT if polarity is Polarity.SUPPORTED_BY else REFUTED_CLAIM_PROMPT
    return gateway.request(prompt, title=article.title, abstract=article.abstract)


def claim_from_response(article: Article, polarity: Polarity, content: str) -> Claim:
    text = " ".join(content.split())
    if not text:
        raise EmptyClaim(f"empty claim for pmid {article.pmid}")
    return Claim(
        id=claim_id(article, polarity),
        text=text,
        source_pmid=article.pmid,
        polarity=polarity,
    )


def generate_claim(gateway: LLMGateway, article: Article, polarity: Polarity) -> Claim:
    """Ask the claim generator for one claim the article supports or refutes."""

    if not article.title.strip() or not article.abstract.strip():
        raise ValueError(f"article {article.pmid} needs a title and an abstract")
    response = gateway.complete(claim_request(gateway, article, polarity))
    return claim_from_response(article, polarity, response.content)


def verification_request(gateway: LLMGateway, claim: Claim | str, article: Article) -> ChatRequest:
    return gateway.request(
        VERIFICATION_PROMPT,
        article=article_text(article.title, article.abstract),
        claim=claim.text if isinstance(claim, Claim) else claim,
    )


def initial_verdict(gateway: LLMGateway, claim: Claim, article: Article) -> VerificationReport:
    """Screen one pair with the verification prompt; parse errors propagate to the caller."""

    response = gateway.complete(verification_request(gateway, claim, article))
    return parse_verification_output(response.content)


def screen_controversial(initial_scores: Sequence[LikertScore | int]) -> bool:
    """A claim is controversial when its pairs span at least two coarse labels."""

    if not initial_scores:
        raise EmptyList("no scorable pairs to screen")
    return len({coarse_label(s) for s in initial_scores}) >= 2


def consensus(scores: Sequence[LikertScore | int]) -> ConsensusResult:
    """Agreed(m) when m occurs at least twice and every score is within one point of m."""

    if len(scores) != 3:
        raise ValueError(f"consensus needs exactly three scores, got {len(scores)}")
    values = [int(s) for s in scores]
    for value, count in Counter(values).most_common():
        if count >= 2 and all(abs(v - value) <= 1 for v in values):
            return ConsensusResult.agree(value)
    return ConsensusResult.none()


def assemble_instance(
    claim: Claim,
    pmid: int,
    panel: Sequence[PanelVerdict],
    rng_seed: int,
    is_source_article: bool = False,
) -> Union[TrainingInstance, Dropped]:
    """Turn three panel verdicts into a training row, drawing the rationale among agreeing members."""

    if any(v.report is None for v in panel):
        return Dropped(claim_id=claim.id, pmid=pmid, reason="unscorable")
    result = consensus([v.report.score for v in panel])  # type: ignore[union-attr]
    if not result.agreed:
        return Dropped(claim_id=claim.id, pmid=pmid, reason="no-consensus")

    agreeing = [v for v in panel if v.report.score == result.score]  # type: ignore[union-attr]
    chosen = random.Random(f"{rng_seed}:{claim.id}:{pmid}").choice(agreeing)
    return TrainingInstance(
        claim=claim,
        pmid=pmid,
        rationale=chosen.report.rationale,  # type: ignore[union-attr]
        score=result.score,
        is_source_article=is_source_article,
        rationale_from=chosen.model_id,
    )


def _word_counts(texts: Iterable[str]) -> WordCountSummary:
    counts = np.array([len(t.split()) for t in texts], dtype=np.int64)
    return WordCountSummary(
        min=int(counts.min()),
        max=int(counts.max()),
        mean=float(counts.mean()),
        median=float(np.median(counts)),
    )


def dataset_stats(
    instances: Sequence[TrainingInstance],
    articles: Optional[dict[int, Article]] = None,
) -> DatasetStats:
    """Label distribution and word-count summaries of a set of training rows."""

    if not instances:
        raise EmptySet("no instances to summarise")
    n = len(instances)
    by_score = Counter(int(i.score) for i in instances)
    by_label = Counter(coarse_label(i.score).value for i in instances)
    score_keys = [str(s.value) for s in LikertScore]

    article_words = None
    if articles:
        texts = [f"{a.title} {a.abstract}" for p in sorted({i.pmid for i in instances}) if (a := articles.get(p))]
        if texts:
            article_words = _word_counts(texts)

    return DatasetStats(
        n=n,
        unique_claims=len({i.claim.id for i in instances}),
        unique_articles=len({i.pmid for i in instances}),
        score_counts={k: by_score.get(int(k), 0) for k in score_keys},
        score_fractions={k: by_score.get(int(k), 0) / n for k in score_keys},
        coarse_fractions={label.value: by_label.get(label.value, 0) / n for label in ThreeWayLabel},
        claim_words=_word_counts(i.claim.text for i in instances),
        rationale_words=_word_counts(i.rationale for i in instances),
        article_words=article_words,
        reference_coarse_fractions=dict(REFERENCE_COARSE_FRACTIONS),
    )
