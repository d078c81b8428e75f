"""Stage orchestration: synthetic corpus stages, run manifest, and the two audit runs."""

from __future__ import annotations

import logging
import os
import time
from collections import Counter, defaultdict
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Sequence

import openai

from medfact.core.errors import (
    AuthError,
    ConfigError,
    EmptyClaim,
    EmptyText,
    GatewayError,
    JsonError,
    NoIdentifier,
    ParseError,
    SchemaError,
    StageInputMissing,
    UnparseableAnswer,
)
from medfact.core.jsonl import read_models, write_json, write_jsonl
from medfact.schemas.audit import AuditMetrics, AuditRecord, CitationStatement, CitationStyle, MappingMethod, PmidMapping
from medfact.schemas.config import PipelineConfig, RunManifest, StageStats
from medfact.schemas.domain import Article, Claim, Polarity
from medfact.schemas.synth import (
    SCREENER_ID,
    Dropped,
    Pair,
    PairVerdicts,
    PanelVerdict,
    TrainingInstance,
)
from medfact.services import citeaudit, guideaudit
from medfact.services.corpus import (
    ArticleStore,
    EmbeddingIndex,
    LexicalHashEmbedder,
    RemoteEmbedder,
    build_index,
    load_articles,
    load_embeddings,
    top_k,
)
from medfact.services.gateway import GatewayFactory
from medfact.services.ncbi import CitationMatcherClient, IdConverterClient
from medfact.services.prompts import CLAIM_EXTRACTION_PROMPT
from medfact.services.synthgen import (
    assemble_instance,
    claim_from_response,
    claim_request,
    dataset_stats,
    screen_controversial,
    verification_request,
)
from medfact.services.verification import parse_verification_output

logger = logging.getLogger(__name__)

SYNTH_STAGES = ("claims", "retrieve", "screen", "panel", "assemble", "stats")

STAGE_OUTPUTS = {
    "claims": "claims.jsonl",
    "retrieve": "pairs.jsonl",
    "screen": "screen_verdicts.jsonl",
    "panel": "verdicts.jsonl",
    "assemble": "instances.jsonl",
    "stats": "stats.json",
}
MANIFEST = "manifest.json"


def _verdict_from(model_id: str, response: Any) -> PanelVerdict:
    if isinstance(response, GatewayError):
        return PanelVerdict(model_id=model_id, error=f"gateway: {type(response).__name__}")
    try:
        return PanelVerdict(model_id=model_id, report=parse_verification_output(response.content))
    except ParseError as exc:
        return PanelVerdict(model_id=model_id, error=f"unscorable: {exc}")


def _is_gateway_failure(verdict: PanelVerdict) -> bool:
    return verdict.error is not None and verdict.error.startswith("gateway:")


class SynthPipeline:
    """Runs the claim -> retrieve -> screen -> panel -> assemble -> stats stages in a workdir.

    A stage whose output file exists is skipped; gateway checkpoints make a partially
    finished stage resumable.
    """

    def __init__(
        self,
        config: PipelineConfig,
        gateways: GatewayFactory,
        store: Optional[ArticleStore] = None,
    ):
        self.config = config
        self.gateways = gateways
        self.workdir = Path(config.workdir)
        self._store = store
        self.manifest = RunManifest(config_hash=config.config_hash(), seed=config.seed)

    # --- plumbing ----------------------------------------------------------------

    def path(self, stage: str) -> Path:
        return self.workdir / STAGE_OUTPUTS[stage]

    def checkpoint(self, name: str) -> Path:
        return self.workdir / "checkpoints" / f"{name}.jsonl"

    @property
    def store(self) -> ArticleStore:
        if self._store is None:
            if not self.config.articles:
                raise ConfigError("articles", "an article file is required")
            if not Path(self.config.articles).exists():
                raise StageInputMissing("claims", f"article file {self.config.articles} not found")
            store = load_articles(self.config.articles)
            if self.config.sample_size:
                store = store.sample(self.config.sample_size, self.config.seed)
            self._store = store
        return self._store

    def _require(self, stage: str, consumer: str) -> Path:
        path = self.path(stage)
        if not path.exists():
            raise StageInputMissing(consumer, f"{path.name} not found; run '{stage}' first")
        return path

    def _article(self, pmid: int) -> Article:
        article = self.store.get(pmid)
        if article is None:
            raise SchemaError(f"pmid {pmid} is not in the article store")
        return article

    def _load_manifest(self) -> None:
        path = self.workdir / MANIFEST
        if path.exists():
            try:
                previous = RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
            except ValueError:
                logger.warning(f"Ignoring unreadable manifest {path}")
                return
            if previous.config_hash == self.manifest.config_hash:
                self.manifest.stages.update(previous.stages)

    def _write_manifest(self) -> None:
        write_json(self.workdir / MANIFEST, self.manifest)

    def run(self, stages: Sequence[str] = SYNTH_STAGES) -> RunManifest:
        unknown = [s for s in stages if s not in SYNTH_STAGES]
        if unknown:
            raise ConfigError("stages", f"unknown stages: {', '.join(unknown)}")
        try:
            self.workdir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError("workdir", f"cannot create {self.workdir}: {exc}") from exc
        self._load_manifest()

        handlers: Dict[str, Callable[[], StageStats]] = {
            "claims": self.generate_claims,
            "retrieve": self.retrieve,
            "screen": self.screen,
            "panel": self.panel,
            "assemble": self.assemble,
            "stats": self.stats,
        }
        for stage in SYNTH_STAGES:
            if stage not in stages:
                continue
            if self.path(stage).exists():
                logger.info(f"Skipping stage '{stage}': output already present", extra={"stage": stage})
                previous = self.manifest.stages.get(stage, StageStats())
                self.manifest.stages[stage] = previous.model_copy(update={"skipped": True})
                continue
            started = time.monotonic()
            logger.info(f"Starting stage '{stage}'", extra={"stage": stage})
            stats = handlers[stage]()
            stats = stats.model_copy(update={"seconds": round(time.monotonic() - started, 3)})
            self.manifest.stages[stage] = stats
            self._write_manifest()
            logger.info(
                f"Finished stage '{stage}'",
                extra={"stage": stage, **stats.model_dump(exclude={"skipped"})},
            )
        self._write_manifest()
        return self.manifest

    # --- stages ------------------------------------------------------------------

    def generate_claims(self) -> StageStats:
        """Two claims per article: one it should support, one it should refute."""

        gateway = self.gateways.get("claimgen")
        jobs = [(a, p) for a in self.store for p in (Polarity.SUPPORTED_BY, Polarity.REFUTED_BY)]
        jobs.sort(key=lambda job: (job[0].pmid, job[1].suffix != "S"))
        requests = [claim_request(gateway, article, polarity) for article, polarity in jobs]
        responses = gateway.complete_batch(requests, checkpoint=self.checkpoint("claims"), desc="claims")

        claims: list[Claim] = []
        dropped = errors = 0
        for (article, polarity), response in zip(jobs, responses):
            if isinstance(response, GatewayError):
                errors += 1
                continue
            try:
                claims.append(claim_from_response(article, polarity, response.content))
            except EmptyClaim:
                dropped += 1
                logger.debug(f"Empty claim for pmid {article.pmid} ({polarity.value})")
        write_jsonl(self.path("claims"), "claim", claims)
        return StageStats(inputs=len(jobs), outputs=len(claims), dropped=dropped, errors=errors)

    def _index(self) -> tuple[EmbeddingIndex, Any]:
        config = self.config
        if config.embed_backend == "remote":
            settings = config.gateway
            api_key = os.getenv(settings.api_key_env)
            if not api_key:
                raise AuthError(f"environment variable {settings.api_key_env} is not set")
            client = openai.OpenAI(
                api_key=api_key, base_url=settings.base_url, timeout=settings.timeout, max_retries=2
            )
            query_embedder: Any = RemoteEmbedder(client, config.embed_model, config.embed_dim)
        else:
            query_embedder = LexicalHashEmbedder(config.embed_dim)

        if config.embeddings:
            if not Path(config.embeddings).exists():
                raise StageInputMissing("retrieve", f"embeddings file {config.embeddings} not found")
            index = load_embeddings(config.embeddings, self.store)
            if index.dim != query_embedder.dim and config.embed_backend == "fallback":
                query_embedder = LexicalHashEmbedder(index.dim)
            return index, query_embedder
        return build_index(self.store, query_embedder), query_embedder

    def retrieve(self) -> StageStats:
        """Pair every claim with its top-k most similar articles."""

        claims = read_models(self._require("claims", "retrieve"), Claim)
        index, embedder = self._index()
        pairs: list[Pair] = []
        dropped = 0
        for claim in claims:
            try:
                hits = top_k(index, embedder.embed(claim.text), self.config.k)
            except EmptyText:
                hits = []
            if not hits:
                dropped += 1
                continue
            for rank, (pmid, cosine) in enumerate(hits, start=1):
                pairs.append(
                    Pair(
                        claim=claim,
                        pmid=pmid,
                        rank=rank,
                        cosine=round(cosine, 6),
                        is_source_article=pmid == claim.source_pmid,
                    )
                )
        write_jsonl(self.path("retrieve"), "pair", pairs)
        logger.info(f"Retrieved {len(pairs)} pairs for {len(claims)} claims", extra={"k": self.config.k})
        return StageStats(inputs=len(claims), outputs=len(claims) - dropped, dropped=dropped)

    def _pairs(self, consumer: str) -> list[Pair]:
        return read_models(self._require("retrieve", consumer), Pair)

    def screen(self) -> StageStats:
        """First verification pass over every pair with the screener model."""

        pairs = self._pairs("screen")
        gateway = self.gateways.get("screener")
        requests = [verification_request(gateway, p.claim, self._article(p.pmid)) for p in pairs]
        responses = gateway.complete_batch(requests, checkpoint=self.checkpoint("screen"), desc="screen")

        records = []
        for pair, response in zip(pairs, responses):
            verdict = _verdict_from(SCREENER_ID, response)
            records.append(PairVerdicts(claim_id=pair.claim.id, pmid=pair.pmid, verdicts=[verdict]))
        errors = sum(1 for r in records if _is_gateway_failure(r.verdicts[0]))
        unscorable = sum(1 for r in records if r.verdicts[0].report is None) - errors
        write_jsonl(self.path("screen"), "screen_verdict", records)
        return StageStats(
            inputs=len(pairs), outputs=len(pairs) - unscorable - errors, dropped=unscorable, errors=errors
        )

    def _screen_verdicts(self, consumer: str) -> Dict[tuple[str, int], PanelVerdict]:
        records = read_models(self._require("screen", consumer), PairVerdicts)
        return {(r.claim_id, r.pmid): r.verdicts[0] for r in records}

    def controversial_claims(self, pairs: Sequence[Pair], screened: Dict[tuple[str, int], PanelVerdict]) -> set[str]:
        scores: Dict[str, list[int]] = defaultdict(list)
        for pair in pairs:
            verdict = screened.get((pair.claim.id, pair.pmid))
            if verdict is not None and verdict.report is not None:
                scores[pair.claim.id].append(int(verdict.report.score))
        return {claim_id for claim_id, values in scores.items() if values and screen_controversial(values)}

    def panel(self) -> StageStats:
        """Three fresh panel verdicts for every pair of a controversial claim."""

        pairs = self._pairs("panel")
        screened = self._screen_verdicts("panel")
        controversial = self.controversial_claims(pairs, screened)
        routed = [p for p in pairs if p.claim.id in controversial]
        logger.info(
            f"{len(controversial)} controversial claims, {len(routed)} pairs routed to the panel",
            extra={"bypassed": len(pairs) - len(routed)},
        )

        columns = []
        for member in self.config.panel:
            gateway = self.gateways.get(f"panel.{member}")
            requests = [verification_request(gateway, p.claim, self._article(p.pmid)) for p in routed]
            responses = gateway.complete_batch(
                requests, checkpoint=self.checkpoint(f"panel.{member}"), desc=f"panel {member}"
            )
            columns.append([_verdict_from(member, r) for r in responses])

        records = [
            PairVerdicts(claim_id=pair.claim.id, pmid=pair.pmid, verdicts=[column[i] for column in columns])
            for i, pair in enumerate(routed)
        ]
        errors = sum(1 for r in records if any(_is_gateway_failure(v) for v in r.verdicts))
        write_jsonl(self.path("panel"), "panel_verdict", records)
        return StageStats(inputs=len(routed), outputs=len(routed) - errors, errors=errors)

    def assemble(self) -> StageStats:
        """Consensus rows for panel pairs; screener rows for the pairs that bypassed the panel."""

        pairs = self._pairs("assemble")
        screened = self._screen_verdicts("assemble")
        panel = {
            (r.claim_id, r.pmid): r.verdicts
            for r in read_models(self._require("panel", "assemble"), PairVerdicts)
        }

        instances: list[TrainingInstance] = []
        dropped: list[Dropped] = []
        errors = 0
        for pair in pairs:
            key = (pair.claim.id, pair.pmid)
            verdicts = panel.get(key)
            if verdicts is None:
                screen_verdict = screened.get(key)
                verdicts = [screen_verdict] if screen_verdict is not None else []
            if not verdicts or any(_is_gateway_failure(v) for v in verdicts):
                errors += 1
                dropped.append(Dropped(claim_id=pair.claim.id, pmid=pair.pmid, reason="gateway-error"))
                continue

            if len(verdicts) == 1:
                verdict = verdicts[0]
                if verdict.report is None:
                    outcome: Any = Dropped(claim_id=pair.claim.id, pmid=pair.pmid, reason="unscorable")
                else:
                    outcome = TrainingInstance(
                        claim=pair.claim,
                        pmid=pair.pmid,
                        rationale=verdict.report.rationale,
                        score=verdict.report.score,
                        is_source_article=pair.is_source_article,
                        rationale_from=verdict.model_id,
                    )
            else:
                outcome = assemble_instance(
                    pair.claim, pair.pmid, verdicts, self.config.seed, pair.is_source_article
                )
            if isinstance(outcome, TrainingInstance):
                instances.append(outcome)
            else:
                dropped.append(outcome)

        reasons = Counter(d.reason for d in dropped)
        write_jsonl(self.workdir / "dropped.jsonl", "dropped", dropped)
        write_jsonl(self.path("assemble"), "training_instance", instances)
        logger.info(f"Assembled {len(instances)} instances", extra={"dropped": dict(reasons)})
        return StageStats(
            inputs=len(pairs), outputs=len(instances), dropped=len(dropped) - errors, errors=errors
        )

    def stats(self) -> StageStats:
        instances = read_models(self._require("assemble", "stats"), TrainingInstance)
        articles = self.store.articles if self.config.articles or self._store is not None else None
        write_json(self.path("stats"), dataset_stats(instances, articles))
        return StageStats(inputs=len(instances), outputs=len(instances))


# --- citation audit ---------------------------------------------------------------


def _answer_files(answers_dir: Path) -> list[Path]:
    if not answers_dir.is_dir():
        raise StageInputMissing("audit-citations", f"answers directory {answers_dir} not found")
    return sorted(p for p in answers_dir.iterdir() if p.suffix in (".txt", ".md") and p.is_file())


def run_citation_audit(
    config: PipelineConfig,
    gateways: GatewayFactory,
    store: ArticleStore,
    answers_dir: str | Path,
    style: CitationStyle,
    matcher: Optional[citeaudit.CitationMatcher] = None,
    idconv: Optional[citeaudit.IdConverter] = None,
    metrics_path: Optional[str | Path] = None,
    records_path: Optional[str | Path] = None,
) -> tuple[list[AuditRecord], AuditMetrics]:
    """Extract claim-citation pairs from answer files, resolve and verify them, and compute metrics.

    Writes metrics.json and records.jsonl (default: into the workdir).
    """

    workdir = Path(config.workdir)
    metrics_path = Path(metrics_path or workdir / "metrics.json")
    records_path = Path(records_path or metrics_path.with_name("records.jsonl"))
    files = _answer_files(Path(answers_dir))
    answer_ids = [p.stem for p in files]
    checkpoints = workdir / "checkpoints"

    extractor = gateways.get("extractor")
    requests = [extractor.request(CLAIM_EXTRACTION_PROMPT, model_answer=p.read_text(encoding="utf-8")) for p in files]
    responses = extractor.complete_batch(requests, checkpoint=checkpoints / "extract.jsonl", desc="extract")

    pairs: list[tuple[str, Any]] = []
    for answer_id, response in zip(answer_ids, responses):
        if isinstance(response, GatewayError):
            logger.warning(f"Extraction failed for answer {answer_id}: {response}")
            continue
        try:
            extracted = citeaudit.parse_extraction_json(response.content, style)
        except (JsonError, SchemaError) as exc:
            logger.warning(f"Unusable extraction for answer {answer_id}: {exc}")
            continue
        pairs.extend((answer_id, item) for item in extracted)

    if matcher is None and not style.is_identifier:
        matcher = CitationMatcherClient(settings=config.ncbi)
    if idconv is None and style is CitationStyle.DOI:
        idconv = IdConverterClient(settings=config.ncbi)

    records: list[AuditRecord] = []
    cache: Dict[str, PmidMapping] = {}
    for answer_id, item in pairs:
        try:
            normalized = citeaudit.normalize_citation(item.citation, style)
        except (NoIdentifier, EmptyText) as exc:
            method = MappingMethod.ID_CONVERTER if style is CitationStyle.DOI else (
                MappingMethod.DIRECT if style is CitationStyle.PMID else MappingMethod.CITATION_MATCHER
            )
            records.append(
                AuditRecord(
                    answer_id=answer_id,
                    claim=item.claim,
                    citation=item.citation,
                    mapping=PmidMapping.failed("no-identifier", method),
                    error=str(exc),
                )
            )
            continue
        if normalized not in cache:
            cache[normalized] = citeaudit.map_to_pmid(normalized, style, store.articles, matcher, idconv)
        records.append(
            AuditRecord(
                answer_id=answer_id,
                claim=item.claim,
                citation=item.citation,
                normalized=normalized,
                mapping=cache[normalized],
            )
        )

    to_verify = []
    for i, record in enumerate(records):
        if not record.mapping.mapped:
            continue
        if record.mapping.pmid in store:
            to_verify.append(i)
        else:
            records[i] = record.model_copy(update={"error": "article-not-in-store"})

    verifier = gateways.get("verifier")
    requests = [
        verification_request(verifier, records[i].claim, store.articles[records[i].mapping.pmid])  # type: ignore[index]
        for i in to_verify
    ]
    responses = verifier.complete_batch(requests, checkpoint=checkpoints / "verify.jsonl", desc="verify")
    for i, response in zip(to_verify, responses):
        verdict = _verdict_from("verifier", response)
        if verdict.report is None:
            records[i] = records[i].model_copy(update={"error": verdict.error})
        else:
            records[i] = records[i].model_copy(
                update={"verdict": verdict.report.score, "rationale": verdict.report.rationale}
            )

    metrics = citeaudit.compute_metrics(records, answer_ids, config.bootstrap)
    write_jsonl(records_path, "audit_record", records)
    write_json(metrics_path, metrics)
    return records, metrics


# --- guideline audit --------------------------------------------------------------


def run_guideline_audit(
    config: PipelineConfig,
    gateways: GatewayFactory,
    store: ArticleStore,
    bioc_dir: str | Path,
    out: str | Path,
    summary_path: str | Path,
    sample_size: int = 50,
    seed: Optional[int] = None,
) -> Dict[str, Any]:
    """Extract single-citation statements, filter, verify against the cited abstract, flag and sample."""

    bioc_dir = Path(bioc_dir)
    if not bioc_dir.is_dir():
        raise StageInputMissing("audit-guidelines", f"BioC directory {bioc_dir} not found")
    seed = config.seed if seed is None else seed
    checkpoints = Path(config.workdir) / "checkpoints"

    statements: list[CitationStatement] = []
    excluded: Counter = Counter()
    for path in sorted(bioc_dir.glob("*.json")):
        for document in guideaudit.load_bioc_file(path, config.bioc):
            result = guideaudit.extract_citation_statements(document)
            statements.extend(result.statements)
            excluded.update(result.excluded)

    filter_gateway = gateways.get("filter")
    requests = [guideaudit.worthiness_request(filter_gateway, s.sentence) for s in statements]
    responses = filter_gateway.complete_batch(requests, checkpoint=checkpoints / "worthiness.jsonl", desc="filter")
    worthy: list[CitationStatement] = []
    for statement, response in zip(statements, responses):
        if isinstance(response, GatewayError):
            excluded["filter-error"] += 1
            continue
        try:
            keep = guideaudit.worthiness_from_response(response.content)
        except UnparseableAnswer:
            excluded["filter-unparseable"] += 1
            continue
        if keep:
            worthy.append(statement)
        else:
            excluded["not-worthy"] += 1

    verifiable = [s for s in worthy if s.cited_pmid in store]
    excluded["article-missing"] += len(worthy) - len(verifiable)
    verifier = gateways.get("verifier")
    requests = [verification_request(verifier, s.sentence, store.get(s.cited_pmid)) for s in verifiable]  # type: ignore[arg-type]
    responses = verifier.complete_batch(requests, checkpoint=checkpoints / "guideline_verify.jsonl", desc="verify")
    verdicts = []
    for statement, response in zip(verifiable, responses):
        verdict = _verdict_from("verifier", response)
        if verdict.report is None:
            excluded["unscorable"] += 1
            continue
        verdicts.append((statement, verdict.report))

    flagged, distribution = guideaudit.flag_contradictions(verdicts)
    sample = guideaudit.stratified_sample(flagged, sample_size, seed)

    summary = {
        "statements": len(statements),
        "worthy": len(worthy),
        "verified": len(verdicts),
        "flagged": len(flagged),
        "excluded": dict(sorted(excluded.items())),
        "distribution": distribution.model_dump(),
        "sample_size": len(sample),
    }
    out = Path(out)
    write_jsonl(out, "flagged_case", flagged)
    write_jsonl(out.with_name("sample.jsonl"), "flagged_case", sample)
    write_json(summary_path, summary)
    return summary
