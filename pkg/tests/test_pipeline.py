"""End-to-end runs of the synthetic corpus stages and the two audits over scripted backends."""

import json
from collections import Counter

import pytest

from medfact.core.config import parse_config_text
from medfact.core.errors import ConfigError, StageInputMissing
from medfact.core.jsonl import read_jsonl, read_models, write_jsonl
from medfact.schemas.audit import AuditRecord, CitationStyle
from medfact.schemas.synth import Dropped, PairVerdicts, TrainingInstance
from medfact.services.corpus import load_articles
from medfact.services.gateway import GatewayFactory, MockChatBackend
from medfact.services.pipeline import MANIFEST, STAGE_OUTPUTS, SynthPipeline, run_citation_audit, run_guideline_audit

EXPECTED_STATS = {
    "claims": (20, 20, 0, 0),
    "retrieve": (20, 20, 0, 0),
    "screen": (200, 200, 0, 0),
    "panel": (100, 100, 0, 0),
    "assemble": (200, 180, 20, 0),
    "stats": (180, 180, 0, 0),
}
OUTPUT_FILES = sorted(STAGE_OUTPUTS.values()) + ["dropped.jsonl"]


def _pipeline(workdir, pipeline_config_text, pipeline_script, extra=""):
    config = parse_config_text(pipeline_config_text(workdir, extra))
    backend = MockChatBackend(pipeline_script)
    return SynthPipeline(config, GatewayFactory.from_config(config, backend)), backend


def test_end_to_end_counts(tmp_path, pipeline_config_text, pipeline_script):
    """Ten articles flow through every stage with conserved counts."""
    pipeline, backend = _pipeline(tmp_path / "run", pipeline_config_text, pipeline_script)
    manifest = pipeline.run()

    for stage, expected in EXPECTED_STATS.items():
        stats = manifest.stages[stage]
        assert (stats.inputs, stats.outputs, stats.dropped, stats.errors) == expected, stage
    # claims + screen + three panel members
    assert backend.calls == 20 + 200 + 3 * 100

    workdir = tmp_path / "run"
    instances = read_models(workdir / "instances.jsonl", TrainingInstance)
    dropped = read_models(workdir / "dropped.jsonl", Dropped)
    assert len(instances) + len(dropped) == 200
    assert Counter(int(i.score) for i in instances) == {-1: 100, 1: 80}
    assert Counter(d.reason for d in dropped) == {"no-consensus": 10, "unscorable": 10}
    assert {i.rationale_from for i in instances if i.score == -1} == {"screener"}
    assert sum(i.is_source_article for i in instances) == 18

    stats = json.loads((workdir / "stats.json").read_text(encoding="utf-8"))
    assert stats["n"] == 180
    assert stats["score_counts"]["1"] == 80


def test_rationales_are_verbatim(tmp_path, pipeline_config_text, pipeline_script):
    """Every instance's rationale is the exact text of the verdict it names."""
    pipeline, _ = _pipeline(tmp_path / "run", pipeline_config_text, pipeline_script)
    pipeline.run()
    workdir = tmp_path / "run"

    rationales = {}
    for name in ("screen_verdicts.jsonl", "verdicts.jsonl"):
        for record in read_models(workdir / name, PairVerdicts):
            for verdict in record.verdicts:
                if verdict.report is not None:
                    rationales[(record.claim_id, record.pmid, verdict.model_id)] = verdict.report.rationale

    for instance in read_models(workdir / "instances.jsonl", TrainingInstance):
        key = (instance.claim.id, instance.pmid, instance.rationale_from)
        assert rationales[key] == instance.rationale


def test_runs_are_byte_identical(tmp_path, pipeline_config_text, pipeline_script):
    """Two runs with the same seed write identical stage outputs."""
    for name in ("first", "second"):
        pipeline, _ = _pipeline(tmp_path / name, pipeline_config_text, pipeline_script)
        pipeline.run()
    for filename in OUTPUT_FILES:
        first = (tmp_path / "first" / filename).read_bytes()
        assert first == (tmp_path / "second" / filename).read_bytes(), filename


def test_rerun_makes_no_calls(tmp_path, pipeline_config_text, pipeline_script):
    """A finished workdir is skipped stage by stage."""
    pipeline, _ = _pipeline(tmp_path / "run", pipeline_config_text, pipeline_script)
    pipeline.run()

    again, backend = _pipeline(tmp_path / "run", pipeline_config_text, pipeline_script)
    manifest = again.run()
    assert backend.calls == 0
    assert all(stats.skipped for stats in manifest.stages.values())
    assert manifest.stages["assemble"].outputs == 180


def test_interrupted_stage_resumes_from_checkpoints(tmp_path, pipeline_config_text, pipeline_script):
    """Re-running a stage whose answers are checkpointed needs no new calls."""
    workdir = tmp_path / "run"
    pipeline, _ = _pipeline(workdir, pipeline_config_text, pipeline_script)
    pipeline.run()
    expected = (workdir / "instances.jsonl").read_bytes()
    for filename in ("verdicts.jsonl", "instances.jsonl", "stats.json"):
        (workdir / filename).unlink()

    again, backend = _pipeline(workdir, pipeline_config_text, pipeline_script)
    again.run()
    assert backend.calls == 0
    assert (workdir / "instances.jsonl").read_bytes() == expected


def test_single_stage_needs_its_input(tmp_path, pipeline_config_text, pipeline_script):
    """Running a stage before its producer names the stage."""
    pipeline, _ = _pipeline(tmp_path / "run", pipeline_config_text, pipeline_script)
    with pytest.raises(StageInputMissing) as excinfo:
        pipeline.run(["screen"])
    assert excinfo.value.stage == "screen"


def test_missing_embeddings_file(tmp_path, pipeline_config_text, pipeline_script):
    """A configured embeddings file that does not exist stops the retrieve stage."""
    extra = f"embeddings = {tmp_path / 'absent.mfei'}\n"
    pipeline, _ = _pipeline(tmp_path / "run", pipeline_config_text, pipeline_script, extra)
    with pytest.raises(StageInputMissing) as excinfo:
        pipeline.run()
    assert excinfo.value.stage == "retrieve"
    assert (tmp_path / "run" / "claims.jsonl").exists()


def test_unknown_stage(tmp_path, pipeline_config_text, pipeline_script):
    """Stage names are validated."""
    pipeline, _ = _pipeline(tmp_path / "run", pipeline_config_text, pipeline_script)
    with pytest.raises(ConfigError):
        pipeline.run(["claims", "train"])


def test_manifest_records_stages(tmp_path, pipeline_config_text, pipeline_script):
    """The manifest carries the config hash, seed and per-stage counts."""
    pipeline, _ = _pipeline(tmp_path / "run", pipeline_config_text, pipeline_script)
    pipeline.run(["claims", "retrieve"])
    manifest = json.loads((tmp_path / "run" / MANIFEST).read_text(encoding="utf-8"))
    assert manifest["seed"] == 7
    assert manifest["config_hash"] == pipeline.config.config_hash()
    assert set(manifest["stages"]) == {"claims", "retrieve"}


# --- audits ----------------------------------------------------------------------

AUDIT_ROLES = "\n[role.extractor]\nmodel = extract-m\n\n[role.verifier]\nmodel = verify-m\n\n[role.filter]\nmodel = filter-m\n"


def _audit_config(tmp_path, pipeline_config_text):
    return parse_config_text(pipeline_config_text(tmp_path / "audit") + AUDIT_ROLES)


def test_citation_audit_run(tmp_path, pipeline_config_text, articles_file):
    """Answers are extracted, resolved by PMID, verified and summarised."""
    answers = tmp_path / "answers"
    answers.mkdir()
    (answers / "q1.txt").write_text("ANSWER one about alpha and beta.", encoding="utf-8")
    (answers / "q2.txt").write_text("ANSWER two about gamma.", encoding="utf-8")
    (answers / "q3.md").write_text("ANSWER three with nothing cited.", encoding="utf-8")
    (answers / "notes.csv").write_text("ignored", encoding="utf-8")

    q1 = [
        {"claim": "Alpha helps.", "citation": "PMID: 1001"},
        {"claim": "Beta helps.", "citation": "(PMID: 1002)"},
        {"claim": "Omega helps.", "citation": "PMID: 999999"},
    ]
    q2 = [{"claim": "Gamma hurts.", "citation": "1003"}, {"claim": "Nothing cited.", "citation": "see above"}]
    script = {"rules": [
        {"model": "extract-m", "contains": "ANSWER one", "respond": json.dumps(q1)},
        {"model": "extract-m", "contains": "ANSWER two", "respond": "```json\n" + json.dumps(q2) + "\n```"},
        {"model": "extract-m", "respond": "There are no cited claims."},
        {"model": "verify-m", "contains": "Claim:\nAlpha helps.", "score": 2, "rationale": "Supported."},
        {"model": "verify-m", "contains": "Claim:\nBeta helps.", "score": 0, "rationale": "Unrelated."},
        {"model": "verify-m", "contains": "Claim:\nGamma hurts.", "score": -1, "rationale": "Contradicted."},
    ]}
    config = _audit_config(tmp_path, pipeline_config_text)
    gateways = GatewayFactory.from_config(config, MockChatBackend(script))
    out = tmp_path / "out" / "metrics.json"

    records, metrics = run_citation_audit(
        config, gateways, load_articles(articles_file), answers, CitationStyle.PMID, metrics_path=out
    )
    assert [(r.answer_id, r.mapping.pmid, r.verdict) for r in records] == [
        ("q1", 1001, 2), ("q1", 1002, 0), ("q1", None, None), ("q2", 1003, -1), ("q2", None, None),
    ]
    assert records[2].mapping.reason == "unknown-pmid"
    assert records[4].mapping.reason == "no-identifier"
    assert records[0].rationale == "Supported."

    assert (metrics.answers, metrics.claims, metrics.mapped, metrics.verified) == (3, 5, 3, 3)
    assert metrics.claims_per_answer.value == 5 / 3
    assert metrics.mapping_rate.value == 0.6
    assert metrics.avg_pmid.value == 1002.0
    assert metrics.hallucination_rate.value + metrics.supported_fraction.value == 1.0
    assert metrics.supported_fraction.value == 1 / 3

    saved = read_models(out.with_name("records.jsonl"), AuditRecord, "audit_record")
    assert [r.model_dump(mode="json") for r in saved] == [r.model_dump(mode="json") for r in records]
    assert json.loads(out.read_text(encoding="utf-8"))["claims"] == 5


def test_citation_audit_missing_answers(tmp_path, pipeline_config_text, articles_file):
    """A missing answers directory is reported against the audit stage."""
    config = _audit_config(tmp_path, pipeline_config_text)
    gateways = GatewayFactory.from_config(config, MockChatBackend({}))
    with pytest.raises(StageInputMissing) as excinfo:
        run_citation_audit(config, gateways, load_articles(articles_file), tmp_path / "none", CitationStyle.PMID)
    assert excinfo.value.stage == "audit-citations"


def test_guideline_audit_run(tmp_path, pipeline_config_text, fixtures_dir):
    """Fixture statements are filtered, verified against cited abstracts, flagged and sampled."""
    articles = tmp_path / "cited.jsonl"
    write_jsonl(articles, "article", [
        {"pmid": pmid, "title": f"Cited study {pmid}", "abstract": f"Findings of study {pmid}."}
        for pmid in (11, 12, 15, 17, 18, 19)
    ])
    script = {"rules": [
        {"model": "filter-m", "contains": 'Claim: "Smith et al.', "respond": "no"},
        {"model": "filter-m", "contains": 'Claim: "Exercise', "respond": "It depends."},
        {"model": "filter-m", "respond": "Yes"},
        {"model": "verify-m", "contains": "Claim:\nAspirin", "score": -2, "rationale": "Opposite finding."},
        {"model": "verify-m", "contains": "Claim:\nACE", "score": -1, "rationale": "Mixed evidence."},
        {"model": "verify-m", "contains": "Claim:\nMetformin", "score": 0, "rationale": "Not addressed."},
        {"model": "verify-m", "contains": "Claim:\nInsulin", "score": -1, "rationale": "Indirect contradiction."},
    ]}
    config = _audit_config(tmp_path, pipeline_config_text)
    gateways = GatewayFactory.from_config(config, MockChatBackend(script))
    out = tmp_path / "guidelines" / "flagged.jsonl"
    summary_path = tmp_path / "guidelines" / "summary.json"

    summary = run_guideline_audit(
        config, gateways, load_articles(articles), fixtures_dir / "bioc", out, summary_path, sample_size=50
    )
    assert summary["statements"] == 7
    assert summary["worthy"] == 5
    assert summary["verified"] == 4
    assert summary["flagged"] == 3
    assert summary["sample_size"] == 3
    assert summary["excluded"] == {
        "article-missing": 1,
        "filter-unparseable": 1,
        "multi-citation": 1,
        "not-worthy": 1,
        "unresolvable-pmid": 1,
    }
    assert summary["distribution"]["counts"] == {"-2": 1, "-1": 2, "0": 1, "1": 0, "2": 0}

    flagged = read_jsonl(out, "flagged_case")
    assert [(f["statement"]["cited_pmid"], f["verdict"]) for f in flagged] == [(11, -2), (15, -1), (19, -1)]
    sample = read_jsonl(out.with_name("sample.jsonl"), "flagged_case")
    assert [f["verdict"] for f in sample] == [-1, -1, -2]
    assert json.loads(summary_path.read_text(encoding="utf-8")) == summary
