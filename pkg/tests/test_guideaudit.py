"""Tests for BioC statement extraction, the worthiness filter, flagging and stratified samples."""

import logging

import pytest

from medfact.core.errors import BiocSchemaError, UnparseableAnswer
from medfact.schemas.audit import BiocDocument, CitationStatement, FlaggedCase
from medfact.schemas.config import BiocSettings
from medfact.schemas.domain import LikertScore, VerificationReport
from medfact.services.guideaudit import (
    extract_citation_statements,
    flag_contradictions,
    load_bioc_file,
    parse_bioc_document,
    split_sentences,
    stratified_sample,
    worthiness_filter,
)


def _documents(fixtures_dir):
    bioc = fixtures_dir / "bioc"
    return load_bioc_file(bioc / "collection.json") + load_bioc_file(bioc / "single_document.json")


def _statements(fixtures_dir):
    statements, excluded = [], {}
    for document in _documents(fixtures_dir):
        result = extract_citation_statements(document)
        statements.extend(result.statements)
        for key, count in result.excluded.items():
            excluded[key] = excluded.get(key, 0) + count
    return statements, excluded


def _doc(text, *markers, offset=0):
    annotations = []
    for marker, pmid in markers:
        infons = {"type": "citation"}
        if pmid is not None:
            infons["pmid"] = str(pmid)
        annotations.append({"infons": infons, "locations": [{"offset": offset + text.index(marker), "length": len(marker)}]})
    return parse_bioc_document({"id": "d", "passages": [{"offset": offset, "text": text, "annotations": annotations}]})


def _case(i, score):
    statement = CitationStatement(doc_id=f"d{i}", sentence=f"statement {i}", cited_pmid=i + 1, char_span=(0, 1))
    return FlaggedCase(statement=statement, verdict=LikertScore(score), rationale="r")


def _report(score):
    return VerificationReport(rationale="r", score=LikertScore(score))


def test_fixture_has_five_documents(fixtures_dir):
    """The fixture spans a collection file and a bare document file."""
    documents = _documents(fixtures_dir)
    assert [d.id for d in documents] == ["30000001", "30000002", "30000003", "30000004", "30000005"]


def test_extract_fixture_statements(fixtures_dir):
    """Single-citation sentences are kept with their markers removed."""
    statements, excluded = _statements(fixtures_dir)
    assert [(s.doc_id, s.cited_pmid, s.sentence) for s in statements] == [
        ("30000001", 11, "Aspirin reduces stroke risk."),
        ("30000001", 12, "Exercise improves mood."),
        ("30000002", 15, "ACE inhibitors help patients, e.g. Diabetics, more."),
        ("30000003", 17, "Smith et al. Reported similar findings."),
        ("30000004", 18, "Metformin lowers glucose."),
        ("30000004", 19, "Insulin is required in type 1 diabetes!"),
        ("30000005", 20, "Sodium restriction lowers blood pressure."),
    ]
    assert excluded == {"multi-citation": 1, "unresolvable-pmid": 1}
    assert statements[0].char_span == (0, 32)


def test_extract_single_citation_example():
    """The marker is stripped from the only cited sentence."""
    result = extract_citation_statements(_doc("X reduces Y [5]. Z is unknown.", ("[5]", 5)))
    assert [s.sentence for s in result.statements] == ["X reduces Y."]


def test_extract_excludes_two_citations():
    """A sentence with two citation annotations is excluded and counted."""
    result = extract_citation_statements(_doc("X reduces Y [5] and Z [6]. W.", ("[5]", 5), ("[6]", 6)))
    assert result.statements == []
    assert result.excluded["multi-citation"] == 1


def test_extract_excludes_missing_pmid():
    """An annotation without a pmid infon cannot be verified."""
    result = extract_citation_statements(_doc("X reduces Y [5].", ("[5]", None)))
    assert result.statements == []
    assert result.excluded["unresolvable-pmid"] == 1


def test_parsed_document_is_a_model():
    """Parsed documents and extraction results dump to plain JSON."""
    document = _doc("X reduces Y [5] and Z [6].", ("[5]", 5), ("[6]", None))
    assert isinstance(document, BiocDocument)
    dumped = document.model_dump(mode="json")
    assert dumped["passages"][0]["annotations"] == [
        {"start": 12, "end": 15, "pmid": 5},
        {"start": 22, "end": 25, "pmid": None},
    ]
    result = extract_citation_statements(document)
    assert result.model_dump(mode="json") == {"statements": [], "excluded": {"multi-citation": 1}}


def test_extract_uses_passage_offsets():
    """Document-level annotation offsets are made relative to their passage."""
    result = extract_citation_statements(_doc("Q raises R [9]. S.", ("[9]", 9), offset=120))
    assert result.statements[0].sentence == "Q raises R."


def test_configured_citation_type_and_key():
    """Other annotation types and keys can be configured."""
    settings = BiocSettings(citation_type="ref", pmid_key="PMID")
    doc = {"id": "d", "passages": [{"offset": 0, "text": "A helps B [1].", "annotations": [
        {"infons": {"type": "ref", "PMID": "44"}, "locations": [{"offset": 10, "length": 3}]},
    ]}]}
    result = extract_citation_statements(parse_bioc_document(doc, settings))
    assert result.statements[0].cited_pmid == 44


def test_bioc_schema_errors():
    """Documents without passages or with bad offsets are rejected."""
    with pytest.raises(BiocSchemaError):
        parse_bioc_document({"id": "d"})
    with pytest.raises(BiocSchemaError):
        parse_bioc_document({"id": "d", "passages": [{"offset": "x", "text": "t"}]})


def test_bioc_invalid_file(tmp_path):
    """A file that is not BioC JSON is rejected."""
    path = tmp_path / "bad.json"
    path.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(BiocSchemaError):
        load_bioc_file(path)


def test_split_sentences():
    """Terminators followed by an uppercase start split; abbreviations do not."""
    text = "Drug A works, e.g. In adults. Vs. placebo it is better. See Fig. 3 here? Yes."
    sentences = [text[s:e] for s, e in split_sentences(text)]
    assert sentences == [
        "Drug A works, e.g. In adults.",
        "Vs. placebo it is better.",
        "See Fig. 3 here?",
        "Yes.",
    ]


def test_split_sentences_lowercase_continuation():
    """A terminator followed by a lowercase word is not a boundary."""
    assert len(split_sentences("Dose was 2.5 mg. daily use. Stop.")) == 2


@pytest.mark.parametrize("answer, expected", [("yes", True), ("No", False), (" YES\n", True)])
def test_worthiness_filter(make_gateway, answer, expected):
    """yes and no are read case-insensitively."""
    assert worthiness_filter(make_gateway({"default": answer}), "Statins lower LDL.") is expected


def test_worthiness_filter_unparseable(make_gateway):
    """Anything but yes or no is unparseable."""
    with pytest.raises(UnparseableAnswer):
        worthiness_filter(make_gateway({"default": "maybe"}), "Statins lower LDL.")


def test_worthiness_filter_sends_claim(make_gateway):
    """The claim is quoted in the user message."""
    gateway = make_gateway({"rules": [{"contains": 'Claim: "Statins lower LDL."', "respond": "yes"}]})
    assert worthiness_filter(gateway, "Statins lower LDL.") is True


def test_flag_contradictions():
    """Only negative scores are flagged."""
    statements = [_case(i, -1).statement for i in range(3)]
    flagged, _ = flag_contradictions(list(zip(statements, [_report(2), _report(0), _report(-1)])))
    assert [f.statement.doc_id for f in flagged] == ["d2"]
    flagged, _ = flag_contradictions([(statements[0], _report(1))])
    assert flagged == []


def test_flag_distribution():
    """One verdict per score gives a fifth in every bin."""
    statements = [_case(i, -1).statement for i in range(5)]
    _, distribution = flag_contradictions([(s, _report(v)) for s, v in zip(statements, [-2, -1, 0, 1, 2])])
    assert distribution.n == 5
    assert set(distribution.fractions.values()) == {0.2}
    assert sum(distribution.fractions.values()) == pytest.approx(1.0, abs=1e-9)


def test_stratified_sample_fifty_per_stratum():
    """100 partial and 100 strong contradictions give 50 of each, partial first."""
    flagged = [_case(i, -1) for i in range(100)] + [_case(100 + i, -2) for i in range(100)]
    sample = stratified_sample(flagged, 50, seed=4)
    assert len(sample) == 100
    assert all(c.verdict == -1 for c in sample[:50])
    assert all(c.verdict == -2 for c in sample[50:])
    ids = [c.statement.doc_id for c in sample]
    assert len(set(ids)) == 100
    assert ids == [c.statement.doc_id for c in stratified_sample(flagged, 50, seed=4)]
    assert ids != [c.statement.doc_id for c in stratified_sample(flagged, 50, seed=5)]


def test_stratified_sample_small_stratum(caplog):
    """An undersized stratum is taken whole with a warning."""
    flagged = [_case(i, -1) for i in range(30)] + [_case(100 + i, -2) for i in range(60)]
    with caplog.at_level(logging.WARNING):
        sample = stratified_sample(flagged, 50, seed=0)
    assert sum(1 for c in sample if c.verdict == -1) == 30
    assert sum(1 for c in sample if c.verdict == -2) == 50
    assert "fewer than 50" in caplog.text
