"""Tests for benchmark construction, evaluation and bootstrap intervals."""

import json

import numpy as np
import pytest

from medfact.core.errors import EmptySample, LengthMismatch, SchemaError, UnknownAnswer
from medfact.core.jsonl import read_models, write_jsonl
from medfact.schemas.bench import BenchInstance, BenchSource, ConversionResult
from medfact.schemas.config import BootstrapSettings
from medfact.schemas.domain import Article, ThreeWayLabel
from medfact.services.bench import (
    BENCH_SCHEMA,
    bootstrap_ci,
    evaluate,
    flatten_medaesqa,
    map_qa_answer,
    prediction_label,
    question_to_claim,
    strip_citation_markers,
)
from medfact.services.bench_adapters import convert_bioasq, convert_medaesqa, convert_multivers, convert_pubmedqa


def dump_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


LABEL_SCORE = {ThreeWayLabel.SUPPORT: 2, ThreeWayLabel.NEI: 0, ThreeWayLabel.CONTRADICT: -2}
ARTICLES = {
    11: Article(pmid=11, title="Statins and stroke", abstract="Statins reduced stroke."),
    12: Article(pmid=12, title="Statins and myalgia", abstract="Myalgia was common."),
}


def _instance(dataset, gold, i=0):
    return BenchInstance(
        dataset=dataset, id=f"{dataset}-{i}", claim=f"claim {i}",
        source=BenchSource(abstract="evidence"), gold=gold,
    )


def test_map_qa_answer():
    """yes, maybe and no map onto the three labels."""
    assert map_qa_answer("yes") == ThreeWayLabel.SUPPORT
    assert map_qa_answer(" Maybe ") == ThreeWayLabel.NEI
    assert map_qa_answer("NO") == ThreeWayLabel.CONTRADICT
    with pytest.raises(UnknownAnswer):
        map_qa_answer("perhaps")


def test_question_to_claim(make_gateway):
    """The converted statement is returned with whitespace collapsed."""
    gateway = make_gateway({"rules": [{"contains": "Question: Do statins prevent stroke?",
                                       "respond": " Statins prevent\nstroke. "}]})
    assert question_to_claim(gateway, "Do statins prevent stroke?") == "Statins prevent stroke."


def test_strip_citation_markers():
    """Bracketed markers disappear without leaving stray spaces."""
    assert strip_citation_markers("Statins reduce stroke [1].") == "Statins reduce stroke."
    assert strip_citation_markers("Effect is large [1, 2] in adults [3-5].") == "Effect is large in adults."
    assert strip_citation_markers("No markers here.") == "No markers here."


def test_flatten_medaesqa():
    """Each (statement, cited pmid) becomes one instance; unknown pmids are dropped."""
    record = {
        "id": "q1",
        "statements": [
            {"text": "Statins reduce stroke [1].", "citations": [
                {"pmid": "11", "label": "supporting"},
                {"pmid": "12", "label": "not_relevant"},
            ]},
            {"text": "Statins cause myalgia [2].", "citations": [
                {"pmid": "12", "label": "Contradicting"},
                {"pmid": "99", "label": "supporting"},
            ]},
        ],
    }
    instances, dropped = flatten_medaesqa(record, ARTICLES)
    assert dropped == 1
    assert [(i.id, i.claim, i.gold) for i in instances] == [
        ("q1-0-11", "Statins reduce stroke.", ThreeWayLabel.SUPPORT),
        ("q1-0-12", "Statins reduce stroke.", ThreeWayLabel.NEI),
        ("q1-1-12", "Statins cause myalgia.", ThreeWayLabel.CONTRADICT),
    ]
    assert instances[0].source.title == "Statins and stroke"


def test_flatten_medaesqa_bad_label():
    """An unknown label is a schema error."""
    record = {"id": "q", "statements": [{"text": "t", "citations": [{"pmid": "11", "label": "weird"}]}]}
    with pytest.raises(SchemaError):
        flatten_medaesqa(record, ARTICLES)


def test_prediction_label():
    """Predictions may be bare scores, score objects or raw verifier outputs."""
    assert prediction_label(2) == ThreeWayLabel.SUPPORT
    assert prediction_label({"score": -1}) == ThreeWayLabel.CONTRADICT
    assert prediction_label({"output": "<think>r</think><score>0</score>"}) == ThreeWayLabel.NEI
    assert prediction_label("garbage") is None
    assert prediction_label(5) is None
    assert prediction_label(True) is None


@pytest.mark.parametrize(
    "record, expected",
    [
        ({"score": None, "output": "<think>a</think><score>2</score>"}, ThreeWayLabel.SUPPORT),
        ({"score": "2"}, ThreeWayLabel.SUPPORT),
        ({"score": " -1 "}, ThreeWayLabel.CONTRADICT),
        ({"score": 2.0}, ThreeWayLabel.SUPPORT),
        ({"score": -2.0}, ThreeWayLabel.CONTRADICT),
        ("0", ThreeWayLabel.NEI),
        ({"score": 1.5}, None),
        ({"score": "3"}, None),
        ({"score": float("nan")}, None),
        ({"score": None, "output": None}, None),
    ],
)
def test_prediction_label_numeric_forms(record, expected):
    """Null scores fall back to the raw output; integral numbers and numeric strings are Likert scores."""
    assert prediction_label(record) == expected


def test_evaluate_identity_predictor(tmp_path):
    """Predicting the gold label everywhere scores 1.0 on every dataset."""
    instances = [_instance("scifact", label, i) for i, label in enumerate(ThreeWayLabel)]
    instances += [_instance("healthver", ThreeWayLabel.NEI, 9)]
    gold = tmp_path / "gold.jsonl"
    write_jsonl(gold, BENCH_SCHEMA, instances)
    pred = dump_jsonl(tmp_path / "pred.jsonl", [LABEL_SCORE[i.gold] for i in instances])
    summary = evaluate(pred, gold)
    assert summary.per_dataset_accuracy == {"healthver": 1.0, "scifact": 1.0}
    assert summary.macro_average == 1.0
    assert summary.n == {"healthver": 1, "scifact": 3}


def test_evaluate_macro_average_is_unweighted(tmp_path):
    """Accuracies 0.5 and 0.7 average to exactly 0.6 whatever the dataset sizes."""
    instances = [_instance("a", ThreeWayLabel.SUPPORT, i) for i in range(2)]
    instances += [_instance("b", ThreeWayLabel.SUPPORT, i) for i in range(10)]
    preds = [2, -2] + [2] * 7 + [0] * 3
    gold = tmp_path / "gold.jsonl"
    write_jsonl(gold, BENCH_SCHEMA, instances)
    summary = evaluate(dump_jsonl(tmp_path / "pred.jsonl", preds), gold)
    assert summary.per_dataset_accuracy == {"a": 0.5, "b": 0.7}
    assert summary.macro_average == 0.6


def test_evaluate_unparseable_counts_as_wrong(tmp_path):
    """An unreadable prediction is a miss and is reported."""
    instances = [_instance("scifact", ThreeWayLabel.SUPPORT, i) for i in range(2)]
    gold = tmp_path / "gold.jsonl"
    write_jsonl(gold, BENCH_SCHEMA, instances)
    summary = evaluate(dump_jsonl(tmp_path / "pred.jsonl", [2, "nonsense"]), gold)
    assert summary.per_dataset_accuracy == {"scifact": 0.5}
    assert summary.unparseable == {"scifact": 1}


def test_evaluate_length_mismatch(tmp_path):
    """Prediction and instance files must align."""
    gold = tmp_path / "gold.jsonl"
    write_jsonl(gold, BENCH_SCHEMA, [_instance("scifact", ThreeWayLabel.NEI)])
    with pytest.raises(LengthMismatch):
        evaluate(dump_jsonl(tmp_path / "pred.jsonl", [0, 0]), gold)


def test_evaluate_with_bootstrap(tmp_path):
    """Intervals are attached per dataset and bracket the accuracy."""
    instances = [_instance("scifact", ThreeWayLabel.SUPPORT, i) for i in range(20)]
    gold = tmp_path / "gold.jsonl"
    write_jsonl(gold, BENCH_SCHEMA, instances)
    pred = dump_jsonl(tmp_path / "pred.jsonl", [2] * 15 + [0] * 5)
    summary = evaluate(pred, gold, BootstrapSettings(iterations=500, seed=1))
    lo, hi = summary.confidence_intervals["scifact"]
    assert lo <= 0.75 <= hi


def test_bootstrap_constant_sample():
    """A constant sample has a degenerate interval."""
    assert bootstrap_ci([0.5] * 30, iterations=200) == (0.5, 0.5)


def test_bootstrap_contains_sample_mean():
    """Over 100 seeded Bernoulli(0.5) samples of 100 the interval holds the sample mean at least 99 times."""
    covered = 0
    for seed in range(100):
        sample = np.random.default_rng(seed).binomial(1, 0.5, size=100).astype(float)
        lo, hi = bootstrap_ci(sample, iterations=2000, level=0.95, seed=seed)
        assert 0.0 <= lo <= hi <= 1.0
        # standard error is at most 0.05 at n=100, so a 95% interval spans about 0.2
        assert 0.1 < hi - lo < 0.3
        covered += lo <= sample.mean() <= hi
    assert covered >= 99


def test_bootstrap_skewed_bernoulli():
    """A Bernoulli(0.3) sample also gets an interval around its mean."""
    sample = np.random.default_rng(3).binomial(1, 0.3, size=100).astype(float)
    lo, hi = bootstrap_ci(sample, iterations=2000, level=0.95, seed=3)
    assert lo <= sample.mean() <= hi


def test_bootstrap_is_deterministic():
    """The same seed gives the same interval."""
    sample = [0, 1, 1, 0, 1, 1, 1, 0]
    assert bootstrap_ci(sample, seed=5) == bootstrap_ci(sample, seed=5)


def test_bootstrap_two_points():
    """Resampling [0, 1] spans the whole unit interval."""
    assert bootstrap_ci([0.0, 1.0], iterations=2000, level=0.95, seed=0) == (0.0, 1.0)


def test_bootstrap_invalid_arguments():
    """Empty samples and levels outside (0, 1) are rejected."""
    with pytest.raises(EmptySample):
        bootstrap_ci([])
    with pytest.raises(ValueError):
        bootstrap_ci([1.0], level=1.0)
    with pytest.raises(ValueError):
        bootstrap_ci([1.0], iterations=0)


def test_convert_multivers(tmp_path):
    """Evidence labels map to the taxonomy and cited documents without evidence are NEI."""
    claims = dump_jsonl(tmp_path / "claims.jsonl", [
        {"id": 1, "claim": "Statins reduce stroke.", "doc_ids": [11, 12],
         "evidence": {"11": {"label": "SUPPORT"}}},
        {"id": 2, "claim": "Statins cause cancer.", "cited_doc_ids": [12, 77],
         "evidence": {"12": [{"label": "CONTRADICT"}]}},
    ])
    corpus = dump_jsonl(tmp_path / "corpus.jsonl", [
        {"doc_id": 11, "title": "Statins and stroke", "abstract": ["Statins", "reduced stroke."]},
        {"doc_id": 12, "title": "Statins and myalgia", "abstract": "Myalgia was common."},
    ])
    result = convert_multivers("scifact", claims, corpus)
    assert [(i.id, i.gold) for i in result.instances] == [
        ("1-11", ThreeWayLabel.SUPPORT),
        ("1-12", ThreeWayLabel.NEI),
        ("2-12", ThreeWayLabel.CONTRADICT),
    ]
    assert result.instances[0].source.abstract == "Statins reduced stroke."
    assert result.dropped == {"missing-document": 1}


def test_convert_medaesqa(tmp_path):
    """Records are flattened against the article store."""
    records = dump_jsonl(tmp_path / "medaesqa.jsonl", [
        {"id": "q1", "statements": [{"text": "A [1].", "citations": [{"pmid": "11", "label": "supporting"},
                                                                      {"pmid": "5", "label": "neutral"}]}]},
    ])
    result = convert_medaesqa(records, ARTICLES)
    assert len(result.instances) == 1
    assert result.dropped == {"missing-pmid": 1}


def test_conversion_result_counts_drops():
    """Drops accumulate per reason and the result dumps to JSON."""
    result = ConversionResult()
    result.drop("missing-pmid")
    result.drop("missing-pmid", 2)
    result.drop("unknown-answer")
    assert result.model_dump(mode="json") == {"instances": [], "dropped": {"missing-pmid": 3, "unknown-answer": 1}}


def test_convert_pubmedqa(tmp_path, make_gateway):
    """Questions become claims and the conclusion is removed from the source."""
    path = tmp_path / "pqal.json"
    path.write_text(json.dumps({
        "101": {"QUESTION": "Does drug X lower blood pressure?",
                "CONTEXTS": ["We enrolled 50 adults.", "Drug X lowered pressure."],
                "LABELS": ["METHODS", "RESULTS"],
                "LONG_ANSWER": "Drug X is effective.", "final_decision": "yes"},
        "102": {"QUESTION": "Is Y safe?", "CONTEXTS": ["Few events occurred."], "LABELS": ["RESULTS"],
                "LONG_ANSWER": "", "final_decision": "maybe"},
        "103": {"QUESTION": "Does Z work?", "CONTEXTS": ["c"], "LABELS": ["RESULTS"],
                "LONG_ANSWER": "Unclear.", "final_decision": "unsure"},
    }), encoding="utf-8")
    gateway = make_gateway({"rules": [{"contains": "drug X", "respond": "Drug X lowers blood pressure."}]})
    result = convert_pubmedqa(path, gateway)
    assert len(result.instances) == 1
    instance = result.instances[0]
    assert instance.claim == "Drug X lowers blood pressure."
    assert instance.gold == ThreeWayLabel.SUPPORT
    assert instance.source.title == ""
    assert instance.source.abstract == "We enrolled 50 adults. Drug X lowered pressure."
    assert result.dropped == {"no-conclusion": 1, "unknown-answer": 1}


def test_convert_bioasq(tmp_path, make_gateway):
    """Only yes/no questions are kept and cited articles in the store become sources."""
    path = tmp_path / "bioasq.json"
    path.write_text(json.dumps({"questions": [
        {"id": "b1", "type": "yesno", "body": "Do statins prevent stroke?", "exact_answer": "yes",
         "documents": ["http://www.ncbi.nlm.nih.gov/pubmed/11"], "snippets": []},
        {"id": "b2", "type": "yesno", "body": "Do statins cause myalgia?", "exact_answer": ["no"],
         "documents": ["http://www.ncbi.nlm.nih.gov/pubmed/999"], "snippets": [{"text": "Rarely."}]},
        {"id": "b3", "type": "factoid", "body": "Which statin?", "exact_answer": [["atorvastatin"]]},
    ]}), encoding="utf-8")
    gateway = make_gateway({"rules": [
        {"contains": "stroke", "respond": "Statins prevent stroke."},
        {"contains": "myalgia", "respond": "Statins cause myalgia."},
    ]})
    result = convert_bioasq(path, gateway, ARTICLES)
    assert [(i.id, i.gold, i.source.pmid) for i in result.instances] == [
        ("b1", ThreeWayLabel.SUPPORT, 11),
        ("b2", ThreeWayLabel.CONTRADICT, None),
    ]
    assert result.instances[1].source.abstract == "Rarely."


def test_converted_instances_round_trip_through_jsonl(tmp_path):
    """Converted instances are written and read back with the bench schema."""
    path = tmp_path / "bench.jsonl"
    instances = [_instance("scifact", ThreeWayLabel.NEI)]
    write_jsonl(path, BENCH_SCHEMA, instances)
    assert read_models(path, BenchInstance, BENCH_SCHEMA) == instances
