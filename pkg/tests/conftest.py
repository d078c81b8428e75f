"""Shared fixtures: article files, scripted gateways and the pipeline mock script."""

import json
from pathlib import Path

import pytest

from medfact.schemas.config import RoleSettings
from medfact.services.gateway import LLMGateway, MockChatBackend

FIXTURES = Path(__file__).parent / "fixtures"

TOPICS = ["Alpha", "Beta", "Gamma", "Delta", "Epsilon", "Zeta", "Eta", "Theta", "Iota", "Kappa"]


def dump_jsonl(path, records):
    path = Path(path)
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def ten_articles():
    return [
        {
            "pmid": 1001 + i,
            "title": f"{topic} therapy trial",
            "abstract": f"{topic} therapy reduced symptoms in adults with condition {topic.lower()}.",
        }
        for i, topic in enumerate(TOPICS)
    ]


@pytest.fixture
def articles_file(tmp_path, ten_articles):
    return dump_jsonl(tmp_path / "articles.jsonl", ten_articles)


@pytest.fixture
def make_gateway():
    def factory(script, model="test-model", **settings):
        settings.setdefault("base_delay", 0.0)
        return LLMGateway(MockChatBackend(script), RoleSettings(model=model, **settings))

    return factory


@pytest.fixture
def pipeline_script():
    """Supported claims are controversial (the screener is neutral on the Alpha article);
    refuted claims are uniformly contradicted and bypass the panel."""

    return {
        "rules": [
            {"model": "claim-m", "system_contains": "supported by the provided article",
             "respond": "{title} improves patient outcomes."},
            {"model": "claim-m", "system_contains": "refuted by the provided article",
             "respond": "{title} worsens patient outcomes."},
            {"model": "screener-m", "contains": "worsens",
             "score": -1, "rationale": "The article reports improvement, against the claim."},
            {"model": "screener-m", "contains": "Title: Alpha therapy trial",
             "score": 0, "rationale": "The article concerns a different therapy."},
            {"model": "screener-m", "score": 2, "rationale": "The article directly supports the claim."},
            {"model": "panel-a", "score": 1, "rationale": "Panel A: the evidence is suggestive."},
            {"model": "panel-b", "contains": "Title: Gamma therapy trial", "respond": "I cannot decide."},
            {"model": "panel-b", "score": 1, "rationale": "Panel B: partial support only."},
            {"model": "panel-c", "contains": "Title: Beta therapy trial",
             "score": -1, "rationale": "Panel C: the findings point the other way."},
            {"model": "panel-c", "score": 2, "rationale": "Panel C: strong support."},
        ]
    }


@pytest.fixture
def pipeline_config_text(articles_file):
    def render(workdir, extra=""):
        return (
            "[pipeline]\n"
            f"articles = {articles_file}\n"
            f"workdir = {workdir}\n"
            "k = 10\n"
            "seed = 7\n"
            f"{extra}"
            "\n[gateway]\n"
            "base_delay = 0\n"
            "parallelism = 4\n"
            "\n[role.claimgen]\nmodel = claim-m\n"
            "\n[role.screener]\nmodel = screener-m\n"
            "\n[panel.a]\nmodel = panel-a\n"
            "\n[panel.b]\nmodel = panel-b\n"
            "\n[panel.c]\nmodel = panel-c\n"
        )

    return render


@pytest.fixture
def mock_script_file(tmp_path, pipeline_script):
    path = tmp_path / "mock.json"
    path.write_text(json.dumps(pipeline_script), encoding="utf-8")
    return path
