"""
Answer generation driver for the citation audit.

Asks the answering model each question under one citation instruction and writes one
answer file per question, which `medfact audit-citations --answers` reads back.

- Questions: JSONL with {id, question} per line
- Progress is tracked in <out>/progress.json; --resume skips questions already answered
- Calls go through the gateway, so retries and the --mock backend behave as in the pipeline

Run:
    python scripts/generate_answers.py --questions questions.jsonl --style PMID --out answers/pmid
    python scripts/generate_answers.py --questions questions.jsonl --style Vancouver --out answers/v --resume
"""

from __future__ import annotations

import argparse
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from langchain_core.prompts import ChatPromptTemplate

from medfact.core.config import validate_config
from medfact.core.errors import GatewayError, MedFactError
from medfact.core.jsonl import read_jsonl, write_atomic, write_json
from medfact.core.logging import configure_logging
from medfact.schemas.audit import CitationStyle
from medfact.schemas.config import PipelineConfig
from medfact.services.gateway import LLMGateway, MockChatBackend, OpenAIChatBackend
from medfact.services.prompts import CITATION_INSTRUCTIONS

logger = logging.getLogger("generate_answers")

PROGRESS_NAME = "progress.json"


def answer_prompt(style: CitationStyle) -> ChatPromptTemplate:
    return ChatPromptTemplate.from_messages(
        [
            ("system", "You are a medical expert answering clinical questions. " + CITATION_INSTRUCTIONS[style.value]),
            ("human", "{question}"),
        ]
    )


def load_progress(out_dir: Path) -> dict:
    """Load progress from the output directory if it exists."""
    progress = {"style": None, "answered": [], "failed": [], "last_update": None}
    path = out_dir / PROGRESS_NAME
    if path.exists():
        try:
            progress.update(json.loads(path.read_text(encoding="utf-8")))
        except ValueError as e:
            logger.warning(f"Could not load progress file: {e}")
    return progress


def save_progress(out_dir: Path, progress: dict) -> None:
    progress["last_update"] = datetime.now(timezone.utc).isoformat()
    write_json(out_dir / PROGRESS_NAME, progress)


def generate(
    gateway: LLMGateway,
    questions: list[dict],
    style: CitationStyle,
    out_dir: Path,
    resume: bool = False,
) -> dict:
    """Answer every pending question and record the outcome in progress.json."""

    out_dir.mkdir(parents=True, exist_ok=True)
    progress = load_progress(out_dir) if resume else {"answered": [], "failed": []}
    if resume and progress.get("style") not in (None, style.value):
        raise MedFactError(f"{out_dir} holds answers for style {progress['style']}, not {style.value}")
    progress["style"] = style.value

    done = set(progress["answered"]) if resume else set()
    pending = [q for q in questions if str(q["id"]) not in done]
    logger.info(f"{len(pending)} of {len(questions)} questions to answer", extra={"style": style.value})

    prompt = answer_prompt(style)
    requests = [gateway.request(prompt, question=str(q["question"])) for q in pending]
    responses = gateway.complete_batch(requests, desc=f"answers {style.value}")

    failed = []
    for question, response in zip(pending, responses):
        qid = str(question["id"])
        if isinstance(response, GatewayError):
            failed.append(qid)
            continue
        write_atomic(out_dir / f"{qid}.txt", response.content.strip() + "\n")
        progress["answered"].append(qid)

    progress["failed"] = failed
    save_progress(out_dir, progress)
    if failed:
        logger.warning(f"{len(failed)} questions failed; rerun with --resume to retry them")
    return progress


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Generate cited answers for the citation audit")
    parser.add_argument("--questions", required=True, help="JSONL with {id, question} per line")
    parser.add_argument(
        "--style",
        required=True,
        help=f"Citation instruction ({', '.join(CITATION_INSTRUCTIONS)})",
    )
    parser.add_argument("--out", required=True, help="Directory for the answer files")
    parser.add_argument("--config", default=None, help="INI run configuration ([gateway] settings are used)")
    parser.add_argument("--model", default=None, help="Answering model (default: the configured gateway model)")
    parser.add_argument("--mock", default=None, help="Scripted mock backend (JSON)")
    parser.add_argument("--resume", action="store_true", help="Skip questions already answered")
    args = parser.parse_args(argv)

    configure_logging()
    try:
        style = CitationStyle.from_text(args.style)
        if style.value not in CITATION_INSTRUCTIONS:
            raise ValueError(f"no citation instruction for {style.value}")
    except ValueError as e:
        parser.error(str(e))

    try:
        config = validate_config(args.config) if args.config else PipelineConfig()
        settings = config.gateway.model_copy(update={"model": args.model}) if args.model else config.gateway
        if args.mock:
            backend = MockChatBackend.from_file(args.mock)
        else:
            backend = OpenAIChatBackend(
                api_key_env=settings.api_key_env, base_url=settings.base_url, timeout=settings.timeout
            )
        questions = read_jsonl(args.questions)
        for lineno, q in enumerate(questions, start=1):
            if not isinstance(q, dict) or "id" not in q or "question" not in q:
                raise MedFactError(f"{args.questions}: line {lineno} needs 'id' and 'question'")
        progress = generate(LLMGateway(backend, settings), questions, style, Path(args.out), args.resume)
    except MedFactError as e:
        logger.error(str(e))
        return 1

    print(f"Answered {len(progress['answered'])} questions; {len(progress['failed'])} failed.")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
