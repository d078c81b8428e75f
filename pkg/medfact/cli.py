"""Command-line entry point.

Examples:
    medfact run --config medfact.ini --mock tests/fixtures/mock_pipeline.json
    medfact screen --config medfact.ini --workdir work
    medfact reward --pred rollouts.jsonl --gold instances.jsonl
    medfact bench eval --pred predictions.jsonl --gold bench.jsonl --bootstrap 2000
    medfact audit-citations --answers answers/ --style vancouver --out metrics.json
    medfact audit-guidelines --bioc guidelines/ --out flagged.jsonl --summary summary.json
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

from medfact import __version__
from medfact.core.config import apply_overrides, validate_config
from medfact.core.errors import ConfigError, MedFactError
from medfact.core.jsonl import write_json, write_jsonl
from medfact.core.logging import configure_logging
from medfact.core.monitoring import init_sentry
from medfact.schemas.audit import CitationStyle
from medfact.schemas.config import BootstrapSettings, PipelineConfig
from medfact.services import bench, bench_adapters, reward
from medfact.services.corpus import ArticleStore, load_articles
from medfact.services.gateway import GatewayFactory, MockChatBackend
from medfact.services.ncbi import CitationMatcherClient, IdConverterClient
from medfact.services.pipeline import SYNTH_STAGES, SynthPipeline, run_citation_audit, run_guideline_audit

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3

STAGE_COMMANDS = {
    "generate-claims": "claims",
    "retrieve": "retrieve",
    "screen": "screen",
    "panel": "panel",
    "assemble": "assemble",
    "stats": "stats",
}


# --- shared plumbing -------------------------------------------------------------


def load_config(args: argparse.Namespace) -> PipelineConfig:
    config = validate_config(args.config) if args.config else PipelineConfig()
    return apply_overrides(
        config,
        seed=args.seed,
        workdir=args.workdir,
        articles=args.articles,
        embeddings=args.embeddings,
        embed_backend=args.embed_backend,
    )


def gateway_factory(config: PipelineConfig, args: argparse.Namespace) -> GatewayFactory:
    mock = MockChatBackend.from_file(args.mock) if args.mock else None
    return GatewayFactory.from_config(config, mock)


def article_store(config: PipelineConfig, required: bool = True) -> ArticleStore:
    if not config.articles:
        if required:
            raise ConfigError("articles", "an article file is required for this command")
        return ArticleStore({})
    return load_articles(config.articles)


def _parse_stages(value: str) -> list[str]:
    stages = [s.strip() for s in value.split(",") if s.strip()]
    unknown = [s for s in stages if s not in SYNTH_STAGES]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown stages: {', '.join(unknown)}")
    return stages


# --- handlers ----------------------------------------------------------------------


def cmd_run(args: argparse.Namespace) -> Any:
    config = load_config(args)
    stages = args.stages if args.command == "run" else [STAGE_COMMANDS[args.command]]
    pipeline = SynthPipeline(config, gateway_factory(config, args))
    manifest = pipeline.run(stages)
    return {"workdir": str(pipeline.workdir), "gateway_calls": pipeline.gateways.calls, **manifest.model_dump()}


def cmd_reward(args: argparse.Namespace) -> Any:
    summary = reward.score_file(args.pred, args.gold)
    if args.out:
        write_json(args.out, summary)
    return summary.model_dump(exclude={"rewards"})


def cmd_bench_convert(args: argparse.Namespace) -> Any:
    config = load_config(args)
    dataset = args.dataset
    checkpoint = Path(config.workdir) / "checkpoints" / f"convert.{dataset}.jsonl"
    if dataset in ("scifact", "healthver"):
        if not args.corpus:
            raise ConfigError("corpus", f"{dataset} needs --corpus")
        result = bench_adapters.convert_multivers(dataset, args.input, args.corpus)
    elif dataset == "medaesqa":
        result = bench_adapters.convert_medaesqa(args.input, article_store(config).articles)
    elif dataset == "pubmedqa":
        gateway = gateway_factory(config, args).get("converter")
        result = bench_adapters.convert_pubmedqa(args.input, gateway, checkpoint)
    else:
        gateway = gateway_factory(config, args).get("converter")
        store = article_store(config, required=False)
        result = bench_adapters.convert_bioasq(args.input, gateway, store.articles, checkpoint)
    count = write_jsonl(args.out, bench.BENCH_SCHEMA, result.instances)
    return {"dataset": dataset, "instances": count, "dropped": result.dropped}


def cmd_bench_eval(args: argparse.Namespace) -> Any:
    settings = None
    if args.bootstrap:
        settings = BootstrapSettings(iterations=args.bootstrap, level=args.level, seed=args.seed or 0)
    summary = bench.evaluate(args.pred, args.gold, settings)
    if args.out:
        write_json(args.out, summary)
    return summary.model_dump()


def cmd_audit_citations(args: argparse.Namespace) -> Any:
    config = load_config(args)
    try:
        style = CitationStyle.from_text(args.style)
    except ValueError as exc:
        raise ConfigError("style", str(exc)) from exc
    matcher = CitationMatcherClient(args.matcher_url, settings=config.ncbi) if not style.is_identifier else None
    idconv = IdConverterClient(args.idconv_url, settings=config.ncbi) if style is CitationStyle.DOI else None
    _, metrics = run_citation_audit(
        config,
        gateway_factory(config, args),
        article_store(config),
        args.answers,
        style,
        matcher=matcher,
        idconv=idconv,
        metrics_path=args.out,
        records_path=args.records,
    )
    return metrics.model_dump()


def cmd_audit_guidelines(args: argparse.Namespace) -> Any:
    config = load_config(args)
    out = Path(args.out)
    return run_guideline_audit(
        config,
        gateway_factory(config, args),
        article_store(config),
        args.bioc,
        out,
        args.summary or out.with_name("summary.json"),
        sample_size=args.sample,
        seed=args.seed,
    )


# --- parser ------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="INI run configuration")
    parser.add_argument("--seed", type=int, default=None, help="Override the configured seed")
    parser.add_argument("--workdir", default=None, help="Override the configured working directory")
    parser.add_argument("--mock", default=None, help="Scripted mock backend (JSON) replacing every chat backend")
    parser.add_argument("--articles", default=None, help="Article JSONL {pmid, title, abstract}")
    parser.add_argument("--embeddings", default=None, help="Precomputed MFEI embedding file")
    parser.add_argument("--embed-backend", choices=("fallback", "remote"), default=None)
    parser.add_argument("--log-level", default=None, help="Logging level (default: LOG_LEVEL or INFO)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="medfact",
        description="Medical claim verification toolkit: synthetic corpus, rewards, benchmarks and audits",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    for name, stage in STAGE_COMMANDS.items():
        sub = commands.add_parser(name, help=f"Run the '{stage}' stage")
        _add_common(sub)
        sub.set_defaults(handler=cmd_run)

    run = commands.add_parser("run", help="Run several pipeline stages in order")
    _add_common(run)
    run.add_argument(
        "--stages",
        type=_parse_stages,
        default=list(SYNTH_STAGES),
        help=f"Comma-separated stages (default: {','.join(SYNTH_STAGES)})",
    )
    run.set_defaults(handler=cmd_run)

    rew = commands.add_parser("reward", help="Score verifier rollouts against gold scores")
    rew.add_argument("--pred", required=True, help="Predictions JSONL ({output} or a JSON string per line)")
    rew.add_argument("--gold", required=True, help="Gold JSONL ({score} or an integer per line)")
    rew.add_argument("--out", default=None, help="Write the full summary, per-line rewards included")
    rew.add_argument("--log-level", default=None)
    rew.set_defaults(handler=cmd_reward)

    bench_parser = commands.add_parser("bench", help="Benchmark conversion and evaluation")
    bench_commands = bench_parser.add_subparsers(dest="bench_command", required=True)

    convert = bench_commands.add_parser("convert", help="Convert an upstream dataset to bench instances")
    _add_common(convert)
    convert.add_argument("--dataset", required=True, choices=bench_adapters.DATASETS)
    convert.add_argument("--input", required=True, help="Claims, records or question file of the dataset")
    convert.add_argument("--corpus", default=None, help="Corpus JSONL (scifact, healthver)")
    convert.add_argument("--out", required=True, help="Output bench JSONL")
    convert.set_defaults(handler=cmd_bench_convert)

    evaluate = bench_commands.add_parser("eval", help="Accuracy per dataset and macro average")
    evaluate.add_argument("--pred", required=True)
    evaluate.add_argument("--gold", required=True, help="Bench JSONL the predictions are aligned with")
    evaluate.add_argument("--bootstrap", type=int, default=0, help="Bootstrap iterations (0 disables CIs)")
    evaluate.add_argument("--level", type=float, default=0.95)
    evaluate.add_argument("--seed", type=int, default=0)
    evaluate.add_argument("--out", default=None)
    evaluate.add_argument("--log-level", default=None)
    evaluate.set_defaults(handler=cmd_bench_eval)

    cite = commands.add_parser("audit-citations", help="Citation hallucination audit of model answers")
    _add_common(cite)
    cite.add_argument("--answers", required=True, help="Directory of answer .txt files")
    cite.add_argument("--style", required=True, help="Citation style the answers were asked for")
    cite.add_argument("--matcher-url", default=None, help="Citation matcher base URL")
    cite.add_argument("--idconv-url", default=None, help="ID converter base URL")
    cite.add_argument("--out", required=True, help="Metrics JSON")
    cite.add_argument("--records", default=None, help="Per-claim records JSONL (default: next to --out)")
    cite.set_defaults(handler=cmd_audit_citations)

    guide = commands.add_parser("audit-guidelines", help="Contradiction audit of guideline citations")
    _add_common(guide)
    guide.add_argument("--bioc", required=True, help="Directory of BioC JSON files")
    guide.add_argument("--out", required=True, help="Flagged cases JSONL")
    guide.add_argument("--summary", default=None, help="Summary JSON (default: next to --out)")
    guide.add_argument("--sample", type=int, default=50, help="Cases sampled per contradiction level")
    guide.set_defaults(handler=cmd_audit_guidelines)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    init_sentry(args.command)

    handler: Callable[[argparse.Namespace], Any] = args.handler
    try:
        result = handler(args)
    except ConfigError as exc:
        logger.error(f"Configuration error: {exc}", extra={"field": exc.field})
        return EXIT_CONFIG
    except MedFactError as exc:
        logger.error(f"{args.command} failed: {exc}", extra={"error": type(exc).__name__})
        return EXIT_STAGE

    sys.stdout.write(json.dumps(result, ensure_ascii=False, indent=2, default=str) + "\n")
    return EXIT_OK
