"""Command line entry point: `python -m racg_backend.cli <command> ...`."""
import os
import sys
import json
import argparse
import logging
from pathlib import Path
from typing import List, Optional

from racg_backend import config, evaluation
from racg_backend.corpus_tools import mutate_inputs, seed_snippets
from racg_backend.errors import ConfigError, InputError, RacgError
from racg_backend.knowledge_store import (
    KnowledgeBase, ingest_documentation, load_or_create_store, load_store, save_store
)
from racg_backend.llm_utils import HttpEmbeddingClient, LLMGateway, get_token_counter
from racg_backend.models import KnowledgeKind, RetrieverKind, RunMode
from racg_backend.pipeline import Pipeline

logger = logging.getLogger(__name__)


def parse_mode(value: str) -> RunMode:
    value = value.strip().lower()
    try:
        return RunMode(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown mode '{value}' (choose from {[m.value for m in RunMode]})")


def parse_modes(value: str) -> List[RunMode]:
    return [parse_mode(part) for part in value.split(",") if part.strip()]


def parse_thresholds(value: str) -> List[int]:
    try:
        return [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"thresholds must be comma separated integers: '{value}'")


def _open_kb(path: str, counter) -> KnowledgeBase:
    """A directory is ingested as documentation into a fresh store; anything else is a store file."""
    if Path(path).is_dir():
        kb = KnowledgeBase(counter=counter)
        ingest_documentation(kb, path)
        return kb
    return load_store(path, counter)


def _pipeline(settings: config.EngineSettings, counter) -> Pipeline:
    gateway = LLMGateway(settings.roles, counter=counter)
    return Pipeline(gateway, settings.profile_map(), embedder=HttpEmbeddingClient(settings.embedding),
                    templates_dir=config.PROMPTS_DIR)


def _write(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
        logger.info(f"Wrote {out}")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


# --- Commands ---

def cmd_solve(args) -> int:
    settings = config.load_settings(args.config)
    counter = get_token_counter(settings.tokenizer)
    problems = {p.id: p for p in evaluation.load_dataset(args.dataset)}
    problem = problems.get(args.problem)
    if problem is None:
        raise InputError(f"Problem {args.problem} is not in {args.dataset}")
    kb = _open_kb(args.kb, counter)
    cfg = config.build_run_config(
        settings.run,
        mode=args.mode,
        max_iterations=args.max_iterations,
        token_budget=args.token_budget,
        retriever=args.retriever,
        seed=args.seed,
    )
    trace = _pipeline(settings, counter).solve(problem, kb, cfg)
    if args.save_kb and not Path(args.kb).is_dir():
        save_store(kb, args.kb)
    _write(trace.to_json(), args.out)
    return 0


def cmd_bench(args) -> int:
    settings = config.load_settings(args.config)
    counter = get_token_counter(settings.tokenizer)
    dataset = evaluation.load_dataset(args.dataset)
    pipeline = _pipeline(settings, counter)
    if args.validate:
        failing = evaluation.validate_dataset(dataset, pipeline.profiles)
        if failing:
            raise InputError(f"Gold programs fail their tests: {failing}")
    kb = _open_kb(args.kb, counter)
    cfg = config.build_run_config(settings.run, seed=args.seed, workers=args.workers)
    report = evaluation.run_benchmark(dataset, kb, cfg, args.modes, pipeline)
    if args.pass_at_t:
        rates = evaluation.pass_at_t(dataset, kb, cfg, pipeline, thresholds=args.pass_at_t, modes=args.modes)
        evaluation.attach_pass_at_t(report, rates)
    markdown = evaluation.render_markdown(report)
    _write(report.model_dump_json(indent=2), args.out)
    if args.out:
        _write(markdown, str(Path(args.out).with_suffix(".md")))
    else:
        sys.stdout.write(markdown)
    return 0


def cmd_seed_snippets(args) -> int:
    settings = config.load_settings(args.config)
    counter = get_token_counter(settings.tokenizer)
    profile = settings.profile_map().get(args.profile)
    if profile is None:
        raise ConfigError(f"Unknown language profile '{args.profile}'")
    kb = load_or_create_store(args.kb, counter)
    gateway = LLMGateway(settings.roles, counter=counter)
    counts = seed_snippets(kb, kb.items(KnowledgeKind.DOCUMENTATION), profile, gateway,
                           workers=args.workers, templates_dir=config.PROMPTS_DIR)
    save_store(kb, args.kb)
    _write(counts.model_dump_json(), None)
    return 0


def cmd_mutate(args) -> int:
    try:
        inputs = json.loads(Path(args.inputs).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"Could not read inputs from {args.inputs}: {e}")
    if not isinstance(inputs, list) or not all(isinstance(x, str) for x in inputs):
        raise InputError(f"{args.inputs} must hold a JSON list of strings")
    extended = mutate_inputs(inputs, args.target, args.seed)
    _write(json.dumps(extended, indent=1), args.out)
    return 0


def cmd_ingest_docs(args) -> int:
    counter = get_token_counter(config.load_settings(args.config).tokenizer)
    kb = load_or_create_store(args.kb, counter)
    count = ingest_documentation(kb, args.dir, args.chunk_budget)
    save_store(kb, args.kb)
    logger.info(f"{count} new documentation items; store generation {kb.generation}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="racg", description="Retrieval-augmented code generation engine")
    parser.add_argument("--config", default=None, help="engine config JSON (defaults to RACG_CONFIG_PATH)")
    parser.add_argument("--log-level", default=os.getenv("RACG_LOG_LEVEL", "INFO"))
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="run the generation loop on one problem")
    solve.add_argument("--problem", required=True)
    solve.add_argument("--dataset", required=True)
    solve.add_argument("--kb", default=config.KB_PATH, help="store file or documentation directory")
    solve.add_argument("--mode", type=parse_mode, default=None)
    solve.add_argument("--max-iterations", type=int, default=None)
    solve.add_argument("--token-budget", type=int, default=None)
    solve.add_argument("--retriever", type=RetrieverKind, choices=list(RetrieverKind), default=None)
    solve.add_argument("--seed", type=int, default=None)
    solve.add_argument("--save-kb", action="store_true", help="write the evolved store back")
    solve.add_argument("--out", default=None, help="trace JSON path (stdout when omitted)")
    solve.set_defaults(func=cmd_solve)

    bench = sub.add_parser("bench", help="solve and score a dataset under several modes")
    bench.add_argument("--dataset", required=True)
    bench.add_argument("--kb", default=config.KB_PATH, help="store file or documentation directory")
    bench.add_argument("--modes", type=parse_modes, default=[RunMode.FULL])
    bench.add_argument("--out", default=None, help="report JSON path; the markdown table goes next to it")
    bench.add_argument("--validate", action="store_true", help="check gold programs against their tests first")
    bench.add_argument("--pass-at-t", type=parse_thresholds, default=None)
    bench.add_argument("--workers", type=int, default=None)
    bench.add_argument("--seed", type=int, default=None)
    bench.set_defaults(func=cmd_bench)

    seed = sub.add_parser("seed-snippets", help="draft and run usage scripts for documentation items")
    seed.add_argument("--kb", default=config.KB_PATH)
    seed.add_argument("--profile", required=True)
    seed.add_argument("--workers", type=int, default=1)
    seed.set_defaults(func=cmd_seed_snippets)

    mutate = sub.add_parser("mutate", help="extend a JSON list of test inputs by mutation")
    mutate.add_argument("--in", dest="inputs", required=True)
    mutate.add_argument("--target", type=int, required=True)
    mutate.add_argument("--seed", type=int, default=0)
    mutate.add_argument("--out", default=None)
    mutate.set_defaults(func=cmd_mutate)

    ingest = sub.add_parser("ingest-docs", help="chunk a documentation directory into the store")
    ingest.add_argument("--dir", required=True)
    ingest.add_argument("--kb", default=config.KB_PATH)
    ingest.add_argument("--chunk-budget", type=int, default=500)
    ingest.set_defaults(func=cmd_ingest_docs)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format='%(asctime)s - %(levelname)s - %(message)s')
    try:
        return args.func(args)
    except RacgError as e:
        logger.error(f"{args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
