import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

from pydantic import ValidationError

from racg_backend.errors import ContractViolation, InputError, RacgError
from racg_backend.executor import execute, outputs_match
from racg_backend.knowledge_store import KnowledgeBase
from racg_backend.models import ExecutionStatus, RunMode
from racg_backend.pipeline import Pipeline
from racg_backend.retrieval import index_build
from racg_backend.schemas import LanguageProfile, ModeAggregate, Problem, ProblemResult, Report, RunConfig

logger = logging.getLogger(__name__)

DEFAULT_TOKEN_THRESHOLDS = (4000, 8000, 12000, 16000, 20000, 24000)


# --- Datasets ---

def load_dataset(path: str) -> List[Problem]:
    """Reads a JSON-lines dataset, one problem per line.

    Problems without a `dataset` label get the file stem, which names their column in the report table.
    """
    file_path = Path(path)
    try:
        lines = file_path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise InputError(f"Dataset is not readable: {path} ({e})")

    problems: List[Problem] = []
    seen = set()
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            problem = Problem.model_validate(json.loads(line))
        except (json.JSONDecodeError, ValidationError) as e:
            raise InputError(f"{path}:{number}: invalid problem ({e})")
        if problem.id in seen:
            raise InputError(f"{path}:{number}: duplicate problem id {problem.id}")
        seen.add(problem.id)
        if problem.dataset is None:
            problem = problem.model_copy(update={"dataset": file_path.stem})
        problems.append(problem)
    logger.info(f"Loaded {len(problems)} problems from {path}")
    return problems


def score(problem: Problem, program: str, profile: LanguageProfile) -> bool:
    """Execution accuracy: every test runs successfully and prints the expected output.

    Raises:
        ContractViolation: the problem has no tests.
        ToolchainMissingError: propagated so callers can mark the problem unscored.
    """
    if not problem.tests:
        raise ContractViolation(f"Problem {problem.id} has no tests to score against")
    feedbacks = execute(program, [t.input for t in problem.tests], profile)
    if len(feedbacks) != len(problem.tests):
        return False  # compile error short-circuits to a single feedback
    return all(
        fb.status == ExecutionStatus.SUCCESS and outputs_match(fb.stdout, test.expected)
        for fb, test in zip(feedbacks, problem.tests)
    )


def validate_dataset(problems: Iterable[Problem], profiles: Dict[str, LanguageProfile]) -> List[str]:
    """Scores each gold program against its own tests. Returns ids of problems whose gold fails."""
    failing = []
    for problem in problems:
        if problem.gold_program is None:
            continue
        profile = profiles.get(problem.profile_name)
        if profile is None:
            raise InputError(f"Problem {problem.id} needs unknown language profile '{problem.profile_name}'")
        if not score(problem, problem.gold_program, profile):
            logger.warning(f"Gold program of {problem.id} does not pass its tests")
            failing.append(problem.id)
    return failing


# --- Benchmark ---

def _run_problem(pipeline: Pipeline, problem: Problem, kb: KnowledgeBase, cfg: RunConfig, index,
                 sampling: bool) -> ProblemResult:
    result = ProblemResult(id=problem.id, dataset=problem.dataset or "", mode=cfg.mode)
    try:
        profile = pipeline.profile_for(problem)
        if sampling and cfg.mode == RunMode.DOC_ONLY:
            trace = pipeline.sample_until_budget(problem, kb, cfg, index)
            programs = [r.program for r in trace.records]
        else:
            trace = pipeline.solve(problem, kb, cfg, index)
            programs = [trace.final_program]
        result.iterations = len(trace.records)
        result.total_tokens = trace.total_tokens
        result.termination = trace.termination
        result.passed = any(score(problem, program, profile) for program in programs)
    except RacgError as e:
        logger.warning(f"[{problem.id}] unscored in mode {cfg.mode.value}: {e}")
        result.error = str(e)
    except Exception as e:
        logger.error(f"[{problem.id}] unexpected failure in mode {cfg.mode.value}: {e}", exc_info=True)
        result.error = f"{type(e).__name__}: {e}"
    return result


def _percent(passed: int, total: int) -> float:
    return round(100 * passed / total, 1) if total else 0.0


def aggregate_results(results: List[ProblemResult]) -> ModeAggregate:
    scored = [r for r in results if r.scored]
    passed = sum(1 for r in scored if r.passed)
    per_dataset: Dict[str, float] = {}
    for name in sorted({r.dataset for r in scored}):
        group = [r for r in scored if r.dataset == name]
        per_dataset[name] = _percent(sum(1 for r in group if r.passed), len(group))
    return ModeAggregate(
        pass_at_1=_percent(passed, len(scored)),
        avg_tokens=round(sum(r.total_tokens for r in scored) / len(scored), 1) if scored else 0.0,
        scored=len(scored),
        passed=passed,
        unscored=len(results) - len(scored),
        per_dataset=per_dataset,
    )


def run_mode(dataset: Sequence[Problem], kb: KnowledgeBase, cfg: RunConfig, pipeline: Pipeline,
             sampling: bool = False) -> List[ProblemResult]:
    """One mode sweep over the dataset on a fresh copy of kb."""
    mode_kb = kb.copy()
    shared_index = None if cfg.isolate_problems else index_build(mode_kb, attach=True)

    def run(problem: Problem) -> ProblemResult:
        if cfg.isolate_problems:
            return _run_problem(pipeline, problem, mode_kb.copy(), cfg, None, sampling)
        return _run_problem(pipeline, problem, mode_kb, cfg, shared_index, sampling)

    try:
        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                results = list(pool.map(run, dataset))
        else:
            results = [run(problem) for problem in dataset]
    finally:
        if shared_index is not None:
            mode_kb.unsubscribe(shared_index.insert)
    logger.info(f"Mode {cfg.mode.value}: kb generation {kb.generation} -> {mode_kb.generation}")
    return results


def run_benchmark(dataset: Sequence[Problem], kb: KnowledgeBase, cfg: RunConfig, modes: List[RunMode],
                  pipeline: Pipeline) -> Report:
    """Solves and scores every problem under every mode; modes run sequentially from the same kb snapshot."""
    report = Report()
    for mode in modes:
        mode_cfg = cfg.model_copy(update={"mode": mode})
        results = run_mode(dataset, kb, mode_cfg, pipeline)
        report.per_problem.extend(results)
        report.aggregates[mode] = aggregate_results(results)
        logger.info(f"Mode {mode.value}: pass@1 {report.aggregates[mode].pass_at_1} "
                    f"({report.aggregates[mode].passed}/{report.aggregates[mode].scored})")
    return report


def pass_at_t(dataset: Sequence[Problem], kb: KnowledgeBase, cfg: RunConfig, pipeline: Pipeline,
              thresholds: Sequence[int] = DEFAULT_TOKEN_THRESHOLDS,
              modes: Optional[List[RunMode]] = None) -> Dict[RunMode, Dict[int, float]]:
    """Pass rate per token threshold.

    Evolving modes stop at the threshold through token-budget termination; DocOnly
    keeps drawing fresh samples until the threshold is exceeded.
    """
    thresholds = list(thresholds)
    if not thresholds:
        raise ContractViolation("pass_at_t needs at least one threshold")
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ContractViolation("pass_at_t thresholds must be strictly increasing")
    if thresholds[0] <= 0:
        raise ContractViolation("pass_at_t thresholds must be positive")

    rates: Dict[RunMode, Dict[int, float]] = {}
    for mode in modes or [cfg.mode]:
        rates[mode] = {}
        for threshold in thresholds:
            budget_cfg = cfg.model_copy(update={"mode": mode, "token_budget": threshold})
            results = run_mode(dataset, kb, budget_cfg, pipeline, sampling=True)
            rates[mode][threshold] = aggregate_results(results).pass_at_1
        logger.info(f"Mode {mode.value} pass@t: {rates[mode]}")
    return rates


def render_markdown(report: Report) -> str:
    """One row per mode, one column per dataset, plus the average over datasets."""
    datasets = sorted({name for agg in report.aggregates.values() for name in agg.per_dataset})
    lines = [
        "| Mode | " + " | ".join(datasets + ["Avg"]) + " |",
        "|---" * (len(datasets) + 2) + "|",
    ]
    for mode, agg in report.aggregates.items():
        cells = [f"{agg.per_dataset[name]:.1f}" if name in agg.per_dataset else "-" for name in datasets]
        values = [agg.per_dataset[name] for name in datasets if name in agg.per_dataset]
        avg = round(sum(values) / len(values), 1) if values else 0.0
        lines.append(f"| {mode.value} | " + " | ".join(cells + [f"{avg:.1f}"]) + " |")
    thresholds = sorted({t for agg in report.aggregates.values() for t in agg.pass_at_t})
    if thresholds:
        lines.append("")
        lines.append("| Mode | " + " | ".join(str(t) for t in thresholds) + " |")
        lines.append("|---" * (len(thresholds) + 1) + "|")
        for mode, agg in report.aggregates.items():
            cells = [f"{agg.pass_at_t[t]:.1f}" if t in agg.pass_at_t else "-" for t in thresholds]
            lines.append(f"| {mode.value} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def attach_pass_at_t(report: Report, rates: Dict[RunMode, Dict[int, float]]) -> Report:
    for mode, values in rates.items():
        aggregate = report.aggregates.get(mode)
        if aggregate is None:
            aggregate = report.aggregates[mode] = ModeAggregate()
        aggregate.pass_at_t = dict(values)
    return report
