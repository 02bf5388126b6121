import sys
import pytest
from pydantic import ValidationError

from racg_backend.models import ExecutionStatus, KnowledgeKind, RunMode, Termination
from racg_backend.schemas import (
    ExecutionFeedback, IterationRecord, KnowledgeItem, LanguageProfile, Query, RetrievedContext, RunConfig, RunTrace,
    ScoredItem,
)


def record(i: int, tokens: int, program: str = "print(1)", duration: float = 0.0) -> IterationRecord:
    return IterationRecord(
        i=i,
        query=Query(text="q", iteration=i),
        context=RetrievedContext(),
        program=program,
        feedback=ExecutionFeedback(status=ExecutionStatus.SUCCESS, duration_s=duration),
        tokens_this_iter=tokens,
        kb_generation_after=0,
    )


def test_feedback_pair_requires_code_and_error():
    """Ensure that each kind carries exactly the fields it should."""
    KnowledgeItem(id="p", kind=KnowledgeKind.FEEDBACK_PAIR, text="e", code="x", error="e", token_len=1)
    with pytest.raises(ValidationError):
        KnowledgeItem(id="p", kind=KnowledgeKind.FEEDBACK_PAIR, text="e", code="x", token_len=1)
    with pytest.raises(ValidationError):
        KnowledgeItem(id="d", kind=KnowledgeKind.DOCUMENTATION, text="t", code="x", token_len=1)
    with pytest.raises(ValidationError):
        KnowledgeItem(id="s", kind=KnowledgeKind.CODE_SNIPPET, text="t", token_len=1)


def test_knowledge_items_are_immutable():
    item = KnowledgeItem(id="d", kind=KnowledgeKind.DOCUMENTATION, text="t", token_len=1)
    with pytest.raises(ValidationError):
        item.text = "changed"


def test_scores_must_be_finite():
    with pytest.raises(ValidationError):
        ScoredItem(item_id="x", score=float("nan"))


@pytest.mark.parametrize("run_cmd", [[], [sys.executable, "main.py"]])
def test_run_command_must_reference_program(run_cmd):
    with pytest.raises(ValidationError):
        LanguageProfile(name="x", file_extension=".py", run_cmd=run_cmd)


def test_error_line_pattern_needs_one_group():
    with pytest.raises(ValidationError):
        LanguageProfile(name="x", file_extension=".py", run_cmd=["python", "{file}"], error_line_pattern=r"line \d+")


def test_run_config_budgets_must_leave_room():
    """Ensure that context_limit exceeds the generation reserve plus the snippet budget."""
    with pytest.raises(ValidationError):
        RunConfig(context_limit=700, generation_reserve=400, snippet_budget=300)
    assert RunConfig(context_limit=701, generation_reserve=400, snippet_budget=300).context_limit == 701


def test_run_config_sources_are_deduplicated_in_kind_order():
    cfg = RunConfig(sources=[KnowledgeKind.FEEDBACK_PAIR, KnowledgeKind.DOCUMENTATION, KnowledgeKind.FEEDBACK_PAIR])
    assert cfg.sources == [KnowledgeKind.DOCUMENTATION, KnowledgeKind.FEEDBACK_PAIR]


def test_run_config_rejects_unknown_mode():
    with pytest.raises(ValidationError):
        RunConfig(mode="turbo")
    assert RunConfig(mode="evolve_query").mode == RunMode.EVOLVE_QUERY_ONLY


def test_trace_totals_must_add_up():
    with pytest.raises(ValidationError):
        RunTrace(problem_id="p", mode=RunMode.FULL, records=[record(0, 10)], final_program="print(1)",
                 termination=Termination.SUCCESS, total_tokens=11)
    with pytest.raises(ValidationError):
        RunTrace(problem_id="p", mode=RunMode.FULL, records=[record(0, 10)], final_program="other",
                 termination=Termination.SUCCESS, total_tokens=10)


def test_trace_json_omits_wall_clock_time():
    def trace(duration):
        return RunTrace(problem_id="p", mode=RunMode.FULL, records=[record(0, 5, duration=duration)],
                        final_program="print(1)", termination=Termination.SUCCESS, total_tokens=5)

    assert trace(0.1).to_json() == trace(2.5).to_json()
    assert "duration_s" not in trace(0.1).to_json()
    assert RunTrace.model_validate_json(trace(0.1).to_json()).records[0].program == "print(1)"
