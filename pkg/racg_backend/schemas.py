import math
import re
from datetime import datetime
from typing import Optional, List, Dict

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from racg_backend.models import (
    KnowledgeKind, ExecutionStatus, RunMode, Termination, RetrieverKind, ModelRole
)

# --- Knowledge Schemas ---

CODE_KINDS = {KnowledgeKind.CODE_SNIPPET, KnowledgeKind.FEEDBACK_PAIR}


class KnowledgeItem(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    kind: KnowledgeKind
    text: str
    code: Optional[str] = None
    error: Optional[str] = None
    source: str = ""
    token_len: int = Field(ge=0)
    generation: int = Field(default=0, ge=0)  # store generation at insertion

    @model_validator(mode="after")
    def check_kind_fields(self):
        has_code = self.code is not None
        has_error = self.error is not None
        if has_code != (self.kind in CODE_KINDS):
            raise ValueError(f"{self.kind.value} item must {'' if self.kind in CODE_KINDS else 'not '}carry code")
        if has_error != (self.kind == KnowledgeKind.FEEDBACK_PAIR):
            raise ValueError(f"{self.kind.value} item must {'' if self.kind == KnowledgeKind.FEEDBACK_PAIR else 'not '}carry an error")
        return self


class StoreFile(BaseModel):
    generation: int = Field(ge=0)
    items: List[KnowledgeItem] = []


# --- Retrieval Schemas ---

class Query(BaseModel):
    model_config = ConfigDict(frozen=True)

    text: str
    iteration: int = Field(default=0, ge=0)


class ScoredItem(BaseModel):
    model_config = ConfigDict(frozen=True)

    item_id: str
    score: float

    @field_validator("score")
    @classmethod
    def score_is_finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("score must be finite")
        return v


class RetrievedContext(BaseModel):
    web: List[KnowledgeItem] = []
    feedback: List[KnowledgeItem] = []
    snippets: List[KnowledgeItem] = []
    docs: List[KnowledgeItem] = []
    total_tokens: int = 0

    def is_empty(self) -> bool:
        return not (self.web or self.feedback or self.snippets or self.docs)


# --- Executor Schemas ---

class LanguageProfile(BaseModel):
    name: str
    file_extension: str
    compile_cmd: Optional[List[str]] = None
    run_cmd: List[str]
    timeout_s: float = Field(default=10.0, gt=0)
    error_line_pattern: str = r"line (\d+)"
    # An exit-0 run whose stderr matches this is still a runtime error
    fatal_stderr_pattern: Optional[str] = None

    @field_validator("run_cmd")
    @classmethod
    def run_cmd_has_placeholder(cls, v: List[str]) -> List[str]:
        if not v:
            raise ValueError("run_cmd must not be empty")
        if not any("{file}" in arg or "{dir}" in arg for arg in v):
            raise ValueError("run_cmd must reference the program via {file} or {dir}")
        return v

    @field_validator("compile_cmd")
    @classmethod
    def compile_cmd_has_placeholder(cls, v: Optional[List[str]]) -> Optional[List[str]]:
        if v is not None and not any("{file}" in arg for arg in v):
            raise ValueError("compile_cmd must reference the program via {file}")
        return v

    @field_validator("error_line_pattern")
    @classmethod
    def pattern_has_one_group(cls, v: str) -> str:
        if re.compile(v).groups != 1:
            raise ValueError("error_line_pattern needs exactly one capture group")
        return v

    @field_validator("fatal_stderr_pattern")
    @classmethod
    def fatal_pattern_compiles(cls, v: Optional[str]) -> Optional[str]:
        if v is not None:
            re.compile(v)
        return v


class ExecutionFeedback(BaseModel):
    status: ExecutionStatus
    stderr: str = ""
    stdout: str = ""
    error_line: Optional[int] = None
    duration_s: float = Field(default=0.0, ge=0)
    exit_code: Optional[int] = None


# --- LLM Gateway Schemas ---

class RoleSettings(BaseModel):
    base_url: str = "http://localhost:8000/v1"
    model: str = "gpt-3.5-turbo"
    temperature: float = 0.0
    max_output_tokens: int = Field(default=400, gt=0)
    context_window: int = Field(default=16384, gt=0)
    api_key_env: str = "RACG_API_KEY"
    timeout_s: float = 60.0


class ChatExchange(BaseModel):
    role: ModelRole
    prompt: str
    completion: str
    prompt_tokens: int = Field(ge=0)
    completion_tokens: int = Field(ge=0)
    attempts: int = 1

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


# --- Pipeline Schemas ---

DEFAULT_SOURCES = [KnowledgeKind.DOCUMENTATION, KnowledgeKind.CODE_SNIPPET, KnowledgeKind.FEEDBACK_PAIR]


class RunConfig(BaseModel):
    max_iterations: int = Field(default=30, ge=0)
    stability_window: int = Field(default=3, ge=1)
    context_limit: int = Field(default=4096, gt=0)
    generation_reserve: int = Field(default=400, ge=0)
    snippet_budget: int = Field(default=300, ge=0)
    token_budget: Optional[int] = Field(default=None, gt=0)
    mode: RunMode = RunMode.FULL
    retriever: RetrieverKind = RetrieverKind.SPARSE
    seed: int = 0
    retrieval_depth: int = Field(default=50, ge=1)
    sources: List[KnowledgeKind] = Field(default_factory=lambda: list(DEFAULT_SOURCES))
    num_test_inputs: int = Field(default=5, ge=0)
    literal_input_order: bool = False  # execute the first program before generating test inputs
    isolate_problems: bool = False
    workers: int = Field(default=1, ge=1)
    dense_fallback_to_sparse: bool = True

    @model_validator(mode="after")
    def check_budgets(self):
        if self.context_limit <= self.generation_reserve + self.snippet_budget:
            raise ValueError(
                f"context_limit ({self.context_limit}) must exceed generation_reserve + snippet_budget "
                f"({self.generation_reserve} + {self.snippet_budget})"
            )
        return self

    @field_validator("sources")
    @classmethod
    def dedupe_sources(cls, v: List[KnowledgeKind]) -> List[KnowledgeKind]:
        # Kept in enum declaration order so config hashes are stable
        return [kind for kind in KnowledgeKind if kind in set(v)]


class IterationRecord(BaseModel):
    i: int = Field(ge=0)
    query: Query
    context: RetrievedContext
    program: str
    inputs: List[str] = []
    feedback: ExecutionFeedback
    tokens_this_iter: int = Field(ge=0)
    kb_generation_after: int = Field(ge=0)
    fallback_flags: List[str] = []  # sorted


class RunTrace(BaseModel):
    problem_id: str
    mode: RunMode
    config_hash: str = ""
    template_hash: str = ""
    records: List[IterationRecord] = []
    final_program: str = ""
    termination: Termination
    total_tokens: int = Field(ge=0)

    @model_validator(mode="after")
    def check_totals(self):
        if self.total_tokens != sum(r.tokens_this_iter for r in self.records):
            raise ValueError("total_tokens must equal the sum of per-iteration tokens")
        if self.records and self.final_program != self.records[-1].program:
            raise ValueError("final_program must be the last record's program")
        return self

    def to_json(self) -> str:
        """Canonical serialization; wall-clock durations are omitted so equal runs compare byte for byte."""
        return self.model_dump_json(
            exclude={"records": {"__all__": {"feedback": {"duration_s"}}}}
        )


# --- Evaluation Schemas ---

class TestCase(BaseModel):
    __test__ = False  # not a pytest class

    input: str = ""
    expected: str = ""


class Problem(BaseModel):
    id: str
    description: str
    profile_name: str
    tests: List[TestCase] = []
    gold_program: Optional[str] = None
    gold_doc_ids: Optional[List[str]] = None
    dataset: Optional[str] = None


class ProblemResult(BaseModel):
    id: str
    dataset: str = ""
    mode: RunMode
    passed: Optional[bool] = None  # None = unscored
    iterations: int = 0
    total_tokens: int = 0
    termination: Optional[Termination] = None
    error: Optional[str] = None

    @property
    def scored(self) -> bool:
        return self.passed is not None


class ModeAggregate(BaseModel):
    pass_at_1: float = 0.0
    avg_tokens: float = 0.0
    scored: int = 0
    passed: int = 0
    unscored: int = 0
    per_dataset: Dict[str, float] = {}
    pass_at_t: Dict[int, float] = {}


class Report(BaseModel):
    per_problem: List[ProblemResult] = []
    aggregates: Dict[RunMode, ModeAggregate] = {}


class SeedCounts(BaseModel):
    snippets: int = 0
    pairs: int = 0


# --- API Schemas ---

class IngestDocsRequest(BaseModel):
    dir_path: str
    chunk_budget: int = Field(default=500, gt=0)


class WebIngestRequest(BaseModel):
    query: str
    top_n: int = Field(default=3, ge=1)
    chunk_budget: int = Field(default=500, gt=0)


class IngestResult(BaseModel):
    count: int
    generation: int


class SnippetCreate(BaseModel):
    program: str
    label: str


class FeedbackPairCreate(BaseModel):
    program: str
    error: str
    error_line: Optional[int] = None


class SearchRequest(BaseModel):
    text: str
    k: int = Field(default=10, ge=1)
    kind: Optional[KnowledgeKind] = None


class SearchHit(BaseModel):
    item: KnowledgeItem
    score: float


class KnowledgeStats(BaseModel):
    generation: int
    total: int
    counts: Dict[KnowledgeKind, int]


class SolveRequest(BaseModel):
    problem: Problem
    mode: Optional[RunMode] = None
    max_iterations: Optional[int] = Field(default=None, ge=0)
    token_budget: Optional[int] = Field(default=None, gt=0)
    retriever: Optional[RetrieverKind] = None
    seed: Optional[int] = None


class TraceSummary(BaseModel):
    id: int
    problem_id: str
    mode: str
    termination: str
    iterations: int
    total_tokens: int
    created_at: Optional[datetime] = None

    class Config:
        from_attributes = True


class SolveResponse(BaseModel):
    trace_id: int
    trace: RunTrace


class BenchRequest(BaseModel):
    dataset_path: str
    modes: List[RunMode] = [RunMode.FULL]
    pass_at_t: Optional[List[int]] = None
    validate_gold: bool = False


class BenchResponse(BaseModel):
    report_id: int
    report: Report
    markdown: str
