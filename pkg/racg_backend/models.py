import enum
from sqlalchemy import Column, Integer, String, DateTime, Text, Index
from sqlalchemy.sql import func

from racg_backend.database import Base


class KnowledgeKind(str, enum.Enum):
    DOCUMENTATION = "documentation"
    WEB_SEARCH = "web_search"
    CODE_SNIPPET = "code_snippet"
    FEEDBACK_PAIR = "feedback_pair"


class ExecutionStatus(str, enum.Enum):
    # Values double as the canonical status names used in normalized feedback
    SUCCESS = "Success"
    COMPILE_ERROR = "CompileError"
    RUNTIME_ERROR = "RuntimeError"
    TIMEOUT = "Timeout"


class RunMode(str, enum.Enum):
    VANILLA = "vanilla"
    DOC_ONLY = "doc"
    NO_EVOLUTION = "no_evolution"
    EVOLVE_QUERY_ONLY = "evolve_query"
    EVOLVE_KNOWLEDGE_ONLY = "evolve_knowledge"
    FULL = "full"


SINGLE_SHOT_MODES = {RunMode.VANILLA, RunMode.DOC_ONLY, RunMode.NO_EVOLUTION}


class Termination(str, enum.Enum):
    SUCCESS = "success"
    STABLE_FEEDBACK = "stable_feedback"
    MAX_ITERATIONS = "max_iterations"
    TOKEN_BUDGET = "token_budget"


class RetrieverKind(str, enum.Enum):
    SPARSE = "sparse"
    DENSE = "dense"


class ModelRole(str, enum.Enum):
    GENERATOR = "generator"
    QUERY_EVOLVER = "query_evolver"
    TEST_GENERATOR = "test_generator"


class PromptKind(str, enum.Enum):
    GENERATE = "generate"
    EVOLVE_QUERY = "evolve_query"
    GENERATE_TEST_INPUTS = "generate_test_inputs"
    USAGE_SCRIPT = "usage_script"


# --- Persisted run artifacts ---

class TraceRecord(Base):
    __tablename__ = "run_traces"
    id = Column(Integer, primary_key=True, index=True)
    problem_id = Column(String, index=True, nullable=False)
    mode = Column(String, nullable=False)
    termination = Column(String, nullable=False)
    iterations = Column(Integer, nullable=False)
    total_tokens = Column(Integer, nullable=False)
    config_hash = Column(String, nullable=False)
    template_hash = Column(String, nullable=False)
    trace_json = Column(Text, nullable=False)  # canonical RunTrace serialization
    created_at = Column(DateTime(timezone=True), server_default=func.now())


class ReportRecord(Base):
    __tablename__ = "bench_reports"
    id = Column(Integer, primary_key=True, index=True)
    dataset_path = Column(String, nullable=False)
    modes = Column(String, nullable=False)  # comma separated RunMode values
    report_json = Column(Text, nullable=False)
    markdown = Column(Text, nullable=False)
    created_at = Column(DateTime(timezone=True), server_default=func.now())


Index("ix_run_traces_problem_mode", TraceRecord.problem_id, TraceRecord.mode)
