import re
import logging
from typing import Dict, List, Optional, Set

from racg_backend.config import config_hash
from racg_backend.errors import ConfigError, RacgError, RetrievalError
from racg_backend.executor import aggregate, execute, feedback_error_text, normalize_feedback
from racg_backend.knowledge_store import KnowledgeBase, add_feedback_pair, add_verified_snippet
from racg_backend.llm_utils import LLMGateway, TokenLedger, extract_code, render_prompt, template_hash
from racg_backend.models import (
    ExecutionStatus, KnowledgeKind, ModelRole, PromptKind, RetrieverKind, RunMode, SINGLE_SHOT_MODES, Termination
)
from racg_backend.query_evolution import evolve_query, first_paragraph, initial_query
from racg_backend.retrieval import DenseRetriever, KnowledgeIndex, assemble_context, index_build
from racg_backend.schemas import (
    ExecutionFeedback, IterationRecord, LanguageProfile, Problem, Query, RetrievedContext, RunConfig, RunTrace
)

logger = logging.getLogger(__name__)

QUERY_EVOLVING_MODES = {RunMode.EVOLVE_QUERY_ONLY, RunMode.FULL}
KNOWLEDGE_EVOLVING_MODES = {RunMode.EVOLVE_KNOWLEDGE_ONLY, RunMode.FULL}

INPUT_BLOCK_RE = re.compile(r"<input>(.*?)</input>", re.DOTALL)


def parse_test_inputs(completion: str) -> List[str]:
    """Keeps only the <input> portions of generated test cases; expected outputs are dropped."""
    inputs = []
    for block in INPUT_BLOCK_RE.findall(completion):
        if block.startswith("\n"):
            block = block[1:]
        if block.endswith("\n"):
            block = block[:-1]
        inputs.append(block)
    return inputs


class Pipeline:
    """Generate -> execute -> retrieve loop with evolving queries and an evolving knowledge base."""

    def __init__(self, gateway: LLMGateway, profiles: Dict[str, LanguageProfile], embedder=None,
                 templates_dir: Optional[str] = None):
        self.gateway = gateway
        self.profiles = profiles
        self.dense = DenseRetriever(embedder) if embedder is not None else None
        self.templates_dir = templates_dir

    # --- helpers ---

    def profile_for(self, problem: Problem) -> LanguageProfile:
        profile = self.profiles.get(problem.profile_name)
        if profile is None:
            raise ConfigError(f"Problem {problem.id} needs unknown language profile '{problem.profile_name}'")
        return profile

    def _complete(self, role: ModelRole, prompt: str, ledger: TokenLedger):
        return self.gateway.complete(role, prompt, ledger=ledger)

    def _rank(self, kind: KnowledgeKind, query: Query, kb: KnowledgeBase, index: KnowledgeIndex,
              cfg: RunConfig, flags: Set[str]):
        if cfg.retriever == RetrieverKind.DENSE:
            try:
                scored = self.dense.retrieve(kb, query, cfg.retrieval_depth, kind)
                return [kb.get(s.item_id) for s in scored]
            except RetrievalError as e:
                if not cfg.dense_fallback_to_sparse:
                    raise
                logger.warning(f"Dense retrieval failed, falling back to BM25: {e}")
                flags.add("dense_fallback")
        return index.retrieve_items(query, cfg.retrieval_depth, kind)

    def retrieve_context(self, query: Query, kb: KnowledgeBase, index: KnowledgeIndex, cfg: RunConfig,
                         flags: Set[str]) -> RetrievedContext:
        if cfg.mode == RunMode.VANILLA:
            return RetrievedContext()
        kinds = [KnowledgeKind.DOCUMENTATION] if cfg.mode == RunMode.DOC_ONLY else cfg.sources
        ranked = {kind: self._rank(kind, query, kb, index, cfg, flags) for kind in kinds}
        return assemble_context(ranked, cfg)

    def generate_program(self, n: str, context: RetrievedContext, ledger: TokenLedger) -> str:
        prompt = render_prompt(PromptKind.GENERATE, {"problem": n, "context": context}, self.templates_dir)
        exchange = self._complete(ModelRole.GENERATOR, prompt, ledger)
        return extract_code(exchange.completion)

    def generate_test_inputs(self, n: str, p0: str, cfg: RunConfig, ledger: TokenLedger,
                             flags: Optional[Set[str]] = None) -> List[str]:
        """Asks the test generator for test cases and keeps their inputs; failures degrade to []."""
        flags = flags if flags is not None else set()
        if cfg.num_test_inputs == 0:
            return []
        try:
            prompt = render_prompt(PromptKind.GENERATE_TEST_INPUTS,
                                   {"problem": n, "program": p0, "count": cfg.num_test_inputs}, self.templates_dir)
            exchange = self._complete(ModelRole.TEST_GENERATOR, prompt, ledger)
        except RacgError as e:
            logger.warning(f"Test input generation failed: {e}")
            flags.add("empty_test_inputs")
            return []
        inputs = parse_test_inputs(exchange.completion)[:cfg.num_test_inputs]
        if not inputs:
            logger.warning("Test generator returned no parseable test cases; executing on empty input")
            flags.add("empty_test_inputs")
        return inputs

    def _evolve_knowledge(self, kb: KnowledgeBase, problem: Problem, i: int, program: str,
                          feedback: ExecutionFeedback, cfg: RunConfig) -> None:
        label = f"{problem.id} iteration {i}"
        if feedback.status == ExecutionStatus.SUCCESS:
            if KnowledgeKind.CODE_SNIPPET in cfg.sources:
                add_verified_snippet(kb, program, label)
        elif KnowledgeKind.FEEDBACK_PAIR in cfg.sources:
            add_feedback_pair(kb, program, feedback_error_text(feedback), feedback.error_line, source=label)

    @staticmethod
    def _termination(i: int, last_i: int, feedback: ExecutionFeedback, history: List[str],
                     ledger: TokenLedger, cfg: RunConfig) -> Optional[Termination]:
        if feedback.status == ExecutionStatus.SUCCESS:
            return Termination.SUCCESS
        window = cfg.stability_window
        if len(history) >= window and len(set(history[-window:])) == 1:
            return Termination.STABLE_FEEDBACK
        if cfg.token_budget is not None and ledger.total_tokens > cfg.token_budget:
            return Termination.TOKEN_BUDGET
        if i >= last_i:
            return Termination.MAX_ITERATIONS
        return None

    def _check_ready(self, cfg: RunConfig) -> None:
        self.gateway.check_roles()
        if cfg.retriever == RetrieverKind.DENSE and self.dense is None:
            raise ConfigError("Dense retrieval requested but no embedding client is configured")

    def _trace(self, problem: Problem, cfg: RunConfig, records: List[IterationRecord],
               termination: Termination) -> RunTrace:
        return RunTrace(
            problem_id=problem.id,
            mode=cfg.mode,
            config_hash=config_hash(cfg),
            template_hash=template_hash(self.templates_dir),
            records=records,
            final_program=records[-1].program if records else "",
            termination=termination,
            total_tokens=sum(r.tokens_this_iter for r in records),
        )

    # --- main loop ---

    def solve(self, problem: Problem, kb: KnowledgeBase, cfg: RunConfig,
              index: Optional[KnowledgeIndex] = None) -> RunTrace:
        """Runs the iterative loop for one problem and returns its trace.

        Program failures are recorded as feedback. Environment problems (missing
        toolchain, unknown profile, unreachable model endpoints) raise.
        """
        self._check_ready(cfg)
        profile = self.profile_for(problem)
        n = problem.description
        q0 = initial_query(n)

        owns_index = index is None
        if owns_index:
            index = index_build(kb, attach=True)

        ledger = TokenLedger()
        records: List[IterationRecord] = []
        history: List[str] = []
        inputs: List[str] = []
        single_shot = cfg.mode in SINGLE_SHOT_MODES
        last_i = 0 if single_shot else cfg.max_iterations
        termination = Termination.MAX_ITERATIONS
        logger.info(f"[{problem.id}] solving in mode {cfg.mode.value} (max {last_i + 1} iterations)")

        try:
            for i in range(last_i + 1):
                flags: Set[str] = set()
                first_exchange = len(ledger.exchanges)

                if i == 0:
                    query = q0
                elif cfg.mode in QUERY_EVOLVING_MODES:
                    prev = records[-1]
                    query, exchange = evolve_query(self.gateway, n, prev.program, inputs, prev.feedback, i, ledger,
                                                   self.templates_dir)
                    if exchange is None:
                        flags.add("query_fallback")
                    elif not first_paragraph(exchange.completion):
                        flags.add("query_fallback")
                else:
                    query = Query(text=n, iteration=i)

                context = self.retrieve_context(query, kb, index, cfg, flags)
                program = self.generate_program(n, context, ledger)

                run_inputs = inputs
                if i == 0 and not single_shot:
                    if cfg.literal_input_order:
                        run_inputs = []
                    else:
                        inputs = self.generate_test_inputs(n, program, cfg, ledger, flags)
                        run_inputs = inputs

                feedback = aggregate(execute(program, run_inputs, profile))

                if i == 0 and not single_shot and cfg.literal_input_order:
                    inputs = self.generate_test_inputs(n, program, cfg, ledger, flags)

                if cfg.mode in KNOWLEDGE_EVOLVING_MODES:
                    self._evolve_knowledge(kb, problem, i, program, feedback, cfg)

                records.append(IterationRecord(
                    i=i,
                    query=query,
                    context=context,
                    program=program,
                    inputs=list(run_inputs),
                    feedback=feedback,
                    tokens_this_iter=sum(e.total_tokens for e in ledger.exchanges[first_exchange:]),
                    kb_generation_after=kb.generation,
                    fallback_flags=sorted(flags),
                ))
                history.append(normalize_feedback(feedback))
                logger.info(f"[{problem.id}] iteration {i}: {feedback.status.value}, "
                            f"{records[-1].tokens_this_iter} tokens, kb generation {kb.generation}")

                stop = self._termination(i, last_i, feedback, history, ledger, cfg)
                if stop is not None:
                    termination = stop
                    break
        finally:
            if owns_index:
                kb.unsubscribe(index.insert)

        trace = self._trace(problem, cfg, records, termination)
        logger.info(f"[{problem.id}] terminated with {termination.value} after {len(records)} iteration(s), "
                    f"{trace.total_tokens} tokens")
        return trace

    def sample_until_budget(self, problem: Problem, kb: KnowledgeBase, cfg: RunConfig,
                            index: Optional[KnowledgeIndex] = None) -> RunTrace:
        """Documentation-only repeated sampling until the token budget is exceeded.

        Each sample is one record; scoring decides which of them (if any) passes.
        Without a token budget this is a single sample.
        """
        self._check_ready(cfg)
        profile = self.profile_for(problem)
        n = problem.description
        query = initial_query(n)
        doc_cfg = cfg.model_copy(update={"mode": RunMode.DOC_ONLY})

        owns_index = index is None
        if owns_index:
            index = index_build(kb, attach=False)

        ledger = TokenLedger()
        records: List[IterationRecord] = []
        flags: Set[str] = set()
        context = self.retrieve_context(query, kb, index, doc_cfg, flags)
        max_samples = cfg.max_iterations + 1 if cfg.token_budget is not None else 1
        termination = Termination.MAX_ITERATIONS

        for i in range(max_samples):
            first_exchange = len(ledger.exchanges)
            program = self.generate_program(n, context, ledger)
            feedback = aggregate(execute(program, [], profile))
            records.append(IterationRecord(
                i=i,
                query=Query(text=n, iteration=i),
                context=context,
                program=program,
                feedback=feedback,
                tokens_this_iter=sum(e.total_tokens for e in ledger.exchanges[first_exchange:]),
                kb_generation_after=kb.generation,
                fallback_flags=sorted(flags),
            ))
            if cfg.token_budget is not None and ledger.total_tokens > cfg.token_budget:
                termination = Termination.TOKEN_BUDGET
                break

        logger.info(f"[{problem.id}] drew {len(records)} documentation-prompted sample(s), "
                    f"{ledger.total_tokens} tokens")
        return self._trace(problem, doc_cfg, records, termination)
