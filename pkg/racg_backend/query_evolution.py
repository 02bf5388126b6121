import re
import logging
from typing import List, Optional, Tuple

from racg_backend.errors import InputError, RacgError
from racg_backend.executor import feedback_message
from racg_backend.llm_utils import LLMGateway, TokenLedger, render_prompt
from racg_backend.models import ModelRole, PromptKind
from racg_backend.schemas import ChatExchange, ExecutionFeedback, Query

logger = logging.getLogger(__name__)

BLANK_LINE_RE = re.compile(r"\n\s*\n")


def initial_query(n: str) -> Query:
    """Warmup query: the problem description, verbatim."""
    if not n or not n.strip():
        raise InputError("Problem description must not be empty")
    return Query(text=n, iteration=0)


def first_paragraph(text: str) -> str:
    for paragraph in BLANK_LINE_RE.split(text.strip()):
        if paragraph.strip():
            return paragraph.strip()
    return ""


def evolve_query(gateway: LLMGateway, n: str, p_prev: str, inputs: List[str], f_prev: ExecutionFeedback,
                 i: int, ledger: Optional[TokenLedger] = None,
                 templates_dir: Optional[str] = None) -> Tuple[Query, Optional[ChatExchange]]:
    """Asks the query evolver what knowledge is needed next.

    Returns the new query and the exchange; the exchange is None when the call failed
    and the query fell back to the problem description.
    """
    if i < 1:
        raise InputError("evolve_query is only used from iteration 1 on")
    try:
        prompt = render_prompt(PromptKind.EVOLVE_QUERY, {
            "problem": n,
            "program": p_prev,
            "inputs": inputs,
            "feedback": feedback_message(p_prev, f_prev),
        }, templates_dir)
        exchange = gateway.complete(ModelRole.QUERY_EVOLVER, prompt, ledger=ledger)
    except RacgError as e:
        logger.warning(f"Query evolution failed at iteration {i}, falling back to the problem description: {e}")
        return Query(text=n, iteration=i), None

    text = first_paragraph(exchange.completion)
    if not text:
        logger.warning(f"Query evolver returned an empty query at iteration {i}; using the problem description")
        return Query(text=n, iteration=i), exchange
    logger.info(f"Iteration {i} query: {text[:120]}")
    return Query(text=text, iteration=i), exchange
