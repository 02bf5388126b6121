import re
import random
import string
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

from racg_backend.errors import ContractViolation, MutationError, RacgError
from racg_backend.executor import aggregate, execute, feedback_error_text
from racg_backend.knowledge_store import KnowledgeBase, add_feedback_pair, add_verified_snippet
from racg_backend.llm_utils import LLMGateway, extract_code, render_prompt
from racg_backend.models import ExecutionStatus, ModelRole, PromptKind
from racg_backend.schemas import ExecutionFeedback, KnowledgeItem, LanguageProfile, SeedCounts

logger = logging.getLogger(__name__)


# --- Snippet seeding ---

def _draft_and_run(item: KnowledgeItem, profile: LanguageProfile, gateway: LLMGateway,
                   templates_dir: Optional[str]) -> Optional[Tuple[str, ExecutionFeedback]]:
    try:
        prompt = render_prompt(PromptKind.USAGE_SCRIPT, {"doc": item.text}, templates_dir)
        exchange = gateway.complete(ModelRole.GENERATOR, prompt)
    except RacgError as e:
        logger.warning(f"Skipping usage script for {item.id}: {e}")
        return None
    program = extract_code(exchange.completion)
    if not program.strip():
        logger.warning(f"Skipping usage script for {item.id}: empty completion")
        return None
    return program, aggregate(execute(program, [], profile))


def seed_snippets(kb: KnowledgeBase, doc_items: Sequence[KnowledgeItem], profile: LanguageProfile,
                  gateway: LLMGateway, workers: int = 1, templates_dir: Optional[str] = None) -> SeedCounts:
    """Drafts one usage script per documentation item and stores the executed outcome.

    Scripts that run become code snippets, scripts that fail become (code, error) pairs.
    Drafting and execution may run in parallel; store writes happen in item order.

    Raises:
        ToolchainMissingError: the profile's toolchain is not installed.
    """
    def run(item: KnowledgeItem):
        return _draft_and_run(item, profile, gateway, templates_dir)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, doc_items))
    else:
        outcomes = [run(item) for item in doc_items]

    counts = SeedCounts()
    for item, outcome in zip(doc_items, outcomes):
        if outcome is None:
            continue
        program, feedback = outcome
        label = f"usage of {item.source or item.id}"
        if feedback.status == ExecutionStatus.SUCCESS:
            add_verified_snippet(kb, program, label)
            counts.snippets += 1
        else:
            add_feedback_pair(kb, program, feedback_error_text(feedback), feedback.error_line, source=label)
            counts.pairs += 1

    if doc_items and counts.snippets + counts.pairs == 0:
        logger.warning(f"Snippet seeding produced nothing for {len(doc_items)} documentation items")
    logger.info(f"Seeded {counts.snippets} snippets and {counts.pairs} feedback pairs "
                f"from {len(doc_items)} documentation items")
    return counts


# --- Test inputs ---

def validate_inputs(gold_program: Optional[str], inputs: Sequence[str], profile: LanguageProfile) -> float:
    """Percentage of inputs the gold program runs on without error.

    A problem's inputs are fully valid iff this returns 100.0. No inputs counts as fully valid.
    """
    if not gold_program:
        raise ContractViolation("validate_inputs needs a gold program")
    if not inputs:
        return 100.0
    feedbacks = execute(gold_program, list(inputs), profile)
    if len(feedbacks) != len(inputs):
        return 0.0  # gold did not compile
    valid = sum(1 for fb in feedbacks if fb.status == ExecutionStatus.SUCCESS)
    return round(100 * valid / len(inputs), 1)


INT_RE = re.compile(r"[+-]?\d+")
SEPARATOR_RE = re.compile(r"(\s+)")
RAW_ALPHABET = string.ascii_lowercase + string.digits


def _swap_adjacent(text: str, rng: random.Random) -> Optional[str]:
    if len(text) < 2:
        return None
    i = rng.randrange(len(text) - 1)
    return text[:i] + text[i + 1] + text[i] + text[i + 2:]


def _mutate_atom(atom: str, rng: random.Random) -> Optional[str]:
    if INT_RE.fullmatch(atom):
        return str(int(atom) + rng.choice((-1, 1)))
    return _swap_adjacent(atom, rng)


def _mutate_raw(text: str, rng: random.Random) -> str:
    alphabet = sorted(set(text) - set(string.whitespace)) or list(RAW_ALPHABET)
    ops = ["insert"]
    if len(text) >= 1:
        ops.append("duplicate")
    if len(text) >= 2:
        ops.extend(["swap", "delete"])
    op = rng.choice(ops)
    if op == "swap":
        return _swap_adjacent(text, rng)
    if op == "delete":
        i = rng.randrange(len(text))
        return text[:i] + text[i + 1:]
    if op == "duplicate":
        i = rng.randrange(len(text))
        return text[:i] + text[i] + text[i:]
    i = rng.randrange(len(text) + 1)
    return text[:i] + rng.choice(alphabet) + text[i:]


def mutate_once(text: str, rng: random.Random) -> str:
    """Applies one type-aware mutation.

    Lines are split into whitespace-separated atoms: integers move by one, other
    atoms get two adjacent characters swapped, and lines holding several atoms are
    treated as lists (duplicate or remove one element, keeping the line's own
    separators and never emptying it). Inputs without atoms, and atoms a swap
    cannot change, fall back to character-level edits.
    """
    lines = [SEPARATOR_RE.split(line) for line in text.split("\n")]
    atoms = [(li, pi) for li, parts in enumerate(lines) for pi, part in enumerate(parts)
             if part and not part.isspace()]
    if not atoms:
        return _mutate_raw(text, rng)

    list_lines = sorted({li for li, _ in atoms if sum(1 for a in atoms if a[0] == li) >= 2})
    op = rng.choice(["atom", "duplicate", "remove"] if list_lines else ["atom"])

    if op == "atom":
        li, pi = rng.choice(atoms)
        mutated = _mutate_atom(lines[li][pi], rng)
        if mutated is None or mutated == lines[li][pi]:
            return _mutate_raw(text, rng)
        lines[li][pi] = mutated
    else:
        li = rng.choice(list_lines)
        parts = lines[li]
        positions = [p for l, p in atoms if l == li]
        pi = rng.choice(positions)
        following = parts[pi + 1] if pi + 1 < len(parts) else ""
        if op == "duplicate":
            separator = following or parts[pi - 1]
            parts[pi + 1:pi + 1] = [separator, parts[pi]]
        elif pi != positions[-1]:
            del parts[pi:pi + 2]
        else:
            del parts[pi - 1:pi + 1]
    return "\n".join("".join(parts) for parts in lines)


def mutate_inputs(inputs: Sequence[str], target_count: int, seed: int = 0,
                  max_attempts: Optional[int] = None) -> List[str]:
    """Extends inputs with mutated variants until target_count distinct inputs exist.

    The originals come first, in order. Deterministic for a given seed.

    Raises:
        MutationError: the target could not be reached within max_attempts mutations.
    """
    if not inputs:
        raise ContractViolation("mutate_inputs needs at least one input")
    if target_count < len(inputs):
        raise ContractViolation(f"target_count {target_count} is below the {len(inputs)} given inputs")
    if target_count == len(inputs):
        return list(inputs)

    rng = random.Random(seed)
    pool = list(dict.fromkeys(inputs))
    seen = set(pool)
    attempts_left = max_attempts if max_attempts is not None else 100 * target_count
    while len(pool) < target_count:
        if attempts_left <= 0:
            raise MutationError(f"Reached only {len(pool)} of {target_count} distinct inputs")
        attempts_left -= 1
        mutated = mutate_once(rng.choice(pool), rng)
        if mutated in seen:
            continue
        seen.add(mutated)
        pool.append(mutated)
    logger.debug(f"Mutated {len(inputs)} inputs into {len(pool)}")
    return pool
