"""The knowledge soup: an append-only store of documentation chunks, web pages,
verified code snippets and (program, error) feedback pairs.

Mutations go through a single writer lock; every successful insert bumps the
store generation by one and is pushed to subscribed listeners (live indexes)
before the lock is released, so readers never see an item an index is missing.
"""
import os
import re
import logging
import tempfile
import threading
from pathlib import Path
from typing import Optional, List, Dict, Tuple, Callable, Iterable

from pydantic import ValidationError

from racg_backend import file_utils
from racg_backend.errors import IngestError, ContractViolation
from racg_backend.executor import offending_line
from racg_backend.llm_utils import DEFAULT_COUNTER
from racg_backend.models import KnowledgeKind
from racg_backend.schemas import KnowledgeItem, StoreFile

logger = logging.getLogger(__name__)

DEFAULT_CHUNK_BUDGET = 500

ID_PREFIXES = {
    KnowledgeKind.DOCUMENTATION: "doc",
    KnowledgeKind.WEB_SEARCH: "web",
    KnowledgeKind.CODE_SNIPPET: "snippet",
    KnowledgeKind.FEEDBACK_PAIR: "pair",
}


class KnowledgeBase:
    def __init__(self, counter=None):
        self.counter = counter or DEFAULT_COUNTER
        self._items: List[KnowledgeItem] = []
        self._by_id: Dict[str, KnowledgeItem] = {}
        self._dedup: Dict[tuple, KnowledgeItem] = {}
        self._listeners: List[Callable[[KnowledgeItem], None]] = []
        self._lock = threading.RLock()
        self.generation = 0

    def __len__(self) -> int:
        return len(self._items)

    def items(self, kind: Optional[KnowledgeKind] = None) -> List[KnowledgeItem]:
        with self._lock:
            snapshot = list(self._items)
        if kind is None:
            return snapshot
        return [item for item in snapshot if item.kind == kind]

    def get(self, item_id: str) -> Optional[KnowledgeItem]:
        return self._by_id.get(item_id)

    def counts(self) -> Dict[KnowledgeKind, int]:
        counts = {kind: 0 for kind in KnowledgeKind}
        for item in self.items():
            counts[item.kind] += 1
        return counts

    def subscribe(self, listener: Callable[[KnowledgeItem], None], replay: bool = False) -> None:
        """Registers a listener for new items; with replay, existing items are fed to it first under the same lock."""
        with self._lock:
            if replay:
                for item in self._items:
                    listener(item)
            self._listeners.append(listener)

    def unsubscribe(self, listener: Callable[[KnowledgeItem], None]) -> None:
        with self._lock:
            if listener in self._listeners:
                self._listeners.remove(listener)

    def copy(self) -> "KnowledgeBase":
        """Independent snapshot with the same items and generation; listeners are not carried over."""
        with self._lock:
            clone = KnowledgeBase(counter=self.counter)
            clone._items = list(self._items)
            clone._by_id = dict(self._by_id)
            clone._dedup = dict(self._dedup)
            clone.generation = self.generation
        return clone

    def insert(self, kind: KnowledgeKind, text: str, dedup_key: tuple, code: Optional[str] = None,
               error: Optional[str] = None, source: str = "") -> Tuple[KnowledgeItem, bool]:
        """Appends one item unless its dedup key is present. Returns (item, created)."""
        with self._lock:
            existing = self._dedup.get(dedup_key)
            if existing is not None:
                return existing, False
            generation = self.generation + 1
            item = KnowledgeItem(
                id=f"{ID_PREFIXES[kind]}-{generation:06d}",
                kind=kind,
                text=text,
                code=code,
                error=error,
                source=source,
                token_len=self.counter.count(text),
                generation=generation,
            )
            for listener in self._listeners:
                listener(item)
            self._items.append(item)
            self._by_id[item.id] = item
            self._dedup[dedup_key] = item
            self.generation = generation
            return item, True

    def _load(self, generation: int, items: Iterable[KnowledgeItem]) -> None:
        for item in items:
            if item.id in self._by_id:
                raise IngestError(f"Duplicate item id in store file: {item.id}")
            self._items.append(item)
            self._by_id[item.id] = item
            self._dedup[dedup_key_for(item)] = item
        self.generation = generation


def dedup_key_for(item: KnowledgeItem) -> tuple:
    if item.kind == KnowledgeKind.CODE_SNIPPET:
        return (item.kind, item.code)
    if item.kind == KnowledgeKind.FEEDBACK_PAIR:
        return (item.kind, item.code, item.error)
    return (item.kind, item.text)


# --- Chunking ---

PARAGRAPH_RE = re.compile(r"\n\s*\n")


def _pack(units: List[str], joiner: str, budget: int, counter) -> List[str]:
    chunks: List[str] = []
    current: List[str] = []
    for unit in units:
        candidate = joiner.join(current + [unit])
        if current and counter.count(candidate) > budget:
            chunks.append(joiner.join(current))
            current = [unit]
        else:
            current.append(unit)
    if current:
        chunks.append(joiner.join(current))
    return chunks


def _split_chars(word: str, budget: int, counter) -> List[str]:
    pieces, start = [], 0
    while start < len(word):
        end = start + 1
        while end < len(word) and counter.count(word[start:end + 1]) <= budget:
            end += 1
        pieces.append(word[start:end])
        start = end
    return pieces


def _fit(unit: str, level: int, budget: int, counter) -> List[str]:
    """Splits an oversized unit at line, then word, then character boundaries."""
    if counter.count(unit) <= budget:
        return [unit]
    if level == 0:
        parts, joiner = unit.split("\n"), "\n"
    elif level == 1:
        parts, joiner = unit.split(), " "
    else:
        return _split_chars(unit, budget, counter)
    fitted: List[str] = []
    for part in parts:
        if part.strip():
            fitted.extend(_fit(part, level + 1, budget, counter))
    return _pack(fitted, joiner, budget, counter)


def chunk_text(text: str, chunk_budget: int = DEFAULT_CHUNK_BUDGET, counter=None) -> List[str]:
    """Greedy paragraph packing up to chunk_budget tokens per chunk."""
    counter = counter or DEFAULT_COUNTER
    paragraphs = [p.strip() for p in PARAGRAPH_RE.split(text) if p.strip()]
    units: List[str] = []
    for paragraph in paragraphs:
        if counter.count(paragraph) > chunk_budget:
            units.extend(_fit(paragraph, 0, chunk_budget, counter))
        else:
            units.append(paragraph)
    return _pack(units, "\n\n", chunk_budget, counter)


# --- Ingestion and evolution ---

def ingest_documentation(kb: KnowledgeBase, dir_path: str, chunk_budget: int = DEFAULT_CHUNK_BUDGET) -> int:
    """Chunks every text/markdown (and pdf/docx) file under dir_path into Documentation items.

    Returns:
        The number of items created.
    """
    path = Path(dir_path)
    if not path.is_dir() or not os.access(path, os.R_OK | os.X_OK):
        raise IngestError(f"Documentation directory is not readable: {dir_path}", path=str(dir_path))

    created = 0
    files = file_utils.list_document_files(path)
    for file_path in files:
        text = file_utils.extract_text_from_file(str(file_path))
        if text is None:
            logger.warning(f"Skipping documentation file {file_path}: no text extracted")
            continue
        source = file_path.relative_to(path).as_posix()
        for chunk in chunk_text(text, chunk_budget, kb.counter):
            _, is_new = kb.insert(KnowledgeKind.DOCUMENTATION, chunk,
                                  dedup_key=(KnowledgeKind.DOCUMENTATION, chunk), source=source)
            created += int(is_new)
    logger.info(f"Ingested {len(files)} documentation files from {dir_path} into {created} items")
    return created


def add_verified_snippet(kb: KnowledgeBase, program: str, label: str) -> KnowledgeItem:
    """Adds a program that already executed successfully; an identical program returns the existing item."""
    item, created = kb.insert(
        KnowledgeKind.CODE_SNIPPET,
        f"{label}\n{program}",
        dedup_key=(KnowledgeKind.CODE_SNIPPET, program),
        code=program,
        source=label,
    )
    if created:
        logger.debug(f"Added verified snippet {item.id} ({label})")
    return item


def add_feedback_pair(kb: KnowledgeBase, program: str, error: str,
                      error_line: Optional[int] = None, source: str = "execution") -> KnowledgeItem:
    """Adds a (program, error) pair. The item text is the error message plus the offending line when known."""
    if not error:
        raise ContractViolation("add_feedback_pair needs a nonempty error; use add_verified_snippet for successes")
    text = error
    line = offending_line(program, error_line)
    if line is not None:
        text = f"{error}\nOffending line {error_line}: {line}"
    item, created = kb.insert(
        KnowledgeKind.FEEDBACK_PAIR,
        text,
        dedup_key=(KnowledgeKind.FEEDBACK_PAIR, program, error),
        code=program,
        error=error,
        source=source,
    )
    if created:
        logger.debug(f"Added feedback pair {item.id}")
    return item


def ingest_web(kb: KnowledgeBase, query: str, top_n: int, fetcher,
               chunk_budget: int = DEFAULT_CHUNK_BUDGET) -> int:
    """Fetches the top_n search results for query and stores them as WebSearch chunks.

    Network failures are logged and skipped, so a partial ingest still returns its count.
    """
    from racg_backend import web_utils

    if top_n < 1:
        raise ContractViolation("top_n must be at least 1")
    try:
        urls = fetcher.search(query, top_n)[:top_n]
    except Exception as e:
        logger.warning(f"Web search failed for '{query}': {e}")
        return 0

    created = 0
    for url in urls:
        try:
            html = fetcher.fetch(url)
        except Exception as e:
            logger.warning(f"Skipping web result {url}: {e}")
            continue
        text = web_utils.strip_list_lines(web_utils.html_to_text(html))
        for chunk in chunk_text(text, chunk_budget, kb.counter):
            _, is_new = kb.insert(KnowledgeKind.WEB_SEARCH, chunk,
                                  dedup_key=(KnowledgeKind.WEB_SEARCH, chunk), source=url)
            created += int(is_new)
    logger.info(f"Ingested {len(urls)} web results for '{query}' into {created} items")
    return created


# --- Persistence ---

def save_store(kb: KnowledgeBase, path: str) -> None:
    with kb._lock:
        payload = StoreFile(generation=kb.generation, items=list(kb._items))
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=str(target.parent), prefix=".store-", suffix=".json")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(payload.model_dump_json(exclude_none=True, indent=1))
        os.replace(tmp_path, target)
    except Exception:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise
    logger.info(f"Saved knowledge store ({len(payload.items)} items, generation {payload.generation}) to {path}")


def load_store(path: str, counter=None) -> KnowledgeBase:
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise IngestError(f"Knowledge store file is not readable: {path} ({e})", path=path)
    try:
        payload = StoreFile.model_validate_json(raw)
    except ValidationError as e:
        raise IngestError(f"Knowledge store file {path} is invalid: {e}", path=path)
    kb = KnowledgeBase(counter=counter)
    kb._load(payload.generation, payload.items)
    logger.info(f"Loaded knowledge store from {path}: {len(kb)} items, generation {kb.generation}")
    return kb


def load_or_create_store(path: str, counter=None) -> KnowledgeBase:
    if Path(path).is_file():
        return load_store(path, counter)
    logger.info(f"No knowledge store at {path}; starting empty")
    return KnowledgeBase(counter=counter)
