import re
import math
import logging
import threading
from collections import Counter
from typing import Dict, List, Optional, Union

import numpy as np

from racg_backend.errors import ConfigError, ContractViolation, DuplicateItemError
from racg_backend.models import KnowledgeKind
from racg_backend.schemas import KnowledgeItem, Query, RetrievedContext, RunConfig, ScoredItem

logger = logging.getLogger(__name__)

BM25_K1 = 1.2
BM25_B = 0.75

WORD_RE = re.compile(r"[A-Za-z0-9_]+")
# Acronym before a capitalized word, capitalized/lowercase words, acronyms, digit runs
CAMEL_RE = re.compile(r"[A-Z]+(?=[A-Z][a-z])|[A-Z]?[a-z]+|[A-Z]+|[0-9]+")


def tokenize(text: str) -> List[str]:
    """Lowercased alphanumeric tokens; snake_case and camelCase identifiers also yield their parts."""
    tokens: List[str] = []
    for word in WORD_RE.findall(text):
        parts = [p.lower() for piece in word.split("_") for p in CAMEL_RE.findall(piece)]
        compound = word.strip("_").lower()
        if len(parts) > 1 and compound:
            tokens.append(compound)
        tokens.extend(parts)
    return tokens


def _sort_key(scored: ScoredItem):
    return (-scored.score, scored.item_id)


class BM25Index:
    """Inverted index whose statistics are updated per insert.

    Scores are computed from the raw statistics at query time, so any insertion
    order yields the same rankings as a rebuild over the same documents.
    """

    def __init__(self, k1: float = BM25_K1, b: float = BM25_B):
        self.k1 = k1
        self.b = b
        self.doc_len: Dict[str, int] = {}
        self.postings: Dict[str, Dict[str, int]] = {}
        self.total_len = 0
        self._lock = threading.RLock()

    @property
    def num_docs(self) -> int:
        return len(self.doc_len)

    @property
    def avg_doc_len(self) -> float:
        return self.total_len / self.num_docs if self.num_docs else 0.0

    def doc_freq(self, term: str) -> int:
        return len(self.postings.get(term, {}))

    def insert(self, doc_id: str, text: str) -> None:
        tokens = tokenize(text)
        with self._lock:
            if doc_id in self.doc_len:
                raise DuplicateItemError(f"Item {doc_id} is already indexed")
            self.doc_len[doc_id] = len(tokens)
            self.total_len += len(tokens)
            for term, tf in Counter(tokens).items():
                self.postings.setdefault(term, {})[doc_id] = tf

    def idf(self, term: str) -> float:
        df = self.doc_freq(term)
        return math.log(1 + (self.num_docs - df + 0.5) / (df + 0.5))

    def retrieve(self, text: str, k: int) -> List[ScoredItem]:
        if k < 1:
            raise ContractViolation("k must be at least 1")
        query_terms = tokenize(text)
        if not query_terms:
            return []
        with self._lock:
            avg_len = self.avg_doc_len
            scores: Dict[str, float] = {}
            for term in query_terms:
                posting = self.postings.get(term)
                if not posting:
                    continue
                idf = self.idf(term)
                for doc_id, tf in posting.items():
                    norm = 1 - self.b + self.b * self.doc_len[doc_id] / avg_len
                    scores[doc_id] = scores.get(doc_id, 0.0) + idf * tf * (self.k1 + 1) / (tf + self.k1 * norm)
        ranked = sorted((ScoredItem(item_id=doc_id, score=score) for doc_id, score in scores.items()), key=_sort_key)
        return ranked[:k]


class KnowledgeIndex:
    """One BM25 pool per knowledge kind, since context budgets are allocated per kind."""

    def __init__(self):
        self.pools: Dict[KnowledgeKind, BM25Index] = {kind: BM25Index() for kind in KnowledgeKind}
        self.items: Dict[str, KnowledgeItem] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.items)

    def insert(self, item: KnowledgeItem) -> None:
        with self._lock:
            if item.id in self.items:
                raise DuplicateItemError(f"Item {item.id} is already indexed")
            # registered before posting, so any id a reader ranks can be resolved
            self.items[item.id] = item
            self.pools[item.kind].insert(item.id, item.text)

    def retrieve(self, query: Query, k: int, kind: Optional[KnowledgeKind] = None) -> List[ScoredItem]:
        with self._lock:
            if kind is not None:
                return self.pools[kind].retrieve(query.text, k)
            merged: List[ScoredItem] = []
            for pool in self.pools.values():
                merged.extend(pool.retrieve(query.text, k))
        return sorted(merged, key=_sort_key)[:k]

    def retrieve_items(self, query: Query, k: int, kind: KnowledgeKind) -> List[KnowledgeItem]:
        return [self.items[s.item_id] for s in self.retrieve(query, k, kind)]


def index_build(kb, attach: bool = True) -> KnowledgeIndex:
    """Indexes every item of kb; with attach, later inserts into kb flow into the index too."""
    index = KnowledgeIndex()
    if attach:
        kb.subscribe(index.insert, replay=True)
    else:
        for item in kb.items():
            index.insert(item)
    logger.debug(f"Built index over {len(index)} items at generation {kb.generation}")
    return index


def index_insert(index: KnowledgeIndex, item: KnowledgeItem) -> KnowledgeIndex:
    index.insert(item)
    return index


def retrieve(index: Union[KnowledgeIndex, BM25Index], q: Query, k: int,
             kind: Optional[KnowledgeKind] = None) -> List[ScoredItem]:
    if isinstance(index, BM25Index):
        return index.retrieve(q.text, k)
    return index.retrieve(q, k, kind)


# --- Dense retrieval ---

class DenseRetriever:
    """Cosine-similarity ranking over an embedding client, caching item vectors by (id, generation)."""

    def __init__(self, client):
        self.client = client
        self._cache: Dict[tuple, np.ndarray] = {}
        self._lock = threading.Lock()

    def _vectors(self, items: List[KnowledgeItem]) -> List[np.ndarray]:
        with self._lock:
            missing = [item for item in items if (item.id, item.generation) not in self._cache]
        if missing:
            embedded = self.client.embed([item.text for item in missing])
            with self._lock:
                for item, vector in zip(missing, embedded):
                    self._cache[(item.id, item.generation)] = np.asarray(vector, dtype=float)
        with self._lock:
            return [self._cache[(item.id, item.generation)] for item in items]

    def retrieve(self, kb, q: Query, k: int, kind: Optional[KnowledgeKind] = None) -> List[ScoredItem]:
        if k < 1:
            raise ContractViolation("k must be at least 1")
        items = kb.items(kind)
        if not items or not q.text.strip():
            return []
        query_vec = np.asarray(self.client.embed([q.text])[0], dtype=float)
        query_norm = np.linalg.norm(query_vec)
        scored = []
        for item, vector in zip(items, self._vectors(items)):
            denom = query_norm * np.linalg.norm(vector)
            score = float(np.dot(query_vec, vector) / denom) if denom else 0.0
            scored.append(ScoredItem(item_id=item.id, score=score))
        return sorted(scored, key=_sort_key)[:k]


def dense_retrieve(retriever: DenseRetriever, kb, q: Query, k: int,
                   kind: Optional[KnowledgeKind] = None) -> List[ScoredItem]:
    return retriever.retrieve(kb, q, k, kind)


# --- Context assembly ---

def _fill(items: List[KnowledgeItem], budget: int) -> List[KnowledgeItem]:
    chosen, spent = [], 0
    for item in items:
        # Skip rather than truncate: a cut snippet or doc loses its syntax
        if spent + item.token_len <= budget:
            chosen.append(item)
            spent += item.token_len
    return chosen


def assemble_context(ranked: Dict[KnowledgeKind, List[KnowledgeItem]], cfg: RunConfig) -> RetrievedContext:
    """Greedy per-kind packing of ranked items into the prompt budget.

    Feedback is taken first, snippets are capped at cfg.snippet_budget, web content
    and then documentation fill whatever remains of
    context_limit - generation_reserve. Alone, web content can use the full budget.
    """
    if cfg.context_limit <= cfg.generation_reserve + cfg.snippet_budget:
        raise ConfigError("context_limit must exceed generation_reserve + snippet_budget")
    available = cfg.context_limit - cfg.generation_reserve

    def used(*groups: List[KnowledgeItem]) -> int:
        return sum(item.token_len for group in groups for item in group)

    feedback = _fill(ranked.get(KnowledgeKind.FEEDBACK_PAIR, []), available)
    snippets = _fill(ranked.get(KnowledgeKind.CODE_SNIPPET, []),
                     min(cfg.snippet_budget, available - used(feedback)))
    web = _fill(ranked.get(KnowledgeKind.WEB_SEARCH, []), available - used(feedback, snippets))
    docs = _fill(ranked.get(KnowledgeKind.DOCUMENTATION, []), available - used(feedback, snippets, web))
    return RetrievedContext(
        web=web,
        feedback=feedback,
        snippets=snippets,
        docs=docs,
        total_tokens=used(feedback, snippets, web, docs),
    )
