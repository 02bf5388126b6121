import math
import time
import random
import threading
import pytest
from collections import Counter
from unittest.mock import MagicMock, patch

from hypothesis import given, settings, strategies as st

from racg_backend.errors import ConfigError, ContractViolation, DuplicateItemError, RetrievalError
from racg_backend.knowledge_store import KnowledgeBase, add_feedback_pair, add_verified_snippet, ingest_documentation
from racg_backend.models import KnowledgeKind
from racg_backend.retrieval import (
    BM25Index, DenseRetriever, KnowledgeIndex, assemble_context, index_build, index_insert, retrieve, tokenize,
)
from racg_backend.schemas import KnowledgeItem, Query, RunConfig

VOCAB = ["list", "map", "reverse", "append", "sort", "string", "int", "parse", "error", "loop",
         "index", "key", "value", "print", "read", "input", "split", "join", "filter", "lambda"]


def make_item(item_id: str, kind: KnowledgeKind, token_len: int, text: str = "x") -> KnowledgeItem:
    code = "pass" if kind in (KnowledgeKind.CODE_SNIPPET, KnowledgeKind.FEEDBACK_PAIR) else None
    error = "Error" if kind == KnowledgeKind.FEEDBACK_PAIR else None
    return KnowledgeItem(id=item_id, kind=kind, text=text, code=code, error=error, token_len=token_len)


def random_corpus(rng: random.Random, size: int):
    return {f"d{i:03d}": " ".join(rng.choice(VOCAB) for _ in range(rng.randint(1, 30))) for i in range(size)}


def oracle_scores(corpus: dict, query: str, k1: float = 1.2, b: float = 0.75) -> dict:
    """BM25 straight from the formula, recomputed from scratch."""
    docs = {doc_id: tokenize(text) for doc_id, text in corpus.items()}
    n = len(docs)
    avg_len = sum(len(t) for t in docs.values()) / n
    scores = {}
    for doc_id, tokens in docs.items():
        tf = Counter(tokens)
        total, matched = 0.0, False
        for term in tokenize(query):
            if tf[term] == 0:
                continue
            matched = True
            df = sum(1 for t in docs.values() if term in t)
            idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
            total += idf * tf[term] * (k1 + 1) / (tf[term] + k1 * (1 - b + b * len(tokens) / avg_len))
        if matched:
            scores[doc_id] = total
    return scores


# --- Tokenizer ---

def test_tokenize_splits_identifiers():
    assert tokenize("myList.append(x)") == ["mylist", "my", "list", "append", "x"]
    assert tokenize("read_line HTTPServer") == ["read_line", "read", "line", "httpserver", "http", "server"]
    assert tokenize("!!! ---") == []


# --- BM25 ---

def test_empty_kb_builds_empty_index(kb):
    index = index_build(kb, attach=False)
    assert len(index) == 0


def test_average_length_is_mean_of_token_counts():
    index = BM25Index()
    index.insert("a", "one")
    index.insert("b", "one two")
    index.insert("c", "one two three")
    assert index.avg_doc_len == pytest.approx(2.0)


def test_document_frequencies_match_brute_force():
    corpus = random_corpus(random.Random(3), 50)
    index = BM25Index()
    for doc_id, text in corpus.items():
        index.insert(doc_id, text)
    for term in VOCAB:
        assert index.doc_freq(term) == sum(1 for text in corpus.values() if term in tokenize(text))


def test_single_document_ranks_first_for_its_own_text():
    index = BM25Index()
    index.insert("only", "reverse a list in place")
    hits = index.retrieve("reverse a list in place", 5)
    assert [h.item_id for h in hits] == ["only"]
    assert hits[0].score > 0


def test_empty_query_returns_nothing():
    index = BM25Index()
    index.insert("a", "text")
    assert index.retrieve("", 5) == []


def test_item_without_tokens_is_counted_but_unposted():
    index = BM25Index()
    index.insert("a", "list")
    postings = {term: dict(p) for term, p in index.postings.items()}
    index.insert("b", "!!!")
    assert index.num_docs == 2
    assert index.postings == postings


def test_duplicate_id_is_rejected():
    index = BM25Index()
    index.insert("a", "list")
    with pytest.raises(DuplicateItemError):
        index.insert("a", "map")


def test_k_must_be_positive():
    with pytest.raises(ContractViolation):
        BM25Index().retrieve("list", 0)


def test_scores_match_formula_oracle():
    rng = random.Random(7)
    corpus = random_corpus(rng, 100)
    index = BM25Index()
    for doc_id, text in corpus.items():
        index.insert(doc_id, text)

    for _ in range(50):
        query = " ".join(rng.choice(VOCAB) for _ in range(rng.randint(1, 4)))
        expected = oracle_scores(corpus, query)
        hits = index.retrieve(query, 100)
        assert [h.item_id for h in hits] == sorted(expected, key=lambda d: (-expected[d], d))
        for hit in hits:
            assert abs(hit.score - expected[hit.item_id]) <= 1e-9


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_incremental_insert_equals_rebuild(seed):
    rng = random.Random(seed)
    corpus = random_corpus(rng, 20)
    ids = list(corpus)
    rng.shuffle(ids)

    incremental = BM25Index()
    for doc_id in ids:
        incremental.insert(doc_id, corpus[doc_id])
    rebuilt = BM25Index()
    for doc_id in sorted(corpus):
        rebuilt.insert(doc_id, corpus[doc_id])

    for _ in range(10):
        query = " ".join(rng.choice(VOCAB) for _ in range(3))
        assert incremental.retrieve(query, 20) == rebuilt.retrieve(query, 20)


def test_live_index_follows_store(kb, docs_dir):
    ingest_documentation(kb, str(docs_dir))
    index = index_build(kb, attach=True)
    add_feedback_pair(kb, "xs.revers()", "AttributeError: 'list' object has no attribute 'revers'")

    assert len(index) == len(kb)
    hits = retrieve(index, Query(text="AttributeError revers"), 5)
    assert hits[0].item_id == kb.items(KnowledgeKind.FEEDBACK_PAIR)[0].id


def test_retrieve_by_kind_uses_separate_pools(kb):
    add_verified_snippet(kb, "xs.reverse()", "reverse a list")
    add_feedback_pair(kb, "xs.revers()", "reverse failed")
    index = index_build(kb)

    hits = index.retrieve(Query(text="reverse"), 5, KnowledgeKind.CODE_SNIPPET)
    assert [h.item_id for h in hits] == ["snippet-000001"]
    assert len(index.retrieve(Query(text="reverse"), 5)) == 2


def test_index_insert_returns_index():
    index = KnowledgeIndex()
    item = make_item("doc-1", KnowledgeKind.DOCUMENTATION, 1, "list")
    assert index_insert(index, item) is index
    assert len(index) == 1


def test_reader_never_sees_a_half_inserted_item(kb):
    index = index_build(kb, attach=True)
    posted = threading.Event()
    original_insert = BM25Index.insert

    def slow_insert(self, doc_id, text):
        original_insert(self, doc_id, text)
        posted.set()
        time.sleep(0.2)

    results, errors = [], []

    def reader():
        posted.wait(timeout=5)
        try:
            results.append(index.retrieve_items(Query(text="echo stdin"), 5, KnowledgeKind.CODE_SNIPPET))
        except Exception as e:
            errors.append(e)

    with patch.object(BM25Index, "insert", slow_insert):
        thread = threading.Thread(target=reader)
        thread.start()
        add_verified_snippet(kb, "print(input())", "echo stdin")
        thread.join(timeout=5)

    assert errors == []
    assert [item.id for item in results[0]] in ([], ["snippet-000001"])


# --- Dense ---

class StubEmbedder:
    def __init__(self, vectors):
        self.vectors = vectors
        self.calls = 0

    def embed(self, texts):
        self.calls += 1
        return [self.vectors[t] for t in texts]


def test_dense_identical_text_ranks_first():
    kb = KnowledgeBase()
    add_verified_snippet(kb, "a", "first")
    add_verified_snippet(kb, "b", "second")
    embedder = StubEmbedder({"first\na": [1.0, 0.0], "second\nb": [0.6, 0.8], "q": [1.0, 0.0]})

    hits = DenseRetriever(embedder).retrieve(kb, Query(text="q"), 2)

    assert hits[0].item_id == "snippet-000001"
    assert hits[0].score == pytest.approx(1.0)


def test_dense_orthogonal_vectors_tie_break_by_id():
    kb = KnowledgeBase()
    add_verified_snippet(kb, "b", "y")
    add_verified_snippet(kb, "a", "x")
    embedder = StubEmbedder({"y\nb": [0.0, 1.0, 0.0], "x\na": [0.0, 0.0, 1.0], "q": [1.0, 0.0, 0.0]})

    hits = DenseRetriever(embedder).retrieve(kb, Query(text="q"), 5)

    assert [(h.item_id, h.score) for h in hits] == [("snippet-000001", 0.0), ("snippet-000002", 0.0)]


def test_dense_caches_item_embeddings():
    kb = KnowledgeBase()
    add_verified_snippet(kb, "a", "x")
    embedder = StubEmbedder({"x\na": [1.0], "q": [1.0]})
    retriever = DenseRetriever(embedder)

    retriever.retrieve(kb, Query(text="q"), 1)
    retriever.retrieve(kb, Query(text="q"), 1)

    assert embedder.calls == 3  # item batch once, query twice


def test_dense_endpoint_failure_raises():
    kb = KnowledgeBase()
    add_verified_snippet(kb, "a", "x")
    client = MagicMock()
    client.embed.side_effect = RetrievalError("unreachable")
    with pytest.raises(RetrievalError):
        DenseRetriever(client).retrieve(kb, Query(text="q"), 1)


# --- Context assembly ---

def test_documentation_budget_after_saturating_snippets():
    cfg = RunConfig()
    ranked = {
        KnowledgeKind.CODE_SNIPPET: [make_item(f"s{i}", KnowledgeKind.CODE_SNIPPET, 100) for i in range(5)],
        KnowledgeKind.DOCUMENTATION: [make_item(f"d{i:04d}", KnowledgeKind.DOCUMENTATION, 1) for i in range(4000)],
    }
    context = assemble_context(ranked, cfg)

    assert sum(i.token_len for i in context.snippets) == 300
    assert sum(i.token_len for i in context.docs) == 3396
    assert context.total_tokens == 3696


def test_overflowing_item_is_skipped_not_truncated():
    ranked = {
        KnowledgeKind.CODE_SNIPPET: [make_item(f"s{i}", KnowledgeKind.CODE_SNIPPET, 100) for i in range(3)],
        KnowledgeKind.DOCUMENTATION: [
            make_item("d1", KnowledgeKind.DOCUMENTATION, 2000),
            make_item("d2", KnowledgeKind.DOCUMENTATION, 1500),
            make_item("d3", KnowledgeKind.DOCUMENTATION, 1000),
        ],
    }
    context = assemble_context(ranked, RunConfig())

    assert [i.id for i in context.docs] == ["d1", "d3"]
    assert sum(i.token_len for i in context.docs) == 3000


def test_no_ranked_items_gives_empty_context():
    context = assemble_context({}, RunConfig())
    assert context.is_empty()
    assert context.total_tokens == 0


def test_feedback_goes_first_and_web_can_use_everything():
    cfg = RunConfig()
    ranked = {
        KnowledgeKind.FEEDBACK_PAIR: [make_item("p1", KnowledgeKind.FEEDBACK_PAIR, 3000)],
        KnowledgeKind.DOCUMENTATION: [make_item("d1", KnowledgeKind.DOCUMENTATION, 1000)],
    }
    context = assemble_context(ranked, cfg)
    assert [i.id for i in context.feedback] == ["p1"]
    assert context.docs == []

    web_only = assemble_context({KnowledgeKind.WEB_SEARCH: [make_item("w1", KnowledgeKind.WEB_SEARCH, 3696)]}, cfg)
    assert [i.id for i in web_only.web] == ["w1"]


def test_invalid_budget_is_a_config_error():
    cfg = RunConfig().model_copy(update={"context_limit": 700})
    with pytest.raises(ConfigError):
        assemble_context({}, cfg)


@settings(max_examples=200, deadline=None)
@given(
    sizes=st.dictionaries(
        st.sampled_from(list(KnowledgeKind)),
        st.lists(st.integers(min_value=0, max_value=5000), max_size=30),
    ),
    context_limit=st.integers(min_value=1000, max_value=8192),
    reserve=st.integers(min_value=0, max_value=500),
    snippet_budget=st.integers(min_value=0, max_value=400),
)
def test_context_never_exceeds_budget(sizes, context_limit, reserve, snippet_budget):
    cfg = RunConfig(context_limit=context_limit, generation_reserve=reserve, snippet_budget=snippet_budget)
    ranked = {
        kind: [make_item(f"{kind.value}-{i}", kind, size) for i, size in enumerate(values)]
        for kind, values in sizes.items()
    }
    context = assemble_context(ranked, cfg)

    assert context.total_tokens <= context_limit - reserve
    assert sum(i.token_len for i in context.snippets) <= snippet_budget
    assert context.total_tokens == sum(
        i.token_len for group in (context.web, context.feedback, context.snippets, context.docs) for i in group
    )
