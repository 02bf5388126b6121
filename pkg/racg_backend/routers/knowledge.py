from fastapi import APIRouter, Depends, HTTPException, status, Query as QueryParam
from typing import List, Optional
import logging

from racg_backend import schemas
from racg_backend.errors import RacgError
from racg_backend.knowledge_store import add_feedback_pair, add_verified_snippet, ingest_documentation, ingest_web
from racg_backend.models import KnowledgeKind
from racg_backend.routers import http_error
from racg_backend.runtime import Runtime, get_runtime

logger = logging.getLogger(__name__)

router = APIRouter(
    prefix="/knowledge",
    tags=["Knowledge"],
    responses={404: {"description": "Item not found"}},
)


@router.post("/docs", response_model=schemas.IngestResult, status_code=status.HTTP_201_CREATED)
def ingest_docs(request: schemas.IngestDocsRequest, runtime: Runtime = Depends(get_runtime)):
    """Chunk a documentation directory into the knowledge store."""
    logger.info(f"Ingesting documentation from {request.dir_path}")
    try:
        count = ingest_documentation(runtime.kb, request.dir_path, request.chunk_budget)
    except RacgError as e:
        raise http_error(e)
    runtime.persist()
    return schemas.IngestResult(count=count, generation=runtime.kb.generation)


@router.post("/web", response_model=schemas.IngestResult, status_code=status.HTTP_201_CREATED)
def ingest_web_results(request: schemas.WebIngestRequest, runtime: Runtime = Depends(get_runtime)):
    """Fetch the top web results for a query and store them as web content."""
    if runtime.fetcher is None:
        raise HTTPException(status_code=status.HTTP_503_SERVICE_UNAVAILABLE, detail="Web search is not configured")
    try:
        count = ingest_web(runtime.kb, request.query, request.top_n, runtime.fetcher, request.chunk_budget)
    except RacgError as e:
        raise http_error(e)
    runtime.persist()
    return schemas.IngestResult(count=count, generation=runtime.kb.generation)


@router.post("/snippets", response_model=schemas.KnowledgeItem, status_code=status.HTTP_201_CREATED)
def create_snippet(snippet: schemas.SnippetCreate, runtime: Runtime = Depends(get_runtime)):
    """Add a verified code snippet. An identical program returns the stored item."""
    item = add_verified_snippet(runtime.kb, snippet.program, snippet.label)
    runtime.persist()
    return item


@router.post("/feedback-pairs", response_model=schemas.KnowledgeItem, status_code=status.HTTP_201_CREATED)
def create_feedback_pair(pair: schemas.FeedbackPairCreate, runtime: Runtime = Depends(get_runtime)):
    try:
        item = add_feedback_pair(runtime.kb, pair.program, pair.error, pair.error_line, source="api")
    except RacgError as e:
        raise http_error(e)
    runtime.persist()
    return item


@router.post("/search", response_model=List[schemas.SearchHit])
def search(request: schemas.SearchRequest, runtime: Runtime = Depends(get_runtime)):
    """BM25 search over the store, optionally restricted to one kind."""
    query = schemas.Query(text=request.text)
    hits = runtime.index.retrieve(query, request.k, request.kind)
    return [schemas.SearchHit(item=runtime.kb.get(hit.item_id), score=hit.score) for hit in hits]


@router.get("/stats", response_model=schemas.KnowledgeStats)
def read_stats(runtime: Runtime = Depends(get_runtime)):
    return schemas.KnowledgeStats(
        generation=runtime.kb.generation,
        total=len(runtime.kb),
        counts=runtime.kb.counts(),
    )


@router.get("/items", response_model=List[schemas.KnowledgeItem])
def read_items(
    kind: Optional[KnowledgeKind] = QueryParam(None, description="Filter items by kind"),
    skip: int = 0,
    limit: int = 100,
    runtime: Runtime = Depends(get_runtime),
):
    return runtime.kb.items(kind)[skip:skip + limit]


@router.get("/items/{item_id}", response_model=schemas.KnowledgeItem)
def read_item(item_id: str, runtime: Runtime = Depends(get_runtime)):
    item = runtime.kb.get(item_id)
    if item is None:
        logger.warning(f"Knowledge item {item_id} not found")
        raise HTTPException(status_code=status.HTTP_404_NOT_FOUND, detail="Item not found")
    return item
