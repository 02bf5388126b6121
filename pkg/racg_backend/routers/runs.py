from fastapi import APIRouter, Depends, HTTPException, status, Query as QueryParam
from sqlalchemy.orm import Session
from typing import List, Optional
import logging

from racg_backend import crud, schemas
from racg_backend.database import get_db
from racg_backend.errors import RacgError
from racg_backend.models import RunMode
from racg_backend.routers import http_error
from racg_backend.runtime import Runtime, get_runtime

logger = logging.getLogger(__name__)

router = APIRouter(
    prefix="/runs",
    tags=["Runs"],
    responses={404: {"description": "Trace not found"}},
)


@router.post("/", response_model=schemas.SolveResponse, status_code=status.HTTP_201_CREATED)
def solve_problem(
    request: schemas.SolveRequest,
    db: Session = Depends(get_db),
    runtime: Runtime = Depends(get_runtime),
):
    """Run the generation loop for one problem against the shared knowledge store and store the trace."""
    logger.info(f"Solving problem {request.problem.id} (mode {request.mode})")
    try:
        cfg = runtime.run_config(
            mode=request.mode,
            max_iterations=request.max_iterations,
            token_budget=request.token_budget,
            retriever=request.retriever,
            seed=request.seed,
        )
        with runtime.lock:
            if cfg.isolate_problems:
                trace = runtime.pipeline.solve(request.problem, runtime.kb.copy(), cfg)
            else:
                trace = runtime.pipeline.solve(request.problem, runtime.kb, cfg, runtime.index)
                runtime.persist()
    except RacgError as e:
        logger.warning(f"Solve of {request.problem.id} failed: {e}")
        raise http_error(e)
    db_trace = crud.create_trace(db, trace)
    return schemas.SolveResponse(trace_id=db_trace.id, trace=trace)


@router.get("/", response_model=List[schemas.TraceSummary])
def read_traces(
    problem_id: Optional[str] = QueryParam(None, description="Filter traces by problem ID"),
    mode: Optional[RunMode] = QueryParam(None, description="Filter traces by mode"),
    skip: int = 0,
    limit: int = 100,
    db: Session = Depends(get_db),
):
    return crud.list_traces(db, problem_id=problem_id, mode=mode.value if mode else None, skip=skip, limit=limit)


@router.get("/{trace_id}", response_model=schemas.RunTrace)
def read_trace(trace_id: int, db: Session = Depends(get_db)):
    db_trace = crud.get_trace(db, trace_id)
    if db_trace is None:
        logger.warning(f"Trace {trace_id} not found")
        raise HTTPException(status_code=status.HTTP_404_NOT_FOUND, detail="Trace not found")
    return crud.load_trace(db_trace)
