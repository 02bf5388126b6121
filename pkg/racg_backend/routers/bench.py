from fastapi import APIRouter, Depends, HTTPException, status
from sqlalchemy.orm import Session
import logging

from racg_backend import crud, evaluation, schemas
from racg_backend.database import get_db
from racg_backend.errors import RacgError
from racg_backend.routers import http_error
from racg_backend.runtime import Runtime, get_runtime

logger = logging.getLogger(__name__)

router = APIRouter(
    prefix="/bench",
    tags=["Bench"],
    responses={404: {"description": "Report not found"}},
)


@router.post("/", response_model=schemas.BenchResponse, status_code=status.HTTP_201_CREATED)
def run_bench(
    request: schemas.BenchRequest,
    db: Session = Depends(get_db),
    runtime: Runtime = Depends(get_runtime),
):
    """Run every requested mode over a JSON-lines dataset and store the report.

    Each mode starts from a copy of the shared store, which itself is left untouched.
    """
    logger.info(f"Benchmark on {request.dataset_path} for modes {[m.value for m in request.modes]}")
    try:
        dataset = evaluation.load_dataset(request.dataset_path)
        if request.validate_gold:
            failing = evaluation.validate_dataset(dataset, runtime.pipeline.profiles)
            if failing:
                raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
                                    detail=f"Gold programs fail their tests: {failing}")
        cfg = runtime.run_config()
        with runtime.lock:
            report = evaluation.run_benchmark(dataset, runtime.kb, cfg, request.modes, runtime.pipeline)
            if request.pass_at_t:
                rates = evaluation.pass_at_t(dataset, runtime.kb, cfg, runtime.pipeline,
                                             thresholds=request.pass_at_t, modes=request.modes)
                evaluation.attach_pass_at_t(report, rates)
    except RacgError as e:
        raise http_error(e)
    markdown = evaluation.render_markdown(report)
    db_report = crud.create_report(db, request.dataset_path, report, markdown)
    return schemas.BenchResponse(report_id=db_report.id, report=report, markdown=markdown)


@router.get("/{report_id}", response_model=schemas.BenchResponse)
def read_report(report_id: int, db: Session = Depends(get_db)):
    db_report = crud.get_report(db, report_id)
    if db_report is None:
        logger.warning(f"Report {report_id} not found")
        raise HTTPException(status_code=status.HTTP_404_NOT_FOUND, detail="Report not found")
    return schemas.BenchResponse(
        report_id=db_report.id,
        report=schemas.Report.model_validate_json(db_report.report_json),
        markdown=db_report.markdown,
    )
