from typing import List, Optional

from sqlalchemy.orm import Session
import logging

from racg_backend import models, schemas

logger = logging.getLogger(__name__)


# --- Trace CRUD Functions ---

def create_trace(db: Session, trace: schemas.RunTrace) -> models.TraceRecord:
    db_trace = models.TraceRecord(
        problem_id=trace.problem_id,
        mode=trace.mode.value,
        termination=trace.termination.value,
        iterations=len(trace.records),
        total_tokens=trace.total_tokens,
        config_hash=trace.config_hash,
        template_hash=trace.template_hash,
        trace_json=trace.to_json(),
    )
    db.add(db_trace)
    db.commit()
    db.refresh(db_trace)
    logger.info(f"Stored trace {db_trace.id} for problem {trace.problem_id}")
    return db_trace


def get_trace(db: Session, trace_id: int) -> Optional[models.TraceRecord]:
    return db.query(models.TraceRecord).filter(models.TraceRecord.id == trace_id).first()


def list_traces(db: Session, problem_id: Optional[str] = None, mode: Optional[str] = None,
                skip: int = 0, limit: int = 100) -> List[models.TraceRecord]:
    query = db.query(models.TraceRecord)
    if problem_id is not None:
        query = query.filter(models.TraceRecord.problem_id == problem_id)
    if mode is not None:
        query = query.filter(models.TraceRecord.mode == mode)
    return query.order_by(models.TraceRecord.id.desc()).offset(skip).limit(limit).all()


def load_trace(db_trace: models.TraceRecord) -> schemas.RunTrace:
    return schemas.RunTrace.model_validate_json(db_trace.trace_json)


# --- Report CRUD Functions ---

def create_report(db: Session, dataset_path: str, report: schemas.Report, markdown: str) -> models.ReportRecord:
    db_report = models.ReportRecord(
        dataset_path=dataset_path,
        modes=",".join(mode.value for mode in report.aggregates),
        report_json=report.model_dump_json(),
        markdown=markdown,
    )
    db.add(db_report)
    db.commit()
    db.refresh(db_report)
    logger.info(f"Stored benchmark report {db_report.id} for {dataset_path}")
    return db_report


def get_report(db: Session, report_id: int) -> Optional[models.ReportRecord]:
    return db.query(models.ReportRecord).filter(models.ReportRecord.id == report_id).first()
