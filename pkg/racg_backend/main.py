import os
import logging

# Configure logging before other project imports so their module loggers inherit it
logging.basicConfig(
    level=os.getenv("RACG_LOG_LEVEL", "INFO").upper(),
    format='%(asctime)s - %(levelname)s - %(message)s',
)

from fastapi import FastAPI

from racg_backend.routers import bench, knowledge, runs

logger = logging.getLogger(__name__)

# Tables are created by `alembic upgrade head`, not on startup

app = FastAPI(
    title="Retrieval-Augmented Code Generation API",
    description="Evolving knowledge store, iterative solve loop and benchmark harness.",
    version="0.1.0",
    openapi_tags=[
        {"name": "Knowledge", "description": "Ingest and search the knowledge store"},
        {"name": "Runs", "description": "Solve problems and inspect traces"},
        {"name": "Bench", "description": "Benchmark reports"},
    ],
)

app.include_router(knowledge.router)
app.include_router(runs.router)
app.include_router(bench.router)


@app.get("/")
def read_root():
    return {"message": "Code generation engine is running"}
