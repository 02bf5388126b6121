import os
import logging
from sqlalchemy import create_engine
from sqlalchemy.orm import declarative_base, sessionmaker
from dotenv import load_dotenv

db_module_logger = logging.getLogger(__name__)

load_dotenv()

DATABASE_URL = os.getenv("RACG_DATABASE_URL", "sqlite:///./racg.db")
db_module_logger.info(f"database.py: RACG_DATABASE_URL read from environment: '{DATABASE_URL}'")

if not DATABASE_URL:
    db_module_logger.error("database.py: RACG_DATABASE_URL is empty. Cannot create engine.")
    raise ValueError("RACG_DATABASE_URL environment variable is not set and no default provided.")

if DATABASE_URL.startswith("sqlite"):
    # Benchmark sweeps write traces from worker threads
    engine = create_engine(DATABASE_URL, connect_args={"check_same_thread": False})
else:
    engine = create_engine(DATABASE_URL)

SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)

Base = declarative_base()


def get_db():
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()
