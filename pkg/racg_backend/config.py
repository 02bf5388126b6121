import os
import json
import hashlib
import logging
from pathlib import Path
from typing import Optional, List, Dict, Any

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError

from racg_backend.errors import ConfigError
from racg_backend.models import ModelRole
from racg_backend.schemas import RoleSettings, LanguageProfile, RunConfig

logger = logging.getLogger(__name__)

load_dotenv()

# --- Environment ---
CONFIG_PATH = os.getenv("RACG_CONFIG_PATH")
KB_PATH = os.getenv("RACG_KB_PATH", "./knowledge_store.json")
PROMPTS_DIR = os.getenv("RACG_PROMPTS_DIR", str(Path(__file__).parent / "prompts"))


class EmbeddingSettings(BaseModel):
    base_url: str = "http://localhost:8000/v1"
    model: str = "hkunlp/instructor-xl"
    instruction: str = "Represent the programming knowledge for retrieving code examples:"
    api_key_env: str = "RACG_API_KEY"
    timeout_s: float = 60.0


class TokenizerSettings(BaseModel):
    kind: str = "approx"  # approx | tiktoken
    encoding: str = "cl100k_base"


class WebSettings(BaseModel):
    search_url: Optional[str] = None
    timeout_s: float = 20.0


class EngineSettings(BaseModel):
    roles: Dict[ModelRole, RoleSettings] = Field(
        default_factory=lambda: {role: RoleSettings() for role in ModelRole}
    )
    embedding: EmbeddingSettings = EmbeddingSettings()
    profiles: List[LanguageProfile] = []
    run: Dict[str, Any] = {}
    tokenizer: TokenizerSettings = TokenizerSettings()
    web: WebSettings = WebSettings()

    def profile_map(self) -> Dict[str, LanguageProfile]:
        return {p.name: p for p in self.profiles}


def load_settings(path: Optional[str] = None) -> EngineSettings:
    """Loads the JSON engine config; with no path (and no RACG_CONFIG_PATH) returns defaults."""
    path = path or CONFIG_PATH
    if not path:
        logger.info("No engine config file given; using default settings.")
        return EngineSettings()
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"Engine config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Engine config file {path} is not valid JSON: {e}")
    try:
        settings = EngineSettings(**raw)
    except ValidationError as e:
        raise ConfigError(f"Invalid engine config {path}: {e}")
    missing = [role.value for role in ModelRole if role not in settings.roles]
    if missing:
        raise ConfigError(f"Engine config {path} does not resolve roles: {missing}")
    logger.info(f"Loaded engine config from {path} ({len(settings.profiles)} language profiles).")
    return settings


def build_run_config(base: Optional[Dict[str, Any]] = None, **overrides) -> RunConfig:
    """Merges overrides (None values ignored) onto a base dict and validates into a RunConfig."""
    merged = dict(base or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**merged)
    except ValidationError as e:
        raise ConfigError(f"Invalid run configuration: {e}")


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(cfg.model_dump_json().encode("utf-8")).hexdigest()[:16]
