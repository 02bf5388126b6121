import logging
import threading
from typing import Optional

from racg_backend import config
from racg_backend.config import EngineSettings
from racg_backend.knowledge_store import KnowledgeBase, load_or_create_store, save_store
from racg_backend.llm_utils import HttpEmbeddingClient, LLMGateway, get_token_counter
from racg_backend.pipeline import Pipeline
from racg_backend.retrieval import index_build
from racg_backend.schemas import RunConfig
from racg_backend.web_utils import WebFetcher

logger = logging.getLogger(__name__)


class Runtime:
    """Process-wide engine state shared by the HTTP routers: settings, store, live index, pipeline."""

    def __init__(self, settings: EngineSettings, kb: KnowledgeBase, gateway: LLMGateway,
                 kb_path: Optional[str] = None, embedder=None, fetcher: Optional[WebFetcher] = None):
        self.settings = settings
        self.kb = kb
        self.kb_path = kb_path
        self.index = index_build(kb, attach=True)
        self.pipeline = Pipeline(gateway, settings.profile_map(), embedder=embedder,
                                 templates_dir=config.PROMPTS_DIR)
        self.fetcher = fetcher
        self.lock = threading.Lock()  # one solve/bench at a time against the shared store

    @classmethod
    def from_settings(cls, settings: Optional[EngineSettings] = None, kb_path: Optional[str] = None) -> "Runtime":
        settings = settings or config.load_settings()
        kb_path = kb_path or config.KB_PATH
        counter = get_token_counter(settings.tokenizer)
        kb = load_or_create_store(kb_path, counter)
        gateway = LLMGateway(settings.roles, counter=counter)
        embedder = HttpEmbeddingClient(settings.embedding)
        fetcher = WebFetcher(settings.web.search_url, settings.web.timeout_s)
        return cls(settings, kb, gateway, kb_path=kb_path, embedder=embedder, fetcher=fetcher)

    def run_config(self, **overrides) -> RunConfig:
        return config.build_run_config(self.settings.run, **overrides)

    def persist(self) -> None:
        if self.kb_path:
            save_store(self.kb, self.kb_path)


_runtime: Optional[Runtime] = None
_runtime_lock = threading.Lock()


def get_runtime() -> Runtime:
    global _runtime
    with _runtime_lock:
        if _runtime is None:
            logger.info("Initializing engine runtime")
            _runtime = Runtime.from_settings()
        return _runtime
