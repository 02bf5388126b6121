import sys
import shutil
import pytest
from fastapi.testclient import TestClient
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker

from racg_backend.config import PROMPTS_DIR, EngineSettings
from racg_backend.database import Base, get_db
from racg_backend.knowledge_store import KnowledgeBase
from racg_backend.llm_utils import LLMGateway, ScriptedChatTransport
from racg_backend.main import app
from racg_backend.models import ModelRole
from racg_backend.pipeline import Pipeline
from racg_backend.runtime import Runtime, get_runtime
from racg_backend.schemas import LanguageProfile, RoleSettings

# Shared fixtures: fixture toolchains built from the running interpreter, scripted
# model gateways, a temporary documentation directory and an API client wired to
# a throwaway sqlite database.


def fenced(program: str) -> str:
    return f"```python\n{program}\n```"


@pytest.fixture
def python_profile() -> LanguageProfile:
    """Runs the program with the current Python interpreter."""
    return LanguageProfile(
        name="python",
        file_extension=".py",
        run_cmd=[sys.executable, "{file}"],
        timeout_s=10,
    )


@pytest.fixture
def echo_profile() -> LanguageProfile:
    """Copies stdin to stdout whatever the program says."""
    return LanguageProfile(
        name="echo",
        file_extension=".txt",
        run_cmd=[sys.executable, "-c", "import sys;sys.stdout.write(sys.stdin.read())", "{file}"],
        timeout_s=10,
    )


@pytest.fixture
def profiles(python_profile, echo_profile) -> dict:
    return {python_profile.name: python_profile, echo_profile.name: echo_profile}


@pytest.fixture
def roles() -> dict:
    return {role: RoleSettings() for role in ModelRole}


@pytest.fixture
def make_gateway(roles):
    """Factory: scripts per role -> (gateway, transport)."""
    def _make(scripts, repeat_last=True, **kwargs):
        transport = ScriptedChatTransport(scripts, repeat_last=repeat_last)
        gateway = LLMGateway(roles, transport=transport, backoff_s=0, **kwargs)
        return gateway, transport
    return _make


@pytest.fixture
def make_pipeline(make_gateway, profiles):
    def _make(scripts, **kwargs):
        gateway, transport = make_gateway(scripts)
        return Pipeline(gateway, profiles, **kwargs), transport
    return _make


@pytest.fixture
def kb() -> KnowledgeBase:
    return KnowledgeBase()


@pytest.fixture
def custom_prompts(tmp_path):
    """A copy of the shipped prompt templates with a marked query-evolution template."""
    root = tmp_path / "prompts"
    shutil.copytree(PROMPTS_DIR, root)
    path = root / "evolve_query.txt"
    path.write_text("CUSTOM-EVOLVE\n" + path.read_text(encoding="utf-8"), encoding="utf-8")
    return root


@pytest.fixture
def docs_dir(tmp_path):
    """Two markdown files and a nested text file."""
    root = tmp_path / "docs"
    (root / "nested").mkdir(parents=True)
    (root / "lists.md").write_text(
        "# Lists\n\nUse append to add an element to a list.\n\nUse reverse to reverse a list in place.\n",
        encoding="utf-8",
    )
    (root / "io.md").write_text(
        "# Input\n\nRead a line from standard input with input().\n",
        encoding="utf-8",
    )
    (root / "nested" / "maps.txt").write_text(
        "A dict maps keys to values. Use get with a default for missing keys.\n",
        encoding="utf-8",
    )
    (root / "image.png").write_bytes(b"\x89PNG not documentation")
    return root


@pytest.fixture
def db_session(tmp_path):
    engine = create_engine(f"sqlite:///{tmp_path / 'test.db'}", connect_args={"check_same_thread": False})
    Base.metadata.create_all(bind=engine)
    TestingSessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)
    session = TestingSessionLocal()
    try:
        yield session
    finally:
        session.close()
        engine.dispose()


@pytest.fixture
def api_runtime(tmp_path, python_profile, make_gateway):
    """A Runtime over an empty store, persisted under tmp_path, with a scripted generator."""
    gateway, _ = make_gateway({
        ModelRole.GENERATOR: [fenced("print(input())")],
        ModelRole.TEST_GENERATOR: ["<input>\nhello\n</input>\n<output>\nhello\n</output>"],
        ModelRole.QUERY_EVOLVER: ["how to read standard input"],
    })
    settings = EngineSettings(profiles=[python_profile])
    return Runtime(settings, KnowledgeBase(), gateway, kb_path=str(tmp_path / "store.json"))


@pytest.fixture
def test_client(db_session, api_runtime) -> TestClient:
    """Provides the FastAPI TestClient with database and runtime overridden."""
    def override_get_db():
        yield db_session

    app.dependency_overrides[get_db] = override_get_db
    app.dependency_overrides[get_runtime] = lambda: api_runtime
    try:
        yield TestClient(app)
    finally:
        app.dependency_overrides.clear()
