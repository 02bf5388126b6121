import os
import re
import math
import time
import hashlib
import logging
import threading
from functools import lru_cache
from pathlib import Path
from typing import Dict, Any, Optional, List, Callable, Union

import requests

from racg_backend import config
from racg_backend.errors import ConfigError, GatewayError, PreflightError, TemplateError, RetrievalError
from racg_backend.models import ModelRole, PromptKind
from racg_backend.schemas import RoleSettings, ChatExchange, RetrievedContext, KnowledgeItem

logger = logging.getLogger(__name__)

# --- Token counting ---

class ApproxTokenCounter:
    """Default counter: ceil(utf-8 bytes / 4)."""

    name = "approx"

    def count(self, text: str) -> int:
        return math.ceil(len(text.encode("utf-8")) / 4)


class TiktokenCounter:
    """Exact counts through a tiktoken encoding."""

    def __init__(self, encoding: str = "cl100k_base"):
        import tiktoken
        self._enc = tiktoken.get_encoding(encoding)
        self.name = f"tiktoken:{encoding}"

    def count(self, text: str) -> int:
        return len(self._enc.encode(text, disallowed_special=()))


DEFAULT_COUNTER = ApproxTokenCounter()


def get_token_counter(settings: Optional[config.TokenizerSettings] = None):
    if settings is None or settings.kind == "approx":
        return ApproxTokenCounter()
    if settings.kind == "tiktoken":
        try:
            return TiktokenCounter(settings.encoding)
        except Exception as e:
            raise ConfigError(f"Could not load tiktoken encoding '{settings.encoding}': {e}")
    raise ConfigError(f"Unknown tokenizer kind: {settings.kind}")


def count_tokens(text: str, counter=None) -> int:
    return (counter or DEFAULT_COUNTER).count(text)


# --- Transports ---

class TransportError(Exception):
    def __init__(self, message: str, transient: bool = True):
        super().__init__(message)
        self.transient = transient


class HttpChatTransport:
    """OpenAI-compatible /chat/completions over requests."""

    def send(self, role: ModelRole, settings: RoleSettings, messages: List[Dict[str, str]]) -> Dict[str, Any]:
        url = f"{settings.base_url.rstrip('/')}/chat/completions"
        payload = {
            "model": settings.model,
            "messages": messages,
            "temperature": settings.temperature,
            "max_tokens": settings.max_output_tokens,
        }
        headers = {"Content-Type": "application/json"}
        api_key = os.getenv(settings.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        try:
            response = requests.post(url, json=payload, headers=headers, timeout=settings.timeout_s)
            response.raise_for_status()
            return response.json()
        except requests.exceptions.HTTPError as e:
            status_code = e.response.status_code if e.response is not None else 0
            raise TransportError(f"HTTP {status_code} from {url}", transient=status_code == 429 or status_code >= 500)
        except (requests.exceptions.ConnectionError, requests.exceptions.Timeout) as e:
            raise TransportError(f"Could not reach {url}: {e}")
        except ValueError as e:
            raise TransportError(f"Non-JSON response from {url}: {e}", transient=False)


ScriptEntry = Union[str, Dict[str, Any], Exception, Callable[[str], Any]]


class ScriptedChatTransport:
    """Deterministic mock: replays a per-role script of completions, usages and failures.

    Entries are a completion string (usage counted with the counter), a dict with
    ``content``/``prompt_tokens``/``completion_tokens``, an exception to raise, or a
    callable taking the prompt and returning one of the former.
    """

    def __init__(self, scripts: Dict[ModelRole, List[ScriptEntry]], counter=None, repeat_last: bool = True):
        self._scripts = {role: list(entries) for role, entries in scripts.items()}
        self._positions = {role: 0 for role in self._scripts}
        self._counter = counter or DEFAULT_COUNTER
        self._repeat_last = repeat_last
        self._lock = threading.Lock()
        self.calls: List[tuple] = []

    def send(self, role: ModelRole, settings: RoleSettings, messages: List[Dict[str, str]]) -> Dict[str, Any]:
        prompt = messages[-1]["content"]
        with self._lock:
            self.calls.append((role, prompt))
            entries = self._scripts.get(role)
            if not entries:
                raise TransportError(f"No script for role {role.value}", transient=False)
            pos = self._positions[role]
            if pos >= len(entries):
                if not self._repeat_last:
                    raise TransportError(f"Script for role {role.value} exhausted", transient=False)
                pos = len(entries) - 1
            self._positions[role] = pos + 1
            entry = entries[pos]

        if callable(entry) and not isinstance(entry, Exception):
            entry = entry(prompt)
        if isinstance(entry, Exception):
            raise entry
        if isinstance(entry, str):
            entry = {"content": entry}
        content = entry.get("content", "")
        return {
            "choices": [{"message": {"role": "assistant", "content": content}}],
            "usage": {
                "prompt_tokens": entry.get("prompt_tokens", self._counter.count(prompt)),
                "completion_tokens": entry.get("completion_tokens", self._counter.count(content)),
            },
        }

    def calls_for(self, role: ModelRole) -> List[str]:
        return [prompt for r, prompt in self.calls if r == role]


# --- Accounting ---

class TokenLedger:
    """Thread-safe accumulator of every exchange in one run."""

    def __init__(self):
        self._lock = threading.Lock()
        self.exchanges: List[ChatExchange] = []

    def record(self, exchange: ChatExchange) -> None:
        with self._lock:
            self.exchanges.append(exchange)

    @property
    def total_tokens(self) -> int:
        with self._lock:
            return sum(e.total_tokens for e in self.exchanges)


# --- Gateway ---

class LLMGateway:
    def __init__(self, roles: Dict[ModelRole, RoleSettings], transport=None, counter=None,
                 max_retries: int = 3, backoff_s: float = 0.5):
        self.roles = roles
        self.transport = transport or HttpChatTransport()
        self.counter = counter or DEFAULT_COUNTER
        self.max_retries = max_retries
        self.backoff_s = backoff_s

    def check_roles(self) -> None:
        missing = [role.value for role in ModelRole if role not in self.roles]
        if missing:
            raise ConfigError(f"Model roles not configured: {missing}")

    def complete(self, role: ModelRole, prompt: str, ledger: Optional[TokenLedger] = None) -> ChatExchange:
        """Sends one prompt for the given role, retrying transient transport failures.

        Raises:
            PreflightError: the prompt plus the output allowance overflows the context window.
            GatewayError: the transport kept failing (carries role and attempt count).
        """
        settings = self.roles.get(role)
        if settings is None:
            raise ConfigError(f"Model role {role.value} is not configured")

        estimated = self.counter.count(prompt)
        if estimated + settings.max_output_tokens > settings.context_window:
            raise PreflightError(
                f"{role.value} prompt of {estimated} tokens + {settings.max_output_tokens} output tokens "
                f"exceeds context window {settings.context_window}"
            )

        messages = [{"role": "user", "content": prompt}]
        attempts = 0
        data = None
        while data is None:
            attempts += 1
            try:
                data = self.transport.send(role, settings, messages)
            except TransportError as e:
                logger.warning(f"{role.value} call attempt {attempts} failed: {e}")
                if not e.transient or attempts > self.max_retries:
                    raise GatewayError(f"{role.value} call failed after {attempts} attempt(s): {e}",
                                       role=role.value, attempts=attempts)
                time.sleep(self.backoff_s * (2 ** (attempts - 1)))

        try:
            completion = data["choices"][0]["message"].get("content") or ""
        except (KeyError, IndexError, TypeError, AttributeError) as e:
            raise GatewayError(f"Malformed {role.value} response: {e}", role=role.value, attempts=attempts)
        usage = data.get("usage") or {}
        exchange = ChatExchange(
            role=role,
            prompt=prompt,
            completion=completion,
            prompt_tokens=int(usage.get("prompt_tokens", estimated)),
            completion_tokens=int(usage.get("completion_tokens", self.counter.count(completion))),
            attempts=attempts,
        )
        logger.info(f"{role.value} call completed in {attempts} attempt(s), {exchange.total_tokens} tokens")
        logger.debug(f"{role.value} completion: {completion[:500]}")
        if ledger is not None:
            ledger.record(exchange)
        return exchange


FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)


def extract_code(completion: str) -> str:
    """Returns the last fenced block of a completion, or the whole completion when none exists."""
    blocks = FENCE_RE.findall(completion)
    if blocks:
        return blocks[-1].strip("\n")
    return completion.strip()


# --- Prompt templates ---

REQUIRED_SLOTS = {
    PromptKind.GENERATE: ("problem", "context"),
    PromptKind.EVOLVE_QUERY: ("problem", "program", "inputs", "feedback"),
    PromptKind.GENERATE_TEST_INPUTS: ("problem", "program", "count"),
    PromptKind.USAGE_SCRIPT: ("doc",),
}


@lru_cache(maxsize=8)
def load_templates(templates_dir: Optional[str] = None) -> Dict[PromptKind, str]:
    base = Path(templates_dir or config.PROMPTS_DIR)
    templates = {}
    for kind in PromptKind:
        path = base / f"{kind.value}.txt"
        try:
            templates[kind] = path.read_text(encoding="utf-8")
        except OSError as e:
            raise TemplateError(f"Prompt template {path} could not be read: {e}")
    return templates


def template_hash(templates_dir: Optional[str] = None) -> str:
    templates = load_templates(templates_dir)
    digest = hashlib.sha256()
    for kind in sorted(templates, key=lambda k: k.value):
        digest.update(kind.value.encode("utf-8"))
        digest.update(templates[kind].encode("utf-8"))
    return digest.hexdigest()[:16]


def _section(title: str, items: List[KnowledgeItem], fenced: bool) -> str:
    if not items:
        return ""
    if fenced:
        body = "\n\n".join(f"```\n{item.text}\n```" for item in items)
    else:
        body = "\n\n".join(item.text for item in items)
    return f"## {title}\n{body}\n\n"


def render_context(context: RetrievedContext) -> str:
    # Fixed order: web, feedback, snippets, docs (the problem follows in the template)
    return (
        _section("Web content", context.web, fenced=False)
        + _section("Execution feedback", context.feedback, fenced=True)
        + _section("Code snippets", context.snippets, fenced=True)
        + _section("Documentation", context.docs, fenced=False)
    )


def render_prompt(kind: PromptKind, slots: Dict[str, Any], templates_dir: Optional[str] = None) -> str:
    missing = [name for name in REQUIRED_SLOTS[kind] if slots.get(name) is None]
    if missing:
        raise TemplateError(f"Prompt {kind.value} is missing slots: {missing}")
    values = {name: slots[name] for name in REQUIRED_SLOTS[kind]}
    if kind == PromptKind.GENERATE:
        values["context"] = render_context(values["context"])
    if kind == PromptKind.EVOLVE_QUERY and isinstance(values["inputs"], list):
        values["inputs"] = "\n---\n".join(values["inputs"]) if values["inputs"] else "(none)"
    template = load_templates(templates_dir)[kind]
    try:
        return template.format(**values)
    except (KeyError, IndexError) as e:
        raise TemplateError(f"Prompt template {kind.value} references an unknown slot: {e}")


# --- Embeddings ---

class HttpEmbeddingClient:
    """JSON-over-HTTP embeddings: {input, model} -> {data: [{embedding}]}."""

    def __init__(self, settings: config.EmbeddingSettings):
        self.settings = settings

    def embed(self, texts: List[str]) -> List[List[float]]:
        url = f"{self.settings.base_url.rstrip('/')}/embeddings"
        headers = {"Content-Type": "application/json"}
        api_key = os.getenv(self.settings.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        inputs = [f"{self.settings.instruction} {t}" if self.settings.instruction else t for t in texts]
        try:
            response = requests.post(url, json={"input": inputs, "model": self.settings.model},
                                     headers=headers, timeout=self.settings.timeout_s)
            response.raise_for_status()
            data = response.json()["data"]
            return [row["embedding"] for row in data]
        except (requests.exceptions.RequestException, ValueError, KeyError, TypeError) as e:
            raise RetrievalError(f"Embedding endpoint {url} failed: {e}")
