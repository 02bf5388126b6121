import pytest
import requests
from unittest.mock import MagicMock, patch

from racg_backend import llm_utils
from racg_backend.config import TokenizerSettings
from racg_backend.errors import ConfigError, GatewayError, PreflightError, TemplateError
from racg_backend.llm_utils import (
    ApproxTokenCounter, HttpChatTransport, LLMGateway, ScriptedChatTransport, TokenLedger, TransportError,
    count_tokens, extract_code, get_token_counter, render_prompt, template_hash,
)
from racg_backend.models import KnowledgeKind, ModelRole, PromptKind
from racg_backend.schemas import ExecutionFeedback, KnowledgeItem, RetrievedContext, RoleSettings


def item(item_id, kind, text, code=None, error=None):
    return KnowledgeItem(id=item_id, kind=kind, text=text, code=code, error=error, token_len=1)


# --- Token counting ---

def test_approximate_counter():
    assert count_tokens("") == 0
    assert count_tokens("abcdefgh") == 2
    assert count_tokens("abcdefghi") == 3


def test_counter_selection():
    assert isinstance(get_token_counter(None), ApproxTokenCounter)
    with pytest.raises(ConfigError):
        get_token_counter(TokenizerSettings(kind="unknown"))


def test_tiktoken_counter_used_when_configured():
    tiktoken = pytest.importorskip("tiktoken")
    paragraph = "Use reverse() to reverse a list in place; sorted() returns a new list."
    counter = get_token_counter(TokenizerSettings(kind="tiktoken"))
    assert counter.count(paragraph) == len(tiktoken.get_encoding("cl100k_base").encode(paragraph))


# --- Gateway ---

def test_scripted_completion_returns_exchange(make_gateway):
    gateway, _ = make_gateway({ModelRole.GENERATOR: [{"content": "OK", "prompt_tokens": 7, "completion_tokens": 1}]})
    ledger = TokenLedger()

    exchange = gateway.complete(ModelRole.GENERATOR, "say OK", ledger)

    assert exchange.completion == "OK"
    assert (exchange.prompt_tokens, exchange.completion_tokens, exchange.total_tokens) == (7, 1, 8)
    assert exchange.attempts == 1
    assert ledger.total_tokens == 8


def test_usage_falls_back_to_counter(make_gateway):
    gateway, _ = make_gateway({ModelRole.GENERATOR: ["abcd"]})
    exchange = gateway.complete(ModelRole.GENERATOR, "abcdefgh")
    assert (exchange.prompt_tokens, exchange.completion_tokens) == (2, 1)


def test_prompt_over_window_makes_no_call(roles):
    roles[ModelRole.GENERATOR] = RoleSettings(context_window=100, max_output_tokens=50)
    transport = ScriptedChatTransport({ModelRole.GENERATOR: ["never"]})
    gateway = LLMGateway(roles, transport=transport, backoff_s=0)

    with pytest.raises(PreflightError):
        gateway.complete(ModelRole.GENERATOR, "x" * 400)
    assert transport.calls == []


@patch("racg_backend.llm_utils.time.sleep")
def test_three_failures_then_success(mock_sleep, make_gateway):
    failure = TransportError("HTTP 503")
    gateway, transport = make_gateway({ModelRole.GENERATOR: [failure, failure, failure, "done"]})

    exchange = gateway.complete(ModelRole.GENERATOR, "prompt")

    assert exchange.completion == "done"
    assert exchange.attempts == 4
    assert len(transport.calls) == 4
    assert [c.args[0] for c in mock_sleep.call_args_list] == [0, 0, 0]


@patch("racg_backend.llm_utils.time.sleep")
def test_persistent_failure_raises_gateway_error(mock_sleep, make_gateway):
    gateway, transport = make_gateway({ModelRole.QUERY_EVOLVER: [TransportError("HTTP 500")]})

    with pytest.raises(GatewayError) as exc_info:
        gateway.complete(ModelRole.QUERY_EVOLVER, "prompt")

    assert exc_info.value.role == "query_evolver"
    assert exc_info.value.attempts == 4
    assert len(transport.calls) == 4


def test_non_transient_failure_is_not_retried(make_gateway):
    gateway, transport = make_gateway({ModelRole.GENERATOR: [TransportError("HTTP 401", transient=False)]})
    with pytest.raises(GatewayError):
        gateway.complete(ModelRole.GENERATOR, "prompt")
    assert len(transport.calls) == 1


def test_unresolved_role_is_a_config_error(roles):
    del roles[ModelRole.TEST_GENERATOR]
    gateway = LLMGateway(roles, transport=ScriptedChatTransport({}))
    with pytest.raises(ConfigError):
        gateway.check_roles()


@patch("racg_backend.llm_utils.requests.post")
def test_http_transport_posts_chat_completion(mock_post, monkeypatch):
    monkeypatch.setenv("RACG_API_KEY", "secret")
    response = MagicMock()
    response.json.return_value = {"choices": [{"message": {"content": "hi"}}]}
    mock_post.return_value = response

    data = HttpChatTransport().send(ModelRole.GENERATOR, RoleSettings(model="m"), [{"role": "user", "content": "x"}])

    assert data["choices"][0]["message"]["content"] == "hi"
    args, kwargs = mock_post.call_args
    assert args[0] == "http://localhost:8000/v1/chat/completions"
    assert kwargs["json"]["model"] == "m"
    assert kwargs["json"]["temperature"] == 0.0
    assert kwargs["headers"]["Authorization"] == "Bearer secret"


@patch("racg_backend.llm_utils.requests.post")
def test_http_transport_classifies_status_codes(mock_post):
    def http_error(code):
        error_response = MagicMock(status_code=code)
        response = MagicMock()
        response.raise_for_status.side_effect = requests.exceptions.HTTPError(response=error_response)
        return response

    mock_post.return_value = http_error(429)
    with pytest.raises(TransportError) as exc_info:
        HttpChatTransport().send(ModelRole.GENERATOR, RoleSettings(), [])
    assert exc_info.value.transient

    mock_post.return_value = http_error(400)
    with pytest.raises(TransportError) as exc_info:
        HttpChatTransport().send(ModelRole.GENERATOR, RoleSettings(), [])
    assert not exc_info.value.transient


# --- Code extraction ---

def test_extract_code_takes_last_fenced_block():
    completion = "First try:\n```python\nprint(1)\n```\nBetter:\n```python\nprint(2)\n```\nDone."
    assert extract_code(completion) == "print(2)"


def test_extract_code_without_fence_returns_stripped_text():
    assert extract_code("  print(3)\n") == "print(3)"


# --- Prompts ---

def test_generate_with_empty_context_has_only_problem():
    prompt = render_prompt(PromptKind.GENERATE, {"problem": "Reverse the input line.", "context": RetrievedContext()})
    assert prompt.rstrip().endswith("## Problem\nReverse the input line.")
    assert "## Documentation" not in prompt


def test_context_sections_in_fixed_order():
    context = RetrievedContext(
        web=[item("w", KnowledgeKind.WEB_SEARCH, "WEBTEXT")],
        feedback=[item("p", KnowledgeKind.FEEDBACK_PAIR, "PAIRTEXT", code="c", error="e")],
        snippets=[item("s", KnowledgeKind.CODE_SNIPPET, "SNIPTEXT", code="c")],
        docs=[item("d", KnowledgeKind.DOCUMENTATION, "DOCTEXT")],
    )
    prompt = render_prompt(PromptKind.GENERATE, {"problem": "PROBLEMTEXT", "context": context})
    positions = [prompt.index(t) for t in ("WEBTEXT", "PAIRTEXT", "SNIPTEXT", "DOCTEXT", "PROBLEMTEXT")]
    assert positions == sorted(positions)
    assert prompt == render_prompt(PromptKind.GENERATE, {"problem": "PROBLEMTEXT", "context": context})


def test_evolve_query_prompt_contains_program_and_error():
    program = "xs = [1, 2]\nxs.revers()"
    error = "AttributeError: 'list' object has no attribute 'revers'"
    prompt = render_prompt(PromptKind.EVOLVE_QUERY, {
        "problem": "Reverse a list", "program": program, "inputs": ["1 2"], "feedback": error,
    })
    assert program in prompt
    assert error in prompt
    assert "what knowledge is currently required" in prompt


def test_evolve_query_prompt_marks_missing_inputs():
    prompt = render_prompt(PromptKind.EVOLVE_QUERY, {"problem": "p", "program": "q", "inputs": [], "feedback": "f"})
    assert "(none)" in prompt


def test_missing_slot_is_a_template_error():
    with pytest.raises(TemplateError):
        render_prompt(PromptKind.GENERATE_TEST_INPUTS, {"problem": "p", "program": "q"})


def test_template_hash_is_stable():
    assert template_hash() == template_hash()
    assert len(template_hash()) == 16
