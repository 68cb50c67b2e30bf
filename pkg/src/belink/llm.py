"""Generative model clients speaking the OpenAI-compatible HTTP API."""

import contextlib
import contextvars
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, NamedTuple, Optional

import requests

from .exceptions import ContractError, ProtocolError, TransportError

logger = logging.getLogger(__name__)

IM_START = "<im_start>"
IM_END = "<im_end>"


@dataclass(frozen=True)
class ChatPrompt:
    """One prompt in two renderings.

    ``messages`` is the structured chat form; a trailing ``assistant`` message
    is a prefix the model continues. ``rendered`` is the flat text with literal
    ``<im_start>``/``<im_end>`` markers, sent to raw-completion endpoints.
    """

    messages: tuple
    rendered: str

    @classmethod
    def from_turns(cls, user: str, assistant_prefix: str = "") -> "ChatPrompt":
        messages = [{"role": "user", "content": user}]
        rendered = f"{IM_START}user\n{user}\n{IM_END}\n{IM_START}assistant\n"
        if assistant_prefix:
            messages.append({"role": "assistant", "content": assistant_prefix})
            rendered += assistant_prefix
        return cls(tuple(messages), rendered)

    @property
    def user_content(self) -> str:
        return self.messages[0]["content"]


class OracleHint(NamedTuple):
    """Ground truth for the current mention, visible only to oracle test backends."""

    gold_letter: Optional[str] = None
    gold_alias: Optional[str] = None


_ORACLE_HINT: contextvars.ContextVar = contextvars.ContextVar("belink_oracle_hint", default=None)


@contextlib.contextmanager
def oracle_hint(hint: Optional[OracleHint]) -> Iterator[None]:
    token = _ORACLE_HINT.set(hint)
    try:
        yield
    finally:
        _ORACLE_HINT.reset(token)


def current_oracle_hint() -> Optional[OracleHint]:
    return _ORACLE_HINT.get()


class LLMClient:
    """Interface for generative backends.

    ``generate`` returns the completion text; ``first_token_logprobs`` returns
    ``{token: logprob}`` for the top alternatives at the first output position.
    """

    def __deepcopy__(self, memo):
        # backends are shared handles; sklearn.clone must not copy them
        return self

    def generate(self, prompt: ChatPrompt, *, max_tokens: int, temperature: float = 0.0) -> str:
        raise NotImplementedError

    def first_token_logprobs(self, prompt: ChatPrompt, *, top_logprobs: int = 5) -> Dict[str, float]:
        raise NotImplementedError


@dataclass
class LLMProviderConfig:
    endpoint_url: str = "http://localhost:8000/v1"
    model_name: str = "belink-reranker-8b"
    api_style: str = "completion"
    timeout: float = 60.0
    retries: int = 2
    max_inflight: int = 8
    api_key: Optional[str] = None
    extra_body: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.api_style not in ("chat", "completion"):
            raise ContractError(f"api_style must be 'chat' or 'completion', got {self.api_style!r}")
        if self.retries < 0 or self.max_inflight < 1:
            raise ContractError("retries must be >= 0 and max_inflight >= 1")


class HttpLLMClient(LLMClient):
    """``/chat/completions`` (messages) or ``/completions`` (literal template) client.

    At most ``max_inflight`` requests run at once across all threads using
    this client.
    """

    def __init__(self, config: LLMProviderConfig, session: Optional[requests.Session] = None):
        self.config = config
        self._session = session or requests.Session()
        self._slots = threading.BoundedSemaphore(config.max_inflight)

    def _request_body(self, prompt: ChatPrompt, max_tokens: int, temperature: float) -> Dict[str, object]:
        body: Dict[str, object] = {
            "model": self.config.model_name,
            "max_tokens": max_tokens,
            "temperature": temperature,
        }
        if self.config.api_style == "chat":
            body["messages"] = [dict(m) for m in prompt.messages]
            if prompt.messages[-1]["role"] == "assistant":
                # vLLM-style continuation of a prefilled assistant turn
                body["continue_final_message"] = True
                body["add_generation_prompt"] = False
        else:
            body["prompt"] = prompt.rendered
        body.update(self.config.extra_body)
        return body

    def _post(self, body: Dict[str, object]) -> dict:
        path = "/chat/completions" if self.config.api_style == "chat" else "/completions"
        url = self.config.endpoint_url.rstrip("/") + path
        headers = {"Authorization": f"Bearer {self.config.api_key}"} if self.config.api_key else {}
        last_exc: Optional[Exception] = None
        for attempt in range(self.config.retries + 1):
            try:
                with self._slots:
                    resp = self._session.post(url, json=body, headers=headers, timeout=self.config.timeout)
                resp.raise_for_status()
                return resp.json()
            except (requests.RequestException, ValueError) as exc:
                last_exc = exc
                logger.warning("LLM request failed (attempt %d/%d): %s", attempt + 1, self.config.retries + 1, exc)
                if attempt < self.config.retries:
                    time.sleep(min(0.2 * 2 ** attempt, 5.0))
        raise TransportError(f"LLM backend unreachable at {url}: {last_exc}")

    def generate(self, prompt: ChatPrompt, *, max_tokens: int, temperature: float = 0.0) -> str:
        payload = self._post(self._request_body(prompt, max_tokens, temperature))
        try:
            choice = payload["choices"][0]
            text = choice["message"]["content"] if self.config.api_style == "chat" else choice["text"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed completion response: {exc!r}") from None
        return text or ""

    def first_token_logprobs(self, prompt: ChatPrompt, *, top_logprobs: int = 5) -> Dict[str, float]:
        body = self._request_body(prompt, 1, 0.0)
        if self.config.api_style == "chat":
            body["logprobs"] = True
            body["top_logprobs"] = top_logprobs
        else:
            body["logprobs"] = top_logprobs
        payload = self._post(body)
        try:
            lp = payload["choices"][0]["logprobs"]
            if self.config.api_style == "chat":
                entries: List[dict] = lp["content"][0]["top_logprobs"]
                return {e["token"]: float(e["logprob"]) for e in entries}
            return {tok: float(v) for tok, v in lp["top_logprobs"][0].items()}
        except (KeyError, IndexError, TypeError, AttributeError) as exc:
            raise ProtocolError(f"response carries no token logprobs: {exc!r}") from None
