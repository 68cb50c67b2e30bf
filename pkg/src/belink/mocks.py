"""Deterministic embedding and LLM stand-ins, in-process and over HTTP.

Nothing here models language. The embedder hashes text into a seeded
pseudorandom unit vector; the LLM answers according to an :class:`OracleSpec`.
Ground truth reaches oracles out of band through :func:`belink.llm.oracle_hint`,
never through the prompt.
"""

import hashlib
import json
import math
import re
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Dict, List, Optional

import numpy as np

from .embedding import EmbeddingProvider, normalize
from .exceptions import ContractError
from .llm import ChatPrompt, LLMClient, current_oracle_hint

ORACLE_BEHAVIORS = ("always_gold", "always_none", "fixed_letter", "canned_map", "delay_injected")

_NONE_LINE = re.compile(r"^([A-Z]): None of the above\.$", re.MULTILINE)
_POINTWISE_ALIAS = re.compile(r"Does '(.*)' denote the same biomedical concept as '", re.DOTALL)


def mock_embed(text: str, dim: int = 64, seed: int = 0) -> np.ndarray:
    """Unit vector drawn from a generator seeded by ``sha256(seed, text)``."""
    if dim < 1:
        raise ContractError("dim must be >= 1")
    digest = hashlib.sha256(f"{seed}\x00{text}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:16], "little"))
    return normalize(rng.standard_normal(dim))


class MockEmbeddingProvider(EmbeddingProvider):
    def __init__(self, dim: int = 64, seed: int = 0, model_name: Optional[str] = None):
        self.dim = dim
        self.seed = seed
        self.model_name = model_name or f"mock-embed-d{dim}-s{seed}"
        self.calls = 0
        self.texts_embedded = 0
        self._lock = threading.Lock()

    def _embed(self, texts: List[str]):
        with self._lock:
            self.calls += 1
            self.texts_embedded += len(texts)
        return [mock_embed(t, self.dim, self.seed) for t in texts]


@dataclass
class OracleSpec:
    """How a mock LLM answers.

    ``always_gold``: the gold letter from the oracle hint, else the None letter.
    ``always_none``: the None letter parsed from the prompt.
    ``fixed_letter``: ``letter``, verbatim.
    ``canned_map``: value of the longest ``answers`` key found in the prompt, else ``default``.
    ``delay_injected``: sleep ``delay`` seconds, then answer as ``delegate``.

    Point-wise scoring uses ``gold_yes`` for the hinted gold alias and
    ``other_yes`` otherwise; ``canned_map`` consults ``yes_probs`` by alias.
    """

    behavior: str = "always_gold"
    letter: str = "A"
    delay: float = 0.0
    answers: Dict[str, str] = field(default_factory=dict)
    default: str = ""
    yes_probs: Dict[str, float] = field(default_factory=dict)
    gold_yes: float = 0.9
    other_yes: float = 0.1
    delegate: Optional["OracleSpec"] = None

    def __post_init__(self):
        if self.behavior not in ORACLE_BEHAVIORS:
            raise ContractError(f"unknown oracle behavior {self.behavior!r}; expected one of {ORACLE_BEHAVIORS}")
        if self.delay < 0:
            raise ContractError("delay must be >= 0")


def parse_none_letter(prompt: str) -> str:
    """Letter of the last ``X: None of the above.`` line in ``prompt``."""
    found = _NONE_LINE.findall(prompt)
    if not found:
        raise ContractError("prompt has no 'None of the above.' option line")
    return found[-1]


def mock_llm_answer(prompt: str, oracle: OracleSpec, gold_letter: Optional[str] = None) -> str:
    b = oracle.behavior
    if b == "delay_injected":
        time.sleep(oracle.delay)
        return mock_llm_answer(prompt, oracle.delegate or OracleSpec(), gold_letter)
    if b == "always_gold":
        return gold_letter if gold_letter else parse_none_letter(prompt)
    if b == "always_none":
        return parse_none_letter(prompt)
    if b == "fixed_letter":
        return oracle.letter
    for key in sorted(oracle.answers, key=len, reverse=True):
        if key in prompt:
            return oracle.answers[key]
    return oracle.default


def mock_yes_probability(prompt: str, oracle: OracleSpec, gold_alias: Optional[str] = None) -> float:
    b = oracle.behavior
    if b == "delay_injected":
        time.sleep(oracle.delay)
        return mock_yes_probability(prompt, oracle.delegate or OracleSpec(), gold_alias)
    match = _POINTWISE_ALIAS.search(prompt)
    alias = match.group(1) if match else None
    if b == "always_gold":
        return oracle.gold_yes if alias is not None and alias == gold_alias else oracle.other_yes
    if b == "canned_map":
        return oracle.yes_probs.get(alias, oracle.other_yes)
    return oracle.other_yes


class MockLLM(LLMClient):
    """In-process LLM answering per ``oracle``; records every prompt and peak concurrency."""

    def __init__(self, oracle: Optional[OracleSpec] = None):
        self.oracle = oracle or OracleSpec()
        self.prompts: List[str] = []
        self.max_inflight_seen = 0
        self._inflight = 0
        self._lock = threading.Lock()

    @property
    def n_calls(self) -> int:
        return len(self.prompts)

    def reset(self) -> None:
        with self._lock:
            self.prompts.clear()
            self.max_inflight_seen = 0

    def _enter(self, prompt: ChatPrompt) -> None:
        with self._lock:
            self.prompts.append(prompt.rendered)
            self._inflight += 1
            self.max_inflight_seen = max(self.max_inflight_seen, self._inflight)

    def _exit(self) -> None:
        with self._lock:
            self._inflight -= 1

    def generate(self, prompt: ChatPrompt, *, max_tokens: int, temperature: float = 0.0) -> str:
        self._enter(prompt)
        try:
            hint = current_oracle_hint()
            return mock_llm_answer(prompt.rendered, self.oracle, hint.gold_letter if hint else None)
        finally:
            self._exit()

    def first_token_logprobs(self, prompt: ChatPrompt, *, top_logprobs: int = 5) -> Dict[str, float]:
        self._enter(prompt)
        try:
            hint = current_oracle_hint()
            p = mock_yes_probability(prompt.rendered, self.oracle, hint.gold_alias if hint else None)
        finally:
            self._exit()
        return _yes_no_logprobs(p)


def _yes_no_logprobs(p: float) -> Dict[str, float]:
    out = {}
    if p > 0:
        out["yes"] = math.log(p)
    if p < 1:
        out["no"] = math.log(1.0 - p)
    return out


class MockServer:
    """Local HTTP server speaking the OpenAI-compatible embeddings and completions shapes.

    Usable as a context manager; ``url`` is the ``/v1`` base to hand to the HTTP clients.
    """

    def __init__(self, embedder: Optional[MockEmbeddingProvider] = None, oracle: Optional[OracleSpec] = None,
                 canned_vectors: Optional[Dict[str, List[float]]] = None, host: str = "127.0.0.1"):
        self.embedder = embedder or MockEmbeddingProvider()
        self.oracle = oracle or OracleSpec(behavior="always_none")
        self.canned_vectors = canned_vectors
        self.requests: List[dict] = []
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                try:
                    body = json.loads(self.rfile.read(length) or b"{}")
                except json.JSONDecodeError:
                    return self._send(400, {"error": "bad json"})
                server.requests.append({"path": self.path, "body": body})
                route = {
                    "/v1/embeddings": server._embeddings,
                    "/v1/chat/completions": server._chat,
                    "/v1/completions": server._completions,
                }.get(self.path)
                if route is None:
                    return self._send(404, {"error": "not found"})
                try:
                    self._send(200, route(body))
                except Exception as exc:  # reported to the client as a server error
                    self._send(500, {"error": repr(exc)})

            def _send(self, status, payload):
                data = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        self._httpd = ThreadingHTTPServer((host, 0), Handler)
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}/v1"

    def start(self) -> "MockServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()

    def __enter__(self) -> "MockServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def _embeddings(self, body: dict) -> dict:
        texts = body["input"]
        if isinstance(texts, str):
            texts = [texts]
        if self.canned_vectors is not None:
            vectors = [list(self.canned_vectors[t]) for t in texts]
        else:
            vectors = [v.tolist() for v in self.embedder.embed_batch(texts)]
        return {
            "object": "list",
            "model": body.get("model"),
            "data": [{"object": "embedding", "index": i, "embedding": v} for i, v in enumerate(vectors)],
        }

    def _answer(self, rendered: str, body: dict):
        wants_logprobs = bool(body.get("logprobs"))
        if wants_logprobs:
            return None, _yes_no_logprobs(mock_yes_probability(rendered, self.oracle))
        return mock_llm_answer(rendered, self.oracle), None

    def _chat(self, body: dict) -> dict:
        msgs = body["messages"]
        prefix = msgs[1]["content"] if len(msgs) > 1 and msgs[-1]["role"] == "assistant" else ""
        rendered = ChatPrompt.from_turns(msgs[0]["content"], prefix).rendered
        text, lps = self._answer(rendered, body)
        choice: dict = {"index": 0, "finish_reason": "length"}
        if lps is not None:
            top = max(lps, key=lps.get)
            choice["message"] = {"role": "assistant", "content": top}
            choice["logprobs"] = {"content": [{"token": top, "logprob": lps[top],
                                               "top_logprobs": [{"token": t, "logprob": v} for t, v in lps.items()]}]}
        else:
            choice["message"] = {"role": "assistant", "content": text}
        return {"object": "chat.completion", "model": body.get("model"), "choices": [choice]}

    def _completions(self, body: dict) -> dict:
        text, lps = self._answer(body["prompt"], body)
        choice: dict = {"index": 0, "finish_reason": "length"}
        if lps is not None:
            top = max(lps, key=lps.get)
            choice["text"] = top
            choice["logprobs"] = {"tokens": [top], "token_logprobs": [lps[top]], "top_logprobs": [lps]}
        else:
            choice["text"] = text
        return {"object": "text_completion", "model": body.get("model"), "choices": [choice]}
