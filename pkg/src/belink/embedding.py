"""Dense string embeddings behind a small provider interface.

Every provider returns unit-normalized ``float64`` rows, so cosine similarity
is a plain dot product everywhere downstream.
"""

import logging
import threading
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import requests

from .exceptions import ContractError, ProtocolError, TransportError

logger = logging.getLogger(__name__)

# |norm - 1| below this counts as already unit length; keeps normalize idempotent.
UNIT_TOL = 1e-12


def normalize(vec) -> np.ndarray:
    """Return ``vec`` scaled to unit L2 norm as a new float64 array.

    Vectors already within ``UNIT_TOL`` of unit length are returned unchanged
    (copied), which makes ``normalize(normalize(v)) == normalize(v)`` exact.
    """
    v = np.array(vec, dtype=np.float64)
    if v.ndim != 1:
        raise ContractError(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ContractError("vector has non-finite entries")
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ContractError("cannot normalize the zero vector")
    if abs(norm - 1.0) <= UNIT_TOL:
        return v
    return v / norm


def normalize_rows(mat) -> np.ndarray:
    m = np.array(mat, dtype=np.float64)
    if m.ndim != 2:
        raise ContractError(f"expected a 2-D matrix, got shape {m.shape}")
    return np.vstack([normalize(row) for row in m]) if len(m) else m


def _check_texts(texts: Sequence[str]) -> List[str]:
    texts = list(texts)
    if not texts:
        raise ContractError("texts must be non-empty")
    for i, t in enumerate(texts):
        if not isinstance(t, str) or not t:
            raise ContractError(f"text {i} is empty or not a string")
    return texts


class EmbeddingProvider:
    """Base class: subclasses implement ``_embed`` returning raw rows."""

    model_name: str = "unknown"

    def __deepcopy__(self, memo):
        # backends are shared handles; sklearn.clone must not copy them
        return self

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        """Embed ``texts`` and return an ``(n, dim)`` array of unit rows, in input order."""
        texts = _check_texts(texts)
        raw = self._embed(texts)
        if len(raw) != len(texts):
            raise ProtocolError(f"expected {len(texts)} vectors, got {len(raw)}")
        dims = {len(r) for r in raw}
        if len(dims) != 1:
            raise ProtocolError(f"dimension mismatch within batch: {sorted(dims)}")
        mat = np.asarray(raw, dtype=np.float64)
        if not np.all(np.isfinite(mat)) or not np.all(np.linalg.norm(mat, axis=1) > 0):
            raise ProtocolError("backend returned a non-finite or zero vector")
        return normalize_rows(mat)

    def _embed(self, texts: List[str]):
        raise NotImplementedError


@dataclass
class EmbeddingProviderConfig:
    endpoint_url: str = "http://localhost:8000/v1"
    model_name: str = "cambridgeltl/SapBERT-from-PubMedBERT-fulltext"
    batch_size: int = 64
    timeout: float = 30.0
    retries: int = 3
    max_inflight: int = 4
    api_key: Optional[str] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.retries < 0:
            raise ContractError("retries must be >= 0")
        if self.max_inflight < 1:
            raise ContractError("max_inflight must be >= 1")


class HttpEmbeddingProvider(EmbeddingProvider):
    """Client for an OpenAI-compatible ``POST {endpoint}/embeddings`` API."""

    def __init__(self, config: EmbeddingProviderConfig, session: Optional[requests.Session] = None):
        self.config = config
        self.model_name = config.model_name
        self._session = session or requests.Session()
        self._slots = threading.BoundedSemaphore(config.max_inflight)

    def _post(self, texts: List[str]) -> list:
        url = self.config.endpoint_url.rstrip("/") + "/embeddings"
        headers = {"Authorization": f"Bearer {self.config.api_key}"} if self.config.api_key else {}
        body = {"model": self.config.model_name, "input": texts}
        last_exc: Optional[Exception] = None
        for attempt in range(self.config.retries + 1):
            try:
                with self._slots:
                    resp = self._session.post(url, json=body, headers=headers, timeout=self.config.timeout)
                resp.raise_for_status()
                payload = resp.json()
                break
            except (requests.RequestException, ValueError) as exc:
                last_exc = exc
                logger.warning("embedding request failed (attempt %d/%d): %s",
                               attempt + 1, self.config.retries + 1, exc)
                if attempt < self.config.retries:
                    time.sleep(min(0.2 * 2 ** attempt, 5.0))
        else:
            raise TransportError(f"embedding backend unreachable at {url}: {last_exc}")
        try:
            data = sorted(payload["data"], key=lambda item: item["index"])
            vectors = [item["embedding"] for item in data]
        except (KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed embeddings response: {exc!r}") from None
        if [item["index"] for item in data] != list(range(len(texts))):
            raise ProtocolError("embeddings response indices do not cover the request")
        return vectors

    def _embed(self, texts: List[str]):
        out = []
        step = self.config.batch_size
        for start in range(0, len(texts), step):
            out.extend(self._post(texts[start:start + step]))
        return out
