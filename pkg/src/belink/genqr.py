"""Generative query reformulation with Rocchio-style vector fusion.

An LLM is asked, zero-shot, for the standard scientific name of a mention.
The mention vector and the name's vector are mixed as
``alpha * mention + (1 - alpha) * feedback`` and re-normalized.
"""

import logging
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .embedding import UNIT_TOL, normalize
from .exceptions import BeLinkError, ContractError
from .llm import ChatPrompt, LLMClient

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.6
DEFAULT_GENQR_PROMPT = (
    "What is the standard scientific name for the biomedical entity '{mention}' "
    "as used in '{context}'? Answer with the name only."
)
GENQR_MAX_TOKENS = 32

_QUOTES = "\"'`“”‘’"


@dataclass(frozen=True)
class MentionQuery:
    mention: str
    context: str = ""
    doc_id: str = ""

    def __post_init__(self):
        if not isinstance(self.mention, str) or not self.mention:
            raise ContractError("mention must be a non-empty string")
        if self.context and self.mention not in self.context:
            warnings.warn(f"mention {self.mention!r} does not occur in its context (doc {self.doc_id!r})",
                          stacklevel=3)


class Feedback(NamedTuple):
    text: str
    fallback: bool = False
    error: Optional[str] = None


class Fusion(NamedTuple):
    vector: np.ndarray
    degenerate: bool = False


def build_feedback_prompt(q: MentionQuery, template: str = DEFAULT_GENQR_PROMPT) -> ChatPrompt:
    return ChatPrompt.from_turns(template.format(mention=q.mention, context=q.context))


def clean_feedback(text: str) -> str:
    """First line only, whitespace and surrounding quotes stripped."""
    text = (text or "").strip()
    text = text.splitlines()[0] if text else ""
    text = text.strip()
    while len(text) >= 2 and text[0] in _QUOTES and text[-1] in _QUOTES:
        text = text[1:-1].strip()
    return text


def generate_feedback(
    q: MentionQuery,
    llm: LLMClient,
    template: str = DEFAULT_GENQR_PROMPT,
    max_tokens: int = GENQR_MAX_TOKENS,
) -> Feedback:
    """Ask ``llm`` for a standard name; any failure degrades to the mention itself."""
    try:
        text = clean_feedback(llm.generate(build_feedback_prompt(q, template), max_tokens=max_tokens))
    except BeLinkError as exc:
        logger.warning("GenQR feedback failed for %r: %s", q.mention, exc)
        return Feedback(q.mention, True, f"{type(exc).__name__}: {exc}")
    if not text:
        return Feedback(q.mention, True, "empty feedback")
    return Feedback(text)


def _check_unit(v: np.ndarray, name: str) -> None:
    if not np.isclose(np.linalg.norm(v), 1.0, rtol=0, atol=1e-6):
        raise ContractError(f"{name} must be unit-normalized")


def fuse_query(mention_vec, feedback_vec, alpha: float = DEFAULT_ALPHA) -> Fusion:
    """Return ``normalize(alpha * mention_vec + (1 - alpha) * feedback_vec)``.

    If the weighted sum vanishes the mention vector is returned with
    ``degenerate=True``.
    """
    m = np.asarray(mention_vec, dtype=np.float64)
    f = np.asarray(feedback_vec, dtype=np.float64)
    if m.shape != f.shape or m.ndim != 1:
        raise ContractError(f"dimension mismatch: {m.shape} vs {f.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha must lie in [0, 1], got {alpha}")
    _check_unit(m, "mention_vec")
    _check_unit(f, "feedback_vec")
    mixed = alpha * m + (1.0 - alpha) * f
    if np.linalg.norm(mixed) <= UNIT_TOL:
        return Fusion(m.copy(), True)
    return Fusion(normalize(mixed), False)
