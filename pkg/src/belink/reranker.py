"""Set-wise multiple-choice re-ranking, plus the point-wise yes/no baseline."""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from .candidates import CandidateSet, OptionList
from .exceptions import BeLinkError, ProtocolError
from .genqr import MentionQuery
from .llm import ChatPrompt, LLMClient

logger = logging.getLogger(__name__)

ASSISTANT_PREFIX = "<think></think>\nAnswer:"
INSTRUCTION = (
    "<Instruct>: Given the context {context}, select the correct biomedical concept "
    "corresponding to {mention}. Answer using one of the provided options.\n<Options>: \n"
)
DEFAULT_POINTWISE_PROMPT = (
    "Does '{alias}' denote the same biomedical concept as '{mention}' in context '{context}'? "
    "Answer yes or no."
)
DEFAULT_THRESHOLD = 0.5

RerankPrompt = ChatPrompt


@dataclass
class RerankDecision:
    predicted: Optional[str]
    is_nil: bool
    fell_back: bool = False
    raw_answer: str = ""
    latency: float = 0.0
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, object]:
        # latency stays out so serialized traces are reproducible
        return {
            "predicted": self.predicted,
            "is_nil": self.is_nil,
            "fell_back": self.fell_back,
            "raw_answer": self.raw_answer,
            "llm_error": self.error,
        }


@dataclass(frozen=True)
class PointwiseScore:
    concept_id: str
    yes_probability: float


def build_prompt(q: MentionQuery, opts: OptionList) -> RerankPrompt:
    user = INSTRUCTION.format(context=q.context, mention=q.mention) + opts.render()
    return ChatPrompt.from_turns(user, ASSISTANT_PREFIX)


def parse_answer(raw: str, opts: OptionList) -> Optional[str]:
    """Return the chosen letter, or None if ``raw`` names no listed option."""
    text = (raw or "").strip()
    if not text:
        return None
    letter = text[0].upper()
    if letter == opts.none_letter or opts.position_of(letter) is not None:
        return letter
    return None


def select_setwise(prompt: RerankPrompt, opts: OptionList, cs: CandidateSet, llm: LLMClient) -> RerankDecision:
    """One LLM call picks a letter; invalid answers fall back to the top-1 candidate."""
    start = time.perf_counter()
    try:
        raw = llm.generate(prompt, max_tokens=1)
    except BeLinkError as exc:
        logger.warning("re-ranker call failed: %s", exc)
        return RerankDecision(cs.top1, cs.top1 is None, True, "", time.perf_counter() - start,
                              f"{type(exc).__name__}: {exc}")
    latency = time.perf_counter() - start
    letter = parse_answer(raw, opts)
    if letter == opts.none_letter:
        return RerankDecision(None, True, False, raw, latency)
    if letter is None:
        return RerankDecision(cs.top1, cs.top1 is None, True, raw, latency)
    return RerankDecision(cs[opts.position_of(letter)].concept_id, False, False, raw, latency)


def build_pointwise_prompt(q: MentionQuery, alias: str, template: str = DEFAULT_POINTWISE_PROMPT) -> ChatPrompt:
    return ChatPrompt.from_turns(template.format(alias=alias, mention=q.mention, context=q.context),
                                 ASSISTANT_PREFIX)


def yes_probability(logprobs: Dict[str, float]) -> float:
    """P(yes) renormalized over the yes/no mass of the first output token."""
    yes = no = 0.0
    for token, lp in logprobs.items():
        t = token.strip().lower()
        if t == "yes":
            yes += math.exp(lp)
        elif t == "no":
            no += math.exp(lp)
    if yes + no <= 0.0:
        raise ProtocolError("neither 'yes' nor 'no' among the returned token probabilities")
    return yes / (yes + no)


def score_pointwise(
    q: MentionQuery,
    cs: CandidateSet,
    llm: LLMClient,
    template: str = DEFAULT_POINTWISE_PROMPT,
) -> List[PointwiseScore]:
    """One binary-judgment call per candidate."""
    return [
        PointwiseScore(c.concept_id, yes_probability(llm.first_token_logprobs(build_pointwise_prompt(q, c.display_alias, template))))
        for c in cs
    ]


def decide_pointwise(
    scores: Sequence[PointwiseScore],
    threshold: float = DEFAULT_THRESHOLD,
    nil_sensitive: bool = False,
) -> RerankDecision:
    """Highest score wins (ties: earlier candidate); below ``threshold`` means NIL when ``nil_sensitive``."""
    if not scores:
        return RerankDecision(None, True, raw_answer="")
    best = max(range(len(scores)), key=lambda i: (scores[i].yes_probability, -i))
    top = scores[best]
    raw = f"{top.yes_probability:.6f}"
    if nil_sensitive and top.yes_probability < threshold:
        return RerankDecision(None, True, raw_answer=raw)
    return RerankDecision(top.concept_id, False, raw_answer=raw)


def assistant_target(letter: str) -> str:
    return f"{ASSISTANT_PREFIX} {letter}"


def training_record(prompt: RerankPrompt, gold_letter: str) -> Dict[str, object]:
    """Chat-format supervised example: rendered user turn plus the gold answer."""
    return {
        "messages": [
            {"role": "user", "content": prompt.user_content},
            {"role": "assistant", "content": assistant_target(gold_letter)},
        ]
    }
