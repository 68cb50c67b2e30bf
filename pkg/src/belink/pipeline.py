"""End-to-end linker as a scikit-learn style estimator.

``fit`` embeds the knowledge base into an exact alias index; ``predict``
retrieves candidates for each mention (optionally reformulating the query
with LLM feedback) and lets the configured re-ranker pick a concept or NIL.
"""

import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_knowledge_base, check_mentions, check_probability
from .candidates import CandidateSet, OptionList, build_options, dedup_by_concept, shuffle_candidates
from .exceptions import ContractError
from .genqr import DEFAULT_ALPHA, DEFAULT_GENQR_PROMPT, Feedback, MentionQuery, fuse_query, generate_feedback
from .index import DEFAULT_K, AliasIndex, RetrievalHit, build_index, search
from .llm import OracleHint, oracle_hint
from .reranker import (
    DEFAULT_POINTWISE_PROMPT,
    DEFAULT_THRESHOLD,
    RerankDecision,
    build_prompt,
    decide_pointwise,
    score_pointwise,
    select_setwise,
)

logger = logging.getLogger(__name__)

RERANK_MODES = ("setwise", "pointwise", "none")
_NO_GOLD = object()


@dataclass
class Retrieval:
    hits: List[RetrievalHit]
    feedback: Optional[Feedback] = None
    degenerate: bool = False


@dataclass
class LinkResult:
    query: MentionQuery
    retrieval: Retrieval
    candidates: CandidateSet
    options: Optional[OptionList]
    decision: RerankDecision
    nil_decision: RerankDecision
    fallback: Optional[str]
    pointwise_scores: Optional[List[float]] = None
    llm_calls: int = 0

    @property
    def top1(self) -> Optional[str]:
        return self.candidates.top1

    @property
    def forced_prediction(self) -> Optional[str]:
        """Prediction when a candidate choice is enforced (NIL replaced by the fallback)."""
        d = self.nil_decision
        return self.fallback if d.is_nil else d.predicted

    @property
    def nil_prediction(self) -> Optional[str]:
        return None if self.nil_decision.is_nil else self.nil_decision.predicted

    def to_trace(self, nil_sensitive: bool) -> Dict[str, object]:
        fb = self.retrieval.feedback
        return {
            "doc_id": self.query.doc_id,
            "mention": self.query.mention,
            "feedback": fb.text if fb else None,
            "genqr_fallback": fb.fallback if fb else False,
            "genqr_error": fb.error if fb else None,
            "fusion_degenerate": self.retrieval.degenerate,
            "hits": [[h.alias, h.concept_id, h.score] for h in self.retrieval.hits],
            "options": [list(o) for o in self.options.options] if self.options else None,
            "none_letter": self.options.none_letter if self.options else None,
            "pointwise_scores": self.pointwise_scores,
            "decision": self.decision.to_dict(),
            "top1": self.top1,
            "linked": self.nil_prediction if nil_sensitive else self.forced_prediction,
        }


def _mention_seed(seed: int, q: MentionQuery) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(f"{q.doc_id}\x00{q.mention}\x00{q.context}".encode())])
               .generate_state(1)[0])


class BeLinkLinker(BaseEstimator):
    """Retrieve-and-rerank entity linker.

    Parameters
    ----------
    embedder : EmbeddingProvider
        Encodes aliases, mentions and feedback names.
    rerank_llm : LLMClient, optional
        Answers the multiple-choice (``setwise``) or yes/no (``pointwise``) prompts.
    genqr_llm : LLMClient, optional
        Produces standard-name feedback; required when ``genqr`` is true.
    k : int, default 20
        Aliases retrieved per mention.
    alpha : float, default 0.6
        Weight of the mention vector in the fused query.
    genqr : bool, default True
    rerank_mode : {"setwise", "pointwise", "none"}, default "setwise"
    nil_sensitive : bool, default False
        If true, ``predict`` may return ``None`` for unlinkable mentions;
        otherwise every mention gets a candidate.
    threshold : float, default 0.5
        Point-wise score below which the top candidate is rejected as NIL.
    cache_path : path, optional
        Persistent embedding cache for the KB aliases.
    shuffle_options : bool, default False
        Shuffle option order at inference (position-bias ablation).
    seed : int, default 0
    """

    def __init__(
        self,
        embedder=None,
        rerank_llm=None,
        genqr_llm=None,
        *,
        k: int = DEFAULT_K,
        alpha: float = DEFAULT_ALPHA,
        genqr: bool = True,
        rerank_mode: str = "setwise",
        nil_sensitive: bool = False,
        threshold: float = DEFAULT_THRESHOLD,
        cache_path=None,
        genqr_prompt: str = DEFAULT_GENQR_PROMPT,
        pointwise_prompt: str = DEFAULT_POINTWISE_PROMPT,
        shuffle_options: bool = False,
        seed: int = 0,
    ):
        self.embedder = embedder
        self.rerank_llm = rerank_llm
        self.genqr_llm = genqr_llm
        self.k = k
        self.alpha = alpha
        self.genqr = genqr
        self.rerank_mode = rerank_mode
        self.nil_sensitive = nil_sensitive
        self.threshold = threshold
        self.cache_path = cache_path
        self.genqr_prompt = genqr_prompt
        self.pointwise_prompt = pointwise_prompt
        self.shuffle_options = shuffle_options
        self.seed = seed

    def _validate_params(self) -> None:
        if self.embedder is None:
            raise ContractError("an embedder is required")
        if not isinstance(self.k, (int, np.integer)) or self.k < 1:
            raise ContractError(f"k must be a positive integer, got {self.k!r}")
        check_probability(self.alpha, "alpha")
        check_probability(self.threshold, "threshold")
        if self.rerank_mode not in RERANK_MODES:
            raise ContractError(f"rerank_mode must be one of {RERANK_MODES}, got {self.rerank_mode!r}")
        if self.rerank_mode != "none" and self.rerank_llm is None:
            raise ContractError(f"rerank_mode={self.rerank_mode!r} needs a rerank_llm")
        if self.genqr and self.genqr_llm is None:
            raise ContractError("genqr=True needs a genqr_llm")

    def fit(self, X, y=None):
        """Build the alias index from a knowledge base (or adopt a prebuilt AliasIndex)."""
        self._validate_params()
        if isinstance(X, AliasIndex):
            self.kb_ = None
            self.index_ = X
        else:
            self.kb_ = check_knowledge_base(X)
            self.index_ = build_index(self.kb_, self.embedder, cache=self.cache_path)
        self.n_aliases_ = len(self.index_)
        self.dim_ = self.index_.dim
        return self

    # -- first stage -------------------------------------------------------

    def retrieve_one(self, q: MentionQuery) -> Retrieval:
        if not self.genqr:
            vec = self.embedder.embed_batch([q.mention])[0]
            return Retrieval(search(self.index_, vec, self.k))
        feedback = generate_feedback(q, self.genqr_llm, self.genqr_prompt)
        vecs = self.embedder.embed_batch([q.mention, feedback.text])
        fused = fuse_query(vecs[0], vecs[1], self.alpha)
        return Retrieval(search(self.index_, fused.vector, self.k), feedback, fused.degenerate)

    def retrieve(self, X) -> List[Retrieval]:
        check_is_fitted(self, "index_")
        self._validate_params()
        return [self.retrieve_one(q) for q in check_mentions(X)]

    # -- second stage ------------------------------------------------------

    def link_one(self, query, gold=_NO_GOLD) -> LinkResult:
        """Link one mention. ``gold`` (a concept id, or None for NIL) only feeds oracle test backends."""
        q = check_mentions([query])[0]
        retrieval = self.retrieve_one(q)
        cs = dedup_by_concept(retrieval.hits, "inference")
        if self.shuffle_options:
            cs = shuffle_candidates(cs, _mention_seed(self.seed, q))
        top1 = cs.top1
        if self.rerank_mode == "none":
            d = RerankDecision(top1, top1 is None, raw_answer="")
            return LinkResult(q, retrieval, cs, None, d, d, top1)
        opts = build_options(cs)
        hint = None
        if gold is not _NO_GOLD:
            pos = cs.position(gold) if gold is not None else None
            hint = OracleHint(opts.letter_of(pos), cs[pos].display_alias if pos is not None else None)
        with oracle_hint(hint):
            if self.rerank_mode == "setwise":
                d = select_setwise(build_prompt(q, opts), opts, cs, self.rerank_llm)
                return LinkResult(q, retrieval, cs, opts, d, d, top1, llm_calls=1)
            scores = score_pointwise(q, cs, self.rerank_llm, self.pointwise_prompt)
        nil_d = decide_pointwise(scores, self.threshold, nil_sensitive=True)
        forced = decide_pointwise(scores, self.threshold, nil_sensitive=False)
        d = nil_d if self.nil_sensitive else forced
        return LinkResult(q, retrieval, cs, opts, d, nil_d, forced.predicted,
                          [s.yes_probability for s in scores], llm_calls=len(scores))

    def link(self, X, golds: Optional[Sequence[Optional[str]]] = None, n_jobs: int = 1) -> List[LinkResult]:
        """Link every mention, preserving input order; ``n_jobs`` > 1 links mentions concurrently."""
        check_is_fitted(self, "index_")
        self._validate_params()
        queries = check_mentions(X)
        if golds is not None and len(golds) != len(queries):
            raise ContractError("golds must align with X")
        args = [(q, _NO_GOLD if golds is None else golds[i]) for i, q in enumerate(queries)]
        if n_jobs <= 1 or len(args) <= 1:
            return [self.link_one(q, g) for q, g in args]
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(lambda a: self.link_one(*a), args))

    def predict(self, X) -> List[Optional[str]]:
        """Concept id per mention; ``None`` marks NIL (only when ``nil_sensitive``)."""
        results = self.link(X)
        if self.nil_sensitive:
            return [r.nil_prediction for r in results]
        return [r.forced_prediction for r in results]

    def score(self, X, y) -> float:
        """Acc@1 of ``predict`` against ``y`` (``None`` entries are gold NIL)."""
        pred = self.predict(X)
        if len(pred) != len(y):
            raise ContractError("X and y differ in length")
        return float(np.mean([p == g for p, g in zip(pred, y)])) if pred else 0.0
