"""Biomedical entity linking with dense alias retrieval, generative query
reformulation and set-wise generative re-ranking."""

from .candidates import CandidateSet, OptionList, build_options, dedup_by_concept
from .embedding import EmbeddingProviderConfig, HttpEmbeddingProvider, normalize
from .cache import cached_embed
from .evaluation import (
    AnnotatedMention,
    EvalReport,
    evaluate,
    load_dataset,
    measure_throughput,
    paired_t_test,
    score_outcome,
    transfer_matrix,
)
from .exceptions import BackendError, BeLinkError, ContractError, DataError, ProtocolError, TransportError
from .genqr import MentionQuery, fuse_query, generate_feedback
from .index import AliasIndex, RetrievalHit, build_index, load_index, save_index, search
from .kb import Concept, KnowledgeBase, enumerate_alias_records, load_kb
from .llm import HttpLLMClient, LLMProviderConfig
from .pipeline import BeLinkLinker
from .reranker import RerankDecision, build_prompt, decide_pointwise, score_pointwise, select_setwise

__version__ = "0.1.0"
