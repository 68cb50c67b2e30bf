"""Pipeline configuration: defaults, YAML/JSON config files and component wiring."""

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import yaml

from .embedding import EmbeddingProviderConfig, HttpEmbeddingProvider
from .exceptions import ContractError
from .genqr import DEFAULT_ALPHA, DEFAULT_GENQR_PROMPT
from .index import DEFAULT_K
from .llm import HttpLLMClient, LLMProviderConfig
from .mocks import MockEmbeddingProvider, MockLLM, OracleSpec
from .pipeline import RERANK_MODES, BeLinkLinker
from .reranker import DEFAULT_POINTWISE_PROMPT, DEFAULT_THRESHOLD


@dataclass
class MockConfig:
    oracle: str = "always_gold"
    letter: str = "A"
    delay: float = 0.0
    dim: int = 64
    embed_seed: int = 0
    genqr_answers: Dict[str, str] = field(default_factory=dict)


@dataclass
class PipelineConfig:
    kb_path: Optional[str] = None
    kb_format: Optional[str] = None
    dataset_path: Optional[str] = None
    index_path: Optional[str] = None
    cache_path: Optional[str] = None
    embedding: EmbeddingProviderConfig = field(default_factory=EmbeddingProviderConfig)
    genqr_llm: LLMProviderConfig = field(default_factory=lambda: LLMProviderConfig(model_name="Qwen/Qwen3-14B",
                                                                                   api_style="chat"))
    rerank_llm: LLMProviderConfig = field(default_factory=LLMProviderConfig)
    k: int = DEFAULT_K
    alpha: float = DEFAULT_ALPHA
    genqr_enabled: bool = True
    rerank_mode: str = "setwise"
    nil_sensitive: bool = False
    pointwise_threshold: float = DEFAULT_THRESHOLD
    shuffle_options: bool = False
    genqr_prompt: str = DEFAULT_GENQR_PROMPT
    pointwise_prompt: str = DEFAULT_POINTWISE_PROMPT
    seed: int = 0
    max_inflight: int = 8
    throughput_warmup: int = 5
    mock_backends: bool = False
    mock: MockConfig = field(default_factory=MockConfig)

    def validate(self) -> "PipelineConfig":
        if self.k < 1:
            raise ContractError("k must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError("alpha must lie in [0, 1]")
        if not 0.0 <= self.pointwise_threshold <= 1.0:
            raise ContractError("threshold must lie in [0, 1]")
        if self.rerank_mode not in RERANK_MODES:
            raise ContractError(f"rerank mode must be one of {RERANK_MODES}")
        if self.max_inflight < 1:
            raise ContractError("max_inflight must be >= 1")
        return self

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        for key in ("embedding", "genqr_llm", "rerank_llm"):
            d[key].pop("api_key", None)
        return d


_NESTED = {"embedding": EmbeddingProviderConfig, "genqr_llm": LLMProviderConfig,
           "rerank_llm": LLMProviderConfig, "mock": MockConfig}


def config_from_dict(data: Mapping[str, Any], base: Optional[PipelineConfig] = None) -> PipelineConfig:
    """Overlay ``data`` onto ``base`` (default: all defaults); nested sections merge key by key."""
    base = base or PipelineConfig()
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(data) - known
    if unknown:
        raise ContractError(f"unknown config key(s): {sorted(unknown)}")
    updates: Dict[str, Any] = {}
    for key, value in data.items():
        if key in _NESTED:
            if not isinstance(value, Mapping):
                raise ContractError(f"config section {key!r} must be a mapping")
            cls = _NESTED[key]
            sub_known = {f.name for f in fields(cls)}
            bad = set(value) - sub_known
            if bad:
                raise ContractError(f"unknown key(s) in {key!r}: {sorted(bad)}")
            updates[key] = replace(getattr(base, key), **value)
        else:
            updates[key] = value
    return replace(base, **updates)


def load_config(path: Union[str, Path, None]) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ContractError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, Mapping):
        raise ContractError("config file must hold a mapping")
    return config_from_dict(data)


def build_backends(config: PipelineConfig):
    """Return ``(embedder, genqr_llm, rerank_llm)`` for ``config``."""
    if config.mock_backends:
        m = config.mock
        embedder = MockEmbeddingProvider(dim=m.dim, seed=m.embed_seed)
        oracle = OracleSpec(behavior=m.oracle, letter=m.letter, delay=m.delay)
        if m.oracle == "delay_injected":
            oracle.delegate = OracleSpec()
        genqr = MockLLM(OracleSpec(behavior="canned_map", answers=dict(m.genqr_answers)))
        return embedder, genqr, MockLLM(oracle)
    emb = replace(config.embedding, max_inflight=min(config.embedding.max_inflight, config.max_inflight))
    genqr_cfg = replace(config.genqr_llm, max_inflight=config.max_inflight)
    rerank_cfg = replace(config.rerank_llm, max_inflight=config.max_inflight)
    return HttpEmbeddingProvider(emb), HttpLLMClient(genqr_cfg), HttpLLMClient(rerank_cfg)


def build_linker(config: PipelineConfig, backends=None) -> BeLinkLinker:
    embedder, genqr_llm, rerank_llm = backends or build_backends(config)
    return BeLinkLinker(
        embedder,
        rerank_llm if config.rerank_mode != "none" else None,
        genqr_llm if config.genqr_enabled else None,
        k=config.k,
        alpha=config.alpha,
        genqr=config.genqr_enabled,
        rerank_mode=config.rerank_mode,
        nil_sensitive=config.nil_sensitive,
        threshold=config.pointwise_threshold,
        cache_path=config.cache_path,
        genqr_prompt=config.genqr_prompt,
        pointwise_prompt=config.pointwise_prompt,
        shuffle_options=config.shuffle_options,
        seed=config.seed,
    )
