"""Input coercion shared by the estimators."""

from pathlib import Path
from typing import Iterable, List, Mapping, Sequence, Union

from .genqr import MentionQuery
from .kb import Concept, KnowledgeBase, load_kb


def check_knowledge_base(X) -> KnowledgeBase:
    """Accept a KnowledgeBase, a KB file path, a ``{id: aliases}`` mapping or an iterable of concepts."""
    if isinstance(X, KnowledgeBase):
        kb = X
    elif isinstance(X, (str, Path)):
        kb = load_kb(X)
    elif isinstance(X, Mapping):
        kb = KnowledgeBase(Concept(cid, tuple(aliases)) for cid, aliases in X.items())
    else:
        concepts = []
        for item in X:
            if isinstance(item, Concept):
                concepts.append(item)
            else:
                cid, aliases = item
                concepts.append(Concept(cid, tuple(aliases)))
        kb = KnowledgeBase(concepts)
    if len(kb) == 0:
        raise ValueError("knowledge base is empty")
    return kb


def _as_query(item) -> MentionQuery:
    if isinstance(item, MentionQuery):
        return item
    if hasattr(item, "query") and isinstance(item.query, MentionQuery):
        return item.query
    if isinstance(item, str):
        return MentionQuery(item)
    if isinstance(item, Mapping):
        return MentionQuery(item["mention"], item.get("context", ""), item.get("doc_id", ""))
    return MentionQuery(*item)


def check_mentions(X: Union[Iterable, Sequence]) -> List[MentionQuery]:
    """Coerce strings, dicts, tuples or annotated mentions into MentionQuery objects."""
    return [_as_query(item) for item in X]


def check_probability(value: float, name: str) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value
