"""Knowledge-base model: concept identifiers mapped to ordered alias lists.

Two on-disk formats are understood:

* ``jsonl``: one ``{"id": ..., "aliases": [...]}`` object per line.
* ``two_column_tsv``: ``concept_id<TAB>alias`` per line, no header.

Lines sharing an id are merged, keeping aliases in first-seen order. Alias
strings are compared exactly (case preserving); one alias string may belong
to several concepts and every such pairing is kept.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, NamedTuple, Optional, Tuple, Union

from .exceptions import DataError

logger = logging.getLogger(__name__)

KB_FORMATS = ("jsonl", "two_column_tsv")


@dataclass(frozen=True)
class Concept:
    id: str
    aliases: Tuple[str, ...]

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValueError("concept id must be a non-empty string")
        if not self.aliases:
            raise ValueError(f"concept {self.id!r} has no aliases")
        if any(not isinstance(a, str) or not a for a in self.aliases):
            raise ValueError(f"concept {self.id!r} has an empty alias")
        if len(set(self.aliases)) != len(self.aliases):
            raise ValueError(f"concept {self.id!r} has duplicate aliases")

    @property
    def preferred_name(self) -> str:
        return self.aliases[0]


class AliasRecord(NamedTuple):
    alias: str
    concept_id: str


class KnowledgeBase:
    """Immutable collection of concepts, kept in load order."""

    def __init__(self, concepts: Iterable[Concept]):
        self._concepts: Tuple[Concept, ...] = tuple(concepts)
        self._by_id: Dict[str, Concept] = {}
        for concept in self._concepts:
            if concept.id in self._by_id:
                raise ValueError(f"duplicate concept id {concept.id!r}")
            self._by_id[concept.id] = concept
        table: Dict[Tuple[str, int], str] = {}
        seen: Dict[str, int] = {}
        for concept in self._concepts:
            for alias in concept.aliases:
                ordinal = seen.get(alias, 0)
                table[(alias, ordinal)] = concept.id
                seen[alias] = ordinal + 1
        self._alias_table = table

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[str, str]]) -> "KnowledgeBase":
        """Build from ``(concept_id, alias)`` pairs, merging repeated ids."""
        merged: Dict[str, List[str]] = {}
        for cid, alias in pairs:
            aliases = merged.setdefault(cid, [])
            if alias not in aliases:
                aliases.append(alias)
        return cls(Concept(cid, tuple(aliases)) for cid, aliases in merged.items())

    @property
    def concepts(self) -> Tuple[Concept, ...]:
        return self._concepts

    @property
    def alias_table(self) -> Mapping[Tuple[str, int], str]:
        """``(alias, occurrence ordinal) -> concept id``; ordinals count repeats of one string."""
        return dict(self._alias_table)

    def concepts_for_alias(self, alias: str) -> List[str]:
        out = []
        ordinal = 0
        while (alias, ordinal) in self._alias_table:
            out.append(self._alias_table[(alias, ordinal)])
            ordinal += 1
        return out

    def __len__(self) -> int:
        return len(self._concepts)

    def __iter__(self) -> Iterator[Concept]:
        return iter(self._concepts)

    def __contains__(self, concept_id: object) -> bool:
        return concept_id in self._by_id

    def __getitem__(self, concept_id: str) -> Concept:
        return self._by_id[concept_id]

    def get(self, concept_id: str) -> Optional[Concept]:
        return self._by_id.get(concept_id)

    def __repr__(self) -> str:
        return f"KnowledgeBase(concepts={len(self)}, aliases={len(self._alias_table)})"


def _infer_format(path: Path) -> str:
    return "two_column_tsv" if path.suffix.lower() in (".tsv", ".tab", ".txt") else "jsonl"


def _iter_jsonl_pairs(lines: Iterable[str], path: str) -> Iterator[Tuple[str, str]]:
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"invalid JSON: {exc.msg}", lineno, path) from None
        if not isinstance(obj, dict):
            raise DataError("expected a JSON object", lineno, path)
        cid = obj.get("id")
        aliases = obj.get("aliases")
        if not isinstance(cid, str) or not cid:
            raise DataError("field 'id' must be a non-empty string", lineno, path)
        if not isinstance(aliases, list) or not aliases:
            raise DataError("field 'aliases' must be a non-empty array", lineno, path)
        for alias in aliases:
            if not isinstance(alias, str) or not alias:
                raise DataError("aliases must be non-empty strings", lineno, path)
            yield cid, alias


def _iter_tsv_pairs(lines: Iterable[str], path: str) -> Iterator[Tuple[str, str]]:
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 2 or not fields[0] or not fields[1]:
            raise DataError("expected 'concept_id<TAB>alias'", lineno, path)
        yield fields[0], fields[1]


def load_kb(path: Union[str, Path], format: Optional[str] = None) -> KnowledgeBase:
    """Load a knowledge base from ``path``.

    ``format`` is one of ``"jsonl"`` or ``"two_column_tsv"``; when omitted it
    is inferred from the file extension (``.tsv`` means TSV, anything else JSONL).
    """
    path = Path(path)
    fmt = format or _infer_format(path)
    if fmt not in KB_FORMATS:
        raise ValueError(f"unknown KB format {fmt!r}; expected one of {KB_FORMATS}")
    if not path.exists():
        raise DataError("file not found", path=str(path))
    with path.open(encoding="utf-8") as fh:
        reader = _iter_jsonl_pairs if fmt == "jsonl" else _iter_tsv_pairs
        kb = KnowledgeBase.from_pairs(reader(fh, str(path)))
    if len(kb) == 0:
        raise DataError("empty knowledge base", path=str(path))
    logger.info("loaded %d concepts from %s", len(kb), path)
    return kb


def enumerate_alias_records(kb: KnowledgeBase) -> List[AliasRecord]:
    """One record per (concept, alias) pair, concepts in load order, aliases in stored order."""
    return [AliasRecord(alias, concept.id) for concept in kb.concepts for alias in concept.aliases]
