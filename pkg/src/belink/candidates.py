"""Concept-level candidate sets and their lettered option lists."""

import string
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ContractError
from .index import RetrievalHit

NONE_OPTION_TEXT = "None of the above."
MAX_CANDIDATES = 25
_LETTERS = string.ascii_uppercase


class Candidate(NamedTuple):
    concept_id: str
    display_alias: str
    best_score: float
    ordinal: int


@dataclass(frozen=True)
class CandidateSet:
    candidates: Tuple[Candidate, ...]
    source_hits: Tuple[RetrievalHit, ...] = ()

    def __len__(self) -> int:
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def __getitem__(self, i: int) -> Candidate:
        return self.candidates[i]

    @property
    def concept_ids(self) -> List[str]:
        return [c.concept_id for c in self.candidates]

    @property
    def top1(self) -> Optional[str]:
        """Best-retrieved concept, independent of any reordering of ``candidates``."""
        if not self.candidates:
            return None
        return min(self.candidates, key=lambda c: (-c.best_score, c.ordinal)).concept_id

    def position(self, concept_id: Optional[str]) -> Optional[int]:
        for i, c in enumerate(self.candidates):
            if c.concept_id == concept_id:
                return i
        return None


@dataclass(frozen=True)
class OptionList:
    options: Tuple[Tuple[str, str], ...]
    none_letter: str

    def lines(self) -> List[str]:
        return [f"{letter}: {text}" for letter, text in self.options] + [f"{self.none_letter}: {NONE_OPTION_TEXT}"]

    def render(self) -> str:
        return "\n".join(self.lines())

    def letter_of(self, position: Optional[int]) -> str:
        """Letter for candidate ``position``; ``None`` maps to the None-of-the-above letter."""
        return self.none_letter if position is None else self.options[position][0]

    def position_of(self, letter: str) -> Optional[int]:
        idx = _LETTERS.find(letter) if len(letter) == 1 else -1
        return idx if 0 <= idx < len(self.options) else None


def dedup_by_concept(
    hits: Sequence[RetrievalHit],
    mode: str = "inference",
    rng_seed: Optional[int] = None,
) -> CandidateSet:
    """Group ranked alias hits by concept.

    Candidates are ordered by each concept's best score (ties: lower record
    ordinal). ``inference`` shows the best-scoring alias; ``training`` shows an
    alias drawn uniformly, with ``rng_seed``, from that concept's retrieved aliases.
    """
    if mode not in ("inference", "training"):
        raise ContractError(f"mode must be 'inference' or 'training', got {mode!r}")
    groups: Dict[str, List[RetrievalHit]] = {}
    for hit in hits:
        groups.setdefault(hit.concept_id, []).append(hit)
    best = {cid: min(g, key=lambda h: (-h.score, h.ordinal)) for cid, g in groups.items()}
    order = sorted(groups, key=lambda cid: (-best[cid].score, best[cid].ordinal))
    rng = np.random.default_rng(rng_seed) if mode == "training" else None
    out = []
    for cid in order:
        top = best[cid]
        alias = top.alias
        if rng is not None:
            alias = groups[cid][int(rng.integers(len(groups[cid])))].alias
        out.append(Candidate(cid, alias, top.score, top.ordinal))
    return CandidateSet(tuple(out), tuple(hits))


def shuffle_candidates(cs: CandidateSet, rng_seed: Optional[int]) -> CandidateSet:
    """Random candidate order, used for training export against position bias."""
    perm = np.random.default_rng(rng_seed).permutation(len(cs))
    return CandidateSet(tuple(cs.candidates[i] for i in perm), cs.source_hits)


def build_options(cs: CandidateSet) -> OptionList:
    if len(cs) > MAX_CANDIDATES:
        raise ContractError(
            f"{len(cs)} candidates exceed the {MAX_CANDIDATES} lettered options available; use a smaller k"
        )
    options = tuple((_LETTERS[i], c.display_alias) for i, c in enumerate(cs.candidates))
    return OptionList(options, _LETTERS[len(options)])
