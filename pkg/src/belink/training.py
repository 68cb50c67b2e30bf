"""Export of chat-format supervision for the set-wise re-ranker."""

import json
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np
from sklearn.utils.validation import check_is_fitted

from .candidates import build_options, dedup_by_concept, shuffle_candidates
from .evaluation import AnnotatedMention
from .reranker import build_prompt, training_record


@dataclass
class TrainingExport:
    records: List[Dict[str, object]]
    gold_not_retrieved: List[int]
    n_nil: int

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in self.records)


def export_training(linker, mentions: Sequence[AnnotatedMention], seed: int = 0, shuffle: bool = True) -> TrainingExport:
    """One example per mention from the fitted ``linker``'s first stage.

    Each concept is shown under one alias sampled from its retrieved aliases;
    the option order is shuffled when ``shuffle``. The answer is the gold
    concept's letter, or the None letter for NIL mentions and for mentions
    whose gold concept was not retrieved (the latter are listed in
    ``gold_not_retrieved``).
    """
    check_is_fitted(linker, "index_")
    records, missed, n_nil = [], [], 0
    for i, m in enumerate(mentions):
        sample_seed, shuffle_seed = (int(s) for s in np.random.SeedSequence([seed, i]).generate_state(2))
        cs = dedup_by_concept(linker.retrieve_one(m.query).hits, "training", rng_seed=sample_seed)
        if shuffle:
            cs = shuffle_candidates(cs, shuffle_seed)
        opts = build_options(cs)
        pos = cs.position(m.gold) if m.gold is not None else None
        if m.gold is None:
            n_nil += 1
        elif pos is None:
            missed.append(i)
        records.append(training_record(build_prompt(m.query, opts), opts.letter_of(pos)))
    return TrainingExport(records, missed, n_nil)
