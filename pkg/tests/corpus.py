import json
import random
import string
from pathlib import Path

from belink.evaluation import AnnotatedMention
from belink.genqr import MentionQuery
from belink.kb import Concept, KnowledgeBase
from belink.mocks import MockEmbeddingProvider, MockLLM, OracleSpec
from belink.pipeline import BeLinkLinker

DATA = Path(__file__).parent / "data"


def _word(rng, lo=4, hi=10):
    return "".join(rng.choice(string.ascii_lowercase) for _ in range(rng.randint(lo, hi)))


def make_corpus(n_concepts=60, n_mentions=100, seed=7):
    """Synthetic KB plus mentions of four kinds.

    exact: mention is one of the gold concept's aliases (retrievable, maybe ambiguous);
    variant: a surface form unknown to the KB, with a canned GenQR answer naming a gold alias;
    miss: an unknown surface form without feedback;
    nil: a mention whose gold is NIL.
    Returns (kb, mentions, genqr_answers).
    """
    rng = random.Random(seed)
    concepts = []
    shared = [_word(rng) for _ in range(4)]
    for i in range(n_concepts):
        aliases = [f"{_word(rng)} {_word(rng)}" for _ in range(rng.randint(1, 4))]
        if i % 9 == 0:
            aliases.append(shared[i % len(shared)])
        concepts.append(Concept(f"MESH:D{i:05d}", tuple(dict.fromkeys(aliases))))
    kb = KnowledgeBase(concepts)
    mentions, answers = [], {}
    for j in range(n_mentions):
        kind = rng.random()
        c = rng.choice(concepts)
        if kind < 0.5:
            m, gold = rng.choice(c.aliases), c.id
        elif kind < 0.7:
            m, gold = f"{_word(rng)}-{j}", c.id
            answers[m] = rng.choice(c.aliases)
        elif kind < 0.85:
            m, gold = f"{_word(rng)}-{j}", c.id
        else:
            m, gold = f"{_word(rng)}-{j}", None
        ctx = f"Patients with {m} were enrolled in study {j}."
        mentions.append(AnnotatedMention(MentionQuery(m, ctx, f"doc{j}"), gold))
    return kb, mentions, answers


def make_linker(kb, embedder, oracle=None, genqr_answers=None, **kw):
    genqr = kw.pop("genqr", genqr_answers is not None)
    linker = BeLinkLinker(
        embedder,
        MockLLM(oracle or OracleSpec()),
        MockLLM(OracleSpec("canned_map", answers=dict(genqr_answers or {}))) if genqr else None,
        genqr=genqr,
        **kw,
    )
    return linker.fit(kb)


def write_corpus(tmp_path, kb, mentions):
    kb_path = tmp_path / "kb.jsonl"
    kb_path.write_text("".join(json.dumps({"id": c.id, "aliases": list(c.aliases)}) + "\n" for c in kb))
    ds_path = tmp_path / "dataset.jsonl"
    ds_path.write_text("".join(
        json.dumps({"doc_id": m.query.doc_id, "context": m.query.context, "mention": m.query.mention,
                    "gold": m.gold}) + "\n" for m in mentions))
    return kb_path, ds_path
