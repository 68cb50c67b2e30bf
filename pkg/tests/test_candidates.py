import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from belink.candidates import CandidateSet, build_options, dedup_by_concept, shuffle_candidates
from belink.exceptions import ContractError
from belink.index import RetrievalHit, search

from tests.oracles import group_by_concept
from tests.test_index import random_index


def hits_of(triples):
    return [RetrievalHit(a, c, s, i + 1, i) for i, (a, c, s) in enumerate(triples)]


HITS = hits_of([("a1", "X", 0.9), ("a2", "X", 0.8), ("b1", "Y", 0.7)])


def test_inference_keeps_best_alias():
    cs = dedup_by_concept(HITS, "inference")
    assert [(c.concept_id, c.display_alias, c.best_score) for c in cs] == [("X", "a1", 0.9), ("Y", "b1", 0.7)]
    assert cs.top1 == "X"


def test_training_samples_within_concept_reproducibly():
    seen = set()
    for seed in range(50):
        cs = dedup_by_concept(HITS, "training", rng_seed=seed)
        assert cs[0].display_alias in {"a1", "a2"}
        assert cs[1].display_alias == "b1"
        assert cs.concept_ids == ["X", "Y"]
        assert dedup_by_concept(HITS, "training", rng_seed=seed) == cs
        seen.add(cs[0].display_alias)
    assert seen == {"a1", "a2"}


def test_matches_group_by_oracle_on_fixture():
    idx = random_index(n=1000, dim=8, n_concepts=7, seed=5)
    q = np.random.default_rng(2).standard_normal(8)
    hits = search(idx, q, 20)
    cs = dedup_by_concept(hits)
    assert [(c.concept_id, c.display_alias, c.best_score) for c in cs] == group_by_concept(hits)
    assert len(cs) == len({h.concept_id for h in hits}) <= 7


def test_empty_hits():
    cs = dedup_by_concept([])
    assert len(cs) == 0 and cs.top1 is None
    opts = build_options(cs)
    assert opts.options == () and opts.none_letter == "A"


def test_bad_mode():
    with pytest.raises(ContractError):
        dedup_by_concept(HITS, "eval")


def test_options_two():
    opts = build_options(dedup_by_concept(HITS))
    assert opts.options == (("A", "a1"), ("B", "b1"))
    assert opts.none_letter == "C"
    assert opts.render() == "A: a1\nB: b1\nC: None of the above."


def test_options_twenty_candidates():
    hits = hits_of([(f"alias{i}", f"C{i}", 1 - i / 100) for i in range(20)])
    opts = build_options(dedup_by_concept(hits))
    assert "".join(letter for letter, _ in opts.options) == "ABCDEFGHIJKLMNOPQRST"
    assert opts.none_letter == "U"


def test_too_many_candidates():
    hits = hits_of([(f"a{i}", f"C{i}", 1 - i / 100) for i in range(26)])
    with pytest.raises(ContractError, match="smaller k"):
        build_options(dedup_by_concept(hits))


def test_shuffle_preserves_top1():
    hits = hits_of([(f"a{i}", f"C{i}", 1 - i / 100) for i in range(10)])
    cs = dedup_by_concept(hits)
    sh = shuffle_candidates(cs, 3)
    assert sorted(sh.concept_ids) == sorted(cs.concept_ids)
    assert sh.concept_ids != cs.concept_ids
    assert sh.top1 == cs.top1 == "C0"


hit_lists = st.lists(
    st.tuples(st.sampled_from("ABCDEFG"), st.floats(-1, 1, allow_nan=False)), min_size=0, max_size=25,
).map(lambda xs: hits_of(sorted(((f"alias{i}", c, s) for i, (c, s) in enumerate(xs)), key=lambda t: -t[2])))


@settings(max_examples=200)
@given(hit_lists)
def test_dedup_invariants(hits):
    cs = dedup_by_concept(hits)
    scores = [c.best_score for c in cs]
    assert scores == sorted(scores, reverse=True)
    assert len(cs) == len({h.concept_id for h in hits}) <= len(hits)
    opts = build_options(cs)
    letters = [letter for letter, _ in opts.options] + [opts.none_letter]
    assert letters == [chr(ord("A") + i) for i in range(len(letters))]
    assert opts.none_letter not in {letter for letter, _ in opts.options}
