import csv
import io
import json
import math

import numpy as np
import pytest
from scipy import stats

from belink.evaluation import (
    AnnotatedMention,
    EvalOutcome,
    EvalReport,
    evaluate,
    format_table,
    load_dataset,
    measure_throughput,
    paired_t_test,
    score_outcome,
    transfer_matrix,
)
from belink.exceptions import ContractError, DataError
from belink.genqr import MentionQuery
from belink.kb import load_kb
from belink.mocks import OracleSpec
from belink.reranker import RerankDecision

from tests.corpus import DATA, make_linker
from tests.oracles import paired_t_reference


def test_load_dataset_small():
    ms = load_dataset(DATA / "dataset_small.jsonl")
    assert len(ms) == 8
    assert ms[0].query == MentionQuery("AO1", ms[0].query.context, "d1") and ms[0].gold == "MESH:C535396"
    assert ms[4].gold is None and ms[7].gold is None
    assert [m.query.doc_id for m in ms] == [f"d{i}" for i in range(1, 9)]


def test_load_dataset_order_100(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text("".join(json.dumps({"doc_id": f"d{i}", "context": f"m{i} here", "mention": f"m{i}",
                                     "span": [0, 2], "gold": f"C{i}"}) + "\n" for i in range(100)))
    ms = load_dataset(p)
    assert [m.query.mention for m in ms] == [f"m{i}" for i in range(100)]
    assert ms[3].span == (0, 2)


@pytest.mark.parametrize("line", ['{"mention": ""}', "oops", '{"mention": "a", "gold": 5}', '{"mention": "a", "span": [1]}'])
def test_load_dataset_malformed(tmp_path, line):
    p = tmp_path / "d.jsonl"
    p.write_text('{"mention": "ok"}\n' + line + "\n")
    with pytest.raises(DataError) as err:
        load_dataset(p)
    assert err.value.lineno == 2


def test_score_outcome_rules():
    assert score_outcome(RerankDecision("X", False), "X", "X") == (1, 1, 1)
    assert score_outcome(RerankDecision(None, True), None, "Y") == (0, 0, 1)
    assert score_outcome(RerankDecision(None, True), "X", "X") == (1, 1, 0)
    assert score_outcome(RerankDecision("X", False, fell_back=True), "X", "X") == (1, 1, 1)
    assert score_outcome(RerankDecision("Y", False), None, "Y") == (0, 0, 0)
    # point-wise: NIL replaced by the re-ranker's own argmax, not the retrieval top-1
    assert score_outcome(RerankDecision(None, True), "Z", "X", fallback="Z") == (0, 1, 0)


def test_t_test_zero_difference():
    assert paired_t_test([1, 0, 1], [1, 0, 1]) == (0.0, 1.0, False)


def test_t_test_known_case():
    d = [1] * 4 + [0] * 6
    t, p, sig = paired_t_test(d, [0] * 10)
    assert t == pytest.approx(2.449489742783178, abs=1e-12)   # sqrt(6)
    assert p == pytest.approx(0.0367874978797862, abs=1e-12)
    assert sig


def test_t_test_sign_symmetry():
    rng = np.random.default_rng(0)
    a, b = rng.integers(0, 2, 30), rng.integers(0, 2, 30)
    t1, p1, _ = paired_t_test(a, b)
    t2, p2, _ = paired_t_test(b, a)
    assert t1 == -t2 and p1 == p2


def test_t_test_matches_reference_oracles():
    rng = np.random.default_rng(42)
    for _ in range(100):
        n = int(rng.integers(2, 200))
        a, b = rng.integers(0, 2, n), rng.integers(0, 2, n)
        t, p, sig = paired_t_test(a, b)
        rt, rp = paired_t_reference(a.tolist(), b.tolist())
        if math.isinf(rt):
            assert t == rt and p == rp
            continue
        assert abs(t - rt) <= 1e-9 and abs(p - rp) <= 1e-9
        assert sig == (rp < 0.05)
        if np.any(a != b) and np.std(a - b) > 0:
            st = stats.ttest_rel(a, b)
            assert abs(p - st.pvalue) <= 1e-9


def test_t_test_errors_and_constant_difference():
    with pytest.raises(ContractError):
        paired_t_test([1], [0])
    with pytest.raises(ContractError):
        paired_t_test([1, 0], [0])
    assert paired_t_test([1, 1, 1], [0, 0, 0]) == (math.inf, 0.0, True)


def test_throughput_with_injected_delay(corpus, embedder):
    kb, mentions, _ = corpus
    oracle = OracleSpec("delay_injected", delay=0.01, delegate=OracleSpec("always_none"))
    est = make_linker(kb, embedder, oracle)
    qps = measure_throughput(est, mentions[:50])
    assert 85 <= qps <= 115
    assert est.rerank_llm.max_inflight_seen == 1
    assert est.rerank_llm.n_calls == 50


def test_pointwise_issues_k_times_the_calls(corpus, embedder):
    kb, mentions, _ = corpus
    sw = evaluate(make_linker(kb, embedder, OracleSpec("always_gold")), mentions)
    pw = evaluate(make_linker(kb, embedder, OracleSpec("always_gold"), rerank_mode="pointwise"), mentions)
    assert sw.llm_calls == len(mentions)
    n_cands = sum(len(r.candidates) for r in make_linker(kb, embedder, rerank_mode="none").link(
        [m.query for m in mentions]))
    assert pw.llm_calls == n_cands > sw.llm_calls


def test_invariants_on_fixture(corpus, embedder):
    kb, mentions, answers = corpus
    reports = {
        name: evaluate(make_linker(kb, embedder, OracleSpec(name), answers), mentions)
        for name in ("always_gold", "always_none", "fixed_letter")
    }
    reports["pointwise"] = evaluate(make_linker(kb, embedder, OracleSpec("always_gold"), answers,
                                                rerank_mode="pointwise"), mentions)
    gold, none = reports["always_gold"], reports["always_none"]
    assert gold.acc_at_1 == gold.recall_at_k
    assert none.acc_at_1 == none.baseline_acc
    assert none.nil_sensitive_acc_at_1 == sum(m.gold is None for m in mentions) / len(mentions)
    assert len({r.baseline_acc for r in reports.values()}) == 1
    assert gold.n_gold_nil == none.n_gold_nil > 0


def test_missing_gold_counted(embedder):
    est = make_linker(load_kb_small(), embedder, OracleSpec("always_none"))
    ms = [AnnotatedMention(MentionQuery("AO1"), "MESH:NOPE"), AnnotatedMention(MentionQuery("p53"), None)]
    rep = evaluate(est, ms)
    assert rep.n_gold_missing_from_kb == 1 and rep.n == 2


def load_kb_small():
    return load_kb(DATA / "kb_small.jsonl")


def test_report_json_round_trip(corpus, embedder):
    kb, mentions, _ = corpus
    rep = evaluate(make_linker(kb, embedder), mentions, config={"k": 20})
    text = rep.to_json()
    back = EvalReport.from_dict(json.loads(text))
    assert back.to_json() == text
    assert back.system_bits() == rep.system_bits()
    table = format_table(rep, "setwise")
    assert "Baseline" in table and "Acc@1/NIL-sensitive" in table


def _report(bits):
    outs = [EvalOutcome(i, 0, b, b) for i, b in enumerate(bits)]
    return EvalReport(len(bits), sum(bits) / len(bits), sum(bits) / len(bits), 0, 0, 1, False, 0, 0, 0, 0,
                      outcomes=outs)


def _rows(csv_text):
    return list(csv.reader(io.StringIO(csv_text)))


def test_transfer_identical_runs():
    bits = [1, 0, 1, 1, 0, 1]
    runs = {(s, t): _report(bits) for s in "AB" for t in "AB"}
    tm = transfer_matrix(runs)
    assert all(v == 0 for v in tm.delta.values())
    assert all(p == 1.0 for p in tm.p_value.values())


def test_transfer_degraded_cell():
    good = [1] * 18 + [0] * 2
    bad = [0] * 12 + [1] * 6 + [0] * 2
    runs = {("A", "A"): _report(good), ("B", "B"): _report(good), ("A", "B"): _report(good), ("B", "A"): _report(bad)}
    tm = transfer_matrix(runs)
    assert tm.delta[("B", "A")] < 0
    assert tm.p_value[("B", "A")] < 0.05
    assert tm.delta[("A", "B")] == 0


def test_transfer_missing_diagonal():
    runs = {("A", "B"): _report([1, 0]), ("A", "A"): _report([1, 1])}
    tm = transfer_matrix(runs)
    assert tm.p_value[("A", "B")] is None and tm.delta[("A", "B")] is None
    assert _rows(tm.p_value_csv()) == [["source\\target", "B", "A"], ["A", "", "1"]]


def test_transfer_8x8_shape():
    rng = np.random.default_rng(0)
    tags = [f"D{i}" for i in range(8)]
    runs = {(s, t): _report(rng.integers(0, 2, 25).tolist()) for s in tags for t in tags}
    rows = _rows(transfer_matrix(runs).acc_csv())
    assert len(rows) == 9 and all(len(r) == 9 for r in rows)
    assert rows[0][1:] == tags and [r[0] for r in rows[1:]] == tags
