"""Evaluation harness: datasets, Acc@1 (plain and NIL-sensitive), paired t-test, throughput."""

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from .exceptions import ContractError, DataError
from .genqr import MentionQuery
from .kb import KnowledgeBase
from .reranker import RerankDecision

logger = logging.getLogger(__name__)

NIL_MARKERS = (None, "-1", "")


@dataclass(frozen=True)
class AnnotatedMention:
    query: MentionQuery
    gold: Optional[str] = None
    span: Optional[Tuple[int, int]] = None

    @property
    def is_nil(self) -> bool:
        return self.gold is None


def load_dataset(path: Union[str, Path]) -> List[AnnotatedMention]:
    """Read mention JSONL; ``gold`` of null or ``"-1"`` marks a NIL mention."""
    path = Path(path)
    if not path.exists():
        raise DataError("file not found", path=str(path))
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"invalid JSON: {exc.msg}", lineno, str(path)) from None
            if not isinstance(obj, dict):
                raise DataError("expected a JSON object", lineno, str(path))
            mention = obj.get("mention")
            if not isinstance(mention, str) or not mention:
                raise DataError("field 'mention' must be a non-empty string", lineno, str(path))
            context = obj.get("context", "")
            if not isinstance(context, str):
                raise DataError("field 'context' must be a string", lineno, str(path))
            gold = obj.get("gold")
            if gold is not None and not isinstance(gold, str):
                raise DataError("field 'gold' must be a string or null", lineno, str(path))
            if gold in NIL_MARKERS:
                gold = None
            span = obj.get("span")
            if span is not None:
                if not (isinstance(span, list) and len(span) == 2 and all(isinstance(x, int) for x in span)):
                    raise DataError("field 'span' must be [start, end]", lineno, str(path))
                span = (span[0], span[1])
            out.append(AnnotatedMention(MentionQuery(mention, context, str(obj.get("doc_id", ""))), gold, span))
    return out


def count_missing_gold(mentions: Sequence[AnnotatedMention], kb: Optional[KnowledgeBase]) -> int:
    if kb is None:
        return 0
    missing = sum(1 for m in mentions if m.gold is not None and m.gold not in kb)
    if missing:
        logger.warning("%d mention(s) have a gold concept absent from the knowledge base", missing)
    return missing


@dataclass
class EvalOutcome:
    mention_idx: int
    baseline_correct: int
    system_correct: int
    system_correct_nil_sensitive: int
    decision: Optional[RerankDecision] = None
    gold: Optional[str] = None
    top1: Optional[str] = None
    gold_retrieved: int = 0

    def to_dict(self) -> Dict[str, object]:
        return {
            "mention_idx": self.mention_idx,
            "gold": self.gold,
            "top1": self.top1,
            "gold_retrieved": self.gold_retrieved,
            "baseline_correct": self.baseline_correct,
            "system_correct": self.system_correct,
            "system_correct_nil_sensitive": self.system_correct_nil_sensitive,
            "decision": self.decision.to_dict() if self.decision else None,
        }


def score_outcome(
    decision: RerankDecision,
    gold: Optional[str],
    top1: Optional[str],
    fallback: Optional[str] = None,
) -> Tuple[int, int, int]:
    """Return ``(baseline_correct, system_correct, system_correct_nil_sensitive)``.

    Plain scoring replaces a NIL decision with ``fallback`` (default: the
    retrieval top-1), so a gold-NIL mention can never count as correct there.
    """
    fallback = top1 if fallback is None else fallback
    baseline = int(gold is not None and top1 == gold)
    effective = fallback if decision.is_nil else decision.predicted
    plain = int(gold is not None and effective == gold)
    if decision.is_nil:
        nil_sens = int(gold is None)
    else:
        nil_sens = int(gold is not None and decision.predicted == gold)
    return baseline, plain, nil_sens


def paired_t_test(system_bits: Sequence[float], baseline_bits: Sequence[float]) -> Tuple[float, float, bool]:
    """Two-sided paired t-test on per-item differences ``system - baseline``.

    Returns ``(t, p, p < 0.05)``. Identical inputs give ``(0, 1, False)``;
    a constant non-zero difference gives ``(+-inf, 0, True)``.
    """
    a = np.asarray(system_bits, dtype=np.float64)
    b = np.asarray(baseline_bits, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractError("paired samples must be 1-D and of equal length")
    n = len(a)
    if n < 2:
        raise ContractError("paired t-test needs at least 2 pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0, False
        return math.copysign(math.inf, mean), 0.0, True
    t = mean * math.sqrt(n) / sd
    p = float(min(1.0, 2.0 * stats.t.sf(abs(t), n - 1)))
    return t, p, p < 0.05


@dataclass
class EvalReport:
    n: int
    acc_at_1: float
    nil_sensitive_acc_at_1: float
    baseline_acc: float
    t_statistic: float
    p_value: float
    significant_at_95: bool
    recall_at_k: float
    n_gold_nil: int
    n_gold_missing_from_kb: int
    llm_calls: int
    throughput_qps: Optional[float] = None
    outcomes: List[EvalOutcome] = field(default_factory=list)
    config: Dict[str, object] = field(default_factory=dict)

    def system_bits(self) -> List[int]:
        return [o.system_correct for o in self.outcomes]

    def to_dict(self) -> Dict[str, object]:
        d = {k: v for k, v in asdict(self).items() if k not in ("outcomes", "config")}
        for key in ("t_statistic",):
            if isinstance(d[key], float) and math.isinf(d[key]):
                d[key] = "inf" if d[key] > 0 else "-inf"
        d["config"] = self.config
        d["outcomes"] = [o.to_dict() for o in self.outcomes]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping[str, object]) -> "EvalReport":
        d = dict(d)
        t = d.get("t_statistic")
        if isinstance(t, str):
            d["t_statistic"] = float(t)
        outcomes = [
            EvalOutcome(
                o["mention_idx"], o["baseline_correct"], o["system_correct"], o["system_correct_nil_sensitive"],
                RerankDecision(**{k: v for k, v in o["decision"].items() if k != "llm_error"},
                               error=o["decision"].get("llm_error")) if o.get("decision") else None,
                o.get("gold"), o.get("top1"), o.get("gold_retrieved", 0),
            )
            for o in d.pop("outcomes", [])
        ]
        fields = set(cls.__dataclass_fields__)
        return cls(outcomes=outcomes, **{k: v for k, v in d.items() if k in fields and k != "outcomes"})

    @classmethod
    def load(cls, path: Union[str, Path]) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def evaluate(linker, mentions: Sequence[AnnotatedMention], n_jobs: int = 1,
             config: Optional[Dict[str, object]] = None) -> EvalReport:
    """Run ``linker`` (a fitted BeLinkLinker) over ``mentions`` and score every outcome."""
    if not mentions:
        raise ContractError("no mentions to evaluate")
    results = linker.link([m.query for m in mentions], golds=[m.gold for m in mentions], n_jobs=n_jobs)
    outcomes = []
    for i, (m, r) in enumerate(zip(mentions, results)):
        base, plain, nil_sens = score_outcome(r.nil_decision, m.gold, r.top1, r.fallback)
        retrieved = int(m.gold is not None and m.gold in r.candidates.concept_ids)
        outcomes.append(EvalOutcome(i, base, plain, nil_sens, r.decision, m.gold, r.top1, retrieved))
    system = [o.system_correct for o in outcomes]
    baseline = [o.baseline_correct for o in outcomes]
    if len(outcomes) >= 2:
        t, p, sig = paired_t_test(system, baseline)
    else:
        t, p, sig = 0.0, 1.0, False
    n = len(outcomes)
    return EvalReport(
        n=n,
        acc_at_1=sum(system) / n,
        nil_sensitive_acc_at_1=sum(o.system_correct_nil_sensitive for o in outcomes) / n,
        baseline_acc=sum(baseline) / n,
        t_statistic=t,
        p_value=p,
        significant_at_95=sig,
        recall_at_k=sum(o.gold_retrieved for o in outcomes) / n,
        n_gold_nil=sum(1 for m in mentions if m.gold is None),
        n_gold_missing_from_kb=count_missing_gold(mentions, getattr(linker, "kb_", None)),
        llm_calls=sum(r.llm_calls for r in results),
        outcomes=outcomes,
        config=dict(config or {}),
    )


def measure_throughput(linker, mentions: Sequence, warmup: int = 5) -> float:
    """Queries per second linking ``mentions`` one at a time, excluding a warm-up prefix."""
    if not mentions:
        raise ContractError("no mentions to time")
    queries = [m.query if isinstance(m, AnnotatedMention) else m for m in mentions]
    warmup = max(0, min(warmup, len(queries) - 1))
    for q in queries[:warmup]:
        linker.link_one(q)
    timed = queries[warmup:]
    start = time.perf_counter()
    for q in timed:
        linker.link_one(q)
    elapsed = time.perf_counter() - start
    return len(timed) / elapsed if elapsed > 0 else math.inf


def format_table(report: EvalReport, label: str = "system") -> str:
    """Plain-text summary: baseline row, then ``Acc@1/NIL-sensitive Acc@1`` with ``+`` for a significant gain."""
    mark = "+" if report.significant_at_95 and report.t_statistic > 0 else ""
    speed = f"{report.throughput_qps:.1f}" if report.throughput_qps is not None else "-"
    rows = [
        ("Method", "Acc@1/NIL-sensitive", "Speed (Q/s)"),
        ("Baseline", f"{100 * report.baseline_acc:.1f}", "-"),
        (label, f"{100 * report.acc_at_1:.1f}{mark}/{100 * report.nil_sensitive_acc_at_1:.1f}", speed),
    ]
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    lines = [" | ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    footer = (f"n={report.n}  recall@k={100 * report.recall_at_k:.1f}  "
              f"t={report.t_statistic:.3f}  p={report.p_value:.4g}")
    return "\n".join(lines + ["", footer]) + "\n"


@dataclass
class TransferMatrix:
    sources: List[str]
    targets: List[str]
    acc: Dict[Tuple[str, str], float]
    delta: Dict[Tuple[str, str], Optional[float]]
    p_value: Dict[Tuple[str, str], Optional[float]]

    def _csv(self, values: Mapping[Tuple[str, str], Optional[float]], fmt: str) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["source\\target"] + self.targets)
        for s in self.sources:
            row = [s]
            for t in self.targets:
                v = values.get((s, t))
                row.append("" if v is None else format(v, fmt))
            w.writerow(row)
        return buf.getvalue()

    def acc_csv(self) -> str:
        return self._csv(self.acc, ".4f")

    def delta_csv(self) -> str:
        return self._csv(self.delta, "+.4f")

    def p_value_csv(self) -> str:
        return self._csv(self.p_value, ".6g")


def transfer_matrix(runs: Mapping[Tuple[str, str], EvalReport]) -> TransferMatrix:
    """Acc@1 per (source, target) cell, with delta and paired-test p-value against the diagonal."""
    if not runs:
        raise ContractError("no runs given")
    sources = list(dict.fromkeys(s for s, _ in runs))
    targets = list(dict.fromkeys(t for _, t in runs))
    acc, delta, pvals = {}, {}, {}
    for (s, t), rep in runs.items():
        acc[(s, t)] = rep.acc_at_1
        diag = runs.get((t, t))
        if diag is None:
            delta[(s, t)] = pvals[(s, t)] = None
            continue
        delta[(s, t)] = rep.acc_at_1 - diag.acc_at_1
        bits, diag_bits = rep.system_bits(), diag.system_bits()
        if len(bits) == len(diag_bits) and len(bits) >= 2:
            pvals[(s, t)] = paired_t_test(bits, diag_bits)[1]
        else:
            pvals[(s, t)] = None
    return TransferMatrix(sources, targets, acc, delta, pvals)
