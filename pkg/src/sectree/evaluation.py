"""Retrieval and answer evaluation against gold records.

Metrics are computed per query and macro-averaged. A retrieved chunk counts as
relevant when its id is one of the gold chunk ids or, for text-mode gold, when
the normalized gold text occurs inside it. Precision at depth ``k`` divides by
``k``; recall divides by the number of gold units.
"""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import FilingMismatch
from .retrieval import RankedResult, RetrievalSettings, retrieve

logger = logging.getLogger(__name__)

DEFAULT_DEPTHS = (5, 10, 15)
QTYPES = ("numerical", "categorical")
HOPS = ("simple", "complex")
NUMERIC_REL_TOL = 1e-2


@dataclass
class GoldRecord:
    qid: str
    question: str
    filing_id: str
    answer: str
    qtype: str = "numerical"
    hops: str = "simple"
    gold_chunk_ids: list[str] | None = None
    gold_text: str | None = None

    def __post_init__(self):
        if (self.gold_chunk_ids is None) == (self.gold_text is None):
            raise ValueError(f"{self.qid}: exactly one of gold_chunk_ids / gold_text must be given")
        if self.gold_chunk_ids is not None and not self.gold_chunk_ids:
            raise ValueError(f"{self.qid}: gold_chunk_ids is empty")
        if self.gold_text is not None and not normalize_text(self.gold_text):
            raise ValueError(f"{self.qid}: gold_text is empty")
        if not str(self.answer).strip():
            raise ValueError(f"{self.qid}: answer must be non-empty")
        if self.qtype not in QTYPES:
            raise ValueError(f"{self.qid}: qtype must be one of {QTYPES}")
        if self.hops not in HOPS:
            raise ValueError(f"{self.qid}: hops must be one of {HOPS}")

    @property
    def n_gold(self) -> int:
        return len(set(self.gold_chunk_ids)) if self.gold_chunk_ids is not None else 1

    def to_json(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_json(cls, d: Mapping) -> "GoldRecord":
        return cls(
            qid=str(d["qid"]),
            question=d["question"],
            filing_id=str(d["filing_id"]),
            answer=str(d["answer"]),
            qtype=d.get("qtype", "numerical"),
            hops=d.get("hops", "simple"),
            gold_chunk_ids=list(d["gold_chunk_ids"]) if d.get("gold_chunk_ids") is not None else None,
            gold_text=d.get("gold_text"),
        )


def read_gold_jsonl(path: str | Path) -> list[GoldRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(GoldRecord.from_json(json.loads(line)))
            except (KeyError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad gold record ({exc})") from exc
    return records


def write_gold_jsonl(records: Iterable[GoldRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# retrieval metrics
# ---------------------------------------------------------------------------

def normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


def match_gold(result: RankedResult, gold: GoldRecord) -> list[int]:
    """1/0 relevance flag for every retrieved entry, in rank order."""
    if result.filing_id != gold.filing_id:
        raise FilingMismatch(f"result is for {result.filing_id!r}, gold {gold.qid} for {gold.filing_id!r}")
    if gold.gold_chunk_ids is not None:
        wanted = set(gold.gold_chunk_ids)
        return [int(e.chunk_id in wanted) for e in result.entries]
    needle = normalize_text(gold.gold_text)
    return [int(needle in normalize_text(e.text)) for e in result.entries]


def precision_recall_f1(flags: Sequence[int], n_gold: int, k: int) -> tuple[float, float, float]:
    """Precision over depth ``k``, recall over ``n_gold`` distinct gold units.

    Flags must come from a duplicate-free ranking; for text-mode gold
    (``n_gold == 1``) any hit counts as the one gold unit matched.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if n_gold < 1:
        raise ValueError("n_gold must be >= 1")
    hits = sum(1 for f in list(flags)[:k] if f)
    p = hits / k
    r = min(hits, n_gold) / n_gold
    return p, r, f1_score(p, r)


def f1_score(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2.0 * p * r / (p + r)


def relevancy(query: str, texts: Sequence[str], judge) -> float:
    if not texts:
        return 0.0
    return float(judge.judge_relevancy(query, list(texts)))


# ---------------------------------------------------------------------------
# answers
# ---------------------------------------------------------------------------

_NUM_RE = re.compile(
    r"(?P<neg>[-−(])?\s*\$?\s*(?P<num>\d{1,3}(?:,\d{3})+(?:\.\d+)?|\d+(?:\.\d+)?|\.\d+)\s*(?P<pct>%|percent\b)?\s*(?P<scale>thousand|million|billion|trillion)?",
    re.IGNORECASE,
)
_SCALE = {"thousand": 1e3, "million": 1e6, "billion": 1e9, "trillion": 1e12}


def parse_numbers(text: str) -> list[set[float]]:
    """Every number in ``text`` with its admissible readings.

    A percentage yields both ``7.0`` and ``0.07``; a scale word yields both the
    bare and the scaled value. Commas, currency signs and a leading minus or
    parenthesis are handled.
    """
    out = []
    for m in _NUM_RE.finditer(text):
        value = float(m.group("num").replace(",", ""))
        if m.group("neg"):
            value = -value
        readings = {value}
        if m.group("pct"):
            readings.add(value / 100.0)
        if m.group("scale"):
            readings.add(value * _SCALE[m.group("scale").lower()])
        out.append(readings)
    return out


def _close(a: float, b: float, rel_tol: float) -> bool:
    return math.isclose(a, b, rel_tol=rel_tol, abs_tol=0.0) or (a == 0 == b)


def normalize_categorical(text: str) -> str:
    return re.sub(r"[^\w\s]", "", text.lower()).strip()


def answers_match(predicted: str, gold: str, qtype: str = "numerical", rel_tol: float = NUMERIC_REL_TOL) -> bool:
    """Numeric: some reading of some number in ``predicted`` is within ``rel_tol``
    of some reading of the gold value. Categorical: case-insensitive equality."""
    if predicted is None:
        return False
    if qtype == "numerical":
        gold_nums = parse_numbers(gold)
        if gold_nums:
            targets = gold_nums[0]
            return any(_close(p, g, rel_tol) for readings in parse_numbers(predicted) for p in readings for g in targets)
    return normalize_categorical(predicted) == normalize_categorical(gold)


def answer_accuracy(gold: Sequence[GoldRecord], retriever, reader, k: int) -> float:
    """Mean correctness of ``reader`` over ``retriever(record, k)`` results."""
    if not gold:
        return 0.0
    correct = 0
    for rec in gold:
        result = retriever(rec, k)
        answer = reader.read_answer(rec.question, result.texts())
        correct += answers_match(answer, rec.answer, rec.qtype)
    return correct / len(gold)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

METRICS = ("precision", "recall", "f1", "relevancy", "answer_accuracy")


@dataclass
class QueryRow:
    qid: str
    k: int
    qtype: str
    hops: str
    precision: float
    recall: float
    f1: float
    relevancy: float
    answer_accuracy: float
    answer: str
    retrieved: list[str]


@dataclass
class EvalReport:
    label: str
    depths: list[int]
    rows: dict[int, dict[str, float]]
    breakdowns: dict[str, dict[str, dict[int, dict[str, float]]]]
    per_query: list[QueryRow] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "depths": self.depths,
            "rows": {str(k): v for k, v in self.rows.items()},
            "breakdowns": {
                dim: {val: {str(k): m for k, m in per_k.items()} for val, per_k in vals.items()}
                for dim, vals in self.breakdowns.items()
            },
            "per_query": [asdict(r) for r in self.per_query],
            "meta": self.meta,
        }

    def to_text(self) -> str:
        head = "".join(f" | Top-{k:<22}" for k in self.depths)
        sub = "".join(" |  P     R     F1    Rel  " for _ in self.depths)
        lines = [f"{'':<24}{head}", f"{'':<24}{sub}"]

        def line(name: str, rows: Mapping[int, Mapping[str, float]]) -> str:
            cells = "".join(
                " | " + " ".join(f"{rows[k][m]:.3f}"[:5] for m in ("precision", "recall", "f1", "relevancy")) + " "
                for k in self.depths
            )
            return f"{name:<24}{cells}"

        lines.append(line(self.label, self.rows))
        lines.append("")
        lines.append("answer accuracy: " + ", ".join(f"k={k}: {self.rows[k]['answer_accuracy']:.3f}" for k in self.depths))
        for dim, vals in self.breakdowns.items():
            lines.append("")
            lines.append(f"by {dim}:")
            for val in sorted(vals):
                n = vals[val][self.depths[0]].get("n", 0)
                lines.append(line(f"  {val} (n={int(n)})", vals[val]))
        return "\n".join(lines) + "\n"


def _mean_rows(rows: Sequence[QueryRow]) -> dict[str, float]:
    if not rows:
        return {m: 0.0 for m in METRICS} | {"n": 0}
    out = {m: sum(getattr(r, m) for r in rows) / len(rows) for m in METRICS}
    out["n"] = len(rows)
    return out


def evaluate_records(
    records: Sequence[GoldRecord],
    retriever,
    judge,
    reader,
    depths: Sequence[int] = DEFAULT_DEPTHS,
    label: str = "full",
) -> EvalReport:
    """Core evaluation loop; ``retriever(record, k)`` returns a RankedResult."""
    depths = sorted({int(k) for k in depths})
    if not depths or depths[0] < 1:
        raise ValueError("depths must be positive integers")
    per_query: list[QueryRow] = []
    for rec in records:
        for k in depths:
            result = retriever(rec, k)
            flags = match_gold(result, rec)
            p, r, f1 = precision_recall_f1(flags, rec.n_gold, k)
            texts = result.texts()
            rel = relevancy(rec.question, texts, judge)
            answer = reader.read_answer(rec.question, texts)
            acc = float(answers_match(answer, rec.answer, rec.qtype))
            per_query.append(QueryRow(rec.qid, k, rec.qtype, rec.hops, p, r, f1, rel, acc, answer, result.chunk_ids))

    rows = {k: _mean_rows([q for q in per_query if q.k == k]) for k in depths}
    breakdowns: dict[str, dict[str, dict[int, dict[str, float]]]] = {}
    for dim in ("qtype", "hops"):
        values = sorted({getattr(q, dim) for q in per_query})
        breakdowns[dim] = {
            v: {k: _mean_rows([q for q in per_query if q.k == k and getattr(q, dim) == v]) for k in depths}
            for v in values
        }
    return EvalReport(label, depths, rows, breakdowns, per_query)


def run_eval(
    gold,
    index,
    provider,
    depths: Sequence[int] = DEFAULT_DEPTHS,
    settings: RetrievalSettings = RetrievalSettings(),
    label: str | None = None,
) -> EvalReport:
    """Evaluate gold records (list or JSONL path) against a corpus index (object or directory)."""
    from .store import load_index

    records = read_gold_jsonl(gold) if isinstance(gold, (str, Path)) else list(gold)
    if isinstance(index, (str, Path)):
        index = load_index(index)
    corpus_table = index.corpus_term_table() if settings.scope == "corpus" else None

    def retriever(rec: GoldRecord, k: int) -> RankedResult:
        return retrieve(
            rec.question,
            index.filing(rec.filing_id),
            k,
            provider,
            lexicon=index.lexicon,
            settings=settings,
            corpus_table=corpus_table,
        )

    name = label or ("+".join(settings.ablations) if settings.ablations else "full")
    report = evaluate_records(records, retriever, provider, provider, depths, name)
    report.meta = {
        "weighting": settings.strategy,
        "scope": settings.scope,
        "ablations": list(settings.ablations),
        "child_budget_b": settings.traversal.child_budget_b,
        "n_queries": len(records),
    }
    return report
