"""Query execution: Item budgeting, dual-tree traversal, pooling, reranking.

For one filing a query runs as:

1. expand the query to lexicon clusters and turn per-Item cluster counts into
   weights and integer budgets ``k_i``;
2. for every Item with ``k_i > 0`` descend both trees with a beam of ``b``
   children per node (BM25 over summaries, cosine over sub-questions);
3. pool the leaves of both trees, rerank with the pair scorer and keep ``k_i``;
4. rerank the survivors of all Items together and keep ``k``.
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyTree, InvalidBudget, SpaceMismatch
from .ingest import item_sort_key
from .lexicon import (
    BudgetAllocation,
    ItemWeights,
    LexiconClusters,
    TermFrequencyTable,
    allocate_budget,
    compute_item_weights,
    expand_query,
)
from .tokens import tokenize
from .trees import TreeIndex

logger = logging.getLogger(__name__)

ABLATIONS = ("no-flam", "no-summary-tree", "no-question-tree", "no-reranker")


# ---------------------------------------------------------------------------
# BM25
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.5
    b: float = 0.75
    tokenizer: str = "stem"

    def __post_init__(self):
        if self.k1 <= 0:
            raise ValueError("k1 must be positive")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must lie in [0, 1]")


@dataclass
class Bm25Stats:
    n_docs: int
    doc_freq: dict[str, int]
    avg_doc_len: float

    @classmethod
    def from_docs(cls, docs: Sequence[Sequence[str]]) -> "Bm25Stats":
        df: Counter = Counter()
        for d in docs:
            df.update(set(d))
        avg = sum(len(d) for d in docs) / len(docs) if docs else 0.0
        return cls(len(docs), dict(df), avg)


def bm25_idf(term: str, stats: Bm25Stats) -> float:
    df = stats.doc_freq.get(term, 0)
    return math.log(1.0 + (stats.n_docs - df + 0.5) / (df + 0.5))


def bm25_score(query_tokens: Sequence[str], doc_tokens: Sequence[str], stats: Bm25Stats, params: Bm25Params = Bm25Params()) -> float:
    """Okapi BM25 with the Lucene-style non-negative IDF.

    Repeated query terms count once.
    """
    if not doc_tokens:
        return 0.0
    tf = Counter(doc_tokens)
    dl = len(doc_tokens)
    norm = 1.0 - params.b + params.b * (dl / stats.avg_doc_len if stats.avg_doc_len > 0 else 1.0)
    score = 0.0
    for t in dict.fromkeys(query_tokens):
        f = tf.get(t, 0)
        if f:
            score += bm25_idf(t, stats) * f * (params.k1 + 1.0) / (f + params.k1 * norm)
    return score


# ---------------------------------------------------------------------------
# traversal
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraversalConfig:
    child_budget_b: int = 3
    question_aggregator: str = "max"  # "max" | "mean"

    def __post_init__(self):
        if self.child_budget_b < 1:
            raise ValueError("child_budget_b must be >= 1")
        if self.question_aggregator not in ("max", "mean"):
            raise ValueError("question_aggregator must be 'max' or 'mean'")


@dataclass
class Candidate:
    chunk_id: str
    item_label: str
    source: str  # "summary_tree" | "question_tree" | "both"
    traversal_score: float
    path: tuple[str, ...]
    stage1_score: float | None = None


class SummaryBm25Scorer:
    """BM25 of the query against each child's text, statistics over the siblings."""

    def __init__(self, tree: TreeIndex, query: str, params: Bm25Params = Bm25Params()):
        self.tree = tree
        self.params = params
        self.query_tokens = tokenize(query, params.tokenizer)
        self._tokens: dict[str, list[str]] = {}

    def _doc(self, nid: str) -> list[str]:
        if nid not in self._tokens:
            n = self.tree.nodes[nid]
            text = n.text if n.is_leaf else (n.summary or "")
            self._tokens[nid] = tokenize(text or "", self.params.tokenizer)
        return self._tokens[nid]

    def __call__(self, child_ids: Sequence[str]) -> list[float]:
        docs = [self._doc(c) for c in child_ids]
        stats = Bm25Stats.from_docs(docs)
        return [bm25_score(self.query_tokens, d, stats, self.params) for d in docs]


class QuestionCosineScorer:
    """Cosine between the query and each child's stored embeddings (max or mean)."""

    def __init__(self, tree: TreeIndex, query_vector, aggregator: str = "max"):
        space = getattr(query_vector, "space_tag", None)
        if space is not None and tree.space_tag is not None and space != tree.space_tag:
            raise SpaceMismatch(f"query embedded in {space!r}, tree stores {tree.space_tag!r}")
        q = np.asarray(getattr(query_vector, "values", query_vector), dtype=np.float64)
        norm = np.linalg.norm(q)
        self.q = q / norm if norm > 0 else q
        self.tree = tree
        self.aggregator = aggregator

    def __call__(self, child_ids: Sequence[str]) -> list[float]:
        out = []
        for c in child_ids:
            emb = self.tree.nodes[c].embeddings
            if emb is None or emb.size == 0:
                out.append(0.0)
                continue
            e = emb.astype(np.float64)
            norms = np.linalg.norm(e, axis=1)
            norms[norms == 0] = 1.0
            sims = (e @ self.q) / norms
            out.append(float(sims.max() if self.aggregator == "max" else sims.mean()))
        return out


def _top_children(child_ids: Sequence[str], scores: Sequence[float], tree: TreeIndex, b: int) -> list[tuple[str, float]]:
    def tie(nid: str) -> str:
        n = tree.nodes[nid]
        return n.chunk_id if n.is_leaf and n.chunk_id else nid

    ranked = sorted(zip(child_ids, scores), key=lambda cs: (-cs[1], tie(cs[0])))
    return ranked[:b]


def traverse_tree(
    tree: TreeIndex,
    scorer: Callable[[Sequence[str]], list[float]],
    cfg: TraversalConfig = TraversalConfig(),
    source: str = "summary_tree",
    trace: dict[str, int] | None = None,
) -> list[Candidate]:
    """Beam descent with at most ``cfg.child_budget_b`` children kept per node.

    The forest roots are treated as the children of a virtual root (recorded in
    ``trace`` under ``""``). A leaf reached through several parents keeps its
    best score. ``trace`` (if given) receives the number of children expanded
    at every visited node.
    """
    if not tree.root_ids:
        raise EmptyTree(f"tree for item {tree.item_label!r} has no roots")
    best: dict[str, Candidate] = {}
    frontier: list[tuple[str, tuple[str, ...], Sequence[str]]] = [("", (), tree.root_ids)]
    visited: set[str] = set()
    while frontier:
        next_frontier = []
        for parent, path, children in frontier:
            if parent in visited:
                continue
            visited.add(parent)
            kept = _top_children(children, scorer(children), tree, cfg.child_budget_b)
            if trace is not None:
                trace[parent] = len(kept)
            for nid, score in kept:
                node = tree.nodes[nid]
                npath = path + (nid,)
                if node.is_leaf:
                    prev = best.get(node.chunk_id)
                    if prev is None or score > prev.traversal_score:
                        best[node.chunk_id] = Candidate(node.chunk_id, tree.item_label, source, float(score), npath)
                elif nid not in visited:
                    next_frontier.append((nid, npath, node.children))
        frontier = next_frontier
    return sorted(best.values(), key=lambda c: (-c.traversal_score, c.chunk_id))


def _minmax(cands: Sequence[Candidate]) -> list[Candidate]:
    if not cands:
        return []
    scores = [c.traversal_score for c in cands]
    lo, hi = min(scores), max(scores)
    span = hi - lo
    return [replace(c, traversal_score=(c.traversal_score - lo) / span if span > 0 else 1.0) for c in cands]


def collect_candidates(summary_cands: Sequence[Candidate], question_cands: Sequence[Candidate]) -> list[Candidate]:
    """Union by chunk id after per-source min-max normalization; shared chunks become ``both``."""
    pool: dict[str, Candidate] = {}
    for cand in _minmax(summary_cands) + _minmax(question_cands):
        prev = pool.get(cand.chunk_id)
        if prev is None:
            pool[cand.chunk_id] = cand
            continue
        keep = cand if cand.traversal_score > prev.traversal_score else prev
        source = prev.source if prev.source == cand.source else "both"
        pool[cand.chunk_id] = replace(keep, source=source)
    return sorted(pool.values(), key=lambda c: (-c.traversal_score, c.chunk_id))


# ---------------------------------------------------------------------------
# reranking
# ---------------------------------------------------------------------------

@dataclass
class RankedEntry:
    chunk_id: str
    item_label: str
    stage2_score: float | None
    stage1_score: float | None
    traversal_score: float
    path: tuple[str, ...]
    source: str = ""
    text: str = ""

    def to_json(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "item_label": self.item_label,
            "source": self.source,
            "scores": {"stage2": self.stage2_score, "stage1": self.stage1_score, "traversal": self.traversal_score},
            "path": list(self.path),
            "text": self.text,
        }


@dataclass
class RankedResult:
    query: str
    k: int
    filing_id: str
    entries: list[RankedEntry]
    item_weights: ItemWeights | None = None
    budgets: BudgetAllocation | None = None
    active_clusters: list[int] = field(default_factory=list)
    matched_terms: list[str] = field(default_factory=list)
    ablations: list[str] = field(default_factory=list)
    stage1_survivors: dict[str, int] = field(default_factory=dict)

    @property
    def chunk_ids(self) -> list[str]:
        return [e.chunk_id for e in self.entries]

    def texts(self) -> list[str]:
        return [e.text for e in self.entries]

    def to_json(self) -> dict:
        return {
            "query": self.query,
            "k": self.k,
            "filing_id": self.filing_id,
            "item_weights": self.item_weights.weights if self.item_weights else {},
            "weighting": self.item_weights.strategy if self.item_weights else None,
            "budgets": self.budgets.budgets if self.budgets else {},
            "active_clusters": self.active_clusters,
            "matched_terms": self.matched_terms,
            "ablations": self.ablations,
            "stage1_survivors": self.stage1_survivors,
            "results": [e.to_json() for e in self.entries],
        }


def _score_texts(provider, query: str, texts: Sequence[str]) -> list[float]:
    if not texts:
        return []
    return [float(s) for s in provider.score_pairs(query, list(texts))]


def rerank_stage1(query: str, pool: Sequence[Candidate], provider, limit: int, texts: Mapping[str, str]) -> list[Candidate]:
    """Score the whole pool with the pair scorer, then keep the best ``limit``."""
    if limit <= 0 or not pool:
        return []
    scores = _score_texts(provider, query, [texts[c.chunk_id] for c in pool])
    scored = [replace(c, stage1_score=s) for c, s in zip(pool, scores)]
    scored.sort(key=lambda c: (-c.stage1_score, c.chunk_id))
    return scored[:limit]


def rerank_stage2(
    query: str,
    per_item: Mapping[str, Sequence[Candidate]] | Sequence[Sequence[Candidate]],
    k: int,
    provider,
    texts: Mapping[str, str],
) -> list[RankedEntry]:
    """Rescore all stage-1 survivors together; ties break by chunk id."""
    lists = per_item.values() if isinstance(per_item, Mapping) else per_item
    merged: dict[str, Candidate] = {}
    for lst in lists:
        for c in lst:
            if c.chunk_id not in merged:
                merged[c.chunk_id] = c
    cands = list(merged.values())
    scores = _score_texts(provider, query, [texts[c.chunk_id] for c in cands])
    entries = [
        RankedEntry(c.chunk_id, c.item_label, s, c.stage1_score, c.traversal_score, c.path, c.source, texts[c.chunk_id])
        for c, s in zip(cands, scores)
    ]
    entries.sort(key=lambda e: (-e.stage2_score, e.chunk_id))
    return entries[:k]


def _merge_without_reranker(per_item: Mapping[str, Sequence[Candidate]], k: int, texts: Mapping[str, str]) -> list[RankedEntry]:
    cands = [c for lst in per_item.values() for c in lst]
    cands.sort(key=lambda c: (-c.traversal_score, c.chunk_id))
    return [
        RankedEntry(c.chunk_id, c.item_label, None, None, c.traversal_score, c.path, c.source, texts[c.chunk_id])
        for c in cands[:k]
    ]


# ---------------------------------------------------------------------------
# end to end
# ---------------------------------------------------------------------------

def normalize_ablations(names: Iterable[str] | None) -> list[str]:
    out = []
    for name in names or ():
        canon = name.strip().lower().replace("_", "-")
        if canon in ("", "none"):
            continue
        if canon not in ABLATIONS:
            raise ValueError(f"unknown ablation {name!r}; expected one of {ABLATIONS}")
        if canon not in out:
            out.append(canon)
    if "no-summary-tree" in out and "no-question-tree" in out:
        raise ValueError("cannot disable both trees")
    return out


@dataclass(frozen=True)
class RetrievalSettings:
    bm25: Bm25Params = Bm25Params()
    traversal: TraversalConfig = TraversalConfig()
    strategy: str = "relative_frequency"
    scope: str = "filing"  # "filing" | "corpus"
    budget_method: str = "largest_remainder"
    ablations: tuple[str, ...] = ()

    def __post_init__(self):
        if self.scope not in ("filing", "corpus"):
            raise ValueError("scope must be 'filing' or 'corpus'")
        object.__setattr__(self, "ablations", tuple(normalize_ablations(self.ablations)))


def item_candidates(item, query: str, query_vec, settings: RetrievalSettings, trace: dict | None = None) -> list[Candidate]:
    """Traverse one Item's trees (minus ablated ones) and pool the leaves."""
    abl = settings.ablations
    s_cands: list[Candidate] = []
    q_cands: list[Candidate] = []
    if "no-summary-tree" not in abl:
        scorer = SummaryBm25Scorer(item.summary, query, settings.bm25)
        t = {} if trace is not None else None
        s_cands = traverse_tree(item.summary, scorer, settings.traversal, "summary_tree", t)
        if trace is not None:
            trace[("summary", item.item_label)] = t
    if "no-question-tree" not in abl:
        scorer = QuestionCosineScorer(item.question, query_vec, settings.traversal.question_aggregator)
        t = {} if trace is not None else None
        q_cands = traverse_tree(item.question, scorer, settings.traversal, "question_tree", t)
        if trace is not None:
            trace[("question", item.item_label)] = t
    return collect_candidates(s_cands, q_cands)


def retrieve(
    query: str,
    filing_index,
    k: int,
    provider,
    *,
    lexicon: LexiconClusters | None = None,
    settings: RetrievalSettings = RetrievalSettings(),
    weights_override: ItemWeights | Mapping[str, float] | None = None,
    corpus_table: TermFrequencyTable | None = None,
    trace: dict | None = None,
) -> RankedResult:
    """Run the full pipeline for ``query`` against one filing's index."""
    if not isinstance(k, int) or isinstance(k, bool) or k < 1:
        raise InvalidBudget(f"k must be a positive integer, got {k!r}")
    if not query or not query.strip():
        raise ValueError("query must be non-empty")
    abl = settings.ablations
    labels = filing_index.item_labels()

    active: list[int] = []
    matched: list[str] = []
    if weights_override is not None:
        raw = weights_override.weights if isinstance(weights_override, ItemWeights) else dict(weights_override)
        weights = ItemWeights({i: float(raw.get(i, 0.0)) for i in labels}, "override")
    elif "no-flam" in abl or lexicon is None:
        weights = ItemWeights({i: 1.0 / len(labels) for i in labels}, "uniform")
    else:
        expansion = expand_query(query, lexicon, provider)
        active, matched = sorted(expansion.clusters), expansion.matched_terms
        table = corpus_table if settings.scope == "corpus" and corpus_table is not None else filing_index.term_table
        weights = compute_item_weights(table, active, settings.strategy, items=labels)
    budgets = allocate_budget(weights, k, settings.budget_method)

    texts = filing_index.chunk_texts()
    query_vec = None
    if "no-question-tree" not in abl:
        query_vec = provider.embed_texts([query], "qa")[0]

    survivors: dict[str, list[Candidate]] = {}
    for label in sorted(budgets.budgets, key=item_sort_key):
        limit = budgets.budgets[label]
        if limit <= 0:
            continue
        pool = item_candidates(filing_index.items[label], query, query_vec, settings, trace)
        if "no-reranker" in abl:
            survivors[label] = pool[:limit]
        else:
            survivors[label] = rerank_stage1(query, pool, provider, limit, texts)

    if "no-reranker" in abl:
        entries = _merge_without_reranker(survivors, k, texts)
    else:
        entries = rerank_stage2(query, survivors, k, provider, texts)
    logger.debug("query %r -> %d results (budgets %s)", query, len(entries), budgets.budgets)
    survivors_n = {label: len(v) for label, v in survivors.items()}
    return RankedResult(query, k, filing_index.filing_id, entries, weights, budgets, active, matched, list(abl), survivors_n)


def render_result_table(result: RankedResult) -> str:
    """Plain-text ranked table for terminal output."""
    lines = [f"query: {result.query}", f"filing: {result.filing_id}  k={result.k}"]
    if result.budgets:
        lines.append("budgets: " + ", ".join(f"Item {i}={b}" for i, b in result.budgets.budgets.items() if b))
    lines.append(f"{'rank':>4}  {'chunk_id':<28} {'item':<5} {'stage2':>7} {'stage1':>7} {'trav':>6}  text")
    for r, e in enumerate(result.entries, 1):
        def fmt(x):
            return f"{x:7.4f}" if x is not None else "      -"
        snippet = " ".join(e.text.split())[:60]
        lines.append(f"{r:>4}  {e.chunk_id:<28} {e.item_label:<5} {fmt(e.stage2_score)} {fmt(e.stage1_score)} {e.traversal_score:6.3f}  {snippet}")
    return "\n".join(lines)
