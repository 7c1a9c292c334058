"""Lexicon-guided Item weighting and retrieval budget allocation.

A financial lexicon is clustered once per corpus. At query time the query is
mapped to a set of term clusters, each Item is weighted by how often those
clusters occur in it, and the global budget ``k`` is split across Items.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyLexicon, InvalidBudget
from .gmm import drop_constant_columns, fit_gmm, reduce_dims
from .ingest import Filing, item_sort_key
from .tokens import tokenize

logger = logging.getLogger(__name__)

STRATEGIES = ("relative_frequency", "logarithmic", "softmax")
_STRATEGY_ALIASES = {"exponential": "softmax", "exponential_scaling": "softmax", "relative": "relative_frequency", "log": "logarithmic"}


def normalize_term(surface: str) -> str:
    return " ".join(tokenize(surface, "word"))


@dataclass(frozen=True)
class LexiconTerm:
    surface: str
    cluster_id: int | None = None


def load_lexicon(path: str | Path) -> list[LexiconTerm]:
    """Read a lexicon: one term per line, or a CSV file with a ``term`` column.

    Terms are lowercased and tokenized, then de-duplicated in file order.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if lines and (path.suffix.lower() == ".csv" or lines[0].strip().lower().split(",")[0] == "term"):
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames is None or "term" not in [f.strip().lower() for f in reader.fieldnames]:
            raise ValueError(f"{path}: CSV lexicon needs a 'term' column")
        key = next(f for f in reader.fieldnames if f.strip().lower() == "term")
        raw = [row[key] or "" for row in reader]
    else:
        raw = lines
    seen: dict[str, None] = {}
    for r in raw:
        norm = normalize_term(r)
        if norm:
            seen.setdefault(norm, None)
    if not seen:
        raise EmptyLexicon(f"{path}: no terms")
    return [LexiconTerm(s) for s in seen]


# ---------------------------------------------------------------------------
# phrase matching
# ---------------------------------------------------------------------------

class PhraseMatcher:
    """Greedy longest-match exact phrase matching over word tokens."""

    def __init__(self, surfaces: Iterable[str]):
        self._by_first: dict[str, list[tuple[str, ...]]] = {}
        for s in surfaces:
            toks = tuple(s.split())
            if toks:
                self._by_first.setdefault(toks[0], []).append(toks)
        for phrases in self._by_first.values():
            phrases.sort(key=len, reverse=True)

    def find(self, tokens: Sequence[str]) -> list[tuple[int, int, str]]:
        out = []
        i, n = 0, len(tokens)
        while i < n:
            hit = None
            for phrase in self._by_first.get(tokens[i], ()):
                j = i + len(phrase)
                if j <= n and tuple(tokens[i:j]) == phrase:
                    hit = phrase
                    break
            if hit:
                out.append((i, i + len(hit), " ".join(hit)))
                i += len(hit)
            else:
                i += 1
        return out


# ---------------------------------------------------------------------------
# clustering
# ---------------------------------------------------------------------------

@dataclass
class LexiconClusters:
    """Clustered lexicon: terms with cluster ids plus per-cluster centroids.

    Centroids are means of the member terms' embeddings in the ``lexicon``
    space, used to route queries that mention no lexicon term.
    """

    terms: list[LexiconTerm]
    centroids: dict[int, np.ndarray]
    space_tag: str = "lexicon"

    def cluster_of(self) -> dict[str, int]:
        return {t.surface: t.cluster_id for t in self.terms}

    @property
    def cluster_ids(self) -> list[int]:
        return sorted(self.centroids)

    def to_json(self) -> dict:
        return {
            "space_tag": self.space_tag,
            "terms": [[t.surface, t.cluster_id] for t in self.terms],
            "centroids": {str(c): v.tolist() for c, v in sorted(self.centroids.items())},
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "LexiconClusters":
        return cls(
            terms=[LexiconTerm(s, c) for s, c in d["terms"]],
            centroids={int(c): np.asarray(v, dtype=np.float64) for c, v in d["centroids"].items()},
            space_tag=d.get("space_tag", "lexicon"),
        )


def cluster_terms(terms: Sequence[LexiconTerm], provider, cfg=None) -> LexiconClusters:
    """Embed, reduce and GMM-cluster lexicon terms; cluster id = argmax responsibility.

    Cluster ids are renumbered 0..m-1 in order of first appearance.
    """
    if not terms:
        raise EmptyLexicon("no terms to cluster")
    surfaces = [t.surface for t in terms]
    vecs = provider.embed_texts(surfaces, "lexicon")
    mat = np.stack([v.values for v in vecs]).astype(np.float64)
    if len(terms) == 1:
        labels = [0]
    else:
        reduced_dim = getattr(cfg, "reduced_dim", 10)
        seed = getattr(cfg, "seed", 0)
        x = drop_constant_columns(reduce_dims(mat, reduced_dim, seed))
        model = fit_gmm(x, cfg)
        labels = np.argmax(model.responsibilities(x), axis=1).tolist()
    remap: dict[int, int] = {}
    for lab in labels:
        remap.setdefault(lab, len(remap))
    ids = [remap[lab] for lab in labels]
    centroids = {c: mat[[i for i, x in enumerate(ids) if x == c]].mean(axis=0) for c in range(len(remap))}
    return LexiconClusters([LexiconTerm(s, c) for s, c in zip(surfaces, ids)], centroids)


# ---------------------------------------------------------------------------
# term counts
# ---------------------------------------------------------------------------

@dataclass
class TermFrequencyTable:
    """Occurrence counts keyed by ``(item_label, cluster_id)``.

    ``items`` lists every Item of the filing(s), including those with no hits,
    so weighting can fall back to a uniform split over all of them.
    """

    counts: dict[tuple[str, int], int] = field(default_factory=dict)
    items: list[str] = field(default_factory=list)
    term_counts: dict[tuple[str, str], int] = field(default_factory=dict)

    def item_frequency(self, item: str, clusters: Iterable[int]) -> int:
        return sum(self.counts.get((item, c), 0) for c in clusters)

    def merged(self, other: "TermFrequencyTable") -> "TermFrequencyTable":
        out = TermFrequencyTable(dict(self.counts), list(self.items), dict(self.term_counts))
        for key, v in other.counts.items():
            out.counts[key] = out.counts.get(key, 0) + v
        for key, v in other.term_counts.items():
            out.term_counts[key] = out.term_counts.get(key, 0) + v
        for it in other.items:
            if it not in out.items:
                out.items.append(it)
        out.items.sort(key=item_sort_key)
        return out

    def to_json(self) -> dict:
        return {
            "items": self.items,
            "counts": [[i, c, n] for (i, c), n in sorted(self.counts.items(), key=lambda kv: (item_sort_key(kv[0][0]), kv[0][1]))],
            "term_counts": [[i, t, n] for (i, t), n in sorted(self.term_counts.items(), key=lambda kv: (item_sort_key(kv[0][0]), kv[0][1]))],
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "TermFrequencyTable":
        return cls(
            counts={(i, int(c)): int(n) for i, c, n in d["counts"]},
            items=list(d["items"]),
            term_counts={(i, t): int(n) for i, t, n in d.get("term_counts", [])},
        )


def match_terms(filing: Filing, lexicon: LexiconClusters | Sequence[LexiconTerm]) -> TermFrequencyTable:
    terms = lexicon.terms if isinstance(lexicon, LexiconClusters) else list(lexicon)
    cluster_of = {}
    for t in terms:
        if t.cluster_id is None:
            raise ValueError(f"term {t.surface!r} has no cluster; run cluster_terms first")
        cluster_of[t.surface] = t.cluster_id
    matcher = PhraseMatcher(cluster_of)
    table = TermFrequencyTable(items=[it.item_label for it in filing.items])
    for it in filing.items:
        for _, _, surface in matcher.find(tokenize(it.body, "word")):
            key = (it.item_label, surface)
            table.term_counts[key] = table.term_counts.get(key, 0) + 1
            ckey = (it.item_label, cluster_of[surface])
            table.counts[ckey] = table.counts.get(ckey, 0) + 1
    return table


@dataclass
class QueryExpansion:
    clusters: set[int]
    matched_terms: list[str]
    fallback: bool


def expand_query(query: str, lexicon: LexiconClusters, provider) -> QueryExpansion:
    """Clusters of lexicon phrases found in ``query``; nearest centroid when none."""
    cluster_of = lexicon.cluster_of()
    hits = [s for _, _, s in PhraseMatcher(cluster_of).find(tokenize(query, "word"))]
    if hits:
        return QueryExpansion({cluster_of[s] for s in hits}, hits, False)
    if not lexicon.centroids:
        return QueryExpansion(set(), [], True)
    qvec = provider.embed_texts([query], lexicon.space_tag)[0].values.astype(np.float64)
    ids = lexicon.cluster_ids
    dists = [float(np.linalg.norm(lexicon.centroids[c] - qvec)) for c in ids]
    best = min(range(len(ids)), key=lambda i: (dists[i], ids[i]))
    return QueryExpansion({ids[best]}, [], True)


def expand_query_terms(query: str, lexicon: LexiconClusters, provider) -> set[int]:
    return expand_query(query, lexicon, provider).clusters


# ---------------------------------------------------------------------------
# weights and budgets
# ---------------------------------------------------------------------------

@dataclass
class ItemWeights:
    weights: dict[str, float]
    strategy: str

    def to_json(self) -> dict:
        return {"strategy": self.strategy, "weights": self.weights}


def canonical_strategy(name: str) -> str:
    name = _STRATEGY_ALIASES.get(name, name)
    if name not in STRATEGIES:
        raise ValueError(f"unknown weighting strategy {name!r}; expected one of {STRATEGIES}")
    return name


def weights_from_frequencies(freqs: Mapping[str, float], strategy: str = "relative_frequency") -> ItemWeights:
    strategy = canonical_strategy(strategy)
    items = sorted(freqs, key=item_sort_key)
    if not items:
        raise ValueError("no items to weight")
    f = np.array([float(freqs[i]) for i in items])
    if (f < 0).any():
        raise ValueError("frequencies must be non-negative")
    if not f.any():
        return ItemWeights({i: 1.0 / len(items) for i in items}, strategy)
    if strategy == "relative_frequency":
        raw = f
    elif strategy == "logarithmic":
        raw = np.log1p(f)
    else:
        tau = f.max()
        raw = np.exp((f - tau) / tau)
    w = raw / raw.sum()
    return ItemWeights({i: float(x) for i, x in zip(items, w)}, strategy)


def compute_item_weights(
    table: TermFrequencyTable,
    active_clusters: Iterable[int],
    strategy: str = "relative_frequency",
    items: Sequence[str] | None = None,
) -> ItemWeights:
    """Normalized per-Item weights from cluster counts.

    ``f_i`` sums the counts of the active clusters in Item ``i``. Weights are
    ``f_i / sum f`` (relative frequency), ``log(1+f_i)`` normalized
    (logarithmic), or a softmax of ``f_i / max f`` (softmax). All-zero
    frequencies give uniform weights.
    """
    active = list(active_clusters)
    labels = list(items) if items is not None else list(table.items)
    if not labels:
        raise ValueError("frequency table has no items")
    return weights_from_frequencies({i: table.item_frequency(i, active) for i in labels}, strategy)


@dataclass
class BudgetAllocation:
    budgets: dict[str, int]
    total: int
    method: str = "largest_remainder"

    def active_items(self) -> list[str]:
        return [i for i, b in self.budgets.items() if b > 0]

    def to_json(self) -> dict:
        return {"total": self.total, "method": self.method, "budgets": self.budgets}


def _remainder_key(x: float) -> float:
    # 12 decimals keeps 10/3 and 20/3 style ties exact
    return round(x - math.floor(x), 12)


def allocate_budget(weights: ItemWeights | Mapping[str, float], k: int, method: str = "largest_remainder") -> BudgetAllocation:
    """Split ``k`` retrieval slots across Items so the budgets sum to ``k``.

    ``largest_remainder``: round ``k * w_i`` half-up, then fix the total by
    incrementing the Items with the largest fractional remainders (or
    decrementing those with the smallest). Ties favour the larger weight, then
    the earlier Item label.

    ``webster``: sequential highest-averages with divisors ``s + 1/2``. It
    agrees with rounding whenever rounding already sums to ``k`` and, unlike
    largest remainder, never lowers an Item's budget when ``k`` grows.
    """
    if not isinstance(k, (int, np.integer)) or isinstance(k, bool) or k < 1:
        raise InvalidBudget(f"budget k must be an integer >= 1, got {k!r}")
    w = dict(weights.weights if isinstance(weights, ItemWeights) else weights)
    if not w:
        raise InvalidBudget("no items to allocate to")
    labels = sorted(w, key=item_sort_key)
    order = {lab: i for i, lab in enumerate(labels)}

    if method == "webster":
        seats = {lab: 0 for lab in labels}
        for _ in range(k):
            best = max(labels, key=lambda lab: (w[lab] / (seats[lab] + 0.5), w[lab], -order[lab]))
            seats[best] += 1
        return BudgetAllocation(seats, k, method)
    if method != "largest_remainder":
        raise ValueError(f"unknown allocation method {method!r}")

    quota = {lab: k * w[lab] for lab in labels}
    r = {lab: int(math.floor(quota[lab] + 0.5)) for lab in labels}
    diff = k - sum(r.values())
    if diff > 0:
        cands = sorted(
            (lab for lab in labels if r[lab] <= quota[lab]),
            key=lambda lab: (-_remainder_key(quota[lab]), -w[lab], order[lab]),
        )
        for lab in cands[:diff]:
            r[lab] += 1
    elif diff < 0:
        cands = sorted(
            (lab for lab in labels if r[lab] > quota[lab] and r[lab] > 0),
            key=lambda lab: (_remainder_key(quota[lab]), w[lab], -order[lab]),
        )
        for lab in cands[:-diff]:
            r[lab] -= 1
    # floating residue can leave the candidate lists short; settle on the extremes
    while sum(r.values()) < k:
        r[max(labels, key=lambda lab: (w[lab], -order[lab]))] += 1
    while sum(r.values()) > k:
        r[min((lab for lab in labels if r[lab] > 0), key=lambda lab: (w[lab], -order[lab]))] -= 1
    return BudgetAllocation(r, k, method)

