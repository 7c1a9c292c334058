import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sectree.errors import EmptyLexicon, InvalidBudget
from sectree.ingest import parse_filing
from sectree.lexicon import (
    LexiconClusters,
    LexiconTerm,
    PhraseMatcher,
    TermFrequencyTable,
    allocate_budget,
    cluster_terms,
    compute_item_weights,
    expand_query,
    expand_query_terms,
    load_lexicon,
    match_terms,
    weights_from_frequencies,
)
from sectree.providers import StubProvider, _hash_feature
from sectree.trees import IndexConfig

STRATS = ("relative_frequency", "logarithmic", "softmax")


# -- loading and matching ------------------------------------------------------

def test_load_dedups_after_normalization(tmp_path):
    p = tmp_path / "lex.txt"
    p.write_text("Net Income\nnet income\nCET1\n\n")
    assert [t.surface for t in load_lexicon(p)] == ["net income", "cet1"]


def test_load_empty(tmp_path):
    p = tmp_path / "lex.txt"
    p.write_text("\n  \n")
    with pytest.raises(EmptyLexicon):
        load_lexicon(p)


def test_load_csv_term_column(tmp_path):
    p = tmp_path / "lex.csv"
    p.write_text("id,term,source\n1,Goodwill,x\n2,Fair Value,y\n")
    assert [t.surface for t in load_lexicon(p)] == ["goodwill", "fair value"]


def test_load_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_lexicon(tmp_path / "missing.txt")


def _filing(body7, body1="nothing here"):
    return parse_filing(f"## Item 1. B\n{body1}\n## Item 7. M\n{body7}\n", "f")


def _clustered(*pairs):
    return LexiconClusters([LexiconTerm(s, c) for s, c in pairs], {c: np.zeros(4) for _, c in pairs})


def test_match_counts():
    lex = _clustered(("net income", 0))
    table = match_terms(_filing("net income and net income per share"), lex)
    assert table.term_counts[("7", "net income")] == 2
    assert table.counts[("7", 0)] == 2
    assert table.item_frequency("1", [0]) == 0


def test_longest_match_wins():
    lex = _clustered(("income", 0), ("net income", 1))
    table = match_terms(_filing("net income"), lex)
    assert table.term_counts == {("7", "net income"): 1}


def test_phrase_matcher_non_overlapping():
    m = PhraseMatcher(["a b", "b c"])
    assert [s for _, _, s in m.find(["a", "b", "c", "b", "c"])] == ["a b", "b c"]


def test_table_json_roundtrip_and_merge():
    t = TermFrequencyTable({("7", 0): 3, ("1", 1): 2}, ["1", "7"], {("7", "x"): 3})
    assert TermFrequencyTable.from_json(t.to_json()) == t
    m = t.merged(TermFrequencyTable({("7", 0): 1, ("8", 0): 4}, ["7", "8"]))
    assert m.counts[("7", 0)] == 4 and m.items == ["1", "7", "8"]


# -- clustering ------------------------------------------------------------------

def test_single_term_one_cluster():
    lc = cluster_terms([LexiconTerm("goodwill")], StubProvider())
    assert [t.cluster_id for t in lc.terms] == [0] and lc.cluster_ids == [0]


def test_identical_terms_same_cluster():
    terms = [LexiconTerm(s) for s in ["fair value", "fair value", "goodwill impairment", "net income"]]
    lc = cluster_terms(terms, StubProvider())
    assert lc.terms[0].cluster_id == lc.terms[1].cluster_id


def _disjoint_families(n_fam=4, per=10, seed=0, space="lexicon"):
    """Token families whose stub hash buckets never collide (checked exhaustively)."""
    rng = random.Random(seed)
    used: set[int] = set()

    def fresh(prefix):
        while True:
            tok = f"{prefix}{''.join(rng.choice('bdfgklmnprstvz') + rng.choice('aeiou') for _ in range(3))}"
            bucket = _hash_feature(space, 0, tok, 768)[0]
            if bucket not in used:
                used.add(bucket)
                return tok

    fams = []
    for _ in range(n_fam):
        core = fresh("")
        fams.append([f"{core} {fresh('')}" for _ in range(per)])
    return fams


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_four_disjoint_families_give_four_pure_clusters(seed):
    fams = _disjoint_families(seed=seed)
    terms = [LexiconTerm(t) for f in fams for t in f]
    family = [i for i, f in enumerate(fams) for _ in f]
    # oracle: all buckets distinct across the whole lexicon
    buckets = [_hash_feature("lexicon", 0, tok, 768)[0] for t in terms for tok in t.surface.split()]
    assert len(set(buckets)) == len(set(tok for t in terms for tok in t.surface.split()))
    lc = cluster_terms(terms, StubProvider(), IndexConfig(seed=seed))
    ids = [t.cluster_id for t in lc.terms]
    assert len(set(ids)) == 4
    for c in set(ids):
        assert len({family[i] for i, x in enumerate(ids) if x == c}) == 1


def test_clusters_json_roundtrip():
    lc = cluster_terms([LexiconTerm(s) for s in ["fair value", "goodwill", "net income"]], StubProvider())
    back = LexiconClusters.from_json(lc.to_json())
    assert back.terms == lc.terms
    assert all(np.array_equal(back.centroids[c], lc.centroids[c]) for c in lc.centroids)


# -- query expansion -------------------------------------------------------------

def test_expand_direct_hit_and_union():
    lex = _clustered(("cet1", 3), ("liquidity", 1), ("fair value", 4))
    assert expand_query_terms("What is the CET1 ratio?", lex, StubProvider()) == {3}
    assert expand_query_terms("liquidity and fair value", lex, StubProvider()) == {1, 4}


def test_expand_fallback_nearest_centroid_matches_exhaustive_scan():
    p = StubProvider()
    lc = cluster_terms([LexiconTerm(s) for s in ["fair value", "goodwill", "net income", "credit risk", "tier one capital"]], p)
    for q in ["how did margins evolve", "zebra quantum", "capital adequacy outlook", "value of assets"]:
        exp = expand_query(q, lc, p)
        if exp.matched_terms:
            continue
        qv = p.embed_texts([q], "lexicon")[0].values.astype(np.float64)
        dists = {c: float(np.sqrt(((v - qv) ** 2).sum())) for c, v in lc.centroids.items()}
        best = min(dists, key=lambda c: (dists[c], c))
        assert exp.clusters == {best} and exp.fallback


# -- weights -----------------------------------------------------------------------

def _table(counts):
    return TermFrequencyTable({(i, 0): n for i, n in counts.items()}, list(counts))


def test_relative_frequency_example():
    w = compute_item_weights(_table({"7": 6, "1": 2, "1A": 2}), [0]).weights
    assert w == pytest.approx({"1": 0.2, "1A": 0.2, "7": 0.6})


def test_two_item_normalization():
    assert weights_from_frequencies({"A": 3, "B": 1}).weights == pytest.approx({"A": 0.75, "B": 0.25})


@pytest.mark.parametrize("strategy", STRATS)
def test_all_zero_uniform(strategy):
    w = compute_item_weights(_table({"1": 0, "1A": 0, "7": 0, "8": 0}), [0], strategy).weights
    assert list(w.values()) == [0.25] * 4


def test_inactive_clusters_ignored():
    t = TermFrequencyTable({("7", 0): 5, ("1", 1): 5}, ["1", "7"])
    assert compute_item_weights(t, [0]).weights == {"1": 0.0, "7": 1.0}


def test_strategy_formulas():
    f = {"A": 4.0, "B": 1.0, "C": 0.0}
    log = weights_from_frequencies(f, "logarithmic").weights
    raw = {k: np.log1p(v) for k, v in f.items()}
    assert log == pytest.approx({k: v / sum(raw.values()) for k, v in raw.items()})
    soft = weights_from_frequencies(f, "softmax").weights
    ex = {k: np.exp(v / 4.0) for k, v in f.items()}
    assert soft == pytest.approx({k: v / sum(ex.values()) for k, v in ex.items()})
    assert weights_from_frequencies(f, "exponential").weights == soft


def test_unknown_strategy():
    with pytest.raises(ValueError):
        weights_from_frequencies({"A": 1}, "cubic")


counts_st = st.dictionaries(st.sampled_from(["1", "1A", "2", "7", "7A", "8"]), st.integers(0, 500), min_size=1)


@settings(max_examples=200, deadline=None)
@given(counts_st, st.sampled_from(STRATS))
def test_weights_normalized(counts, strategy):
    w = weights_from_frequencies(counts, strategy).weights
    assert abs(sum(w.values()) - 1.0) <= 1e-9
    assert all(0.0 <= x <= 1.0 for x in w.values())


@settings(max_examples=200, deadline=None)
@given(counts_st, st.sampled_from(["relative_frequency", "logarithmic"]), st.integers(1, 50))
def test_argmax_scale_invariance(counts, strategy, scale):
    if not any(counts.values()):
        return
    w1 = weights_from_frequencies(counts, strategy).weights
    w2 = weights_from_frequencies({k: v * scale for k, v in counts.items()}, strategy).weights
    order = sorted(w1, key=lambda k: (-w1[k], k))
    assert order == sorted(w2, key=lambda k: (-w2[k], k))


@settings(max_examples=200, deadline=None)
@given(counts_st, st.sampled_from(STRATS), st.integers(1, 100))
def test_weight_monotone_in_own_count(counts, strategy, bump):
    for item in counts:
        before = weights_from_frequencies(counts, strategy).weights[item]
        after = weights_from_frequencies({**counts, item: counts[item] + bump}, strategy).weights[item]
        assert after >= before - 1e-12


# -- budgets -----------------------------------------------------------------------

def test_budget_worked_example():
    assert allocate_budget({"7": 0.6, "1": 0.2, "1A": 0.2}, 10).budgets == {"1": 2, "1A": 2, "7": 6}


def test_budget_single_item():
    for k in (1, 7, 50):
        assert allocate_budget({"A": 1.0}, k).budgets == {"A": k}


def test_budget_thirds_label_order():
    assert allocate_budget({"A": 1 / 3, "B": 1 / 3, "C": 1 / 3}, 10).budgets == {"A": 4, "B": 3, "C": 3}


def test_budget_invalid_k():
    for k in (0, -1):
        with pytest.raises(InvalidBudget):
            allocate_budget({"A": 1.0}, k)


def test_zero_budget_items_are_inactive():
    alloc = allocate_budget({"A": 0.9, "B": 0.05, "C": 0.05}, 2)
    assert sum(alloc.budgets.values()) == 2
    assert "A" in alloc.active_items() and len(alloc.active_items()) <= 2


weights_st = st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=3, max_size=12).filter(lambda v: sum(v) > 0)


@settings(max_examples=200, deadline=None)
@given(weights_st, st.integers(1, 50), st.sampled_from(["largest_remainder", "webster"]))
def test_budget_sums_to_k(raw, k, method):
    total = sum(raw)
    w = {f"I{i}": x / total for i, x in enumerate(raw)}
    alloc = allocate_budget(w, k, method)
    assert sum(alloc.budgets.values()) == k
    assert all(v >= 0 for v in alloc.budgets.values())


@settings(max_examples=100, deadline=None)
@given(weights_st)
def test_webster_monotone_in_k(raw):
    total = sum(raw)
    w = {f"I{i}": x / total for i, x in enumerate(raw)}
    prev = {i: 0 for i in w}
    for k in range(1, 51):
        cur = allocate_budget(w, k, "webster").budgets
        assert all(cur[i] >= prev[i] for i in w)
        prev = cur


def test_largest_remainder_is_not_house_monotone():
    # pinned counterexample: growing k from 9 to 10 takes Item A's only unit away
    w = {"A": 0.05, "B": 0.15, "C": 0.8}
    assert allocate_budget(w, 9).budgets == {"A": 1, "B": 1, "C": 7}
    assert allocate_budget(w, 10).budgets == {"A": 0, "B": 2, "C": 8}
    # the webster option keeps A's unit
    assert allocate_budget(w, 10, "webster").budgets["A"] >= allocate_budget(w, 9, "webster").budgets["A"]
