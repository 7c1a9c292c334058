"""Acceptance suite: one test per headline criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line with its runtime; the
lines are also repeated in pytest's terminal summary. Run with::

    pytest tests/test_acceptance.py -v
"""
from __future__ import annotations

import contextlib
import filecmp
import json
import random
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import METRIC_FIXTURES, bm25_oracle, prf_oracle
from sectree.cli import main as cli_main
from sectree.evaluation import f1_score, match_gold, precision_recall_f1, run_eval
from sectree.gmm import em_fit, fit_gmm
from sectree.indexing import build_corpus_index
from sectree.ingest import chunk_filing
from sectree.lexicon import ItemWeights, LexiconTerm, allocate_budget
from sectree.providers import StubProvider
from sectree.retrieval import (
    ABLATIONS,
    Bm25Params,
    Bm25Stats,
    RetrievalSettings,
    TraversalConfig,
    bm25_score,
    retrieve,
    traverse_tree,
)
from sectree.store import load_index, save_index
from sectree.synthetic import SYNTHETIC_CHUNKING, make_planted_corpus
from sectree.trees import IndexConfig, TreeIndex, TreeNode

ACCEPTANCE_LOG: list[str] = []


@contextlib.contextmanager
def criterion(name: str, limit_s: float | None = None):
    """Time the block, print one pass/fail line and enforce the runtime limit."""
    t0 = time.perf_counter()
    status, detail = "PASS", ""
    try:
        yield
    except BaseException as exc:
        status, detail = "FAIL", f" ({type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''})"
        raise
    finally:
        elapsed = time.perf_counter() - t0
        if status == "PASS" and limit_s is not None and elapsed >= limit_s:
            status, detail = "FAIL", f" (runtime limit {limit_s:.0f}s exceeded)"
        line = f"[{status}] {name} -- {elapsed:.2f}s{detail}"
        print(line)
        ACCEPTANCE_LOG.append(line)
    assert limit_s is None or elapsed < limit_s, f"{name} took {elapsed:.1f}s (limit {limit_s}s)"


# ---------------------------------------------------------------------------
# shared planted-evidence corpus
# ---------------------------------------------------------------------------

N_FILINGS, QUERIES_PER_FILING, SEED = 20, 5, 0


def _build_planted():
    corpus = make_planted_corpus(N_FILINGS, QUERIES_PER_FILING, seed=SEED)
    chunks = [c for f in corpus.filings for c in chunk_filing(f, SYNTHETIC_CHUNKING)]
    terms = [LexiconTerm(t) for t in corpus.lexicon]
    index = build_corpus_index(corpus.filings, chunks, terms, IndexConfig(seed=SEED), StubProvider(), SYNTHETIC_CHUNKING)
    return corpus, index


@pytest.fixture(scope="module")
def planted():
    return _build_planted()


# ---------------------------------------------------------------------------
# 1. budget allocation
# ---------------------------------------------------------------------------

def test_budget_allocation_sums_exactly():
    with criterion("budget allocation: sum k_i* = k for 1000 vectors x k=1..50; 0.6/0.2/0.2, k=10 -> 6/2/2", 5):
        rng = np.random.default_rng(0)
        for v in range(1000):
            n = int(rng.integers(3, 13))
            raw = rng.dirichlet(np.ones(n) * rng.choice([0.2, 1.0, 5.0]))
            weights = {f"I{j}": float(w) for j, w in enumerate(raw)}
            for k in range(1, 51):
                alloc = allocate_budget(weights, k)
                assert sum(alloc.budgets.values()) == k, (v, k)
                assert all(b >= 0 for b in alloc.budgets.values())
        example = allocate_budget({"7": 0.6, "1": 0.2, "1A": 0.2}, 10)
        assert example.budgets == {"7": 6, "1": 2, "1A": 2}


# ---------------------------------------------------------------------------
# 2. metric oracle
# ---------------------------------------------------------------------------

class _E:
    def __init__(self, cid):
        self.chunk_id, self.text = cid, ""


class _R:
    def __init__(self, ids):
        self.filing_id, self.entries = "f", [_E(c) for c in ids]


def test_metric_oracle():
    from sectree.evaluation import GoldRecord

    with criterion("metric oracle: 10 fixtures within 1e-9; f1(0.79, 0.61) = 0.69 +- 0.005"):
        assert len(METRIC_FIXTURES) == 10
        for retrieved, gold, k, ep, er, ef in METRIC_FIXTURES:
            rec = GoldRecord("q", "?", "f", "1", gold_chunk_ids=gold)
            got = precision_recall_f1(match_gold(_R(retrieved[:k]), rec), rec.n_gold, k)
            oracle = prf_oracle(retrieved, gold, k)
            for a, b, c in zip(got, oracle, (ep, er, ef)):
                assert abs(a - b) <= 1e-9 and abs(a - c) <= 1e-9
        assert abs(f1_score(0.79, 0.61) - 0.69) <= 0.005


# ---------------------------------------------------------------------------
# 3. BM25 oracle
# ---------------------------------------------------------------------------

def test_bm25_oracle():
    with criterion("BM25 oracle: 100 random corpora (<=10 docs, <=20 tokens) within 1e-9", 5):
        rng = random.Random(0)
        vocab = [f"t{i}" for i in range(12)]
        checked = 0
        for _ in range(100):
            docs = [[rng.choice(vocab) for _ in range(rng.randint(1, 20))] for _ in range(rng.randint(1, 10))]
            k1, b = rng.uniform(0.5, 2.5), rng.uniform(0.0, 1.0)
            params = Bm25Params(k1=k1, b=b)
            stats = Bm25Stats.from_docs(docs)
            for _ in range(3):
                query = [rng.choice(vocab) for _ in range(rng.randint(1, 5))]
                for doc in docs:
                    assert abs(bm25_score(query, doc, stats, params) - bm25_oracle(query, doc, docs, k1, b)) <= 1e-9
                    checked += 1
        assert checked > 300


# ---------------------------------------------------------------------------
# 4. GMM properties
# ---------------------------------------------------------------------------

def test_gmm_properties():
    with criterion("GMM: responsibilities sum to 1, EM trace non-decreasing (50 sets); two blobs -> k=2 in >=95% seeds", 60):
        rng = np.random.default_rng(0)
        for s in range(50):
            n, d, k = int(rng.integers(20, 120)), int(rng.integers(1, 6)), int(rng.integers(1, 6))
            centers = rng.normal(scale=4.0, size=(k, d))
            x = centers[rng.integers(k, size=n)] + rng.normal(size=(n, d)) * rng.uniform(0.2, 2.0)
            model = em_fit(x, int(rng.integers(1, 5)), seed=s)
            resp = model.responsibilities(x)
            assert np.all(np.abs(resp.sum(axis=1) - 1.0) <= 1e-6)
            assert np.all(np.diff(model.log_likelihood_trace) >= -1e-8)
        hits, seeds = 0, 100
        for s in range(seeds):
            r = np.random.default_rng(1000 + s)
            sigma = 1.0
            a = r.normal(loc=(0.0, 0.0), scale=sigma, size=(60, 2))
            b = r.normal(loc=(6.0 * sigma, 0.0), scale=sigma, size=(60, 2))
            model = fit_gmm(np.vstack([a, b]), max_components=6, seed=s)
            hits += model.n_components == 2
        assert hits / seeds >= 0.95, f"selected 2 components in {hits}/{seeds} seeds"


# ---------------------------------------------------------------------------
# 5. topology mirror
# ---------------------------------------------------------------------------

def test_topology_mirror(planted):
    _, index = planted
    with criterion("topology mirror: summary/question trees share topology and leaves; depth <= 2"):
        n_items = 0
        for filing in index.filings.values():
            for item in filing.items.values():
                s, q = item.summary, item.question
                assert s.topology_hash() == q.topology_hash()
                assert s.leaf_chunk_ids() == q.leaf_chunk_ids()
                assert s.max_depth() <= 2 and q.max_depth() <= 2
                n_items += 1
        assert len(index.filings) == N_FILINGS and n_items == 4 * N_FILINGS


# ---------------------------------------------------------------------------
# 6. traversal bounds
# ---------------------------------------------------------------------------

def _random_tree(rng: random.Random, n_roots: int) -> TreeIndex:
    nodes: dict[str, TreeNode] = {}
    counter = [0, 0]

    def make(depth: int) -> str:
        if depth >= 2 or rng.random() < 0.3:
            nid = f"L{counter[0]}"
            nodes[nid] = TreeNode(nid, "leaf", depth, chunk_id=f"f/7/{counter[0]}", text="x")
            counter[0] += 1
            return nid
        kids = [make(depth + 1) for _ in range(rng.randint(1, 10))]
        nid = f"N{depth}.{counter[1]}"
        counter[1] += 1
        nodes[nid] = TreeNode(nid, "internal", depth, children=kids, summary="s")
        return nid

    roots = [make(0) for _ in range(n_roots)]
    return TreeIndex("f", "7", "summary", roots, nodes)


def test_traversal_bounds(planted):
    corpus, index = planted
    with criterion("traversal bounds: <= b=3 children per node; k_i*=0 Items add nothing; unique ids; len <= k"):
        rng = random.Random(0)
        for t in range(200):
            tree = _random_tree(rng, rng.randint(1, 10))
            trace: dict[str, int] = {}
            scores = {nid: rng.random() for nid in tree.nodes}
            cands = traverse_tree(tree, lambda ids: [scores[i] for i in ids], TraversalConfig(3), trace=trace)
            assert trace and max(trace.values()) <= 3
            assert len({c.chunk_id for c in cands}) == len(cands)
        stub = StubProvider()
        labels = ["1", "1A", "7", "8"]
        for i, pq in enumerate(corpus.queries[:40]):
            rec = pq.record
            raw = [rng.random() if rng.random() > 0.4 else 0.0 for _ in labels]
            if sum(raw) == 0:
                raw[i % 4] = 1.0
            w = ItemWeights({l: v / sum(raw) for l, v in zip(labels, raw)}, "relative_frequency")
            k = rng.randint(1, 15)
            res = retrieve(rec.question, index.filing(rec.filing_id), k, stub, lexicon=index.lexicon, weights_override=w)
            zero = {l for l, b in res.budgets.budgets.items() if b == 0}
            assert not zero & set(res.stage1_survivors)
            assert not zero & {e.item_label for e in res.entries}
            assert len(res.chunk_ids) == len(set(res.chunk_ids)) and len(res.entries) <= k


# ---------------------------------------------------------------------------
# 7. planted evidence end to end
# ---------------------------------------------------------------------------

def test_planted_end_to_end():
    with criterion("planted e2e: recall@5 >= 0.95, planted chunk top-3 >= 90%, answer accuracy@5 >= 0.9", 120):
        corpus, index = _build_planted()
        stub = StubProvider()
        assert len(corpus.queries) == 100
        report = run_eval(corpus.gold, index, stub, depths=(5,))
        top3 = 0
        for pq in corpus.queries:
            rec = pq.record
            res = retrieve(rec.question, index.filing(rec.filing_id), 5, stub, lexicon=index.lexicon)
            top3 += any(pq.sentence in e.text for e in res.entries[:3])
        recall, acc = report.rows[5]["recall"], report.rows[5]["answer_accuracy"]
        print(f"    recall@5={recall:.3f} top3={top3 / 100:.2f} accuracy@5={acc:.3f}")
        assert recall >= 0.95
        assert top3 / len(corpus.queries) >= 0.90
        assert acc >= 0.9


# ---------------------------------------------------------------------------
# 8. determinism
# ---------------------------------------------------------------------------

def _pipeline(root: Path) -> None:
    cfg = root / "sectree.toml"
    assert cli_main(["--seed", str(SEED), "make-synthetic", str(root), "--filings", str(N_FILINGS)]) == 0
    assert cli_main(["--config", str(cfg), "--seed", str(SEED), "ingest"]) == 0
    assert cli_main(["--config", str(cfg), "--seed", str(SEED), "build-index"]) == 0
    assert cli_main(["--config", str(cfg), "--seed", str(SEED), "eval", "--gold", str(root / "gold.jsonl")]) == 0


def _tree_diff(a: Path, b: Path) -> list[str]:
    cmp = filecmp.dircmp(a, b)
    out = [str(a / n) for n in cmp.left_only + cmp.right_only + cmp.funny_files]
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    out += [str(a / n) for n in mismatch + errors]
    for sub in cmp.common_dirs:
        out += _tree_diff(a / sub, b / sub)
    return out


def test_determinism(tmp_path, capsys):
    with criterion("determinism: two CLI pipeline runs give byte-identical indices and reports"):
        a, b = tmp_path / "a", tmp_path / "b"
        _pipeline(a)
        _pipeline(b)
        q = (a / "gold.jsonl").read_text().splitlines()[0]
        outs = []
        for root in (a, b):
            capsys.readouterr()
            g = json.loads(q)
            assert cli_main(["--config", str(root / "sectree.toml"), "query", g["question"], "--filing", g["filing_id"]]) == 0
            outs.append(capsys.readouterr().out)
        assert outs[0] == outs[1]
        for sub in ("ingest", "index", "eval"):
            da, db = a / "runs" / sub, b / "runs" / sub
            # run manifests record absolute paths, which differ between the two roots
            diff = [p for p in _tree_diff(da, db) if not p.endswith("run-manifest.json")]
            assert not diff, diff
        assert (a / "runs/index/manifest.json").read_bytes() == (b / "runs/index/manifest.json").read_bytes()
        assert (a / "runs/eval/report.json").read_bytes() == (b / "runs/eval/report.json").read_bytes()


# ---------------------------------------------------------------------------
# 9. ablation direction
# ---------------------------------------------------------------------------

def test_ablation_direction(planted):
    corpus, index = planted
    with criterion("ablation direction: every single-module ablation has F1 <= full pipeline"):
        stub = StubProvider()
        depths = (5, 10, 15)
        full = run_eval(corpus.gold, index, stub, depths)
        for abl in ABLATIONS:
            rep = run_eval(corpus.gold, index, stub, depths, RetrievalSettings(ablations=(abl,)))
            print("    " + f"{abl:<18}" + " ".join(f"F1@{k}={rep.rows[k]['f1']:.3f}/{full.rows[k]['f1']:.3f}" for k in depths))
            for k in depths:
                assert rep.rows[k]["f1"] <= full.rows[k]["f1"] + 1e-12, (abl, k)


# ---------------------------------------------------------------------------
# 10. index round trip
# ---------------------------------------------------------------------------

def test_index_round_trip(planted, tmp_path):
    _, index = planted
    with criterion("index round-trip: every node, embedding (bit-exact) and topology hash preserved"):
        save_index(index, tmp_path / "idx")
        loaded = load_index(tmp_path / "idx")
        assert sorted(loaded.filings) == sorted(index.filings)
        for fid, filing in index.filings.items():
            other = loaded.filings[fid]
            assert sorted(other.items) == sorted(filing.items)
            for label, item in filing.items.items():
                for name in ("summary", "question"):
                    t1, t2 = getattr(item, name), getattr(other.items[label], name)
                    assert t1.topology_hash() == t2.topology_hash()
                    assert t1.root_ids == t2.root_ids and t1.space_tag == t2.space_tag and set(t1.nodes) == set(t2.nodes)
                    for nid, n1 in t1.nodes.items():
                        n2 = t2.nodes[nid]
                        assert n1 == n2
                        if n1.embeddings is None:
                            assert n2.embeddings is None
                        else:
                            assert n1.embeddings.dtype == n2.embeddings.dtype
                            assert n1.embeddings.tobytes() == n2.embeddings.tobytes()
