from __future__ import annotations

import pytest

from sectree.indexing import build_corpus_index
from sectree.ingest import chunk_filing
from sectree.lexicon import LexiconTerm
from sectree.providers import StubProvider
from sectree.synthetic import SYNTHETIC_CHUNKING, make_planted_corpus
from sectree.trees import IndexConfig


@pytest.fixture(scope="session")
def stub():
    return StubProvider()


@pytest.fixture(scope="session")
def small_corpus():
    return make_planted_corpus(n_filings=3, queries_per_filing=5, seed=7)


@pytest.fixture(scope="session")
def small_chunks(small_corpus):
    return [c for f in small_corpus.filings for c in chunk_filing(f, SYNTHETIC_CHUNKING)]


@pytest.fixture(scope="session")
def small_index(small_corpus, small_chunks, stub):
    terms = [LexiconTerm(t) for t in small_corpus.lexicon]
    return build_corpus_index(small_corpus.filings, small_chunks, terms, IndexConfig(), stub, SYNTHETIC_CHUNKING)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import ACCEPTANCE_LOG
    except ImportError:
        return
    if ACCEPTANCE_LOG:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LOG:
            terminalreporter.write_line(line)
