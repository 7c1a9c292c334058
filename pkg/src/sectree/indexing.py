"""Corpus-level index assembly: lexicon clusters, term tables and Item trees."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .errors import EmptyCorpus, IndexMissing
from .ingest import Chunk, ChunkingConfig, Filing, item_sort_key
from .lexicon import LexiconClusters, LexiconTerm, TermFrequencyTable, cluster_terms, match_terms
from .trees import IndexConfig, ItemIndex, build_item_index

logger = logging.getLogger(__name__)


@dataclass
class FilingIndex:
    filing_id: str
    items: dict[str, ItemIndex]
    term_table: TermFrequencyTable
    company: str = ""
    fiscal_year: int | None = None

    def item_labels(self) -> list[str]:
        return sorted(self.items, key=item_sort_key)

    def chunk_texts(self) -> dict[str, str]:
        out: dict[str, str] = {}
        for label in self.item_labels():
            out.update(self.items[label].summary.chunk_text())
        return out

    def item_of_chunk(self) -> dict[str, str]:
        return {cid: label for label, idx in self.items.items() for cid in idx.summary.leaf_chunk_ids()}


@dataclass
class CorpusIndex:
    config: IndexConfig
    lexicon: LexiconClusters | None
    filings: dict[str, FilingIndex] = field(default_factory=dict)
    chunking: ChunkingConfig | None = None

    def filing(self, filing_id: str) -> FilingIndex:
        try:
            return self.filings[filing_id]
        except KeyError:
            raise IndexMissing(f"no index for filing {filing_id!r}") from None

    def corpus_term_table(self) -> TermFrequencyTable:
        table = TermFrequencyTable()
        for fid in sorted(self.filings):
            table = table.merged(self.filings[fid].term_table)
        return table

    def config_json(self) -> dict:
        out = {"index": asdict(self.config)}
        if self.chunking is not None:
            out["chunking"] = asdict(self.chunking)
        return out


def group_chunks(chunks: Iterable[Chunk]) -> dict[str, dict[str, list[Chunk]]]:
    """filing_id -> item_label -> chunks (input order preserved)."""
    out: dict[str, dict[str, list[Chunk]]] = {}
    for c in chunks:
        out.setdefault(c.filing_id, {}).setdefault(c.item_label, []).append(c)
    return out


def build_filing_index(
    filing: Filing,
    chunks: Sequence[Chunk],
    lexicon: LexiconClusters | None,
    cfg: IndexConfig,
    provider,
) -> FilingIndex:
    by_item: dict[str, list[Chunk]] = {}
    for c in chunks:
        by_item.setdefault(c.item_label, []).append(c)
    items = {}
    for label in sorted(by_item, key=item_sort_key):
        items[label] = build_item_index(by_item[label], cfg, provider)
    if lexicon is not None:
        table = match_terms(filing, lexicon)
    else:
        table = TermFrequencyTable(items=[it.item_label for it in filing.items])
    # only Items that actually have trees can receive budget
    table.items = [i for i in table.items if i in items]
    logger.info("indexed filing %s: %d items, %d chunks", filing.filing_id, len(items), len(chunks))
    return FilingIndex(filing.filing_id, items, table, filing.company, filing.fiscal_year)


def build_corpus_index(
    filings: Sequence[Filing],
    chunks: Sequence[Chunk],
    lexicon_terms: Sequence[LexiconTerm] | None,
    cfg: IndexConfig,
    provider,
    chunking: ChunkingConfig | None = None,
) -> CorpusIndex:
    """Cluster the lexicon once, then build trees and term tables per filing."""
    if not filings or not chunks:
        raise EmptyCorpus("nothing to index: no filings or no chunks")
    lexicon = cluster_terms(list(lexicon_terms), provider, cfg) if lexicon_terms else None
    grouped = group_chunks(chunks)
    index = CorpusIndex(cfg, lexicon, chunking=chunking)
    for filing in sorted(filings, key=lambda f: f.filing_id):
        fchunks = [c for label in grouped.get(filing.filing_id, {}) for c in grouped[filing.filing_id][label]]
        if not fchunks:
            logger.warning("filing %s has no chunks; skipped", filing.filing_id)
            continue
        index.filings[filing.filing_id] = build_filing_index(filing, fchunks, lexicon, cfg, provider)
    if not index.filings:
        raise EmptyCorpus("no filing produced any chunks")
    return index
