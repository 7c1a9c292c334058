"""Synthetic filings with planted evidence.

Every filing has Items 1, 1A, 7 and 8 written in digit-free pseudo-word
filler. Each Item leans on one lexicon family (its own family's terms appear
often, the others rarely), so term counts point at the right Item. A query's
answer sentence is planted as its own paragraph in one Item and names two
codewords that occur nowhere else in the corpus; the query names the same
codewords plus a term from that Item's family. This gives exact ground truth
for retrieval and for the answer reader.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .evaluation import GoldRecord, write_gold_jsonl
from .ingest import ChunkingConfig, Filing, parse_filing

ITEMS = ("1", "1A", "7", "8")
ITEM_TITLES = {
    "1": "Business",
    "1A": "Risk Factors",
    "7": "Management's Discussion and Analysis of Financial Condition and Results of Operations",
    "8": "Financial Statements and Supplementary Data",
}
LEXICON_FAMILIES = {
    "1": ("business segment", "business model", "business strategy"),
    "1A": ("risk factor", "risk exposure", "risk oversight"),
    "7": ("liquidity position", "operating liquidity", "liquidity outlook"),
    "8": ("financial statement", "statement audit", "statement schedule"),
}
# planted Item for the i-th query of a filing
PLANT_ORDER = ("7", "1A", "8", "1", "7")
SYNTHETIC_CHUNKING = ChunkingConfig(chunk_tokens=80, overlap_tokens=10)

_FILLER_ONSETS = ["b", "d", "f", "g", "l", "m", "n", "p", "r", "s", "t", "v", "br", "st", "pl", "tr"]
_FILLER_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou"]
# codewords use letters absent from filler, so they can never collide with it
_CODE_ONSETS = ["k", "z", "x", "q", "kr", "zw", "xh", "qu"]
_CODE_VOWELS = ["y", "a", "o", "e"]
_METRICS = ("ratio", "margin", "yield", "coverage", "spread", "rate")


@dataclass
class PlantedQuery:
    record: GoldRecord
    item_label: str
    sentence: str


@dataclass
class SyntheticCorpus:
    markdown: dict[str, str]
    filings: list[Filing]
    lexicon: list[str]
    queries: list[PlantedQuery] = field(default_factory=list)
    companies: dict[str, tuple[str, int]] = field(default_factory=dict)

    @property
    def gold(self) -> list[GoldRecord]:
        return [q.record for q in self.queries]


def _word(rng: random.Random, onsets, vowels, syllables: int) -> str:
    return "".join(rng.choice(onsets) + rng.choice(vowels) for _ in range(syllables))


def _filler_vocab(rng: random.Random, size: int = 400) -> list[str]:
    vocab: set[str] = set()
    while len(vocab) < size:
        vocab.add(_word(rng, _FILLER_ONSETS, _FILLER_VOWELS, rng.randint(2, 3)))
    return sorted(vocab)


class _Codes:
    def __init__(self, rng: random.Random):
        self.rng = rng
        self.used: set[str] = set()

    def next(self) -> str:
        while True:
            w = _word(self.rng, _CODE_ONSETS, _CODE_VOWELS, 3)
            if w not in self.used:
                self.used.add(w)
                return w


def _sentence(rng: random.Random, vocab: list[str], term: str | None) -> str:
    words = [rng.choice(vocab) for _ in range(rng.randint(6, 10))]
    if term:
        words.insert(rng.randint(1, len(words) - 1), term)
    s = " ".join(words)
    return s[0].upper() + s[1:] + "."


def _paragraph(rng: random.Random, vocab: list[str], label: str) -> str:
    sents = []
    for _ in range(rng.randint(2, 4)):
        roll = rng.random()
        if roll < 0.45:
            term = rng.choice(LEXICON_FAMILIES[label])
        elif roll < 0.5:
            other = rng.choice([i for i in ITEMS if i != label])
            term = rng.choice(LEXICON_FAMILIES[other])
        else:
            term = None
        sents.append(_sentence(rng, vocab, term))
    return " ".join(sents)


def _answer(rng: random.Random) -> str:
    style = rng.random()
    if style < 0.5:
        return f"{rng.randint(10, 999) / 10:.1f}%"
    if style < 0.8:
        return f"${rng.randint(1000, 99999):,} million"
    return f"{rng.randint(100, 9999) / 100:.2f}"


def make_planted_corpus(n_filings: int = 20, queries_per_filing: int = 5, seed: int = 0, paragraphs_per_item: tuple[int, int] = (14, 20)) -> SyntheticCorpus:
    """Build ``n_filings`` filings with ``queries_per_filing`` planted answers each."""
    rng = random.Random(seed)
    vocab = _filler_vocab(rng)
    codes = _Codes(rng)
    corpus = SyntheticCorpus({}, [], [t for label in ITEMS for t in LEXICON_FAMILIES[label]])
    for f in range(n_filings):
        fid = f"synth{f:03d}"
        company = f"{_word(rng, _FILLER_ONSETS, _FILLER_VOWELS, 2).capitalize()} Holdings"
        year = 2015 + f % 8
        bodies = {label: [_paragraph(rng, vocab, label) for _ in range(rng.randint(*paragraphs_per_item))] for label in ITEMS}
        planted: list[tuple[str, str, str, str]] = []
        for q in range(queries_per_filing):
            label = PLANT_ORDER[q % len(PLANT_ORDER)]
            c1, c2 = codes.next(), codes.next()
            metric = _METRICS[q % len(_METRICS)]
            answer = _answer(rng)
            sentence = f"The {c1} {c2} {metric} was {answer}."
            paras = bodies[label]
            paras.insert(rng.randint(1, len(paras) - 1), sentence)
            term = rng.choice(LEXICON_FAMILIES[label])
            question = f"What was the {c1} {c2} {metric} noted in the {term} discussion?"
            planted.append((label, sentence, question, answer))
        parts = [f"# {company} Annual Report {year}", "", "## Table of Contents", ""]
        parts += [f"Item {label}. {ITEM_TITLES[label]}" for label in ITEMS]
        parts.append("")
        for label in ITEMS:
            parts += [f"## Item {label}. {ITEM_TITLES[label]}", ""]
            for para in bodies[label]:
                parts += [para, ""]
        md = "\n".join(parts)
        corpus.markdown[fid] = md
        corpus.companies[fid] = (company, year)
        corpus.filings.append(parse_filing(md, fid, company=company, fiscal_year=year, source_path=f"{fid}.md"))
        for q, (label, sentence, question, answer) in enumerate(planted):
            rec = GoldRecord(
                qid=f"{fid}-q{q}",
                question=question,
                filing_id=fid,
                answer=answer,
                qtype="numerical",
                hops="simple" if q % 2 == 0 else "complex",
                gold_text=sentence,
            )
            corpus.queries.append(PlantedQuery(rec, label, sentence))
    return corpus


def write_planted_corpus(corpus: SyntheticCorpus, out_dir: str | Path) -> dict[str, Path]:
    """Write ``corpus/*.md`` + ``corpus/manifest.json``, ``lexicon.txt`` and ``gold.jsonl``."""
    out = Path(out_dir)
    cdir = out / "corpus"
    cdir.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for fid, md in sorted(corpus.markdown.items()):
        (cdir / f"{fid}.md").write_text(md, encoding="utf-8")
        company, year = corpus.companies[fid]
        manifest[fid] = {"company": company, "year": year, "path": f"{fid}.md"}
    (cdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    lex = out / "lexicon.txt"
    lex.write_text("\n".join(corpus.lexicon) + "\n", encoding="utf-8")
    gold = out / "gold.jsonl"
    write_gold_jsonl(corpus.gold, gold)
    return {"corpus": cdir, "lexicon": lex, "gold": gold}
