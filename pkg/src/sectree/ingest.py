"""Markdown filing parsing, Item segmentation and fixed-window chunking."""
from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DuplicateItem, EmptyCorpus, NoItemsFound
from .tokens import tokenize, tokenize_spans

logger = logging.getLogger(__name__)

# A heading is either a markdown heading mentioning "Item N" or a bare line that
# starts with "Item N" followed by punctuation or the end of the line. The bare
# form is stricter so prose like "Item 7 discusses ..." is not split on.
DEFAULT_HEADING_PATTERN = (
    r"^[ \t]*(?:"
    r"\#{1,6}[ \t]*[*_]{0,2}[ \t]*item[ \t]+(?P<h>\d{1,2}[a-z]?)\b"
    r"|[*_]{0,2}item[ \t]+(?P<b>\d{1,2}[a-z]?)(?=[ \t]*(?:[.:\-–—]|[*_]|$))"
    r")(?P<rest>[^\n]*)$"
)


@dataclass(frozen=True)
class ItemSection:
    item_label: str
    title: str
    body: str
    char_span: tuple[int, int]

    @property
    def body_hash(self) -> str:
        return hashlib.sha256(self.body.encode("utf-8")).hexdigest()


@dataclass
class Filing:
    filing_id: str
    items: list[ItemSection]
    company: str = ""
    fiscal_year: int | None = None
    source_path: str = ""
    warnings: list[str] = field(default_factory=list)

    def item(self, label: str) -> ItemSection:
        for it in self.items:
            if it.item_label == label:
                return it
        raise KeyError(label)

    @property
    def item_labels(self) -> list[str]:
        return [it.item_label for it in self.items]


@dataclass(frozen=True)
class ChunkingConfig:
    chunk_tokens: int = 2000
    overlap_tokens: int = 100
    tokenizer: str = "word"

    def __post_init__(self):
        if self.chunk_tokens <= 0:
            raise ValueError("chunk_tokens must be positive")
        if not 0 <= self.overlap_tokens < self.chunk_tokens:
            raise ValueError("overlap_tokens must satisfy 0 <= overlap < chunk_tokens")

    @property
    def stride(self) -> int:
        return self.chunk_tokens - self.overlap_tokens


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    filing_id: str
    item_label: str
    text: str
    token_count: int
    token_span: tuple[int, int]

    def to_json(self) -> dict:
        d = asdict(self)
        d["token_span"] = list(self.token_span)
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> "Chunk":
        return cls(
            chunk_id=d["chunk_id"],
            filing_id=d.get("filing_id") or d["chunk_id"].split("/")[0],
            item_label=d["item_label"],
            text=d["text"],
            token_count=int(d.get("token_count", d["token_span"][1] - d["token_span"][0])),
            token_span=(int(d["token_span"][0]), int(d["token_span"][1])),
        )


def item_sort_key(label: str):
    """Natural SEC ordering: 1 < 1A < 1B < 2 < ... < 7A < 8 < 10."""
    m = re.fullmatch(r"(\d+)([A-Za-z]*)", label)
    if m:
        return (0, int(m.group(1)), m.group(2).upper(), "")
    return (1, 0, "", label)


def _clean_title(rest: str) -> str:
    return rest.strip().strip("*_").strip(" .:-–—\t").strip("*_ ")


def parse_filing(
    source: str,
    filing_id: str,
    *,
    strict: bool = False,
    heading_pattern: str = DEFAULT_HEADING_PATTERN,
    company: str = "",
    fiscal_year: int | None = None,
    source_path: str = "",
) -> Filing:
    """Split a markdown filing into its Item sections.

    Headings with an empty body (table-of-contents entries) are dropped. When a
    label occurs twice the first non-empty occurrence wins, unless ``strict``.
    """
    if "/" in filing_id:
        raise ValueError(f"filing_id may not contain '/': {filing_id!r}")
    pattern = re.compile(heading_pattern, re.IGNORECASE | re.MULTILINE)
    heads = list(pattern.finditer(source))
    if not heads:
        raise NoItemsFound(f"{filing_id}: no Item headings found")

    warnings: list[str] = []
    sections: list[ItemSection] = []
    seen: set[str] = set()
    for i, m in enumerate(heads):
        label = (m.group("h") or m.group("b")).upper()
        start = m.end()
        end = heads[i + 1].start() if i + 1 < len(heads) else len(source)
        raw = source[start:end]
        body = raw.strip()
        if not body:
            continue
        if label in seen:
            msg = f"{filing_id}: duplicate Item {label} at offset {m.start()}"
            if strict:
                raise DuplicateItem(msg)
            warnings.append(msg)
            logger.warning(msg)
            continue
        seen.add(label)
        lead = len(raw) - len(raw.lstrip())
        span = (start + lead, start + lead + len(body))
        sections.append(ItemSection(label, _clean_title(m.group("rest")), body, span))

    if not sections:
        raise NoItemsFound(f"{filing_id}: Item headings found but every body is empty")
    return Filing(filing_id, sections, company, fiscal_year, source_path, warnings)


def render_filing(filing: Filing) -> str:
    """Inverse of :func:`parse_filing` up to whitespace."""
    parts = []
    for it in filing.items:
        title = f" {it.title}" if it.title else ""
        parts.append(f"## Item {it.item_label}.{title}\n\n{it.body}\n")
    return "\n".join(parts)


def chunk_item(section: ItemSection, cfg: ChunkingConfig, filing_id: str = "") -> list[Chunk]:
    spans = tokenize_spans(section.body, cfg.tokenizer)
    n = len(spans)
    chunks: list[Chunk] = []
    start = 0
    while start < n:
        end = min(start + cfg.chunk_tokens, n)
        text = section.body[spans[start][1] : spans[end - 1][2]]
        chunks.append(
            Chunk(
                chunk_id=f"{filing_id}/{section.item_label}/{len(chunks)}",
                filing_id=filing_id,
                item_label=section.item_label,
                text=text,
                token_count=end - start,
                token_span=(start, end),
            )
        )
        if end == n:
            break
        start += cfg.stride
    return chunks


def chunk_filing(filing: Filing, cfg: ChunkingConfig) -> list[Chunk]:
    out: list[Chunk] = []
    for it in filing.items:
        out.extend(chunk_item(it, cfg, filing.filing_id))
    return out


# ---------------------------------------------------------------------------
# corpus directories
# ---------------------------------------------------------------------------

def load_corpus(corpus_dir: str | Path, *, strict: bool = False, manifest: str | Path | None = None) -> list[Filing]:
    """Parse every filing in ``corpus_dir``.

    Filing ids default to the file stem. A ``manifest.json`` in the directory
    (or the explicit ``manifest`` path) maps ``filing_id -> {company, year, path}``.
    """
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {corpus_dir}")
    manifest_path = Path(manifest) if manifest else corpus_dir / "manifest.json"
    entries: dict[str, dict] = {}
    if manifest_path.exists():
        with open(manifest_path, encoding="utf-8") as fh:
            for fid, meta in json.load(fh).items():
                entries[fid] = dict(meta)
    else:
        for p in sorted(corpus_dir.glob("*.md")):
            entries[p.stem] = {"path": p.name}

    filings = []
    for fid in sorted(entries):
        meta = entries[fid]
        path = Path(meta.get("path", f"{fid}.md"))
        if not path.is_absolute():
            path = corpus_dir / path
        text = path.read_text(encoding="utf-8")
        year = meta.get("year")
        # keep outputs independent of where the corpus lives on disk
        try:
            shown = path.relative_to(corpus_dir).as_posix()
        except ValueError:
            shown = str(path)
        filings.append(
            parse_filing(
                text,
                fid,
                strict=strict,
                company=meta.get("company", ""),
                fiscal_year=int(year) if year is not None else None,
                source_path=shown,
            )
        )
    return filings


def write_chunks_jsonl(chunks: Iterable[Chunk], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for c in chunks:
            fh.write(json.dumps(c.to_json(), sort_keys=True, ensure_ascii=False) + "\n")


def read_chunks_jsonl(path: str | Path) -> list[Chunk]:
    with open(path, encoding="utf-8") as fh:
        return [Chunk.from_json(json.loads(line)) for line in fh if line.strip()]


def write_sections_jsonl(filings: Iterable[Filing], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for f in filings:
            for it in f.items:
                row = {
                    "filing_id": f.filing_id,
                    "company": f.company,
                    "fiscal_year": f.fiscal_year,
                    "source_path": f.source_path,
                    "item_label": it.item_label,
                    "title": it.title,
                    "body": it.body,
                    "char_span": list(it.char_span),
                }
                fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def read_sections_jsonl(path: str | Path) -> list[Filing]:
    filings: dict[str, Filing] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            f = filings.get(d["filing_id"])
            if f is None:
                f = filings[d["filing_id"]] = Filing(
                    d["filing_id"], [], d.get("company", ""), d.get("fiscal_year"), d.get("source_path", "")
                )
            f.items.append(ItemSection(d["item_label"], d["title"], d["body"], tuple(d["char_span"])))
    return [filings[k] for k in sorted(filings)]


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StatRow:
    min: float
    mean: float
    max: float


@dataclass
class CorpusStats:
    n_filings: int
    rows: dict[str, StatRow]

    def to_json(self) -> dict:
        return {"n_filings": self.n_filings, "rows": {k: asdict(v) for k, v in self.rows.items()}}


def _row(values: Sequence[float]) -> StatRow:
    return StatRow(float(min(values)), float(sum(values) / len(values)), float(max(values)))


def _mean(xs: Sequence[float]) -> float:
    return sum(xs) / len(xs) if xs else 0.0


def corpus_stats(
    filings: Sequence[Filing],
    chunks: Sequence[Chunk],
    indices=None,
    queries: Sequence[str] | None = None,
    tokenizer: str = "word",
) -> CorpusStats:
    """Per-filing structural and token statistics, aggregated as min/mean/max.

    ``indices`` is an optional mapping ``filing_id -> FilingIndex``; tree rows
    are only reported when it is given. Query token counts are a corpus-level
    quantity and reported per query rather than per filing.
    """
    if not filings:
        raise EmptyCorpus("corpus has no filings")
    by_filing: dict[str, list[Chunk]] = {}
    for c in chunks:
        by_filing.setdefault(c.filing_id, []).append(c)

    per: dict[str, list[float]] = {}

    def add(name: str, value: float) -> None:
        per.setdefault(name, []).append(float(value))

    for f in filings:
        fchunks = by_filing.get(f.filing_id, [])
        add("item_count", len(f.items))
        add("chunk_count", len(fchunks))
        add("tokens_per_item", _mean([len(tokenize(it.body, tokenizer)) for it in f.items]))
        add("tokens_per_page_node", _mean([c.token_count for c in fchunks]))
        if indices is not None and f.filing_id in indices:
            fidx = indices[f.filing_id]
            depths, n_total, n_internal, n_leaf, summ_tokens = [], 0, 0, 0, []
            for item in fidx.items.values():
                tree = item.summary
                depths.append(tree.max_depth())
                for node in tree.nodes.values():
                    n_total += 1
                    if node.is_leaf:
                        n_leaf += 1
                    else:
                        n_internal += 1
                        summ_tokens.append(len(tokenize(node.summary or "", tokenizer)))
            add("tree_depth_max", max(depths) if depths else 0)
            add("tree_depth_mean", _mean(depths))
            add("total_node_count", n_total)
            add("internal_node_count", n_internal)
            add("leaf_node_count", n_leaf)
            add("tokens_per_summary_node", _mean(summ_tokens))
        else:
            add("leaf_node_count", len(fchunks))

    rows = {name: _row(vals) for name, vals in per.items()}
    if queries:
        rows["tokens_per_query"] = _row([len(tokenize(q, tokenizer)) for q in queries])
    return CorpusStats(len(filings), rows)
