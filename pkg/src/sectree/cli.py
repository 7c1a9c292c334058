"""Command-line entry points.

    sectree [--config FILE] [--seed N] ingest       [--corpus DIR] [--out DIR]
    sectree [--config FILE] [--seed N] build-index  [--ingest DIR] [--index DIR]
    sectree [--config FILE] [--seed N] query        --filing ID [--k 5] TEXT
    sectree [--config FILE] [--seed N] eval         --gold FILE [--depths 5,10,15]
    sectree make-synthetic OUT [--filings 20] [--queries 5]

Exit status: 0 on success, 2 for usage/config/input errors, 3 when a model
provider fails.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import AppConfig, load_config
from .errors import ConfigError, ProviderUnavailable, SectreeError
from .evaluation import read_gold_jsonl, run_eval
from .indexing import build_corpus_index
from .ingest import (
    corpus_stats,
    chunk_filing,
    load_corpus,
    read_chunks_jsonl,
    read_sections_jsonl,
    write_chunks_jsonl,
    write_sections_jsonl,
)
from .lexicon import canonical_strategy, load_lexicon
from .retrieval import ABLATIONS, normalize_ablations, render_result_table, retrieve
from .store import load_index, save_index

logger = logging.getLogger("sectree")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PROVIDER = 3


class UsageError(SectreeError):
    pass


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _run_manifest(out: Path, command: str, cfg: AppConfig, **extra) -> None:
    _write_json(
        out / "run-manifest.json",
        {"command": command, "version": __version__, "seed": cfg.seed, "config": cfg.to_json(), **extra},
    )


def _require(value, what: str):
    if value is None:
        raise UsageError(f"{what} is not set (pass it on the command line or in the config file)")
    return value


def _ablations(values) -> list[str]:
    names = []
    for v in values or ():
        names.extend(x for x in v.split(",") if x)
    try:
        return normalize_ablations(names)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _strategy(cfg: AppConfig, value: str | None) -> str:
    try:
        return canonical_strategy(value or cfg.strategy)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_ingest(args, cfg: AppConfig) -> int:
    corpus = Path(args.corpus) if args.corpus else _require(cfg.corpus_dir, "corpus directory")
    out = Path(args.out) if args.out else cfg.run_dir / "ingest"
    filings = load_corpus(corpus, strict=args.strict)
    chunks = [c for f in filings for c in chunk_filing(f, cfg.chunking)]
    out.mkdir(parents=True, exist_ok=True)
    write_sections_jsonl(filings, out / "sections.jsonl")
    write_chunks_jsonl(chunks, out / "chunks.jsonl")
    _write_json(out / "stats.json", corpus_stats(filings, chunks).to_json())
    _run_manifest(out, "ingest", cfg, corpus_dir=str(corpus), n_filings=len(filings), n_chunks=len(chunks))
    for f in filings:
        for w in f.warnings:
            logger.warning("%s: %s", f.filing_id, w)
    print(f"ingested {len(filings)} filings, {len(chunks)} chunks -> {out}")
    return EXIT_OK


def cmd_build_index(args, cfg: AppConfig) -> int:
    ingest_dir = Path(args.ingest) if args.ingest else cfg.run_dir / "ingest"
    index_dir = Path(args.index) if args.index else (cfg.index_dir or cfg.run_dir / "index")
    sections, chunk_file = ingest_dir / "sections.jsonl", ingest_dir / "chunks.jsonl"
    if not sections.is_file() or not chunk_file.is_file():
        raise FileNotFoundError(f"{ingest_dir} has no sections.jsonl/chunks.jsonl; run `sectree ingest` first")
    filings = read_sections_jsonl(sections)
    chunks = read_chunks_jsonl(chunk_file)
    lexicon_path = Path(args.lexicon) if args.lexicon else cfg.lexicon
    terms = load_lexicon(lexicon_path) if lexicon_path else None
    if terms is None:
        logger.warning("no lexicon configured; Item weights will be uniform")
    provider = cfg.build_provider()
    index = build_corpus_index(filings, chunks, terms, cfg.index, provider, cfg.chunking)
    save_index(index, index_dir, extra={"seed": cfg.seed})
    stats = corpus_stats(filings, chunks, index.filings)
    _write_json(index_dir / "stats.json", stats.to_json())
    _run_manifest(index_dir, "build-index", cfg, ingest_dir=str(ingest_dir))
    n_items = sum(len(f.items) for f in index.filings.values())
    print(f"indexed {len(index.filings)} filings, {n_items} items -> {index_dir}")
    return EXIT_OK


def _index_dir(args, cfg: AppConfig) -> Path:
    return Path(args.index) if args.index else (cfg.index_dir or cfg.run_dir / "index")


def cmd_query(args, cfg: AppConfig) -> int:
    if args.k < 1:
        raise UsageError("--k must be a positive integer")
    ablations = _ablations(args.ablate)
    settings = cfg.retrieval_settings(ablations, _strategy(cfg, args.weighting))
    index = load_index(_index_dir(args, cfg))
    provider = cfg.build_provider()
    corpus_table = index.corpus_term_table() if settings.scope == "corpus" else None
    result = retrieve(
        args.text,
        index.filing(args.filing),
        args.k,
        provider,
        lexicon=index.lexicon,
        settings=settings,
        corpus_table=corpus_table,
    )
    if args.format == "json":
        print(json.dumps(result.to_json(), indent=2, sort_keys=True, ensure_ascii=False))
    else:
        print(render_result_table(result))
    return EXIT_OK


def cmd_eval(args, cfg: AppConfig) -> int:
    try:
        depths = [int(d) for d in args.depths.split(",")] if args.depths else list(cfg.depths)
    except ValueError:
        raise UsageError(f"--depths must be comma-separated integers, got {args.depths!r}") from None
    if not depths or min(depths) < 1:
        raise UsageError("--depths must be positive integers")
    ablations = _ablations(args.ablate)
    settings = cfg.retrieval_settings(ablations, _strategy(cfg, args.weighting))
    gold_path = Path(args.gold)
    if not gold_path.is_file():
        raise FileNotFoundError(f"gold file not found: {gold_path}")
    records = read_gold_jsonl(gold_path)
    index_dir = _index_dir(args, cfg)
    index = load_index(index_dir)
    label = "+".join(ablations) if ablations else "full"
    if args.weighting:
        label += f" [{settings.strategy}]"
    report = run_eval(records, index, cfg.build_provider(), depths, settings, label)
    suffix = ("-" + "-".join(ablations)) if ablations else ""
    if args.weighting:
        suffix += f"-{settings.strategy}"
    out = Path(args.out) if args.out else cfg.run_dir / f"eval{suffix}"
    _write_json(out / "report.json", report.to_json())
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    _run_manifest(out, "eval", cfg, gold=str(gold_path), index_dir=str(index_dir), ablations=ablations, depths=depths)
    print(report.to_text(), end="")
    print(f"report -> {out}")
    return EXIT_OK


def cmd_make_synthetic(args, cfg: AppConfig) -> int:
    from .synthetic import SYNTHETIC_CHUNKING, make_planted_corpus, write_planted_corpus

    corpus = make_planted_corpus(args.filings, args.queries, seed=args.seed if args.seed is not None else 0)
    out = Path(args.out)
    paths = write_planted_corpus(corpus, out)
    (out / "sectree.toml").write_text(
        "\n".join(
            [
                'corpus_dir = "corpus"',
                'lexicon = "lexicon.txt"',
                'run_dir = "runs"',
                'index_dir = "runs/index"',
                "",
                "[chunking]",
                f"chunk_tokens = {SYNTHETIC_CHUNKING.chunk_tokens}",
                f"overlap_tokens = {SYNTHETIC_CHUNKING.overlap_tokens}",
                "",
            ]
        ),
        encoding="utf-8",
    )
    print(f"wrote {len(corpus.filings)} filings and {len(corpus.gold)} gold queries to {out}")
    print(f"gold file: {paths['gold']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sectree", description="Structure-aware retrieval over itemized filings.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="TOML config file")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse filings into Items and chunks")
    p.add_argument("--corpus", help="directory of markdown filings")
    p.add_argument("--out", help="output directory (default: <run_dir>/ingest)")
    p.add_argument("--strict", action="store_true", help="fail on duplicate Item headings")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-index", help="cluster the lexicon and build Item trees")
    p.add_argument("--ingest", help="directory written by `ingest`")
    p.add_argument("--index", help="index output directory")
    p.add_argument("--lexicon", help="lexicon file (txt or CSV)")
    p.set_defaults(func=cmd_build_index)

    ablate_help = f"disable a module: {', '.join(ABLATIONS)} (repeatable or comma-separated)"

    p = sub.add_parser("query", help="retrieve evidence for one question")
    p.add_argument("text", help="query text")
    p.add_argument("--filing", required=True, help="filing id to search")
    p.add_argument("--k", type=int, default=5, help="number of chunks to return")
    p.add_argument("--index", help="index directory")
    p.add_argument("--format", choices=("json", "text"), default="json")
    p.add_argument("--ablate", action="append", help=ablate_help)
    p.add_argument("--weighting", help="relative_frequency | logarithmic | softmax")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="score retrieval and answers against gold records")
    p.add_argument("--gold", required=True, help="gold JSON Lines file")
    p.add_argument("--depths", help="comma-separated depths (default from config: 5,10,15)")
    p.add_argument("--index", help="index directory")
    p.add_argument("--out", help="report directory")
    p.add_argument("--ablate", action="append", help=ablate_help)
    p.add_argument("--weighting", help="relative_frequency | logarithmic | softmax")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("make-synthetic", help="write a planted-evidence demo corpus")
    p.add_argument("out", help="output directory")
    p.add_argument("--filings", type=int, default=20)
    p.add_argument("--queries", type=int, default=5, help="planted queries per filing")
    p.set_defaults(func=cmd_make_synthetic)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level={0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        return args.func(args, cfg)
    except ProviderUnavailable as exc:
        print(f"error: provider failure: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (SectreeError, OSError, ValueError) as exc:
        kind = "config error" if isinstance(exc, ConfigError) else "error"
        print(f"{kind}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
