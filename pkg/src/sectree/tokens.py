"""Deterministic tokenizers.

Every tokenizer is registered under a name so configs can refer to it. A rule
maps text to ``(token, start, end)`` triples; the character offsets let the
chunker slice the original text back out.
"""
from __future__ import annotations

import re
from functools import lru_cache
from typing import Callable, Iterator

import snowballstemmer

from .errors import UnknownTokenizer

Span = tuple[str, int, int]

# decimals stay whole ("7.0"), everything else splits on non-alphanumerics
_WORD_RE = re.compile(r"\d+(?:\.\d+)+|[^\W_]+")
_WS_RE = re.compile(r"\S+")
_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+(?=[A-Z0-9$(\"'])")

STOPWORDS = frozenset(
    """
    a about above after again against all am an and any are as at be because
    been before being below between both but by can could did do does doing
    down during each few for from further had has have having he her here hers
    him his how i if in into is it its itself just me more most my no nor not
    now of off on once only or other our ours out over own same she should so
    some such than that the their theirs them then there these they this those
    through to too under until up very was we were what when where which while
    who whom why will with would you your yours
    """.split()
)


def _whitespace(text: str) -> Iterator[Span]:
    for m in _WS_RE.finditer(text):
        yield m.group(), m.start(), m.end()


def _word(text: str) -> Iterator[Span]:
    for m in _WORD_RE.finditer(text):
        yield m.group().lower(), m.start(), m.end()


@lru_cache(maxsize=1)
def _stemmer():
    return snowballstemmer.stemmer("english")


@lru_cache(maxsize=200_000)
def _stem_word(word: str) -> str:
    return _stemmer().stemWord(word)


def _stem(text: str) -> Iterator[Span]:
    for tok, s, e in _word(text):
        yield _stem_word(tok), s, e


_REGISTRY: dict[str, Callable[[str], Iterator[Span]]] = {
    "whitespace": _whitespace,
    "word": _word,
    "stem": _stem,
}


def register_tokenizer(name: str, rule: Callable[[str], Iterator[Span]]) -> None:
    _REGISTRY[name] = rule


def tokenizer_names() -> list[str]:
    return sorted(_REGISTRY)


def tokenize_spans(text: str, rule: str = "word") -> list[Span]:
    try:
        fn = _REGISTRY[rule]
    except KeyError:
        raise UnknownTokenizer(f"unknown tokenizer {rule!r}; known: {tokenizer_names()}") from None
    return list(fn(text))


def tokenize(text: str, rule: str = "word") -> list[str]:
    """Split ``text`` into tokens with the named rule.

    >>> tokenize("CET1 ratio: 7.0%")
    ['cet1', 'ratio', '7.0']
    """
    return [t for t, _, _ in tokenize_spans(text, rule)]


def content_tokens(text: str) -> list[str]:
    """Word tokens with stopwords removed."""
    return [t for t in tokenize(text, "word") if t not in STOPWORDS]


def split_sentences(text: str) -> list[str]:
    text = " ".join(text.split())
    if not text:
        return []
    return [s.strip() for s in _SENTENCE_RE.split(text) if s.strip()]


def split_paragraphs(text: str) -> list[str]:
    return [p.strip() for p in re.split(r"\n\s*\n", text) if p.strip()]
