"""Model capabilities behind one interface.

Every call that would normally hit a model (embedding, summarization,
sub-question generation, pair scoring, relevancy judging, answer reading) goes
through a :class:`Provider`. Two implementations ship:

* :class:`StubProvider` -- deterministic, offline, pure functions of the input.
* :class:`RemoteProvider` -- JSON over HTTP. ``POST <endpoint>/<capability>``
  with ``{"inputs": [...], "params": {...}}``, answered by ``{"outputs": [...]}``.
"""
from __future__ import annotations

import hashlib
import logging
import math
import os
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DimensionMismatch, ProviderUnavailable, SpaceMismatch
from .tokens import STOPWORDS, content_tokens, split_paragraphs, split_sentences, tokenize

logger = logging.getLogger(__name__)

SPACES = ("lexicon", "qa")
CAPABILITIES = ("embed", "summarize", "title", "generate_questions", "score_pair", "judge_relevancy", "read_answer")


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    values: np.ndarray
    space_tag: str

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def __eq__(self, other):
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return self.space_tag == other.space_tag and np.array_equal(self.values, other.values)


def check_compatible(a: EmbeddingVector, b: EmbeddingVector) -> None:
    if a.space_tag != b.space_tag:
        raise SpaceMismatch(f"cannot compare {a.space_tag!r} with {b.space_tag!r} embeddings")
    if a.dim != b.dim:
        raise DimensionMismatch(f"dimension {a.dim} != {b.dim}")


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    check_compatible(a, b)
    x = a.values.astype(np.float64)
    y = b.values.astype(np.float64)
    den = float(np.linalg.norm(x) * np.linalg.norm(y))
    return float(x @ y) / den if den > 0 else 0.0


def unit_normalize(mat: np.ndarray) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return (mat / norms).astype(np.float32)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class ProviderConfig:
    mode: str = "stub"
    endpoint: str | None = None
    model_name: str = "stub"
    timeout: float = 30.0
    max_concurrency: int = 4
    retries: int = 2
    dim: int = 768
    seed: int = 0
    api_key: str | None = None
    summary_words: int = 200

    def __post_init__(self):
        if self.mode not in ("stub", "remote"):
            raise ConfigError(f"provider mode must be 'stub' or 'remote', got {self.mode!r}")
        if self.mode == "remote" and not self.endpoint:
            raise ConfigError("remote provider requires an endpoint")
        if self.max_concurrency < 1:
            raise ConfigError("max_concurrency must be >= 1")


def _read_prompt(name: str) -> str:
    return resources.files("sectree").joinpath("prompts").joinpath(name).read_text(encoding="utf-8").strip()


@dataclass(frozen=True)
class PromptTemplates:
    summarize_template: str = field(default_factory=lambda: _read_prompt("summarize.txt"))
    title_template: str = field(default_factory=lambda: _read_prompt("title.txt"))
    question_template: str = field(default_factory=lambda: _read_prompt("question.txt"))

    def __post_init__(self):
        if "{num_questions}" not in self.question_template:
            raise ConfigError("question_template must contain the {num_questions} placeholder")
        for name in ("summarize_template", "title_template"):
            if not getattr(self, name).strip():
                raise ConfigError(f"{name} is empty")

    @classmethod
    def from_dir(cls, path: str | Path) -> "PromptTemplates":
        """Load ``summarize.txt``, ``title.txt`` and ``question.txt``; missing files keep defaults."""
        path = Path(path)
        kw = {}
        for fname, attr in (("summarize.txt", "summarize_template"), ("title.txt", "title_template"), ("question.txt", "question_template")):
            p = path / fname
            if p.exists():
                kw[attr] = p.read_text(encoding="utf-8").strip()
        return cls(**kw)

    def questions_prompt(self, n: int) -> str:
        return self.question_template.replace("{num_questions}", str(n))


# ---------------------------------------------------------------------------
# interface
# ---------------------------------------------------------------------------

class Provider:
    """Capability interface. Subclasses override every method."""

    templates: PromptTemplates

    def embed_texts(self, texts: Sequence[str], space_tag: str) -> list[EmbeddingVector]:
        raise NotImplementedError

    def summarize(self, text: str) -> str:
        raise NotImplementedError

    def make_title(self, summary: str) -> str:
        raise NotImplementedError

    def generate_questions(self, summary: str, n: int) -> list[str]:
        raise NotImplementedError

    def score_pair(self, query: str, passage: str) -> float:
        raise NotImplementedError

    def score_pairs(self, query: str, passages: Sequence[str]) -> list[float]:
        return [self.score_pair(query, p) for p in passages]

    def judge_relevancy(self, query: str, passages: Sequence[str]) -> float:
        raise NotImplementedError

    def read_answer(self, query: str, passages: Sequence[str]) -> str:
        raise NotImplementedError


def _require_texts(texts: Sequence[str]) -> None:
    if not texts:
        raise ValueError("texts must be non-empty")
    for t in texts:
        if not isinstance(t, str) or not t.strip():
            raise ValueError("every text must be a non-empty string")


# ---------------------------------------------------------------------------
# stub
# ---------------------------------------------------------------------------

@lru_cache(maxsize=200_000)
def _hash_feature(space: str, seed: int, token: str, dim: int) -> tuple[int, float]:
    h = int.from_bytes(hashlib.blake2b(f"{space}\x1f{seed}\x1f{token}".encode(), digest_size=8).digest(), "little")
    return h % dim, (1.0 if (h >> 63) & 1 else -1.0)


_QUESTION_FORMS = (
    "What is stated about {t}?",
    "What details are reported about {t}?",
    "How does the filing describe {t}?",
    "What figures relate to {t}?",
    "What changed regarding {t}?",
)


def _has_digit(s: str) -> bool:
    return any(ch.isdigit() for ch in s)


class StubProvider(Provider):
    """Deterministic offline provider.

    * embeddings: signed feature hashing of content tokens into ``dim`` buckets,
      seeded per embedding space, L2-normalized;
    * summaries: first sentence of each paragraph, up to ``summary_words`` words;
    * questions: templated over the most frequent content tokens;
    * pair score: cosine between binary bags of content tokens.
    """

    def __init__(self, config: ProviderConfig | None = None, templates: PromptTemplates | None = None):
        self.config = config or ProviderConfig()
        self.templates = templates or PromptTemplates()

    def _embed_one(self, text: str, space_tag: str) -> np.ndarray:
        dim = self.config.dim
        vec = np.zeros(dim, dtype=np.float64)
        toks = content_tokens(text) or tokenize(text) or [text]
        for tok in toks:
            idx, sign = _hash_feature(space_tag, self.config.seed, tok, dim)
            vec[idx] += sign
        if not vec.any():
            # every token cancelled out; fall back to the raw string
            idx, sign = _hash_feature(space_tag, self.config.seed, text, dim)
            vec[idx] = sign
        return vec

    def embed_texts(self, texts, space_tag):
        _require_texts(texts)
        if space_tag not in SPACES:
            raise ValueError(f"unknown embedding space {space_tag!r}")
        mat = unit_normalize(np.stack([self._embed_one(t, space_tag) for t in texts]))
        return [EmbeddingVector(row, space_tag) for row in mat]

    def summarize(self, text):
        if not text or not text.strip():
            raise ValueError("cannot summarize empty text")
        budget = self.config.summary_words
        picked: list[str] = []
        used = 0
        for para in split_paragraphs(text):
            sents = split_sentences(para)
            if not sents:
                continue
            words = sents[0].split()
            if used + len(words) > budget:
                if not picked:
                    picked.append(" ".join(words[:budget]))
                break
            picked.append(sents[0])
            used += len(words)
        return " ".join(picked) if picked else " ".join(text.split()[:budget])

    def make_title(self, summary):
        toks = [t for t in tokenize(summary) if t not in STOPWORDS][:6]
        return " ".join(t.capitalize() for t in toks) or "Untitled"

    def generate_questions(self, summary, n):
        if n < 1:
            raise ValueError("n must be >= 1")
        toks = [t for t in content_tokens(summary) if not t.replace(".", "").isdigit()]
        if not toks:
            toks = tokenize(summary) or ["this section"]
        counts = Counter(toks)
        first = {}
        for i, t in enumerate(toks):
            first.setdefault(t, i)
        ranked = sorted(counts, key=lambda t: (-counts[t], first[t]))
        out = []
        for i in range(n):
            cycle, j = divmod(i, len(ranked))
            form = _QUESTION_FORMS[cycle % len(_QUESTION_FORMS)]
            q = form.format(t=ranked[j])
            if cycle >= len(_QUESTION_FORMS):
                q = f"{q[:-1]} ({cycle + 1})?"
            out.append(q)
        return out

    def score_pair(self, query, passage):
        if not query.strip() or not passage.strip():
            raise ValueError("query and passage must be non-empty")
        q, p = set(content_tokens(query)), set(content_tokens(passage))
        if not q or not p:
            return 0.0
        return len(q & p) / math.sqrt(len(q) * len(p))

    def judge_relevancy(self, query, passages):
        if not passages:
            raise ValueError("passages must be non-empty")
        scores = [min(1.0, max(0.0, self.score_pair(query, p))) for p in passages]
        return sum(scores) / len(scores)

    def read_answer(self, query, passages):
        """First number-bearing sentence of the best-ranked passage that shares
        a query token and has such a sentence; ``"unknown"`` otherwise."""
        qtoks = set(content_tokens(query))
        for passage in passages:
            if not qtoks & set(content_tokens(passage)):
                continue
            for sent in split_sentences(passage):
                if _has_digit(sent):
                    return sent
        return "unknown"


# ---------------------------------------------------------------------------
# remote
# ---------------------------------------------------------------------------

class RemoteProvider(Provider):
    """JSON-over-HTTP client for the capability contract.

    Transport errors and 5xx responses are retried ``config.retries`` times;
    anything else that is not a 200 raises :class:`ProviderUnavailable`.
    """

    def __init__(self, config: ProviderConfig, templates: PromptTemplates | None = None, transport=None):
        import httpx

        if config.mode != "remote":
            raise ConfigError("RemoteProvider needs mode='remote'")
        self.config = config
        self.templates = templates or PromptTemplates()
        headers = {"Authorization": f"Bearer {config.api_key}"} if config.api_key else {}
        self._client = httpx.Client(
            base_url=config.endpoint.rstrip("/"), timeout=config.timeout, headers=headers, transport=transport
        )
        self._gate = threading.BoundedSemaphore(config.max_concurrency)
        self._httpx = httpx

    def close(self) -> None:
        self._client.close()

    def _call(self, capability: str, inputs: list, params: Mapping[str, Any] | None = None) -> list:
        body = {"inputs": inputs, "params": {"model": self.config.model_name, **(params or {})}}
        last = None
        for attempt in range(self.config.retries + 1):
            try:
                with self._gate:
                    resp = self._client.post(f"/{capability}", json=body)
            except self._httpx.HTTPError as exc:
                last = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code == 200:
                    try:
                        outputs = resp.json()["outputs"]
                    except (ValueError, KeyError, TypeError) as exc:
                        raise ProviderUnavailable(f"{capability}: malformed response ({exc})") from None
                    if not isinstance(outputs, list) or len(outputs) != len(inputs):
                        raise ProviderUnavailable(f"{capability}: expected {len(inputs)} outputs")
                    return outputs
                last = f"HTTP {resp.status_code}"
                if resp.status_code < 500:
                    break
            if attempt < self.config.retries:
                time.sleep(min(0.1 * 2**attempt, 1.0))
        raise ProviderUnavailable(f"{capability} failed: {last}")

    def embed_texts(self, texts, space_tag):
        _require_texts(texts)
        outs = self._call("embed", list(texts), {"space_tag": space_tag})
        try:
            mat = np.asarray(outs, dtype=np.float64)
        except ValueError:
            raise DimensionMismatch("embedding rows have inconsistent lengths") from None
        if mat.ndim != 2 or mat.shape[1] != self.config.dim:
            raise DimensionMismatch(f"expected dimension {self.config.dim}, got shape {mat.shape}")
        if not np.isfinite(mat).all():
            raise ProviderUnavailable("embed: non-finite values")
        return [EmbeddingVector(row, space_tag) for row in unit_normalize(mat)]

    def summarize(self, text):
        if not text or not text.strip():
            raise ValueError("cannot summarize empty text")
        out = str(self._call("summarize", [text], {"prompt": self.templates.summarize_template})[0]).strip()
        if not out:
            raise ProviderUnavailable("summarize: empty summary")
        return out

    def make_title(self, summary):
        return str(self._call("title", [summary], {"prompt": self.templates.title_template})[0]).strip()

    def generate_questions(self, summary, n):
        if n < 1:
            raise ValueError("n must be >= 1")
        params = {"prompt": self.templates.questions_prompt(n), "num_questions": n}
        qs = self._call("generate_questions", [summary], params)[0]
        if not isinstance(qs, list) or len(qs) < n:
            raise ProviderUnavailable(f"generate_questions: expected {n} questions")
        return [str(q) for q in qs[:n]]

    def score_pair(self, query, passage):
        return self.score_pairs(query, [passage])[0]

    def score_pairs(self, query, passages):
        if not passages:
            return []
        return [float(s) for s in self._call("score_pair", [[query, p] for p in passages])]

    def judge_relevancy(self, query, passages):
        if not passages:
            raise ValueError("passages must be non-empty")
        score = float(self._call("judge_relevancy", [{"query": query, "passages": list(passages)}])[0])
        return min(1.0, max(0.0, score))

    def read_answer(self, query, passages):
        return str(self._call("read_answer", [{"query": query, "passages": list(passages)}])[0])


class RoutedProvider(Provider):
    """Dispatch each capability to its own provider, falling back to ``default``."""

    _METHODS = {
        "embed": ("embed_texts",),
        "summarize": ("summarize",),
        "title": ("make_title",),
        "generate_questions": ("generate_questions",),
        "score_pair": ("score_pair", "score_pairs"),
        "judge_relevancy": ("judge_relevancy",),
        "read_answer": ("read_answer",),
    }

    def __init__(self, default: Provider, overrides: Mapping[str, Provider] | None = None):
        self.default = default
        self.templates = default.templates
        self.routes = dict(overrides or {})
        unknown = set(self.routes) - set(CAPABILITIES)
        if unknown:
            raise ConfigError(f"unknown capabilities: {sorted(unknown)}")

    def _for(self, capability: str) -> Provider:
        return self.routes.get(capability, self.default)

    def embed_texts(self, texts, space_tag):
        return self._for("embed").embed_texts(texts, space_tag)

    def summarize(self, text):
        return self._for("summarize").summarize(text)

    def make_title(self, summary):
        return self._for("title").make_title(summary)

    def generate_questions(self, summary, n):
        return self._for("generate_questions").generate_questions(summary, n)

    def score_pair(self, query, passage):
        return self._for("score_pair").score_pair(query, passage)

    def score_pairs(self, query, passages):
        return self._for("score_pair").score_pairs(query, passages)

    def judge_relevancy(self, query, passages):
        return self._for("judge_relevancy").judge_relevancy(query, passages)

    def read_answer(self, query, passages):
        return self._for("read_answer").read_answer(query, passages)


def make_provider(config: ProviderConfig, templates: PromptTemplates | None = None, transport=None) -> Provider:
    if config.mode == "stub":
        return StubProvider(config, templates)
    return RemoteProvider(config, templates, transport=transport)


def apply_env_overrides(config: ProviderConfig, env: Mapping[str, str] | None = None) -> ProviderConfig:
    """``SECTREE_PROVIDER_ENDPOINT`` switches to remote mode; ``SECTREE_API_KEY`` sets the key."""
    env = os.environ if env is None else env
    kw = dict(config.__dict__)
    if env.get("SECTREE_PROVIDER_ENDPOINT"):
        kw["endpoint"] = env["SECTREE_PROVIDER_ENDPOINT"]
        kw["mode"] = "remote"
    if env.get("SECTREE_API_KEY"):
        kw["api_key"] = env["SECTREE_API_KEY"]
    return ProviderConfig(**kw)
