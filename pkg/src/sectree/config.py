"""Application configuration loaded from a single TOML file.

Example::

    seed = 0
    corpus_dir = "corpus"          # relative paths resolve against the file
    index_dir = "index"
    run_dir = "runs"
    lexicon = "lexicon.txt"
    depths = [5, 10, 15]

    [chunking]
    chunk_tokens = 2000
    overlap_tokens = 100

    [index]
    reduced_dim = 10
    max_depth = 2

    [bm25]
    k1 = 1.5
    b = 0.75

    [traversal]
    child_budget_b = 3

    [retrieval]
    strategy = "relative_frequency"
    scope = "filing"

    [providers.default]
    mode = "stub"

    [providers.score_pair]          # optional per-capability override
    mode = "remote"
    endpoint = "http://localhost:8080"

Every section and key is optional. ``SECTREE_PROVIDER_ENDPOINT`` and
``SECTREE_API_KEY`` override the default provider's endpoint and key.
"""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .errors import ConfigError
from .ingest import ChunkingConfig
from .providers import (
    CAPABILITIES,
    PromptTemplates,
    Provider,
    ProviderConfig,
    RoutedProvider,
    apply_env_overrides,
    make_provider,
)
from .retrieval import Bm25Params, RetrievalSettings, TraversalConfig
from .trees import IndexConfig


@dataclass
class AppConfig:
    corpus_dir: Path | None = None
    index_dir: Path | None = None
    run_dir: Path = Path("runs")
    lexicon: Path | None = None
    prompts_dir: Path | None = None
    seed: int = 0
    depths: tuple[int, ...] = (5, 10, 15)
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    index: IndexConfig = field(default_factory=IndexConfig)
    bm25: Bm25Params = field(default_factory=Bm25Params)
    traversal: TraversalConfig = field(default_factory=TraversalConfig)
    strategy: str = "relative_frequency"
    scope: str = "filing"
    budget_method: str = "largest_remainder"
    providers: dict[str, ProviderConfig] = field(default_factory=lambda: {"default": ProviderConfig()})

    def with_seed(self, seed: int) -> "AppConfig":
        """Propagate ``seed`` to the index builder and the stub providers."""
        provs = {name: replace(p, seed=seed) for name, p in self.providers.items()}
        return replace(self, seed=seed, index=replace(self.index, seed=seed), providers=provs)

    def retrieval_settings(self, ablations=(), strategy: str | None = None) -> RetrievalSettings:
        return RetrievalSettings(
            bm25=self.bm25,
            traversal=self.traversal,
            strategy=strategy or self.strategy,
            scope=self.scope,
            budget_method=self.budget_method,
            ablations=tuple(ablations),
        )

    def build_provider(self, transport=None) -> Provider:
        templates = PromptTemplates.from_dir(self.prompts_dir) if self.prompts_dir else None
        default = make_provider(apply_env_overrides(self.providers["default"]), templates, transport)
        overrides = {
            cap: make_provider(cfg, templates, transport) for cap, cfg in self.providers.items() if cap != "default"
        }
        return RoutedProvider(default, overrides) if overrides else default

    def to_json(self) -> dict:
        def plain(v):
            if isinstance(v, Path):
                return str(v)
            if isinstance(v, tuple):
                return list(v)
            return v

        return {
            "corpus_dir": plain(self.corpus_dir),
            "index_dir": plain(self.index_dir),
            "run_dir": plain(self.run_dir),
            "lexicon": plain(self.lexicon),
            "prompts_dir": plain(self.prompts_dir),
            "seed": self.seed,
            "depths": list(self.depths),
            "chunking": asdict(self.chunking),
            "index": asdict(self.index),
            "bm25": asdict(self.bm25),
            "traversal": asdict(self.traversal),
            "strategy": self.strategy,
            "scope": self.scope,
            "budget_method": self.budget_method,
            # never write secrets into run manifests
            "providers": {k: {**asdict(v), "api_key": None} for k, v in sorted(self.providers.items())},
        }


def _section(cls, data: Mapping[str, Any] | None, name: str):
    if data is None:
        return cls()
    if not isinstance(data, Mapping):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{name}]: {exc}") from exc


_TOP_KEYS = {
    "corpus_dir", "index_dir", "run_dir", "lexicon", "prompts_dir", "seed", "depths",
    "chunking", "index", "bm25", "traversal", "retrieval", "providers",
}


def config_from_dict(data: Mapping[str, Any], base_dir: Path | None = None) -> AppConfig:
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    base = base_dir or Path.cwd()

    def path(key: str) -> Path | None:
        v = data.get(key)
        if v is None:
            return None
        p = Path(v)
        return p if p.is_absolute() else base / p

    retrieval = dict(data.get("retrieval", {}))
    unknown = set(retrieval) - {"strategy", "scope", "budget_method"}
    if unknown:
        raise ConfigError(f"unknown keys in [retrieval]: {sorted(unknown)}")
    providers_raw = data.get("providers", {})
    providers = {"default": ProviderConfig()}
    for name, section in providers_raw.items():
        if name != "default" and name not in CAPABILITIES:
            raise ConfigError(f"unknown provider capability {name!r}; expected one of {CAPABILITIES}")
        providers[name] = _section(ProviderConfig, section, f"providers.{name}")

    depths = data.get("depths", [5, 10, 15])
    if not depths or any(not isinstance(d, int) or d < 1 for d in depths):
        raise ConfigError("depths must be a non-empty list of positive integers")
    cfg = AppConfig(
        corpus_dir=path("corpus_dir"),
        index_dir=path("index_dir"),
        run_dir=path("run_dir") or base / "runs",
        lexicon=path("lexicon"),
        prompts_dir=path("prompts_dir"),
        seed=int(data.get("seed", 0)),
        depths=tuple(depths),
        chunking=_section(ChunkingConfig, data.get("chunking"), "chunking"),
        index=_section(IndexConfig, data.get("index"), "index"),
        bm25=_section(Bm25Params, data.get("bm25"), "bm25"),
        traversal=_section(TraversalConfig, data.get("traversal"), "traversal"),
        strategy=retrieval.get("strategy", "relative_frequency"),
        scope=retrieval.get("scope", "filing"),
        budget_method=retrieval.get("budget_method", "largest_remainder"),
        providers=providers,
    )
    try:
        cfg.retrieval_settings()
        from .lexicon import canonical_strategy

        canonical_strategy(cfg.strategy)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.with_seed(cfg.seed) if "seed" in data else cfg


def load_config(path: str | Path | None) -> AppConfig:
    """Read a TOML config; ``None`` gives the defaults."""
    if path is None:
        return AppConfig()
    p = Path(path)
    try:
        with open(p, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {p}: {exc}") from exc
    return config_from_dict(data, p.parent.resolve())
