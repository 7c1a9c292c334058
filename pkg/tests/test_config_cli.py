import json
from pathlib import Path

import pytest

from sectree.cli import main
from sectree.config import AppConfig, config_from_dict, load_config
from sectree.errors import ConfigError
from sectree.providers import RemoteProvider, RoutedProvider, StubProvider
from sectree.store import load_index, read_manifest


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A small synthetic workspace taken through ingest and build-index."""
    root = tmp_path_factory.mktemp("ws")
    cfg = root / "sectree.toml"
    assert main(["make-synthetic", str(root), "--filings", "3", "--queries", "5"]) == 0
    assert main(["--config", str(cfg), "ingest"]) == 0
    assert main(["--config", str(cfg), "build-index"]) == 0
    return root


# -- config -----------------------------------------------------------------------

def test_defaults():
    cfg = load_config(None)
    assert cfg.chunking.chunk_tokens == 2000 and cfg.chunking.overlap_tokens == 100
    assert cfg.bm25.k1 == 1.5 and cfg.bm25.b == 0.75
    assert cfg.traversal.child_budget_b == 3
    assert cfg.depths == (5, 10, 15)
    assert isinstance(cfg.build_provider(), StubProvider)


def test_toml_parsing_and_relative_paths(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text(
        'seed = 3\ncorpus_dir = "docs"\n[bm25]\nk1 = 1.2\n[retrieval]\nstrategy = "softmax"\n'
        '[providers.score_pair]\nmode = "remote"\nendpoint = "http://localhost:1"\n'
    )
    cfg = load_config(p)
    assert cfg.corpus_dir == tmp_path.resolve() / "docs"
    assert cfg.bm25.k1 == 1.2 and cfg.strategy == "softmax"
    assert cfg.index.seed == 3 and cfg.providers["default"].seed == 3
    prov = cfg.build_provider()
    assert isinstance(prov, RoutedProvider)


@pytest.mark.parametrize(
    "data",
    [
        {"nonsense": 1},
        {"bm25": {"k3": 1}},
        {"bm25": {"b": 2.0}},
        {"chunking": {"chunk_tokens": 10, "overlap_tokens": 10}},
        {"retrieval": {"strategy": "cubic"}},
        {"providers": {"translate": {"mode": "stub"}}},
        {"providers": {"default": {"mode": "remote"}}},
        {"depths": [0]},
    ],
)
def test_config_errors(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_bad_toml(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("seed = [")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")


def test_env_override(monkeypatch):
    monkeypatch.setenv("SECTREE_PROVIDER_ENDPOINT", "http://localhost:9")
    monkeypatch.setenv("SECTREE_API_KEY", "secret")
    cfg = AppConfig()
    prov = cfg.build_provider()
    assert isinstance(prov, RemoteProvider)
    assert "secret" not in json.dumps(cfg.to_json())


# -- ingest -------------------------------------------------------------------------

def test_ingest_outputs(workspace):
    ingest = workspace / "runs" / "ingest"
    chunks = [json.loads(l) for l in (ingest / "chunks.jsonl").read_text().splitlines()]
    assert chunks and {"chunk_id", "filing_id", "item_label", "text"} <= set(chunks[0])
    assert json.loads((ingest / "run-manifest.json").read_text())["command"] == "ingest"


def test_ingest_rerun_is_byte_identical(workspace, tmp_path, capsys):
    cfg = workspace / "sectree.toml"
    code, _, _ = _run(capsys, "--config", cfg, "ingest", "--out", tmp_path / "again")
    assert code == 0
    for name in ("chunks.jsonl", "sections.jsonl"):
        assert (tmp_path / "again" / name).read_bytes() == (workspace / "runs" / "ingest" / name).read_bytes()


def test_ingest_missing_corpus(tmp_path, capsys):
    code, _, err = _run(capsys, "ingest", "--corpus", tmp_path / "nope", "--out", tmp_path / "o")
    assert code == 2 and "error" in err


def test_ingest_without_corpus_setting(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, _, err = _run(capsys, "ingest")
    assert code == 2 and "corpus directory" in err


# -- build-index ----------------------------------------------------------------------

def test_build_index_loads(workspace):
    index = load_index(workspace / "runs" / "index")
    assert len(index.filings) == 3
    assert index.lexicon is not None


def test_build_index_is_reproducible(workspace, tmp_path, capsys):
    cfg = workspace / "sectree.toml"
    code, _, _ = _run(capsys, "--config", cfg, "build-index", "--index", tmp_path / "idx2")
    assert code == 0
    a = read_manifest(workspace / "runs" / "index")
    b = read_manifest(tmp_path / "idx2")
    assert a == b


def test_build_index_without_ingest(tmp_path, capsys):
    code, _, err = _run(capsys, "build-index", "--ingest", tmp_path, "--index", tmp_path / "i")
    assert code == 2 and "ingest" in err


def test_build_index_empty_chunks(tmp_path, capsys):
    (tmp_path / "sections.jsonl").write_text("")
    (tmp_path / "chunks.jsonl").write_text("")
    code, _, err = _run(capsys, "build-index", "--ingest", tmp_path, "--index", tmp_path / "i")
    assert code == 2 and "error" in err


# -- query ---------------------------------------------------------------------------

def _first_gold(workspace):
    return json.loads((workspace / "gold.jsonl").read_text().splitlines()[0])


def test_query_finds_planted_chunk(workspace, capsys):
    g = _first_gold(workspace)
    code, out, _ = _run(capsys, "--config", workspace / "sectree.toml", "query", g["question"], "--filing", g["filing_id"])
    assert code == 0
    payload = json.loads(out)
    assert 1 <= len(payload["results"]) <= 5
    assert any(g["gold_text"] in r["text"] for r in payload["results"])
    assert abs(sum(payload["item_weights"].values()) - 1) < 1e-9


def test_query_text_format_and_ablation(workspace, capsys):
    g = _first_gold(workspace)
    code, out, _ = _run(
        capsys, "--config", workspace / "sectree.toml", "query", g["question"], "--filing", g["filing_id"],
        "--format", "text", "--ablate", "no-reranker", "--k", "3",
    )
    assert code == 0 and "rank" in out


def test_query_bad_k(workspace, capsys):
    g = _first_gold(workspace)
    code, _, err = _run(capsys, "--config", workspace / "sectree.toml", "query", "x", "--filing", g["filing_id"], "--k", "0")
    assert code == 2


def test_query_unknown_filing_and_ablation(workspace, capsys):
    cfg = workspace / "sectree.toml"
    assert _run(capsys, "--config", cfg, "query", "x", "--filing", "nope")[0] == 2
    assert _run(capsys, "--config", cfg, "query", "x", "--filing", "synth000", "--ablate", "no-magic")[0] == 2


def test_query_missing_index(tmp_path, capsys):
    code, _, _ = _run(capsys, "query", "x", "--filing", "a", "--index", tmp_path)
    assert code == 2


# -- eval -------------------------------------------------------------------------------

def test_eval_report(workspace, capsys):
    cfg = workspace / "sectree.toml"
    code, out, _ = _run(capsys, "--config", cfg, "eval", "--gold", workspace / "gold.jsonl")
    assert code == 0
    assert "Top-5" in out and "Top-10" in out and "Top-15" in out
    report = json.loads((workspace / "runs" / "eval" / "report.json").read_text())
    assert sorted(report["rows"], key=int) == ["5", "10", "15"]
    assert report["label"] == "full"


def test_eval_ablation_and_weighting_labels(workspace, capsys):
    cfg = workspace / "sectree.toml"
    code, out, _ = _run(capsys, "--config", cfg, "eval", "--gold", workspace / "gold.jsonl",
                        "--ablate", "no-flam", "--weighting", "logarithmic", "--depths", "5")
    assert code == 0
    path = workspace / "runs" / "eval-no-flam-logarithmic" / "report.json"
    report = json.loads(path.read_text())
    assert report["label"].startswith("no-flam") and report["depths"] == [5]


def test_eval_bad_depths(workspace, capsys):
    cfg = workspace / "sectree.toml"
    assert _run(capsys, "--config", cfg, "eval", "--gold", workspace / "gold.jsonl", "--depths", "5,x")[0] == 2
    assert _run(capsys, "--config", cfg, "eval", "--gold", workspace / "missing.jsonl")[0] == 2


def test_provider_failure_exit_code(workspace, capsys, monkeypatch):
    monkeypatch.setenv("SECTREE_PROVIDER_ENDPOINT", "http://127.0.0.1:9")
    g = _first_gold(workspace)
    cfg = workspace / "sectree.toml"
    code, _, err = _run(capsys, "--config", cfg, "query", g["question"], "--filing", g["filing_id"])
    assert code == 3 and "provider" in err
