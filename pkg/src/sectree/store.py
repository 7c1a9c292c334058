"""On-disk index format.

Layout of an index directory::

    manifest.json              format version, config, per-Item topology hashes,
                               sha256 of every other file, and its own checksum
    lexicon.json               clustered lexicon (absent when built without one)
    filings/<n>/terms.json     per-filing term frequency table
    filings/<n>/<item>.summary.jsonl
    filings/<n>/<item>.question.jsonl
    filings/<n>/<item>.question.f32

Node tables are JSON Lines, one node per line. Question-tree embeddings live
in a little-endian float32 sidecar; each node row carries its ``offset`` (in
floats) and ``shape`` into that file, which is the offset table. All JSON is
written with sorted keys and no timestamps, so identical builds give
byte-identical directories.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import fields
from pathlib import Path

import numpy as np

from .errors import ChecksumMismatch, IndexMissing, VersionMismatch
from .indexing import CorpusIndex, FilingIndex
from .ingest import ChunkingConfig
from .lexicon import LexiconClusters, TermFrequencyTable
from .trees import IndexConfig, ItemIndex, TreeIndex, TreeNode

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
_F32 = np.dtype("<f4")


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _manifest_digest(manifest: dict) -> str:
    body = {k: v for k, v in manifest.items() if k != "manifest_sha256"}
    return _sha256(_dumps(body).encode("utf-8"))


# ---------------------------------------------------------------------------
# node tables
# ---------------------------------------------------------------------------

def _node_row(node: TreeNode, offset: int | None) -> dict:
    row = {
        "node_id": node.node_id,
        "kind": node.kind,
        "depth": node.depth,
        "children": node.children,
    }
    for name in ("chunk_id", "text", "summary", "title"):
        value = getattr(node, name)
        if value is not None:
            row[name] = value
    if node.questions:
        row["questions"] = node.questions
    if node.embeddings is not None:
        row["offset"] = offset
        row["shape"] = list(node.embeddings.shape)
    return row


def _tree_files(tree: TreeIndex) -> tuple[bytes, bytes]:
    """(jsonl bytes, float32 sidecar bytes) for one tree."""
    lines = [_dumps({"roots": tree.root_ids, "space_tag": tree.space_tag, "kind": tree.kind})]
    blobs: list[bytes] = []
    offset = 0
    for nid in sorted(tree.nodes):
        node = tree.nodes[nid]
        this_offset = None
        if node.embeddings is not None:
            arr = np.ascontiguousarray(node.embeddings, dtype=_F32)
            blobs.append(arr.tobytes())
            this_offset = offset
            offset += arr.size
        lines.append(_dumps(_node_row(node, this_offset)))
    return ("\n".join(lines) + "\n").encode("utf-8"), b"".join(blobs)


def _read_tree(jsonl: bytes, sidecar: bytes | None, filing_id: str, item_label: str) -> TreeIndex:
    rows = [json.loads(line) for line in jsonl.decode("utf-8").splitlines() if line.strip()]
    head, node_rows = rows[0], rows[1:]
    flat = np.frombuffer(sidecar, dtype=_F32) if sidecar else np.zeros(0, dtype=_F32)
    nodes: dict[str, TreeNode] = {}
    for r in node_rows:
        emb = None
        if "shape" in r:
            size = int(np.prod(r["shape"]))
            emb = flat[r["offset"] : r["offset"] + size].reshape(r["shape"]).astype(np.float32)
        nodes[r["node_id"]] = TreeNode(
            node_id=r["node_id"],
            kind=r["kind"],
            depth=r["depth"],
            children=list(r["children"]),
            chunk_id=r.get("chunk_id"),
            text=r.get("text"),
            summary=r.get("summary"),
            title=r.get("title"),
            questions=list(r.get("questions", [])),
            embeddings=emb,
        )
    return TreeIndex(filing_id, item_label, head["kind"], list(head["roots"]), nodes, head.get("space_tag"))


# ---------------------------------------------------------------------------
# save / load
# ---------------------------------------------------------------------------

def save_index(index: CorpusIndex, directory: str | Path, extra: dict | None = None) -> Path:
    """Write ``index`` to ``directory`` (created if needed) and return the manifest path."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    files: dict[str, bytes] = {}
    filings_meta: dict[str, dict] = {}

    if index.lexicon is not None:
        files["lexicon.json"] = _dumps(index.lexicon.to_json()).encode("utf-8")

    for n, fid in enumerate(sorted(index.filings)):
        fidx = index.filings[fid]
        sub = f"filings/{n:05d}"
        files[f"{sub}/terms.json"] = _dumps(fidx.term_table.to_json()).encode("utf-8")
        items_meta = {}
        for label in fidx.item_labels():
            item = fidx.items[label]
            for kind, tree in (("summary", item.summary), ("question", item.question)):
                jsonl, blob = _tree_files(tree)
                files[f"{sub}/{label}.{kind}.jsonl"] = jsonl
                if blob:
                    files[f"{sub}/{label}.{kind}.f32"] = blob
            items_meta[label] = {
                "summary_topology": item.summary.topology_hash(),
                "question_topology": item.question.topology_hash(),
                "nodes": len(item.summary.nodes),
            }
        filings_meta[fid] = {
            "dir": sub,
            "company": fidx.company,
            "fiscal_year": fidx.fiscal_year,
            "items": items_meta,
        }

    for rel, data in files.items():
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)

    manifest = {
        "format_version": FORMAT_VERSION,
        "config": index.config_json(),
        "filings": filings_meta,
        "checksums": {rel: _sha256(data) for rel, data in sorted(files.items())},
        "extra": extra or {},
    }
    manifest["manifest_sha256"] = _manifest_digest(manifest)
    out = root / MANIFEST
    out.write_text(json.dumps(manifest, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    logger.info("saved index with %d filings to %s", len(index.filings), root)
    return out


def read_manifest(directory: str | Path) -> dict:
    path = Path(directory) / MANIFEST
    if not path.is_file():
        raise IndexMissing(f"no index manifest at {path}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ChecksumMismatch(f"manifest is unreadable: {exc}") from exc
    if not isinstance(manifest, dict):
        raise ChecksumMismatch("manifest is not a JSON object")
    version = manifest.get("format_version")
    if not isinstance(version, int) or version > FORMAT_VERSION:
        raise VersionMismatch(f"index format {version!r} is newer than supported version {FORMAT_VERSION}")
    if manifest.get("manifest_sha256") != _manifest_digest(manifest):
        raise ChecksumMismatch("manifest checksum does not match its contents")
    return manifest


def _config_from(d: dict, cls):
    names = {f.name for f in fields(cls)}
    return cls(**{k: v for k, v in d.items() if k in names})


def load_index(directory: str | Path) -> CorpusIndex:
    root = Path(directory)
    manifest = read_manifest(root)
    checksums: dict[str, str] = manifest["checksums"]

    def read(rel: str) -> bytes:
        try:
            data = (root / rel).read_bytes()
        except FileNotFoundError:
            raise ChecksumMismatch(f"index file {rel} is missing") from None
        if _sha256(data) != checksums.get(rel):
            raise ChecksumMismatch(f"checksum mismatch for {rel}")
        return data

    cfg_json = manifest["config"]
    cfg = _config_from(cfg_json["index"], IndexConfig)
    chunking = _config_from(cfg_json["chunking"], ChunkingConfig) if "chunking" in cfg_json else None
    lexicon = None
    if "lexicon.json" in checksums:
        lexicon = LexiconClusters.from_json(json.loads(read("lexicon.json")))

    index = CorpusIndex(cfg, lexicon, chunking=chunking)
    for fid, meta in sorted(manifest["filings"].items()):
        sub = meta["dir"]
        table = TermFrequencyTable.from_json(json.loads(read(f"{sub}/terms.json")))
        items = {}
        for label, imeta in meta["items"].items():
            trees = {}
            for kind in ("summary", "question"):
                side = f"{sub}/{label}.{kind}.f32"
                blob = read(side) if side in checksums else None
                trees[kind] = _read_tree(read(f"{sub}/{label}.{kind}.jsonl"), blob, fid, label)
            item = ItemIndex(trees["summary"], trees["question"])
            if item.summary.topology_hash() != imeta["summary_topology"] or item.question.topology_hash() != imeta["question_topology"]:
                raise ChecksumMismatch(f"topology hash mismatch for {fid} item {label}")
            items[label] = item
        index.filings[fid] = FilingIndex(fid, items, table, meta.get("company", ""), meta.get("fiscal_year"))
    return index
