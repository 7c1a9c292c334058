"""Per-Item Summary and Question trees.

Both trees share one topology. Leaves reference chunks; internal nodes are
soft clusters of the level below. Summary-tree internal nodes hold a summary
of their children; Question-tree internal nodes hold generated sub-questions
and their embeddings. Question-tree leaves keep the chunk embedding so leaf
selection can use the same dense signal as the levels above.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import EmptyItem
from .gmm import drop_constant_columns, fit_gmm, reduce_dims, soft_assign
from .ingest import Chunk

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IndexConfig:
    reduced_dim: int = 10
    gmm_max_components: int = 50
    responsibility_threshold: float = 0.1
    max_depth: int = 2
    questions_per_node: int = 5
    em_max_iters: int = 200
    em_tol: float = 1e-4
    seed: int = 0
    summary_input_words: int = 4000

    def __post_init__(self):
        if not 0 < self.responsibility_threshold < 1:
            raise ValueError("responsibility_threshold must lie in (0, 1)")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.questions_per_node < 1:
            raise ValueError("questions_per_node must be >= 1")


@dataclass
class TreeNode:
    node_id: str
    kind: str  # "internal" | "leaf"
    depth: int = 0
    children: list[str] = field(default_factory=list)
    chunk_id: str | None = None
    text: str | None = None  # leaf text (summary tree)
    summary: str | None = None  # internal (summary tree)
    title: str | None = None
    questions: list[str] = field(default_factory=list)  # internal (question tree)
    embeddings: np.ndarray | None = None  # question tree: (n_questions, d) or leaf (1, d)

    @property
    def is_leaf(self) -> bool:
        return self.kind == "leaf"

    def __eq__(self, other):
        if not isinstance(other, TreeNode):
            return NotImplemented
        plain = ("node_id", "kind", "depth", "children", "chunk_id", "text", "summary", "title", "questions")
        if any(getattr(self, a) != getattr(other, a) for a in plain):
            return False
        if (self.embeddings is None) != (other.embeddings is None):
            return False
        return self.embeddings is None or (
            self.embeddings.dtype == other.embeddings.dtype and np.array_equal(self.embeddings, other.embeddings)
        )


@dataclass
class TreeIndex:
    filing_id: str
    item_label: str
    kind: str  # "summary" | "question"
    root_ids: list[str]
    nodes: dict[str, TreeNode]
    space_tag: str | None = None

    def node(self, node_id: str) -> TreeNode:
        return self.nodes[node_id]

    def leaves(self) -> list[TreeNode]:
        return [n for n in self.nodes.values() if n.is_leaf]

    def leaf_chunk_ids(self) -> set[str]:
        return {n.chunk_id for n in self.leaves()}

    def parent_map(self) -> dict[str, list[str]]:
        parents: dict[str, list[str]] = {}
        for n in self.nodes.values():
            for c in n.children:
                parents.setdefault(c, []).append(n.node_id)
        return parents

    def max_depth(self) -> int:
        return max((n.depth for n in self.nodes.values()), default=0)

    def topology_hash(self) -> str:
        doc = {
            "roots": self.root_ids,
            "children": {nid: n.children for nid, n in sorted(self.nodes.items())},
            "leaves": {nid: n.chunk_id for nid, n in sorted(self.nodes.items()) if n.is_leaf},
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def chunk_text(self) -> dict[str, str]:
        return {n.chunk_id: n.text for n in self.leaves() if n.text is not None}


@dataclass
class ItemIndex:
    summary: TreeIndex
    question: TreeIndex

    @property
    def item_label(self) -> str:
        return self.summary.item_label


def _node_text(node: TreeNode) -> str:
    return node.text if node.is_leaf else (node.summary or "")


def _truncate_words(text: str, n: int) -> str:
    words = text.split()
    return text if len(words) <= n else " ".join(words[:n])


def _assign_depths(nodes: dict[str, TreeNode], roots: Sequence[str]) -> None:
    frontier = list(roots)
    depth = 0
    seen: set[str] = set()
    while frontier:
        nxt = []
        for nid in frontier:
            if nid in seen:
                continue
            seen.add(nid)
            nodes[nid].depth = depth
            nxt.extend(nodes[nid].children)
        frontier = nxt
        depth += 1


def build_summary_tree(chunks: Sequence[Chunk], cfg: IndexConfig, provider) -> TreeIndex:
    """Cluster an Item's chunks bottom-up into at most ``cfg.max_depth`` levels.

    Each round embeds the current level (chunk text or node summary) in the
    ``qa`` space, reduces it, fits a mixture and soft-assigns. Every distinct
    member set becomes an internal node. Rounds stop early once a level has a
    single node, or when clustering would only wrap each node in its own parent.
    """
    if not chunks:
        raise EmptyItem("cannot build a tree for an Item with no chunks")
    filing_id, item_label = chunks[0].filing_id, chunks[0].item_label
    nodes: dict[str, TreeNode] = {}
    level: list[str] = []
    for i, c in enumerate(chunks):
        nid = f"L{i}"
        nodes[nid] = TreeNode(nid, "leaf", chunk_id=c.chunk_id, text=c.text)
        level.append(nid)

    for rnd in range(1, cfg.max_depth):
        if len(level) <= 1:
            break
        texts = [_node_text(nodes[nid]) for nid in level]
        mat = np.stack([v.values for v in provider.embed_texts(texts, "qa")]).astype(np.float64)
        x = drop_constant_columns(reduce_dims(mat, cfg.reduced_dim, cfg.seed + rnd))
        model = fit_gmm(x, cfg, seed=cfg.seed + rnd)
        memberships = soft_assign(model, x, cfg.responsibility_threshold)
        groups: dict[int, list[int]] = {}
        for idx, comps in enumerate(memberships):
            for comp in comps:
                groups.setdefault(comp, []).append(idx)
        member_sets = sorted({tuple(v) for v in groups.values()})
        if len(member_sets) == len(level) and all(len(s) == 1 for s in member_sets):
            break
        new_level = []
        for j, members in enumerate(member_sets):
            nid = f"N{rnd}.{j}"
            kids = [level[m] for m in members]
            joined = "\n\n".join(_node_text(nodes[k]) for k in kids)
            summary = provider.summarize(_truncate_words(joined, cfg.summary_input_words))
            nodes[nid] = TreeNode(nid, "internal", children=kids, summary=summary, title=provider.make_title(summary))
            new_level.append(nid)
        level = new_level

    _assign_depths(nodes, level)
    return TreeIndex(filing_id, item_label, "summary", list(level), nodes)


def build_question_tree(summary_tree: TreeIndex, provider, cfg: IndexConfig) -> TreeIndex:
    """Mirror ``summary_tree``'s topology with sub-questions at internal nodes."""
    nodes: dict[str, TreeNode] = {}
    leaf_ids = [nid for nid, n in summary_tree.nodes.items() if n.is_leaf]
    leaf_vecs = provider.embed_texts([summary_tree.nodes[nid].text for nid in leaf_ids], "qa")
    leaf_emb = dict(zip(leaf_ids, leaf_vecs))
    for nid, src in summary_tree.nodes.items():
        if src.is_leaf:
            emb = leaf_emb[nid].values.astype(np.float32)[None, :]
            nodes[nid] = TreeNode(nid, "leaf", depth=src.depth, chunk_id=src.chunk_id, embeddings=emb)
        else:
            qs = provider.generate_questions(src.summary, cfg.questions_per_node)
            emb = np.stack([v.values for v in provider.embed_texts(qs, "qa")]).astype(np.float32)
            nodes[nid] = TreeNode(nid, "internal", depth=src.depth, children=list(src.children), questions=qs, embeddings=emb)
    return TreeIndex(summary_tree.filing_id, summary_tree.item_label, "question", list(summary_tree.root_ids), nodes, "qa")


def build_item_index(chunks: Sequence[Chunk], cfg: IndexConfig, provider) -> ItemIndex:
    summary = build_summary_tree(chunks, cfg, provider)
    return ItemIndex(summary, build_question_tree(summary, provider, cfg))


def render_tree(tree: TreeIndex) -> str:
    """Indented text printout of a tree (titles for internal nodes, chunk ids at leaves)."""
    lines: list[str] = []

    def walk(nid: str, indent: int) -> None:
        n = tree.nodes[nid]
        if n.is_leaf:
            lines.append("  " * indent + f"- {n.chunk_id}")
            return
        label = n.title or n.node_id
        extra = f", #qn={len(n.questions)}" if n.questions else ""
        lines.append("  " * indent + f"{label} (#children={len(n.children)}{extra})")
        for c in n.children:
            walk(c, indent + 1)

    for r in tree.root_ids:
        walk(r, 0)
    return "\n".join(lines)


def copy_tree(tree: TreeIndex) -> TreeIndex:
    """Deep copy of the node table (lists and embedding arrays included)."""
    nodes = {
        k: replace(
            v,
            children=list(v.children),
            questions=list(v.questions),
            embeddings=None if v.embeddings is None else v.embeddings.copy(),
        )
        for k, v in tree.nodes.items()
    }
    return replace(tree, root_ids=list(tree.root_ids), nodes=nodes)
