"""Encoding of programs as one-hot feature graphs.

All ASTs of a dataset share one token dictionary, so identical tokens
(every ``while``, every variable ``d``, every literal ``2``) get the
same one-hot row wherever they appear.  The graph is the undirected
AST: one node per AST node, one edge per parent-child link, plus a
self-loop on every node so a node's own features survive neighborhood
aggregation.

A second, flat dictionary over unique source lines feeds the recurrent
baselines, which see a program as a token sequence instead of a graph.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import lang

UNK_KEY = ("UNK", "")


@dataclass(frozen=True)
class Vocabulary:
    """Bijection token-key <-> one-hot index; index 0 is the UNK fallback."""

    entries: tuple[tuple[str, str], ...]
    _index: dict = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "_index", {key: i for i, key in enumerate(self.entries)})

    @property
    def size(self) -> int:
        return len(self.entries)

    def index_of(self, key: tuple[str, str]) -> int:
        return self._index.get(key, 0)

    def __contains__(self, key) -> bool:
        return key in self._index

    def to_json(self) -> str:
        return json.dumps([list(key) for key in self.entries], separators=(",", ":")) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            entries = tuple(tuple(e) for e in json.load(fh))
        if not entries or entries[0] != UNK_KEY:
            raise ValueError("vocabulary file must start with the UNK entry")
        return cls(entries)

    def sha256(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


def _vocab_from_keys(keys) -> Vocabulary:
    ordered = sorted(set(keys) - {UNK_KEY})
    return Vocabulary(entries=(UNK_KEY, *ordered))


def build_vocab(programs) -> Vocabulary:
    """Token dictionary over every AST node of the given programs."""
    if not programs:
        raise ValueError("need at least one program")
    keys = set()
    for p in programs:
        for node in lang.iter_nodes(p):
            keys.add(lang.token_key(node))
    return _vocab_from_keys(keys)


def program_lines(p: lang.Program) -> list[str]:
    """Stripped source lines, one instruction per entry."""
    return [line.strip() for line in lang.pretty_print(p).splitlines() if line.strip()]


def build_line_vocab(programs) -> Vocabulary:
    """Dictionary of unique instructions (lines) for sequence models."""
    if not programs:
        raise ValueError("need at least one program")
    keys = set()
    for p in programs:
        for line in program_lines(p):
            keys.add(("Line", line))
    return _vocab_from_keys(keys)


def lines_to_indices(p: lang.Program, vocab: Vocabulary) -> np.ndarray:
    return np.array([vocab.index_of(("Line", line)) for line in program_lines(p)], dtype=np.int64)


@dataclass
class FeatureGraph:
    """Undirected one-hot graph of a single program's AST."""

    n_nodes: int
    vocab_size: int
    token_indices: np.ndarray  # (n_nodes,) int64 vocab index per node
    edges: list[tuple[int, int]]  # self-loops (i, i) plus unordered tree edges
    node_origin: dict[int, int]  # graph node -> AST node_id
    _features: np.ndarray = field(default=None, repr=False)
    _directed: tuple = field(default=None, repr=False)

    @property
    def features(self) -> np.ndarray:
        """One-hot {0,1} matrix, n_nodes x vocab_size; each row sums to 1."""
        if self._features is None:
            m = np.zeros((self.n_nodes, self.vocab_size), dtype=np.float64)
            m[np.arange(self.n_nodes), self.token_indices] = 1.0
            self._features = m
        return self._features

    def directed_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """(src, dst) arrays: both directions per tree edge, one per self-loop."""
        if self._directed is None:
            src, dst = [], []
            for u, v in self.edges:
                src.append(u)
                dst.append(v)
                if u != v:
                    src.append(v)
                    dst.append(u)
            self._directed = (np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64))
        return self._directed

    def degrees(self) -> np.ndarray:
        """Neighborhood sizes counting the self-loop once."""
        _, dst = self.directed_edges()
        return np.bincount(dst, minlength=self.n_nodes).astype(np.float64)

    def tree_edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u, v in self.edges if u != v]


@dataclass
class BatchedGraph:
    """Block-diagonal union of member graphs; no cross-graph edges."""

    n_nodes: int
    vocab_size: int
    token_indices: np.ndarray
    edges: list[tuple[int, int]]
    node_origin: dict[int, int]
    graph_id: np.ndarray  # (n_nodes,) member index per node
    n_graphs: int
    offsets: np.ndarray  # (n_graphs,) first node of each member
    _directed: tuple = field(default=None, repr=False)

    directed_edges = FeatureGraph.directed_edges
    degrees = FeatureGraph.degrees
    tree_edges = FeatureGraph.tree_edges

    @property
    def features(self) -> np.ndarray:
        m = np.zeros((self.n_nodes, self.vocab_size), dtype=np.float64)
        m[np.arange(self.n_nodes), self.token_indices] = 1.0
        return m


def ast_to_graph(p: lang.Program, vocab: Vocabulary) -> FeatureGraph:
    """One graph node per AST node; guard expressions are decomposed.

    Graph node index i corresponds to the AST node with node_id i
    (pre-order), so node_origin is the identity.  Unknown tokens map to
    the UNK row.
    """
    nodes = list(lang.iter_nodes(p))
    nodes.sort(key=lambda n: n.node_id)
    n = len(nodes)
    tokens = np.array([vocab.index_of(lang.token_key(node)) for node in nodes], dtype=np.int64)
    edges = [(i, i) for i in range(n)]
    for node in nodes:
        for child in lang.children(node):
            edges.append((node.node_id, child.node_id))
    origin = {i: i for i in range(n)}
    return FeatureGraph(n_nodes=n, vocab_size=vocab.size, token_indices=tokens, edges=edges, node_origin=origin)


def batch(graphs: list[FeatureGraph]) -> BatchedGraph:
    """Disjoint union with node indices offset per member graph."""
    if not graphs:
        raise ValueError("cannot batch an empty list of graphs")
    vocab_size = graphs[0].vocab_size
    if any(g.vocab_size != vocab_size for g in graphs):
        raise ValueError("all graphs in a batch must share one vocabulary")
    offsets = np.cumsum([0] + [g.n_nodes for g in graphs[:-1]]).astype(np.int64)
    tokens = np.concatenate([g.token_indices for g in graphs])
    edges = []
    origin = {}
    graph_id = np.empty(int(tokens.shape[0]), dtype=np.int64)
    for k, (g, off) in enumerate(zip(graphs, offsets)):
        off = int(off)
        edges.extend((u + off, v + off) for u, v in g.edges)
        for node, ast_id in g.node_origin.items():
            origin[node + off] = ast_id
        graph_id[off : off + g.n_nodes] = k
    return BatchedGraph(
        n_nodes=int(tokens.shape[0]),
        vocab_size=vocab_size,
        token_indices=tokens,
        edges=edges,
        node_origin=origin,
        graph_id=graph_id,
        n_graphs=len(graphs),
        offsets=offsets,
    )


def as_batch(g) -> BatchedGraph:
    if isinstance(g, BatchedGraph):
        return g
    return batch([g])
