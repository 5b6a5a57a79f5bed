"""Labeled graphs over the mode alphabet: feedback trees and De Bruijn graphs.

An edge ``(a, b, i)`` means "from node ``a``, mode ``i`` leads to node ``b``".
Nodes of generated graphs are words (tuples of ints); user-supplied graphs may
use any hashable identifiers.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

from .model import word_from_str, word_to_str

NODE_CAP = 100_000

FTG = "ftg"
DEBRUIJN = "debruijn"
CUSTOM = "custom"


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class GraphKind:
    name: str = CUSTOM
    order: int | None = None

    def __post_init__(self):
        if self.name not in (FTG, DEBRUIJN, CUSTOM):
            raise GraphError(f"unknown graph kind {self.name!r}")
        if self.name == FTG and (self.order is None or self.order < 0):
            raise GraphError("feedback-tree order must be >= 0")
        if self.name == DEBRUIJN and (self.order is None or self.order < 1):
            raise GraphError("De Bruijn order must be >= 1")


@dataclass(frozen=True, eq=False)
class LabeledGraph:
    """Directed graph with edges labeled by modes ``1..alphabet_size``.

    ``nodes`` is ordered; that order is the tie-break order used elsewhere.
    """

    alphabet_size: int
    nodes: tuple
    edges: tuple
    kind: GraphKind = field(default_factory=GraphKind)

    def __post_init__(self):
        if self.alphabet_size < 1:
            raise GraphError("alphabet size must be >= 1")
        nodes = tuple(self.nodes)
        index = {}
        for pos, s in enumerate(nodes):
            if s in index:
                raise GraphError(f"duplicate node {s!r}")
            index[s] = pos
        edges = tuple((a, b, int(i)) for a, b, i in self.edges)
        for a, b, i in edges:
            if a not in index or b not in index:
                raise GraphError(f"edge {(a, b, i)} has an endpoint outside the node set")
            if not 1 <= i <= self.alphabet_size:
                raise GraphError(f"edge {(a, b, i)} has label outside 1..{self.alphabet_size}")
        succ = {}
        for a, b, i in edges:
            succ.setdefault((a, i), []).append(b)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_succ", succ)

    def index(self, node) -> int:
        return self._index[node]

    def targets(self, node, label):
        return self._succ.get((node, label), [])

    def __len__(self):
        return len(self.nodes)

    def __contains__(self, node):
        return node in self._index

    @property
    def is_ftg(self) -> bool:
        return self.kind.name == FTG

    @property
    def order(self):
        return self.kind.order

    def initial_node(self):
        """Start state for automaton walks: the empty word of an FTG, else the first node."""
        if self.is_ftg:
            return ()
        return self.nodes[0]

    def __repr__(self):
        return (
            f"LabeledGraph(kind={self.kind.name}, order={self.kind.order}, "
            f"nodes={len(self.nodes)}, edges={len(self.edges)})"
        )


def _check_size(count, cap):
    if count > cap:
        raise GraphError(f"graph would have {count} nodes, above the cap of {cap}")


def ftg_node_count(M, T):
    return T + 1 if M == 1 else (M ** (T + 1) - 1) // (M - 1)


def build_ftg(M: int, T: int, cap: int = NODE_CAP) -> LabeledGraph:
    """Feedback-tree graph of order ``T`` on ``M`` modes.

    Nodes are all words of length at most ``T``, ordered by length then
    lexicographically. A word shorter than ``T`` moves to itself extended by the
    read mode; a word of length ``T`` resets to the empty word.
    """
    if M < 1 or T < 0:
        raise GraphError(f"need M >= 1 and T >= 0, got M={M}, T={T}")
    _check_size(ftg_node_count(M, T), cap)
    alphabet = range(1, M + 1)
    nodes = [w for length in range(T + 1) for w in itertools.product(alphabet, repeat=length)]
    edges = [
        (w, w + (i,) if len(w) < T else (), i) for w in nodes for i in alphabet
    ]
    return LabeledGraph(M, tuple(nodes), tuple(edges), GraphKind(FTG, T))


def build_debruijn(M: int, T: int, cap: int = NODE_CAP) -> LabeledGraph:
    """De Bruijn graph of order ``T``: reading ``j`` at ``(i0, ..., i_{T-1})`` leads to
    ``(j, i0, ..., i_{T-2})`` through an edge labeled ``j``.
    """
    if M < 1 or T < 1:
        raise GraphError(f"need M >= 1 and T >= 1, got M={M}, T={T}")
    _check_size(M**T, cap)
    alphabet = range(1, M + 1)
    nodes = list(itertools.product(alphabet, repeat=T))
    edges = [(w, (j,) + w[:-1], j) for w in nodes for j in alphabet]
    return LabeledGraph(M, tuple(nodes), tuple(edges), GraphKind(DEBRUIJN, T))


def build_graph(kind: str, M: int, order: int, cap: int = NODE_CAP) -> LabeledGraph:
    if kind == FTG:
        return build_ftg(M, order, cap)
    if kind == DEBRUIJN:
        return build_debruijn(M, order, cap)
    raise GraphError(f"cannot build a graph of kind {kind!r}")


def is_complete(G: LabeledGraph) -> bool:
    return all(
        G.targets(a, i) for a in G.nodes for i in range(1, G.alphabet_size + 1)
    )


def is_deterministic(G: LabeledGraph) -> bool:
    return all(len(targets) <= 1 for targets in G._succ.values())


def successor(G: LabeledGraph, node, label):
    """Unique target of ``(node, label)``."""
    targets = G.targets(node, label)
    if not targets:
        raise GraphError(f"no edge labeled {label} leaves node {node!r}")
    if len(targets) > 1:
        raise GraphError(f"node {node!r} has {len(targets)} edges labeled {label}")
    return targets[0]


def successor_table(G: LabeledGraph):
    """``table[node_index][label - 1]`` = index of the successor node."""
    return [
        [G.index(successor(G, s, i)) for i in range(1, G.alphabet_size + 1)] for s in G.nodes
    ]


def node_key(node) -> str:
    """Serialize a node for JSON: words as digit strings, anything else via ``str``."""
    if isinstance(node, tuple):
        return word_to_str(node)
    return str(node)


def parse_node(text: str):
    try:
        return word_from_str(text)
    except ValueError:
        return text


def graph_to_dict(G: LabeledGraph) -> dict:
    data = {
        "alphabet_size": G.alphabet_size,
        "nodes": [node_key(s) for s in G.nodes],
        "edges": [[G.index(a), G.index(b), i] for a, b, i in G.edges],
    }
    if G.kind.name != CUSTOM:
        data["kind"] = G.kind.name
        data["order"] = G.kind.order
    return data


def graph_from_dict(data: dict) -> LabeledGraph:
    try:
        M = int(data["alphabet_size"])
        names = list(data["nodes"])
        raw_edges = data["edges"]
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphError(f"malformed graph document: {exc}") from exc
    nodes = [parse_node(str(s)) for s in names]
    try:
        edges = [(nodes[a], nodes[b], int(i)) for a, b, i in raw_edges]
    except (IndexError, TypeError, ValueError) as exc:
        raise GraphError(f"malformed edge list: {exc}") from exc
    kind = GraphKind(data.get("kind", CUSTOM), data.get("order"))
    return LabeledGraph(M, tuple(nodes), tuple(edges), kind)


def save_graph(G: LabeledGraph, path) -> None:
    Path(path).write_text(json.dumps(graph_to_dict(G)) + "\n", encoding="utf-8")


def load_graph(path) -> LabeledGraph:
    return graph_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
