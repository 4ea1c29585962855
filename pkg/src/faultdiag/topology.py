"""Undirected network topology: node identities, file parsing, reachability.

Node labels are opaque strings (dotted-quad labels work fine); each node also
gets a dense ordinal in declaration order, which is what every deterministic
tie-break in the simulator keys on.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable, Sequence


class TopologyError(ValueError):
    """Malformed topology input or invalid node lookup."""


@dataclass(frozen=True, order=True)
class NodeId:
    ordinal: int
    label: str


@dataclass(frozen=True)
class ValidationReport:
    node_count: int
    disconnected: bool
    fully_connected: bool
    too_small: bool

    @property
    def flags(self) -> tuple[str, ...]:
        out = []
        if self.disconnected:
            out.append("disconnected")
        if self.fully_connected:
            out.append("fully-connected")
        if self.too_small:
            out.append("too-small")
        return tuple(out)


class Topology:
    """Immutable undirected graph. Adjacency is symmetric with no self-loops."""

    __slots__ = ("_labels", "_index", "_adj")

    def __init__(self, labels: Sequence[str], edges: Iterable[tuple[str, str]]):
        labels = list(labels)
        index: dict[str, int] = {}
        for i, label in enumerate(labels):
            if label in index:
                raise TopologyError(f"duplicate node label {label!r}")
            if not label or any(c.isspace() for c in label) or ":" in label or "," in label:
                raise TopologyError(f"invalid node label {label!r}")
            index[label] = i
        adj: list[set[int]] = [set() for _ in labels]
        for a, b in edges:
            if a not in index:
                raise TopologyError(f"edge references undeclared node {a!r}")
            if b not in index:
                raise TopologyError(f"edge references undeclared node {b!r}")
            if a == b:
                raise TopologyError(f"self-loop on node {a!r}")
            adj[index[a]].add(index[b])
            adj[index[b]].add(index[a])
        self._labels = tuple(labels)
        self._index = index
        self._adj = tuple(tuple(sorted(s)) for s in adj)

    @property
    def n(self) -> int:
        return len(self._labels)

    @property
    def labels(self) -> tuple[str, ...]:
        return self._labels

    def nodes(self) -> tuple[NodeId, ...]:
        return tuple(NodeId(i, lab) for i, lab in enumerate(self._labels))

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def node(self, label: str) -> NodeId:
        try:
            return NodeId(self._index[label], label)
        except KeyError:
            raise TopologyError(f"unknown node {label!r}") from None

    def ordinal_of(self, label: str) -> int:
        return self.node(label).ordinal

    def label_of(self, ordinal: int) -> str:
        return self._labels[ordinal]

    def adj_ordinals(self, ordinal: int) -> tuple[int, ...]:
        return self._adj[ordinal]

    def degree(self, label: str) -> int:
        return len(self._adj[self.ordinal_of(label)])

    def has_edge(self, a: str, b: str) -> bool:
        return self.ordinal_of(b) in self._adj[self.ordinal_of(a)]

    def edges(self) -> tuple[tuple[str, str], ...]:
        out = []
        for i, nbrs in enumerate(self._adj):
            for j in nbrs:
                if i < j:
                    out.append((self._labels[i], self._labels[j]))
        return tuple(out)

    def with_node(self, label: str, neighbor_labels: Sequence[str]) -> Topology:
        """New topology with one extra node appended (ordinal = old n)."""
        if label in self._index:
            raise TopologyError(f"node {label!r} already present")
        new_edges = list(self.edges()) + [(label, nb) for nb in neighbor_labels]
        return Topology(list(self._labels) + [label], new_edges)

    def __repr__(self) -> str:
        return f"Topology(n={self.n})"


def _node_ids(t: Topology, items: Iterable) -> set[int]:
    out = set()
    for item in items:
        label = item.label if isinstance(item, NodeId) else item
        out.add(t.ordinal_of(label))
    return out


def parse_topology(text: str) -> Topology:
    """Parse the one-line-per-node format: ``<label>: <label> <label> ...``.

    ``#`` starts a comment, blank lines are ignored, adjacency is
    symmetrized after parsing.
    """
    labels: list[str] = []
    neighbor_lists: list[tuple[int, str, list[str]]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise TopologyError(f"line {lineno}: expected '<label>: ...', got {raw!r}")
        head, _, tail = line.partition(":")
        label = head.strip()
        if not label:
            raise TopologyError(f"line {lineno}: empty node label")
        if label in labels:
            raise TopologyError(f"line {lineno}: duplicate node line for {label!r}")
        nbrs = tail.split()
        if label in nbrs:
            raise TopologyError(f"line {lineno}: self-loop on {label!r}")
        labels.append(label)
        neighbor_lists.append((lineno, label, nbrs))
    declared = set(labels)
    edges = []
    for lineno, label, nbrs in neighbor_lists:
        for nb in nbrs:
            if nb not in declared:
                raise TopologyError(f"line {lineno}: reference to undeclared node {nb!r}")
            edges.append((label, nb))
    return Topology(labels, edges)


def parse_topology_file(path) -> Topology:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_topology(fh.read())


def serialize_topology(t: Topology) -> str:
    lines = []
    for i, label in enumerate(t.labels):
        nbrs = " ".join(t.label_of(j) for j in t.adj_ordinals(i))
        lines.append(f"{label}: {nbrs}".rstrip())
    return "\n".join(lines) + "\n"


def neighbors(t: Topology, node) -> frozenset[NodeId]:
    label = node.label if isinstance(node, NodeId) else node
    ordinal = t.ordinal_of(label)
    return frozenset(NodeId(j, t.label_of(j)) for j in t.adj_ordinals(ordinal))


def validate(t: Topology) -> ValidationReport:
    """Report-only structural checks; a fully connected graph is a warning."""
    n = t.n
    too_small = n < 2
    disconnected = False
    if n > 0:
        seen = _bfs(t, 0, blocked=frozenset())
        disconnected = len(seen) < n
    fully_connected = n >= 2 and all(len(t.adj_ordinals(i)) == n - 1 for i in range(n))
    return ValidationReport(n, disconnected, fully_connected, too_small)


def _bfs(t: Topology, start: int, blocked: frozenset[int]) -> set[int]:
    seen = {start}
    frontier = [start]
    while frontier:
        nxt = []
        for i in frontier:
            for j in t.adj_ordinals(i):
                if j not in seen and j not in blocked:
                    seen.add(j)
                    nxt.append(j)
        frontier = nxt
    return seen


def connected_component(t: Topology, start) -> frozenset[NodeId]:
    label = start.label if isinstance(start, NodeId) else start
    seen = _bfs(t, t.ordinal_of(label), blocked=frozenset())
    return frozenset(NodeId(i, t.label_of(i)) for i in seen)


def fault_free_reachable(t: Topology, faults: Iterable, start) -> frozenset[NodeId]:
    """Nodes reachable from ``start`` via paths whose every vertex is fault-free.

    This is the correctness oracle for a diagnosis cycle: anything outside
    this set can never be tested directly, so it must end up reported faulty.
    """
    start_label = start.label if isinstance(start, NodeId) else start
    start_ord = t.ordinal_of(start_label)
    blocked = frozenset(_node_ids(t, faults))
    if start_ord in blocked:
        raise TopologyError(f"start node {start_label!r} is in the fault set")
    seen = _bfs(t, start_ord, blocked=blocked)
    return frozenset(NodeId(i, t.label_of(i)) for i in seen)


def random_connected_topology(n: int, rng: random.Random, extra_edges: int | None = None) -> Topology:
    """Seeded random connected graph: random spanning tree plus extra edges."""
    if n < 1:
        raise TopologyError("need at least one node")
    labels = [f"n{i:02d}" for i in range(n)]
    order = list(range(n))
    rng.shuffle(order)
    edges = []
    for pos in range(1, n):
        a = order[pos]
        b = order[rng.randrange(pos)]
        edges.append((labels[a], labels[b]))
    present = {tuple(sorted(e)) for e in edges}
    want = n // 3 if extra_edges is None else extra_edges
    attempts = 0
    while want > 0 and attempts < 20 * n:
        attempts += 1
        a, b = rng.randrange(n), rng.randrange(n)
        if a == b:
            continue
        key = tuple(sorted((labels[a], labels[b])))
        if key in present:
            continue
        present.add(key)
        edges.append((labels[a], labels[b]))
        want -= 1
    return Topology(labels, edges)
