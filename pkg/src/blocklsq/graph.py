"""Undirected communication graph between agents.

Agents are numbered ``1..N``. Every query that iterates over nodes or
neighbors does so in ascending id order so that anything derived from the
graph (spanning trees, message layouts) is reproducible.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable


class GraphError(ValueError):
    """Raised for malformed graphs or queries on unknown nodes."""


def _edge(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph on a subset of the agent ids ``1..node_count``.

    ``nodes`` defaults to every id. Induced subgraphs keep ``node_count`` and
    the original ids, only ``nodes`` and ``edges`` shrink.
    """

    node_count: int
    edges: frozenset = frozenset()
    nodes: frozenset = None
    _adj: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.node_count < 0:
            raise GraphError(f"node_count must be nonnegative, got {self.node_count}")
        nodes = self.nodes
        if nodes is None:
            nodes = frozenset(range(1, self.node_count + 1))
        nodes = frozenset(int(v) for v in nodes)
        for v in nodes:
            if not 1 <= v <= self.node_count:
                raise GraphError(f"node {v} outside 1..{self.node_count}")
        edges = set()
        for e in self.edges:
            i, j = (int(v) for v in e)
            if i == j:
                raise GraphError(f"self-loop on node {i}")
            if i not in nodes or j not in nodes:
                raise GraphError(f"edge ({i}, {j}) references a node outside the graph")
            edges.add(_edge(i, j))
        adj = {v: [] for v in nodes}
        for i, j in edges:
            adj[i].append(j)
            adj[j].append(i)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", frozenset(edges))
        object.__setattr__(self, "_adj", {v: tuple(sorted(n)) for v, n in adj.items()})

    @classmethod
    def from_edges(cls, node_count: int, edges: Iterable) -> Graph:
        """Build a graph, rejecting duplicate edges (in either orientation)."""
        seen = set()
        for e in edges:
            key = _edge(*e)
            if key in seen:
                raise GraphError(f"duplicate edge {key}")
            seen.add(key)
        return cls(node_count, frozenset(seen))

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def has_edge(self, i: int, j: int) -> bool:
        return _edge(i, j) in self.edges

    def _check_node(self, i: int) -> None:
        if i not in self._adj:
            raise GraphError(f"unknown node {i}")

    def neighbors(self, i: int) -> tuple[int, ...]:
        """Ascending neighbor ids of ``i``."""
        self._check_node(i)
        return self._adj[i]

    def induced_subgraph(self, nodes: Iterable[int]) -> Graph:
        nodes = frozenset(nodes)
        for v in nodes:
            self._check_node(v)
        edges = frozenset(e for e in self.edges if e[0] in nodes and e[1] in nodes)
        return Graph(self.node_count, edges, nodes)

    def _bfs(self, nodes: frozenset) -> tuple[list[int], dict[int, int]]:
        # BFS restricted to ``nodes`` from the smallest id, neighbors ascending.
        root = min(nodes)
        order = [root]
        parent = {root: 0}
        queue = deque([root])
        while queue:
            u = queue.popleft()
            for w in self._adj[u]:
                if w in nodes and w not in parent:
                    parent[w] = u
                    order.append(w)
                    queue.append(w)
        return order, parent

    def _resolve(self, nodes) -> frozenset:
        nodes = self.nodes if nodes is None else frozenset(nodes)
        if not nodes:
            raise GraphError("node set must be nonempty")
        for v in nodes:
            self._check_node(v)
        return nodes

    def is_connected(self, nodes: Iterable[int] | None = None) -> bool:
        """Whether the subgraph induced by ``nodes`` (default: all) is connected."""
        nodes = self._resolve(nodes)
        order, _ = self._bfs(nodes)
        return len(order) == len(nodes)

    def bfs_tree(self, nodes: Iterable[int] | None = None) -> tuple[list[int], dict[int, int]]:
        """Visit order and parent map (root maps to 0) of the deterministic BFS tree."""
        nodes = self._resolve(nodes)
        order, parent = self._bfs(nodes)
        if len(order) != len(nodes):
            missing = sorted(nodes - set(order))
            raise GraphError(f"induced subgraph on {sorted(nodes)} is disconnected; unreachable: {missing}")
        return order, parent

    def spanning_tree(self, nodes: Iterable[int] | None = None) -> frozenset:
        """Edges of the BFS spanning tree of the induced subgraph on ``nodes``."""
        order, parent = self.bfs_tree(nodes)
        return frozenset(_edge(v, parent[v]) for v in order[1:])


def grid_graph(rows: int, cols: int) -> Graph:
    """Rectangular grid with agents numbered row-major from 1."""
    if rows < 1 or cols < 1:
        raise GraphError("grid needs at least one row and one column")
    edges = []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c + 1
            if c + 1 < cols:
                edges.append((v, v + 1))
            if r + 1 < rows:
                edges.append((v, v + cols))
    return Graph.from_edges(rows * cols, edges)
