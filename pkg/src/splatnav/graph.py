"""Viewpoint graph G = (V, E) and its JSON form."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Any

import numpy as np


@dataclass
class ViewpointNode:
    node_id: int
    position: np.ndarray
    submap_id: int = -1
    origin_direction: int | None = None

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(self.position)):
            raise ValueError("node position must be finite")


@dataclass
class TopoGraph:
    nodes: list[ViewpointNode] = field(default_factory=list)
    edges: list[tuple[int, int]] = field(default_factory=list)
    config: dict[str, Any] = field(default_factory=dict)
    truncated: bool = False

    def __post_init__(self):
        self._index = {n.node_id: i for i, n in enumerate(self.nodes)}
        self._adj: dict[int, list[int]] = {n.node_id: [] for n in self.nodes}
        self._edge_set: set[tuple[int, int]] = set()
        edges, self.edges = self.edges, []
        for a, b in edges:
            self.add_edge(a, b)

    def add_node(self, node: ViewpointNode) -> None:
        if node.node_id in self._index:
            raise ValueError(f"duplicate node id {node.node_id}")
        self._index[node.node_id] = len(self.nodes)
        self.nodes.append(node)
        self._adj[node.node_id] = []

    def add_edge(self, a: int, b: int) -> bool:
        """Add an undirected edge; returns False for self-loops and duplicates."""
        a, b = int(a), int(b)
        if a == b:
            return False
        if a not in self._index or b not in self._index:
            raise KeyError(f"edge ({a}, {b}) references an unknown node")
        key = (min(a, b), max(a, b))
        if key in self._edge_set:
            return False
        self._edge_set.add(key)
        self.edges.append(key)
        self._adj[a].append(b)
        self._adj[b].append(a)
        return True

    def has_node(self, node_id: int) -> bool:
        return node_id in self._index

    def has_edge(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self._edge_set

    def node(self, node_id: int) -> ViewpointNode:
        return self.nodes[self._index[node_id]]

    def position(self, node_id: int) -> np.ndarray:
        return self.node(node_id).position

    def neighbors(self, node_id: int) -> list[int]:
        return sorted(self._adj[node_id])

    def edge_length(self, a: int, b: int) -> float:
        return float(np.linalg.norm(self.position(a) - self.position(b)))

    def node_ids(self) -> list[int]:
        return [n.node_id for n in self.nodes]

    def positions(self) -> np.ndarray:
        return np.array([n.position for n in self.nodes]).reshape(-1, 3)

    def nearest_node(self, position) -> int:
        """Node closest to ``position`` (3D Euclidean), ties to the lowest id."""
        p = np.asarray(position, dtype=np.float64)
        d = np.sum((self.positions() - p) ** 2, axis=1)
        ids = np.array(self.node_ids())
        best = d.min()
        return int(ids[d == best].min())

    def reachable_from(self, start: int) -> set[int]:
        seen = {start}
        q = deque([start])
        while q:
            v = q.popleft()
            for u in self._adj[v]:
                if u not in seen:
                    seen.add(u)
                    q.append(u)
        return seen

    def is_connected(self) -> bool:
        if not self.nodes:
            return True
        return len(self.reachable_from(self.nodes[0].node_id)) == len(self.nodes)

    def without_node(self, node_id: int) -> "TopoGraph":
        nodes = [ViewpointNode(n.node_id, n.position.copy(), n.submap_id, n.origin_direction)
                 for n in self.nodes if n.node_id != node_id]
        edges = [e for e in self.edges if node_id not in e]
        return TopoGraph(nodes, edges, dict(self.config), self.truncated)

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": n.node_id, "x": float(n.position[0]), "y": float(n.position[1]),
                       "z": float(n.position[2]), "submap": int(n.submap_id),
                       **({"direction": n.origin_direction} if n.origin_direction is not None else {})}
                      for n in self.nodes],
            "edges": [[a, b] for a, b in self.edges],
            "config": self.config,
            "truncated": self.truncated,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "TopoGraph":
        nodes = [ViewpointNode(int(n["id"]), [n["x"], n["y"], n["z"]], int(n.get("submap", -1)),
                               n.get("direction")) for n in d["nodes"]]
        return cls(nodes, [tuple(e) for e in d.get("edges", [])], d.get("config", {}), bool(d.get("truncated", False)))

    @classmethod
    def from_json(cls, text: str) -> "TopoGraph":
        return cls.from_dict(json.loads(text))
