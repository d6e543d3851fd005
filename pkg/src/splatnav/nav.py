"""Episodic navigation over a viewpoint graph, baseline agents and the standard VLN metrics."""

from __future__ import annotations

import heapq
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from splatnav.graph import TopoGraph

SUCCESS_RADIUS = 3.0
MAX_STEPS = 30
RANDOM_ACTIONS = 10
TIGHT = 1e-9


class IllegalActionError(ValueError):
    def __init__(self, message: str, state: "EnvState | None" = None):
        super().__init__(message)
        self.state = state


class NoPathError(ValueError):
    pass


@dataclass
class Episode:
    episode_id: str
    start_node: int
    goal_position: np.ndarray
    gt_path: list[int]
    instruction: str | None = None

    def __post_init__(self):
        self.goal_position = np.asarray(self.goal_position, dtype=np.float64).reshape(3)
        self.gt_path = [int(v) for v in self.gt_path]
        if self.gt_path and self.gt_path[0] != self.start_node:
            raise ValueError(f"episode {self.episode_id}: gt_path must start at start_node")

    def check(self, graph: TopoGraph) -> None:
        if not graph.has_node(self.start_node):
            raise KeyError(f"episode {self.episode_id}: unknown start node {self.start_node}")
        for a, b in zip(self.gt_path, self.gt_path[1:]):
            if not graph.has_edge(a, b):
                raise ValueError(f"episode {self.episode_id}: gt_path step {a}->{b} is not an edge")

    def to_dict(self) -> dict:
        d = {"episode_id": self.episode_id, "start_node": self.start_node,
             "goal_position": self.goal_position.tolist(), "gt_path": self.gt_path}
        if self.instruction is not None:
            d["instruction"] = self.instruction
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Episode":
        return cls(str(d["episode_id"]), int(d["start_node"]), d["goal_position"], d.get("gt_path", [d["start_node"]]),
                   d.get("instruction"))


def episodes_to_json(episodes: list[Episode]) -> str:
    return json.dumps([e.to_dict() for e in episodes], indent=1, sort_keys=True) + "\n"


def episodes_from_json(text: str) -> list[Episode]:
    return [Episode.from_dict(d) for d in json.loads(text)]


@dataclass(frozen=True)
class EnvState:
    current_node: int
    step_count: int
    done: bool
    path_trace: tuple[int, ...]
    failed: bool = False


@dataclass(frozen=True)
class NeighborView:
    node_id: int
    heading: float  # radians, atan2 of the edge vector in xy
    distance: float  # metres


@dataclass
class Observation:
    node_id: int
    position: np.ndarray
    neighbors: list[NeighborView]
    panorama: Callable | None = None  # call to render the view at this node


STOP = "stop"


@dataclass(frozen=True)
class MoveTo:
    node_id: int


def observe(graph: TopoGraph, node_id: int, renderer: Callable | None = None) -> Observation:
    p = graph.position(node_id)
    nbrs = []
    for u in graph.neighbors(node_id):
        d = graph.position(u) - p
        nbrs.append(NeighborView(u, math.atan2(d[1], d[0]), float(np.linalg.norm(d))))
    handle = (lambda: renderer(p)) if renderer is not None else None
    return Observation(node_id, p.copy(), nbrs, handle)


def reset(graph: TopoGraph, episode: Episode, renderer: Callable | None = None) -> tuple[EnvState, Observation]:
    if not graph.has_node(episode.start_node):
        raise KeyError(f"unknown start node {episode.start_node}")
    s = EnvState(episode.start_node, 0, False, (episode.start_node,))
    return s, observe(graph, s.current_node, renderer)


def step(graph: TopoGraph, state: EnvState, action, max_steps: int = MAX_STEPS,
         renderer: Callable | None = None) -> tuple[EnvState, Observation]:
    """Apply ``STOP`` or ``MoveTo(node_id)``; a move to a non-neighbour raises
    :class:`IllegalActionError` carrying the failed final state."""
    if state.done:
        raise IllegalActionError("illegal action: episode already finished", state)
    if action == STOP:
        s = replace(state, done=True)
    elif isinstance(action, MoveTo):
        if not graph.has_node(action.node_id) or not graph.has_edge(state.current_node, action.node_id):
            raise IllegalActionError(
                f"illegal action: {action.node_id} is not adjacent to {state.current_node}",
                replace(state, done=True, failed=True))
        n = state.step_count + 1
        s = EnvState(action.node_id, n, n >= max_steps, state.path_trace + (action.node_id,))
    else:
        raise IllegalActionError(f"illegal action: {action!r}", replace(state, done=True, failed=True))
    return s, observe(graph, s.current_node, renderer)


def _dijkstra(graph: TopoGraph, source: int) -> dict[int, float]:
    dist = {source: 0.0}
    heap = [(0.0, source)]
    while heap:
        d, v = heapq.heappop(heap)
        if d > dist[v]:
            continue
        for u in graph.neighbors(v):
            nd = d + graph.edge_length(v, u)
            if nd < dist.get(u, math.inf):
                dist[u] = nd
                heapq.heappush(heap, (nd, u))
    return dist


def shortest_path(graph: TopoGraph, start: int, to_position) -> list[int]:
    """Minimum-length path from ``start`` to the node nearest ``to_position``.

    Among equally short paths (lengths within 1e-9 relative) the
    lexicographically smallest node-id sequence wins.
    """
    if not graph.has_node(start):
        raise KeyError(f"unknown node {start}")
    target = graph.nearest_node(to_position)
    to_target = _dijkstra(graph, target)
    if start not in to_target:
        raise NoPathError(f"node {target} is unreachable from {start}")
    path = [start]
    v = start
    while v != target:
        dv = to_target[v]
        for u in graph.neighbors(v):  # ascending ids
            if u in to_target and graph.edge_length(v, u) + to_target[u] <= dv + TIGHT * max(1.0, dv):
                if to_target[u] < dv:
                    v = u
                    break
        else:  # pragma: no cover - ruled out by the distance labels
            raise NoPathError("shortest path reconstruction failed")
        path.append(v)
    return path


def path_length(graph: TopoGraph, trace) -> float:
    return float(sum(graph.edge_length(a, b) for a, b in zip(trace, trace[1:])))


def random_agent(graph: TopoGraph, episode: Episode, seed: int = 0, num_actions: int = RANDOM_ACTIONS) -> list[int]:
    """``num_actions`` uniformly random moves to a neighbour, then stop (earlier if stuck)."""
    rng = np.random.default_rng(seed)
    trace = [episode.start_node]
    for _ in range(num_actions):
        nbrs = graph.neighbors(trace[-1])
        if not nbrs:
            break
        trace.append(nbrs[int(rng.integers(len(nbrs)))])
    return trace


def shortest_agent(graph: TopoGraph, episode: Episode, seed: int = 0) -> list[int]:
    return shortest_path(graph, episode.start_node, episode.goal_position)


AGENTS = {"shortest": shortest_agent, "random": random_agent}


@dataclass
class MetricsRecord:
    ne: float
    sr: float
    osr: float
    spl: float
    pl: float
    episode_id: str = ""
    failed: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(graph: TopoGraph, episode: Episode, trace, success_radius: float = SUCCESS_RADIUS,
                    failed: bool = False) -> MetricsRecord:
    trace = list(trace)
    goal = episode.goal_position
    dists = [float(np.linalg.norm(graph.position(v) - goal)) for v in trace]
    ne = dists[-1]
    sr = 1.0 if ne <= success_radius and not failed else 0.0
    osr = 1.0 if min(dists) <= success_radius else 0.0
    pl = path_length(graph, trace)
    ell = path_length(graph, shortest_path(graph, episode.start_node, goal))
    denom = max(pl, ell)
    spl = sr if denom == 0 else sr * ell / denom
    return MetricsRecord(ne, sr, osr, spl, pl, episode.episode_id, failed)


def run_episode(graph: TopoGraph, episode: Episode, trace, max_steps: int = MAX_STEPS) -> tuple[list[int], bool]:
    """Replay an agent's node trace through the environment; returns (executed trace, failed)."""
    state, _ = reset(graph, episode)
    try:
        for v in list(trace)[1:]:
            if state.done:
                break
            state, _ = step(graph, state, MoveTo(int(v)), max_steps)
        if not state.done:
            state, _ = step(graph, state, STOP, max_steps)
    except IllegalActionError as e:
        return list(e.state.path_trace), True
    return list(state.path_trace), False


def episode_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


@dataclass
class EvalReport:
    agent: str
    success_radius: float
    records: list[MetricsRecord] = field(default_factory=list)

    def means(self) -> dict:
        if not self.records:
            raise ValueError("no episodes")
        m = {k: float(np.mean([getattr(r, k) for r in self.records])) for k in ("ne", "sr", "osr", "spl", "pl")}
        return {"NE": m["ne"], "SR": 100.0 * m["sr"], "OSR": 100.0 * m["osr"], "SPL": 100.0 * m["spl"],
                "PL": m["pl"]}

    def to_dict(self) -> dict:
        return {"agent": self.agent, "success_radius": self.success_radius, "episodes": len(self.records),
                "mean": self.means(), "records": [r.to_dict() for r in self.records]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def table(self) -> str:
        m = self.means()
        head = f"{'agent':<10}{'NE(m)':>8}{'SR(%)':>8}{'OSR(%)':>8}{'SPL(%)':>8}{'PL(m)':>8}"
        row = f"{self.agent:<10}{m['NE']:>8.2f}{m['SR']:>8.1f}{m['OSR']:>8.1f}{m['SPL']:>8.1f}{m['PL']:>8.2f}"
        return head + "\n" + row + "\n"


def evaluate(graph: TopoGraph, episodes: list[Episode], agent="shortest", success_radius: float = SUCCESS_RADIUS,
             seed: int = 0, max_steps: int = MAX_STEPS, workers: int = 1) -> EvalReport:
    """Run ``agent`` (a name from AGENTS or a callable (graph, episode, seed) -> trace) on every episode.

    Episode i gets its own seed derived from (seed, i), so results do not
    depend on ``workers``.
    """
    if not episodes:
        raise ValueError("no episodes to evaluate")
    name = agent if isinstance(agent, str) else getattr(agent, "__name__", "agent")
    fn = AGENTS[agent] if isinstance(agent, str) else agent
    for ep in episodes:
        ep.check(graph)

    def one(i_ep):
        i, ep = i_ep
        trace, failed = run_episode(graph, ep, fn(graph, ep, episode_seed(seed, i)), max_steps)
        return compute_metrics(graph, ep, trace, success_radius, failed)

    items = list(enumerate(episodes))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(one, items))
    else:
        records = [one(it) for it in items]
    return EvalReport(name, success_radius, records)


def generate_episodes(graph: TopoGraph, count: int, seed: int = 0, min_distance: float = 10.0) -> list[Episode]:
    """Sample start/goal node pairs whose shortest path is at least ``min_distance`` metres."""
    ids = graph.node_ids()
    pairs = []
    for s in ids:
        dist = _dijkstra(graph, s)
        pairs += [(s, g) for g in ids if g != s and dist.get(g, -1.0) >= min_distance]
    if not pairs:
        raise ValueError(f"no node pairs are {min_distance} m apart along the graph")
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(pairs), size=min(count, len(pairs)), replace=False)
    out = []
    for k, i in enumerate(sorted(int(i) for i in pick)):
        s, g = pairs[i]
        goal = graph.position(g)
        out.append(Episode(f"ep{k:04d}", s, goal, shortest_path(graph, s, goal)))
    return out
