"""A* over the weighted traversability graph.

A step ``u -> v`` costs its 3D length plus ``lambda`` times the edge weight,
and that cost accumulates in ``g``. The Euclidean heuristic never exceeds the
remaining cost because every step costs at least its length.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NoPath
from .wtg import WTG, snap_to_node


@dataclass(frozen=True)
class PlannerConfig:
    lam: float = 1.0
    snap_radius: float = 0.5

    def __post_init__(self):
        if not self.lam >= 0:
            raise ConfigError("lambda must be non-negative")
        if not self.snap_radius > 0:
            raise ConfigError("snap radius must be positive")


@dataclass
class Path:
    node_ids: list
    positions: np.ndarray
    cost: float
    steps: list = field(default_factory=list)  # (dist, trav) per step
    lam: float = 0.0
    expanded: int = 0

    @property
    def start(self):
        return self.node_ids[0]

    @property
    def goal(self):
        return self.node_ids[-1]

    def to_document(self) -> dict:
        return {
            "start": list(self.start), "goal": list(self.goal), "lambda": self.lam,
            "cost": self.cost,
            "nodes": [{"id": list(i), "pos": p} for i, p in zip(self.node_ids, self.positions.tolist())],
            "steps": [{"dist": d, "trav": t} for d, t in self.steps],
        }


def heuristic(wtg: WTG, u: int, goal: int) -> float:
    return float(np.linalg.norm(wtg.pos[u] - wtg.pos[goal]))


def astar(wtg: WTG, start, goal, config: PlannerConfig | None = None) -> Path:
    """Cheapest path between two node ids; raises ``NoPath`` if the goal is unreachable."""
    config = config or PlannerConfig()
    s, t = wtg.index_of(start), wtg.index_of(goal)
    lam = config.lam
    pos = wtg.pos
    goal_pos = pos[t]
    h_cache: dict[int, float] = {}

    def h(u: int) -> float:
        val = h_cache.get(u)
        if val is None:
            val = h_cache[u] = math.dist(pos[u], goal_pos)
        return val

    g = {s: 0.0}
    parent = {s: -1}
    open_heap = [(h(s), s)]
    expanded = 0
    while open_heap:
        f, u = heapq.heappop(open_heap)
        gu = g[u]
        if f > gu + h(u):
            continue  # stale entry superseded by a cheaper one
        if u == t:
            return _reconstruct(wtg, parent, t, gu, lam, expanded)
        expanded += 1
        targets, weights = wtg.out_edges(u)
        pu = pos[u]
        for v, w in zip(targets.tolist(), weights.tolist()):
            ng = gu + (math.dist(pu, pos[v]) + lam * w)
            if ng < g.get(v, math.inf):
                # reopening a closed node is allowed when a cheaper route appears
                g[v] = ng
                parent[v] = u
                heapq.heappush(open_heap, (ng + h(v), v))
    raise NoPath(f"no path from {tuple(start)} to {tuple(goal)}")


def _reconstruct(wtg: WTG, parent: dict, t: int, cost: float, lam: float, expanded: int) -> Path:
    seq = [t]
    while parent[seq[-1]] >= 0:
        seq.append(parent[seq[-1]])
    seq.reverse()
    steps = []
    for a, b in zip(seq, seq[1:]):
        steps.append((math.dist(wtg.pos[a], wtg.pos[b]), wtg.edge_weight(a, b)))
    return Path([wtg.node_id(n) for n in seq], wtg.pos[seq].copy(), cost, steps, lam, expanded)


def path_cost(wtg: WTG, node_ids, lam: float) -> float:
    """Re-sum length + lambda * weight along an explicit node sequence."""
    idx = [wtg.index_of(n) for n in node_ids]
    total = 0.0
    for a, b in zip(idx, idx[1:]):
        total = total + (math.dist(wtg.pos[a], wtg.pos[b]) + lam * wtg.edge_weight(a, b))
    return total


def plan(wtg: WTG, start_point, goal_point, config: PlannerConfig | None = None) -> Path:
    """Snap both points to graph nodes and search between them."""
    config = config or PlannerConfig()
    s = snap_to_node(wtg, start_point, config.snap_radius)
    t = snap_to_node(wtg, goal_point, config.snap_radius)
    return astar(wtg, s, t, config)
