"""Greedy frontier baselines: nearest-frontier and utility-discounted.

Both planners pick a target among the nodes with positive guaranteed gain
(unknown cells a sensing sweep from there must reveal) and step along the
shortest path toward it. Targeting mere frontier observers stalls: a node
can observe frontier cells whose unknown side stays occluded from it, so
revisiting it yields nothing, and memoryless greedy then oscillates.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .graph import InformativeGraph, graph_distances, shortest_path
from .grid_geom import FREE
from .world import cell_center, detect_frontiers


@dataclass(frozen=True)
class UtilityConfig:
    """Trade-off weight for the utility baseline's distance discount."""

    lam: float = 0.1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")


def _first_step(igraph: InformativeGraph, target: int) -> int:
    current = igraph.base.current
    if target == current:
        return current
    path = shortest_path(igraph.base, current, target)
    return path.nodes[1]


def _candidates(igraph: InformativeGraph, dist) -> list[int]:
    """Reachable nodes whose visit is guaranteed to reveal unknown cells."""
    return [
        int(v)
        for v in np.flatnonzero(igraph.gain > 0)
        if math.isfinite(dist[int(v)])
    ]


def bfs_nearest_frontier(belief, start_cell, frontier_cells) -> tuple[int, int] | None:
    """First frontier cell reached by a 4-connected wavefront over observed
    free space (the classic closest-frontier query)."""
    h, w = belief.cells.shape
    targets = {tuple(c) for c in frontier_cells}
    if not targets:
        return None
    seen = np.zeros((h, w), dtype=bool)
    queue = deque([tuple(start_cell)])
    seen[tuple(start_cell)] = True
    while queue:
        iy, ix = queue.popleft()
        if (iy, ix) in targets:
            return iy, ix
        for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
            ny, nx = iy + dy, ix + dx
            if 0 <= ny < h and 0 <= nx < w and not seen[ny, nx] and belief.cells[ny, nx] == FREE:
                seen[ny, nx] = True
                queue.append((ny, nx))
    return None


def nearest_frontier(igraph: InformativeGraph) -> int | None:
    """Next waypoint chasing the closest frontier.

    The target frontier is the first one reached by a grid wavefront from
    the robot; the robot steps toward the informative node closest to that
    frontier (ties to the smallest node index). Returns the robot node when
    it is already that target, or None as the exploration-stuck signal.
    """
    base = igraph.base
    belief = igraph.belief
    dist = graph_distances(base, base.current)
    cands = _candidates(igraph, dist)
    if not cands:
        return None
    rx, ry = base.positions[base.current]
    res = belief.resolution
    start_cell = (int(ry / res), int(rx / res))
    frontier = bfs_nearest_frontier(belief, start_cell, detect_frontiers(belief))
    if frontier is None:
        return None
    fx, fy = cell_center(frontier[0], frontier[1], res)
    best = min(
        cands,
        key=lambda v: (math.hypot(base.positions[v][0] - fx, base.positions[v][1] - fy), v),
    )
    return _first_step(igraph, best)


def utility_planner(igraph: InformativeGraph, cfg: UtilityConfig = UtilityConfig()) -> int | None:
    """Next waypoint toward the node maximizing gain * exp(-lambda * dist).

    The information term is the node's guaranteed-revealable cell count and
    dist the graph distance in meters; score ties go to the smallest node
    index. None signals that no informative node is reachable.
    """
    base = igraph.base
    dist = graph_distances(base, base.current)
    cands = _candidates(igraph, dist)
    if not cands:
        return None
    best = None
    best_key = None
    for v in cands:
        score = float(igraph.gain[v]) * math.exp(-cfg.lam * dist[v])
        key = (-score, v)
        if best_key is None or key < best_key:
            best_key = key
            best = v
    return _first_step(igraph, best)
