"""Ground-truth optimal coverage planner used to produce demonstrations.

The planner sees the true map: it builds a collision-free graph over all of
true free space, treats the boundary of the still-unexplored free area as
the frontiers to observe, samples waypoint sets that cover them (drawing
nodes with probability proportional to their current utility), solves an
open-path TSP over each set, and keeps the cheapest path over k restarts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .graph import (
    CollisionFreeGraph,
    build_graph,
    frontier_centers_cells,
    graph_distances,
    shortest_path,
)
from .grid_geom import FREE, visible_mask
from .world import BeliefMap, GroundTruthMap, SensorModel, Trajectory

EXACT_TSP_LIMIT = 13


class UncoverableFrontierError(RuntimeError):
    def __init__(self, cell):
        super().__init__(f"frontier cell {tuple(cell)} is not observable from any graph node")
        self.cell = tuple(cell)


class NoPathError(RuntimeError):
    """A waypoint pair is disconnected in the coverage graph."""


def truth_belief(truth: GroundTruthMap) -> BeliefMap:
    """A belief that knows the entire ground truth (the oracle's view)."""
    return BeliefMap(truth.cells.copy(), truth.resolution)


def build_truth_graph(truth: GroundTruthMap, robot_pose, d_n: float) -> CollisionFreeGraph:
    """Collision-free graph covering all of true free space."""
    return build_graph(truth_belief(truth), robot_pose, d_n)


def ground_truth_frontiers(truth: GroundTruthMap, belief: BeliefMap) -> np.ndarray:
    """Boundary cells of the unexplored free area, as (n, 2) rows (iy, ix).

    A cell belongs to the boundary when it is truth-free, not yet believed
    free, and 8-adjacent to some cell outside the unexplored-free region.
    At episode start this is every wall-adjacent free cell.
    """
    unexplored = (truth.cells == FREE) & (belief.cells != FREE)
    inside = np.ones_like(unexplored)
    h, w = unexplored.shape
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            shifted = np.zeros_like(unexplored)
            ys = slice(max(0, dy), h + min(0, dy))
            xs = slice(max(0, dx), w + min(0, dx))
            shifted[max(0, -dy) : h + min(0, -dy), max(0, -dx) : w + min(0, -dx)] = unexplored[ys, xs]
            inside &= shifted
    return np.argwhere(unexplored & ~inside)


def observable_frontiers(
    node_pos,
    frontiers: np.ndarray,
    truth: GroundTruthMap,
    sensor: SensorModel,
) -> np.ndarray:
    """Subset of frontier cells within sensor range with true line of sight."""
    if len(frontiers) == 0:
        return frontiers.reshape(0, 2)
    res = truth.resolution
    fx, fy = frontier_centers_cells(frontiers, res)
    vis = visible_mask(
        truth.cells, node_pos[0] / res, node_pos[1] / res, fx, fy, sensor.range_m / res
    )
    return frontiers[vis]


def observability_matrix(
    graph: CollisionFreeGraph,
    frontiers: np.ndarray,
    truth: GroundTruthMap,
    sensor: SensorModel,
) -> np.ndarray:
    """(nodes, frontiers) boolean visibility matrix."""
    m = graph.size
    if len(frontiers) == 0:
        return np.zeros((m, 0), dtype=bool)
    res = truth.resolution
    fx, fy = frontier_centers_cells(frontiers, res)
    range_cells = sensor.range_m / res
    out = np.zeros((m, len(frontiers)), dtype=bool)
    for idx in range(m):
        x, y = graph.positions[idx]
        out[idx] = visible_mask(truth.cells, x / res, y / res, fx, fy, range_cells)
    return out


@dataclass
class OracleProblem:
    """One coverage query: the truth graph, where the robot is, and which
    ground-truth frontiers remain to be observed."""

    graph: CollisionFreeGraph
    truth: GroundTruthMap
    frontiers: np.ndarray
    sensor: SensorModel
    restarts: int = 32
    seed: int = 0
    # All-pairs graph distances, computed lazily and reusable across steps
    # since the truth graph never changes within an episode.
    dist_matrix: np.ndarray | None = field(default=None, repr=False)

    def distances(self) -> np.ndarray:
        if self.dist_matrix is None:
            m = self.graph.size
            d = np.empty((m, m))
            for i in range(m):
                d[i] = graph_distances(self.graph, i)
            self.dist_matrix = d
        return self.dist_matrix


@dataclass
class OraclePlan:
    node_path: list[int]  # node-by-node, starts at the robot node
    trajectory: Trajectory
    cost: float
    waypoints: list[int]
    restart_costs: list[float]


def sample_covering_set(
    visibility: np.ndarray,
    start: int,
    rng: np.random.Generator,
    frontier_cells: np.ndarray | None = None,
) -> list[int]:
    """Waypoint set covering every frontier, robot node first.

    Frontiers observable from the start node count as covered immediately;
    remaining nodes are drawn with probability proportional to their current
    utility (observable still-uncovered frontiers) until nothing is left.
    """
    n_nodes, n_frontiers = visibility.shape
    uncovered = np.ones(n_frontiers, dtype=bool)
    uncovered[visibility[start]] = False
    available = np.ones(n_nodes, dtype=bool)
    available[start] = False
    waypoints = [start]
    while uncovered.any():
        utility = (visibility[:, uncovered].sum(axis=1)) * available
        total = utility.sum()
        if total == 0:
            bad = int(np.flatnonzero(uncovered)[0])
            cell = tuple(frontier_cells[bad]) if frontier_cells is not None else ("index", bad)
            raise UncoverableFrontierError(cell)
        probs = utility / total
        pick = int(rng.choice(n_nodes, p=probs))
        waypoints.append(pick)
        uncovered &= ~visibility[pick]
        available[pick] = False
    return waypoints


@njit(cache=True)
def _held_karp_open(dist):
    """Exact open-path TSP starting at node 0 of dist; returns the visit
    order. Minimum over all end nodes of the classic subset DP."""
    n = dist.shape[0]
    full = 1 << n
    dp = np.full((full, n), np.inf)
    parent = np.full((full, n), -1, dtype=np.int64)
    dp[1, 0] = 0.0
    for mask in range(1, full):
        if not (mask & 1):
            continue
        for last in range(n):
            if not (mask >> last) & 1:
                continue
            cur = dp[mask, last]
            if not math.isfinite(cur):
                continue
            for nxt in range(1, n):
                if (mask >> nxt) & 1:
                    continue
                nmask = mask | (1 << nxt)
                cand = cur + dist[last, nxt]
                if cand < dp[nmask, nxt]:
                    dp[nmask, nxt] = cand
                    parent[nmask, nxt] = last
    best = np.inf
    best_end = 0
    final = full - 1
    for last in range(n):
        if dp[final, last] < best:
            best = dp[final, last]
            best_end = last
    order = np.empty(n, dtype=np.int64)
    mask = final
    node = best_end
    for i in range(n - 1, -1, -1):
        order[i] = node
        prev = parent[mask, node]
        mask ^= 1 << node
        node = prev
    return order, best


def _nearest_neighbor_two_opt(dist):
    n = dist.shape[0]
    unvisited = set(range(1, n))
    order = [0]
    while unvisited:
        last = order[-1]
        nxt = min(unvisited, key=lambda v: (dist[last, v], v))
        order.append(nxt)
        unvisited.remove(nxt)

    def cost_of(seq):
        return sum(dist[a, b] for a, b in zip(seq, seq[1:]))

    improved = True
    while improved:
        improved = False
        for i in range(1, n - 1):
            for j in range(i + 1, n):
                cand = order[:i] + order[i : j + 1][::-1] + order[j + 1 :]
                if cost_of(cand) < cost_of(order) - 1e-12:
                    order = cand
                    improved = True
    return order, cost_of(order)


def solve_tsp(dist: np.ndarray, start: int = 0) -> tuple[list[int], float]:
    """Open-path TSP over the given distance matrix, starting at ``start``.

    Exact subset DP up to 13 waypoints, nearest-neighbor plus 2-opt beyond.
    Raises NoPathError when a waypoint pair is disconnected.
    """
    n = dist.shape[0]
    if n == 1:
        return [start], 0.0
    if not np.all(np.isfinite(dist)):
        raise NoPathError("waypoint set spans disconnected graph components")
    # Reorder so the start sits at local index 0.
    idx = [start] + [i for i in range(n) if i != start]
    local = dist[np.ix_(idx, idx)]
    if n <= EXACT_TSP_LIMIT:
        order, cost = _held_karp_open(local)
        order = list(order)
    else:
        order, cost = _nearest_neighbor_two_opt(local)
    return [idx[i] for i in order], float(cost)


def plan_coverage(problem: OracleProblem) -> OraclePlan:
    """Best coverage path over k sampling restarts, expanded node by node.

    Raises UncoverableFrontierError (naming the cell) when some frontier is
    invisible from every graph node.
    """
    graph = problem.graph
    start = graph.current
    if len(problem.frontiers) == 0:
        return OraclePlan(
            [start],
            Trajectory([tuple(graph.positions[start])]),
            0.0,
            [start],
            [0.0],
        )

    vis = observability_matrix(graph, problem.frontiers, problem.truth, problem.sensor)
    orphan = ~vis.any(axis=0)
    if orphan.any():
        raise UncoverableFrontierError(problem.frontiers[int(np.flatnonzero(orphan)[0])])

    dist = problem.distances()
    best_cost = math.inf
    best_order: list[int] | None = None
    restart_costs = []
    for restart in range(problem.restarts):
        rng = np.random.default_rng(np.random.SeedSequence((problem.seed, restart)))
        waypoints = sample_covering_set(vis, start, rng, problem.frontiers)
        sub = dist[np.ix_(waypoints, waypoints)]
        local_order, cost = solve_tsp(sub, 0)
        if cost < best_cost:
            best_cost = cost
            best_order = [waypoints[i] for i in local_order]
        restart_costs.append(best_cost)

    assert best_order is not None
    node_path = [best_order[0]]
    for a, b in zip(best_order, best_order[1:]):
        leg = shortest_path(graph, a, b)
        if not leg.reachable:  # pragma: no cover - finite dist guarantees it
            raise NoPathError(f"no path between waypoints {a} and {b}")
        node_path.extend(leg.nodes[1:])
    trajectory = Trajectory([tuple(graph.positions[i]) for i in node_path])
    return OraclePlan(node_path, trajectory, best_cost, best_order, restart_costs)
