"""Collision-free lattice graphs over observed free space.

Nodes sit at the centers of lattice cells spaced ``d_n`` meters apart,
anchored at the map origin so node identity is stable while the robot
moves. Each node connects to nodes in its surrounding 5x5 lattice block
whose straight segment stays in known-free space (unknown cells block).
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .grid_geom import UNKNOWN, first_unknown_contacts, line_free, visible_mask
from .world import BeliefMap, InvalidPoseError, SensorModel

_EPS = 1e-9
NEIGHBOR_SPAN = 2  # 5x5 block: lattice offsets in [-2, 2]


@dataclass
class CollisionFreeGraph:
    positions: np.ndarray  # (m, 2) float64, meters
    lattice_index: np.ndarray  # (m, 2) int64, (i, j) lattice coordinates
    edges: list[tuple[int, int]]  # undirected, i < j, sorted
    d_n: float
    current: int  # node index at the robot position

    @property
    def size(self) -> int:
        return len(self.positions)

    @cached_property
    def _edge_set(self) -> set[tuple[int, int]]:
        return set(self.edges)

    @cached_property
    def _position_index(self) -> dict[tuple[float, float], int]:
        return {
            (round(float(x), 6), round(float(y), 6)): i
            for i, (x, y) in enumerate(self.positions)
        }

    def node_at(self, pos) -> int | None:
        """Node index at a metric position (None if no node sits there)."""
        return self._position_index.get((round(float(pos[0]), 6), round(float(pos[1]), 6)))

    @cached_property
    def _adjacency(self) -> list[list[tuple[int, float]]]:
        adj: list[list[tuple[int, float]]] = [[] for _ in range(self.size)]
        for i, j in self.edges:
            d = float(np.hypot(*(self.positions[i] - self.positions[j])))
            adj[i].append((j, d))
            adj[j].append((i, d))
        for lst in adj:
            lst.sort()
        return adj

    def adjacency(self) -> list[list[tuple[int, float]]]:
        """Neighbor lists (index, edge length), sorted by neighbor index."""
        return self._adjacency

    def has_edge(self, i: int, j: int) -> bool:
        if i > j:
            i, j = j, i
        return (i, j) in self._edge_set


@dataclass
class InformativeGraph:
    """Collision-free graph annotated with per-node utility, guidepost and
    the robot-occupancy indicator; coordinates and edges are shared.

    ``gain`` is a derived annotation (not an encoder input): the number of
    unknown cells that a sensing sweep from the node is guaranteed to
    reveal (first unknown contact of the discrete rays through known-free
    space). Visiting a node with positive gain always grows the belief;
    greedy planners target such nodes because merely observing a frontier
    cell does not imply its unknown side is resolvable from there.
    """

    base: CollisionFreeGraph
    utility: np.ndarray  # (m,) int64, observable frontier count
    guidepost: np.ndarray  # (m,) uint8
    occupancy: np.ndarray  # (m,) uint8, 1 only at the robot node
    gain: np.ndarray = None  # (m,) int64, guaranteed-revealable cell count
    belief: "BeliefMap" = None  # annotation source, kept for planners
    sensor: SensorModel = None

    @property
    def size(self) -> int:
        return self.base.size


@dataclass
class PathResult:
    """Shortest-path query result; ``reachable`` is False for disconnected
    pairs (nodes is then empty and length infinite)."""

    nodes: list[int]
    length: float
    reachable: bool


def line_of_sight(belief: BeliefMap, a, b) -> bool:
    """True iff every cell intersected by segment a-b is observed free."""
    res = belief.resolution
    return bool(
        line_free(belief.cells, a[0] / res, a[1] / res, b[0] / res, b[1] / res)
    )


def frontier_centers_cells(frontiers: np.ndarray, resolution: float):
    """Frontier cell centers in kernel (cell-unit) coordinates, converted
    through meters so they match per-pair line_of_sight queries bit for bit."""
    fx = ((frontiers[:, 1].astype(np.float64) + 0.5) * resolution) / resolution
    fy = ((frontiers[:, 0].astype(np.float64) + 0.5) * resolution) / resolution
    return fx, fy


def _lattice_position(i: int, j: int, d_n: float, res: float):
    return (i * d_n + res / 2.0, j * d_n + res / 2.0)


def build_graph(belief: BeliefMap, robot_pose, d_n: float) -> CollisionFreeGraph:
    """Lattice nodes over observed free space plus the robot's node.

    When the robot pose coincides with a free lattice point that point is
    the robot node; otherwise an extra node at the exact pose is appended
    (used at episode start before the robot reaches the lattice).
    """
    if not belief.is_free(robot_pose):
        raise InvalidPoseError(f"robot pose {robot_pose} is not in observed free space")
    res = belief.resolution
    h, w = belief.cells.shape

    n_i = int((w * res - res / 2.0) // d_n) + 1
    n_j = int((h * res - res / 2.0) // d_n) + 1
    positions = []
    lattice = []
    index_of: dict[tuple[int, int], int] = {}
    for j in range(n_j):
        for i in range(n_i):
            pos = _lattice_position(i, j, d_n, res)
            if belief.is_free(pos):
                index_of[(i, j)] = len(positions)
                positions.append(pos)
                lattice.append((i, j))

    rx, ry = float(robot_pose[0]), float(robot_pose[1])
    ri = int(round((rx - res / 2.0) / d_n))
    rj = int(round((ry - res / 2.0) / d_n))
    anchor = _lattice_position(ri, rj, d_n, res)
    on_lattice = abs(anchor[0] - rx) < _EPS and abs(anchor[1] - ry) < _EPS
    if on_lattice and (ri, rj) in index_of:
        current = index_of[(ri, rj)]
    else:
        current = len(positions)
        positions.append((rx, ry))
        lattice.append((ri, rj))

    pos_arr = np.asarray(positions, dtype=np.float64)
    lat_arr = np.asarray(lattice, dtype=np.int64)
    grid = belief.cells

    n_lattice = len(index_of)
    edges = []
    for a in range(n_lattice):
        ai, aj = lattice[a]
        for dj in range(-NEIGHBOR_SPAN, NEIGHBOR_SPAN + 1):
            for di in range(-NEIGHBOR_SPAN, NEIGHBOR_SPAN + 1):
                if di == 0 and dj == 0:
                    continue
                b = index_of.get((ai + di, aj + dj))
                if b is None or b <= a:
                    continue
                ax, ay = pos_arr[a]
                bx, by = pos_arr[b]
                if line_free(grid, ax / res, ay / res, bx / res, by / res):
                    edges.append((a, b))
    if current == n_lattice:
        # Off-lattice robot node: connect it to the 5x5 block around its
        # nearest lattice point.
        for dj in range(-NEIGHBOR_SPAN, NEIGHBOR_SPAN + 1):
            for di in range(-NEIGHBOR_SPAN, NEIGHBOR_SPAN + 1):
                b = index_of.get((ri + di, rj + dj))
                if b is None:
                    continue
                bx, by = pos_arr[b]
                if line_free(grid, rx / res, ry / res, bx / res, by / res):
                    edges.append((b, current))
    edges.sort()
    return CollisionFreeGraph(pos_arr, lat_arr, edges, float(d_n), current)


def annotate(
    graph: CollisionFreeGraph,
    belief: BeliefMap,
    frontiers: np.ndarray,
    sensor: SensorModel,
) -> InformativeGraph:
    """Attach utility, guidepost and occupancy annotations.

    Utility counts the frontier cells within sensor range that have
    line-of-sight (through known-free space) from the node. The guidepost
    marks nodes lying on a shortest path from the robot node to its nearest
    node with positive utility (ties broken toward the smallest index).
    """
    m = graph.size
    res = belief.resolution
    range_cells = sensor.range_m / res
    utility = np.zeros(m, dtype=np.int64)
    if len(frontiers) > 0:
        fx, fy = frontier_centers_cells(frontiers, res)
        for idx in range(m):
            x, y = graph.positions[idx]
            vis = visible_mask(belief.cells, x / res, y / res, fx, fy, range_cells)
            utility[idx] = int(np.count_nonzero(vis))

    gain = np.zeros(m, dtype=np.int64)
    if np.any(belief.cells == UNKNOWN):
        for idx in range(m):
            x, y = graph.positions[idx]
            contacts = first_unknown_contacts(
                belief.cells, x / res, y / res, range_cells, sensor.ray_count
            )
            gain[idx] = int(np.count_nonzero(contacts))

    guidepost = np.zeros(m, dtype=np.uint8)
    informative = np.flatnonzero(utility > 0)
    if len(informative) > 0:
        dist_robot = _dijkstra(graph, graph.current)
        reachable = [v for v in informative if math.isfinite(dist_robot[v])]
        if reachable:
            best = min(reachable, key=lambda v: (dist_robot[v], v))
            dist_best = _dijkstra(graph, best)
            target_d = dist_robot[best]
            for v in range(m):
                if dist_robot[v] + dist_best[v] <= target_d + _EPS * (1.0 + target_d):
                    guidepost[v] = 1

    occupancy = np.zeros(m, dtype=np.uint8)
    occupancy[graph.current] = 1
    return InformativeGraph(graph, utility, guidepost, occupancy, gain, belief, sensor)


def _dijkstra(graph: CollisionFreeGraph, source: int) -> np.ndarray:
    dist = np.full(graph.size, np.inf)
    dist[source] = 0.0
    heap = [(0.0, source)]
    adj = graph.adjacency()
    done = np.zeros(graph.size, dtype=bool)
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v, length in adj[u]:
            nd = d + length
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def shortest_path(graph: CollisionFreeGraph, start: int, goal: int) -> PathResult:
    """Minimal-total-length node sequence from start to goal.

    Among equal-length paths the lexicographically smallest node-index
    sequence is returned. Disconnected pairs give an unreachable result
    rather than an exception.
    """
    if start == goal:
        return PathResult([start], 0.0, True)
    dist_to_goal = _dijkstra(graph, goal)
    total = dist_to_goal[start]
    if not math.isfinite(total):
        return PathResult([], math.inf, False)
    adj = graph.adjacency()
    nodes = [start]
    cur = start
    # Greedy walk: always take the smallest-index neighbor that stays on a
    # shortest path; this yields the lexicographic minimum.
    while cur != goal:
        for v, length in adj[cur]:  # sorted by index
            if length + dist_to_goal[v] <= dist_to_goal[cur] + _EPS * (1.0 + total):
                cur = v
                nodes.append(v)
                break
        else:  # pragma: no cover - dijkstra guarantees a successor
            return PathResult([], math.inf, False)
    return PathResult(nodes, float(total), True)


def graph_distances(graph: CollisionFreeGraph, source: int) -> np.ndarray:
    """Shortest-path distance from source to every node (inf if unreachable)."""
    return _dijkstra(graph, source)


def nearest_informative(igraph: InformativeGraph, source: int) -> int | None:
    """Reachable node with positive utility at minimal graph distance from
    source; ties go to the smallest index. None when no such node exists."""
    dist = _dijkstra(igraph.base, source)
    best = None
    best_key = (math.inf, -1)
    for v in np.flatnonzero(igraph.utility > 0):
        v = int(v)
        if math.isfinite(dist[v]) and (dist[v], v) < best_key:
            best_key = (dist[v], v)
            best = v
    return best


def dump_graph(igraph: InformativeGraph) -> str:
    """Debug text dump: one `node x y u b occ` line per node then one
    `edge i j` line per edge."""
    lines = []
    for i in range(igraph.size):
        x, y = igraph.base.positions[i]
        lines.append(
            f"node {x:.3f} {y:.3f} {int(igraph.utility[i])} "
            f"{int(igraph.guidepost[i])} {int(igraph.occupancy[i])}"
        )
    for i, j in igraph.base.edges:
        lines.append(f"edge {i} {j}")
    return "\n".join(lines) + "\n"
