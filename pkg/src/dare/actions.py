"""Action encoding for the 5x5 neighbor move space, path decoding, and the
collision-repair pass that turns generated paths into executable ones.

An action is a 10-value vector: the first five entries one-hot the x-index
and the last five the y-index of the chosen neighbor in the robot's 5x5
lattice block; index pair (2, 2) means "stay".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import InformativeGraph, graph_distances, shortest_path

ACTION_DIM = 10
STAY = (2, 2)


def _informative_excluding_self(igraph: InformativeGraph, cur: int) -> int | None:
    """Nearest reachable node with positive gain other than the robot node."""
    dist = graph_distances(igraph.base, cur)
    best = None
    best_key = None
    for v in np.flatnonzero(igraph.gain > 0):
        v = int(v)
        if v == cur or not np.isfinite(dist[v]):
            continue
        key = (float(dist[v]), v)
        if best_key is None or key < best_key:
            best_key = key
            best = v
    return best


@dataclass(frozen=True)
class HorizonConfig:
    """Observation / prediction / action horizons of the receding-horizon
    policy; n = T_p - T_o + 1 future steps are decoded from each plan."""

    observation: int = 2  # T_o
    prediction: int = 8  # T_p
    action: int = 1  # T_a

    def __post_init__(self):
        if self.observation < 1:
            raise ValueError("observation horizon must be >= 1")
        if self.prediction <= self.observation:
            raise ValueError("prediction horizon must exceed observation horizon")
        if not 1 <= self.action <= self.future_steps:
            raise ValueError("action horizon must lie in [1, n]")

    @property
    def future_steps(self) -> int:
        return self.prediction - self.observation + 1


def encode_action(ix: int, iy: int) -> np.ndarray:
    """One-hot pair for a neighbor index in {0..4} x {0..4}."""
    if not (0 <= ix <= 4 and 0 <= iy <= 4):
        raise ValueError(f"neighbor index ({ix}, {iy}) outside the 5x5 block")
    vec = np.zeros(ACTION_DIM, dtype=np.float64)
    vec[ix] = 1.0
    vec[5 + iy] = 1.0
    return vec


def action_indices(vec) -> tuple[int, int]:
    """Block argmax decoding of one action vector."""
    vec = np.asarray(vec)
    return int(np.argmax(vec[:5])), int(np.argmax(vec[5:]))


def displacement_to_indices(dx_steps: int, dy_steps: int) -> tuple[int, int]:
    """Lattice displacement (in node-resolution steps) to index pair."""
    if abs(dx_steps) > 2 or abs(dy_steps) > 2:
        raise ValueError(f"displacement ({dx_steps}, {dy_steps}) outside the 5x5 block")
    return dx_steps + 2, dy_steps + 2


def decode_actions(sequence, origin, d_n: float, cfg: HorizonConfig) -> list[tuple[float, float]]:
    """Planned future positions from a denoised action sequence.

    Discards the T_o - 1 past steps, block-argmaxes each remaining step and
    cumulatively sums the displacements from the robot's position, giving
    n = T_p - T_o + 1 future lattice locations.
    """
    seq = np.asarray(sequence)
    if seq.shape != (cfg.prediction, ACTION_DIM):
        raise ValueError(f"expected shape {(cfg.prediction, ACTION_DIM)}, got {seq.shape}")
    future = seq[cfg.observation - 1 :]
    x, y = float(origin[0]), float(origin[1])
    out = []
    for row in future:
        ix, iy = action_indices(row)
        x += (ix - 2) * d_n
        y += (iy - 2) * d_n
        out.append((x, y))
    return out


def repair_collisions(
    path, igraph: InformativeGraph, cfg: HorizonConfig
) -> list[int] | None:
    """Executable node steps from a planned position path.

    Walks the path: planned points reached by an existing edge (or a stay)
    are kept; at the first invalid step the path is truncated after
    substituting one step of the graph shortest path toward the planned
    point (or toward the nearest informative node when the point is not a
    graph node). Returns None as the stuck signal when not even the first
    step can be made executable.
    """
    graph = igraph.base
    cur = graph.current
    steps: list[int] = []
    for pos in path:
        node = graph.node_at(pos)
        if node == cur:
            steps.append(cur)  # stay in place
            continue
        if node is not None and graph.has_edge(cur, node):
            steps.append(node)
            cur = node
            continue
        target = node if node is not None else _informative_excluding_self(igraph, cur)
        if target is None or target == cur:
            break
        leg = shortest_path(graph, cur, target)
        if leg.reachable and len(leg.nodes) >= 2:
            steps.append(leg.nodes[1])
        break  # remainder of the plan is stale after a detour
    if not steps:
        return None
    return steps
