"""Expert demonstrations: rollout recording, on-disk format, windowing.

A demonstration is one oracle-driven episode recorded step by step: the
annotated graph snapshot the policy would have seen, the executed 5x5
action, and the oracle's remaining plan. Records are stored one per file
as npz containers with a format-version field; a JSON manifest indexes a
directory of them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .actions import ACTION_DIM, HorizonConfig, displacement_to_indices, encode_action
from .episode import SimConfig, setup_episode
from .graph import annotate, build_graph
from .oracle import OracleProblem, UncoverableFrontierError, build_truth_graph, ground_truth_frontiers, plan_coverage
from .world import detect_frontiers, is_complete, sense

FORMAT_VERSION = 1


class RejectedEnvironment(RuntimeError):
    """The oracle could not demonstrate this environment (uncoverable
    frontier or step budget exceeded); callers resample another seed."""


@dataclass
class StepRecord:
    positions: np.ndarray  # (m, 2) node coordinates
    edges: np.ndarray  # (E, 2) int64
    utility: np.ndarray  # (m,)
    guidepost: np.ndarray  # (m,)
    robot: int  # node index
    action: tuple[int, int]  # executed 5x5 index pair
    oracle_path: np.ndarray  # remaining planned positions, (P, 2)


@dataclass
class DemonstrationRecord:
    env_seed: int
    d_n: float
    resolution: float
    sensor_range: float
    ray_count: int
    oracle_cost: float  # initial plan cost
    distance: float  # executed distance
    steps: list[StepRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.steps)


def rollout_expert(
    seed: int,
    sim: SimConfig = SimConfig(),
    horizon: HorizonConfig = HorizonConfig(),
    truth=None,
) -> DemonstrationRecord:
    """Run the ground-truth coverage planner to completion, recording one
    (graph snapshot, action) pair per executed step."""
    try:
        truth, pose, belief, budget = setup_episode(seed, sim, truth)
    except UncoverableFrontierError as err:
        raise RejectedEnvironment(f"seed {seed}: {err}") from err

    truth_graph = build_truth_graph(truth, pose, sim.d_n)
    dist_cache = OracleProblem(truth_graph, truth, np.zeros((0, 2), int), sim.sensor).distances()

    record = DemonstrationRecord(
        env_seed=seed,
        d_n=sim.d_n,
        resolution=truth.resolution,
        sensor_range=sim.sensor.range_m,
        ray_count=sim.sensor.ray_count,
        oracle_cost=0.0,
        distance=0.0,
    )

    steps = 0
    initial_cost = None
    while not is_complete(belief, truth):
        if steps >= budget:
            raise RejectedEnvironment(f"seed {seed}: oracle exceeded step budget {budget}")
        graph = build_graph(belief, pose, sim.d_n)
        frontiers = detect_frontiers(belief)
        igraph = annotate(graph, belief, frontiers, sim.sensor)

        node = truth_graph.node_at(pose)
        if node is None:
            raise RejectedEnvironment(f"seed {seed}: robot left the oracle graph")
        problem = OracleProblem(
            replace(truth_graph, current=node),
            truth,
            ground_truth_frontiers(truth, belief),
            sim.sensor,
            restarts=sim.oracle_restarts,
            seed=int(np.random.SeedSequence((seed, steps)).generate_state(1)[0]),
            dist_matrix=dist_cache,
        )
        try:
            plan = plan_coverage(problem)
        except UncoverableFrontierError as err:
            raise RejectedEnvironment(f"seed {seed}: {err}") from err
        if initial_cost is None:
            initial_cost = plan.cost
        if len(plan.node_path) < 2:
            raise RejectedEnvironment(f"seed {seed}: oracle plan stalled before completion")

        target_pos = tuple(truth_graph.positions[plan.node_path[1]])
        next_node = _executable_step(graph, igraph, target_pos)
        if next_node is None:
            raise RejectedEnvironment(f"seed {seed}: no executable step toward the plan")

        cur_pos = tuple(graph.positions[graph.current])
        nxt_pos = tuple(graph.positions[next_node])
        di = round((nxt_pos[0] - cur_pos[0]) / sim.d_n)
        dj = round((nxt_pos[1] - cur_pos[1]) / sim.d_n)
        action = displacement_to_indices(int(di), int(dj))

        record.steps.append(
            StepRecord(
                positions=graph.positions.copy(),
                edges=np.asarray(graph.edges, dtype=np.int64).reshape(-1, 2),
                utility=igraph.utility.copy(),
                guidepost=igraph.guidepost.copy(),
                robot=graph.current,
                action=action,
                oracle_path=np.asarray(plan.trajectory.waypoints[1:], dtype=np.float64).reshape(-1, 2),
            )
        )
        record.distance += math.hypot(nxt_pos[0] - cur_pos[0], nxt_pos[1] - cur_pos[1])
        pose = nxt_pos
        belief = sense(truth, belief, pose, sim.sensor)
        steps += 1

    record.oracle_cost = float(initial_cost if initial_cost is not None else 0.0)
    return record


def _executable_step(graph, igraph, target_pos):
    """Direct edge to the planned node, else one shortest-path step toward
    it (ray discretization can leave an oracle edge unobserved)."""
    from .graph import shortest_path

    node = graph.node_at(target_pos)
    if node is None:
        return None
    if node == graph.current or graph.has_edge(graph.current, node):
        return node
    leg = shortest_path(graph, graph.current, node)
    if leg.reachable and len(leg.nodes) >= 2:
        return leg.nodes[1]
    return None


# --- windows ---------------------------------------------------------------


@dataclass
class Window:
    record_index: int
    step: int  # decision step t
    snapshot_steps: tuple[int, ...]  # indices of the T_o graph snapshots
    target: np.ndarray  # (T_p, ACTION_DIM) one-hot rows


def window_target(record: DemonstrationRecord, t: int, horizon: HorizonConfig) -> np.ndarray:
    """T_p one-hot action rows covering times t-T_o+1 .. t-T_o+T_p: the
    T_o-1 previously executed actions (repeating the first at the episode
    start) followed by the expert's future actions, stay-padded past the
    episode end."""
    rows = []
    for i in range(t - horizon.observation + 1, t - horizon.observation + 1 + horizon.prediction):
        if i < 0:
            action = record.steps[0].action
        elif i < len(record.steps):
            action = record.steps[i].action
        else:
            action = (2, 2)
        rows.append(encode_action(*action))
    return np.stack(rows).astype(np.float32)


def make_windows(record: DemonstrationRecord, horizon: HorizonConfig, record_index: int = 0) -> list[Window]:
    """One training window per recorded step (stride 1)."""
    windows = []
    for t in range(len(record.steps)):
        snaps = tuple(
            max(0, t + offset) for offset in range(-(horizon.observation - 1), 1)
        )
        windows.append(
            Window(record_index, t, snaps, window_target(record, t, horizon))
        )
    return windows


# --- disk format -----------------------------------------------------------


def save_demo(record: DemonstrationRecord, path):
    arrays = {
        "format_version": np.array([FORMAT_VERSION]),
        "env_seed": np.array([record.env_seed]),
        "scalars": np.array(
            [record.d_n, record.resolution, record.sensor_range, record.ray_count,
             record.oracle_cost, record.distance]
        ),
        "robot": np.array([s.robot for s in record.steps], dtype=np.int64),
        "action": np.array([s.action for s in record.steps], dtype=np.int64),
    }
    for name, getter in (
        ("positions", lambda s: s.positions),
        ("edges", lambda s: s.edges),
        ("utility", lambda s: s.utility),
        ("guidepost", lambda s: s.guidepost),
        ("oracle_path", lambda s: s.oracle_path),
    ):
        parts = [np.asarray(getter(s)) for s in record.steps]
        offsets = np.cumsum([0] + [len(p) for p in parts])
        arrays[f"{name}_data"] = (
            np.concatenate(parts) if parts else np.zeros((0,), dtype=np.float64)
        )
        arrays[f"{name}_offsets"] = offsets
    np.savez_compressed(path, **arrays)


def load_demo(path) -> DemonstrationRecord:
    with np.load(path) as z:
        version = int(z["format_version"][0])
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported demo format v{version}")
        d_n, resolution, sensor_range, ray_count, oracle_cost, distance = z["scalars"]
        robots = z["robot"]
        actions = z["action"]

        def split(name):
            data = z[f"{name}_data"]
            offsets = z[f"{name}_offsets"]
            return [data[offsets[i] : offsets[i + 1]] for i in range(len(offsets) - 1)]

        positions = split("positions")
        edges = split("edges")
        utility = split("utility")
        guidepost = split("guidepost")
        oracle_path = split("oracle_path")

        record = DemonstrationRecord(
            env_seed=int(z["env_seed"][0]),
            d_n=float(d_n),
            resolution=float(resolution),
            sensor_range=float(sensor_range),
            ray_count=int(ray_count),
            oracle_cost=float(oracle_cost),
            distance=float(distance),
        )
        for i in range(len(robots)):
            record.steps.append(
                StepRecord(
                    positions=positions[i].reshape(-1, 2),
                    edges=edges[i].reshape(-1, 2).astype(np.int64),
                    utility=utility[i].astype(np.int64),
                    guidepost=guidepost[i].astype(np.uint8),
                    robot=int(robots[i]),
                    action=(int(actions[i][0]), int(actions[i][1])),
                    oracle_path=oracle_path[i].reshape(-1, 2),
                )
            )
    return record


def demo_filename(seed: int) -> str:
    return f"demo_{seed}.npz"


def write_manifest(directory, entries: list[dict]):
    path = Path(directory) / "manifest.json"
    with open(path, "w") as f:
        json.dump({"format_version": FORMAT_VERSION, "demos": entries}, f, indent=2, sort_keys=True)


def read_manifest(directory) -> list[dict]:
    with open(Path(directory) / "manifest.json") as f:
        data = json.load(f)
    if data.get("format_version") != FORMAT_VERSION:
        raise ValueError("unsupported manifest version")
    return data["demos"]


def generate_demos(
    seeds,
    out_dir,
    sim: SimConfig = SimConfig(),
    horizon: HorizonConfig = HorizonConfig(),
    count: int | None = None,
    log=None,
):
    """Roll out the oracle over a seed stream, skipping rejected
    environments, until `count` demos exist (or the stream is exhausted).
    Returns the manifest entries."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for seed in seeds:
        if count is not None and len(entries) >= count:
            break
        try:
            record = rollout_expert(seed, sim, horizon)
        except RejectedEnvironment as err:
            if log:
                log(f"rejected: {err}")
            continue
        fname = demo_filename(seed)
        save_demo(record, out / fname)
        entries.append(
            {
                "seed": seed,
                "file": fname,
                "length": len(record),
                "oracle_cost": record.oracle_cost,
                "distance": record.distance,
            }
        )
        if log:
            log(f"demo seed={seed} steps={len(record)} distance={record.distance:.1f}")
    write_manifest(out, entries)
    return entries


def load_demo_dir(directory) -> list[DemonstrationRecord]:
    return [
        load_demo(Path(directory) / entry["file"]) for entry in read_manifest(directory)
    ]
