"""Receding-horizon episode runner shared by every planner.

One episode: sense, build and annotate the belief graph, ask the planner
for a path, repair it into executable steps, execute the action horizon,
repeat until the map is fully explored or the step budget runs out. The
budget is a multiple of the oracle's initial plan cost measured in lattice
steps.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .actions import HorizonConfig, repair_collisions
from .baselines import UtilityConfig, nearest_frontier, utility_planner
from .graph import InformativeGraph, annotate, build_graph
from .grid_geom import FREE
from .oracle import (
    OracleProblem,
    build_truth_graph,
    ground_truth_frontiers,
    observability_matrix,
    plan_coverage,
)
from .world import (
    BeliefMap,
    DungeonParams,
    GroundTruthMap,
    SensorModel,
    detect_frontiers,
    explored_fraction,
    generate_dungeon,
    is_complete,
    sense,
)


@dataclass(frozen=True)
class SimConfig:
    width: int = 64
    height: int = 64
    d_n: float = 4.0
    sensor: SensorModel = SensorModel(range_m=20.0, ray_count=360)
    dungeon: DungeonParams = DungeonParams()
    oracle_restarts: int = 32
    budget_factor: float = 4.0
    budget_floor: int = 8


@dataclass
class EpisodeResult:
    planner: str
    seed: int
    distance_m: float
    steps: int
    completed: bool
    explored_curve: list[float]
    plan_time_s: float  # mean wall-clock seconds per replanning call
    poses: list[tuple[float, float]] = field(default_factory=list)
    safety_violations: int = 0
    budget: int = 0
    final_belief: BeliefMap | None = None


class Planner:
    """Per-episode planner interface; plan() returns the planned future
    positions (possibly empty-progress, i.e. the current position) or None
    as the stuck signal."""

    name = "base"

    def start_episode(self, truth: GroundTruthMap, start, sim: SimConfig, seed: int):
        pass

    def plan(self, belief: BeliefMap, igraph: InformativeGraph, frontiers, step: int):
        raise NotImplementedError


class NearestPlanner(Planner):
    name = "nearest"

    def plan(self, belief, igraph, frontiers, step):
        node = nearest_frontier(igraph)
        if node is None:
            return None
        return [tuple(igraph.base.positions[node])]


class UtilityPlanner(Planner):
    name = "utility"

    def __init__(self, cfg: UtilityConfig = UtilityConfig()):
        self.cfg = cfg

    def plan(self, belief, igraph, frontiers, step):
        node = utility_planner(igraph, self.cfg)
        if node is None:
            return None
        return [tuple(igraph.base.positions[node])]


class StayPlanner(Planner):
    """Degenerate planner that never moves; exhausts the budget."""

    name = "stay"

    def plan(self, belief, igraph, frontiers, step):
        return [tuple(igraph.base.positions[igraph.base.current])]


class OraclePlanner(Planner):
    """Ground-truth coverage planner run in the same receding-horizon loop."""

    name = "oracle"

    def __init__(self, restarts: int | None = None):
        self.restarts = restarts
        self._graph = None
        self._dist = None
        self._truth = None
        self._sensor = None
        self._seed = 0

    def start_episode(self, truth, start, sim, seed):
        self._truth = truth
        self._sensor = sim.sensor
        self._seed = seed
        self._graph = build_truth_graph(truth, start, sim.d_n)
        base_problem = OracleProblem(self._graph, truth, np.zeros((0, 2), int), sim.sensor)
        self._dist = base_problem.distances()
        if self.restarts is None:
            self.restarts = sim.oracle_restarts

    def plan(self, belief, igraph, frontiers, step):
        pos = igraph.base.positions[igraph.base.current]
        node = self._graph.node_at(pos)
        if node is None:
            return None
        graph = replace(self._graph, current=node)
        problem = OracleProblem(
            graph,
            self._truth,
            ground_truth_frontiers(self._truth, belief),
            self._sensor,
            restarts=self.restarts,
            seed=int(np.random.SeedSequence((self._seed, step)).generate_state(1)[0]),
            dist_matrix=self._dist,
        )
        result = plan_coverage(problem)
        return [tuple(graph.positions[i]) for i in result.node_path[1:]] or [tuple(pos)]


def make_planner(name: str, checkpoint=None, **kwargs) -> Planner:
    if name == "nearest":
        return NearestPlanner()
    if name == "utility":
        return UtilityPlanner(kwargs.get("utility_cfg", UtilityConfig()))
    if name == "oracle":
        return OraclePlanner(kwargs.get("oracle_restarts"))
    if name == "stay":
        return StayPlanner()
    if name == "dare":
        from .policy import DarePlanner

        if checkpoint is None:
            raise ValueError("the dare planner needs a checkpoint")
        return DarePlanner(checkpoint, kwargs.get("horizon", HorizonConfig()))
    raise ValueError(f"unknown planner {name!r}")


def start_pose(truth: GroundTruthMap, seed: int, d_n: float = 4.0) -> tuple[float, float]:
    """Deterministic free lattice node used as the episode start."""
    res = truth.resolution
    candidates = []
    i = 0
    while i * d_n + res / 2 < truth.width * res:
        j = 0
        while j * d_n + res / 2 < truth.height * res:
            pos = (i * d_n + res / 2, j * d_n + res / 2)
            if truth.is_free(pos):
                candidates.append(pos)
            j += 1
        i += 1
    if not candidates:
        raise ValueError("environment has no free lattice node")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 9001)))
    return candidates[int(rng.integers(len(candidates)))]


def environment_is_solvable(truth: GroundTruthMap, pose, sim: SimConfig) -> bool:
    """True when the coverage graph is connected from the start, every free
    cell is observable from some node, and sensing from all nodes actually
    completes the map under the discrete ray model. Such environments never
    hit an uncoverable frontier and are completable by any planner that
    keeps visiting positive-gain nodes."""
    graph = build_truth_graph(truth, pose, sim.d_n)
    from .graph import graph_distances

    dist = graph_distances(graph, graph.current)
    if not np.all(np.isfinite(dist)):
        return False
    free_cells = np.argwhere(truth.cells == FREE)
    vis = observability_matrix(graph, free_cells, truth, sim.sensor)
    if not bool(vis.any(axis=0).all()):
        return False
    belief = BeliefMap.unknown_like(truth)
    for node_pos in graph.positions:
        belief = sense(truth, belief, tuple(node_pos), sim.sensor)
    return is_complete(belief, truth)


def setup_episode(seed: int, sim: SimConfig, truth: GroundTruthMap | None = None):
    """Environment, start pose, initial belief and oracle-derived budget."""
    if truth is None:
        truth = generate_dungeon(seed, sim.width, sim.height, sim.dungeon)
    pose = start_pose(truth, seed, sim.d_n)
    belief = sense(truth, BeliefMap.unknown_like(truth), pose, sim.sensor)
    graph = build_truth_graph(truth, pose, sim.d_n)
    problem = OracleProblem(
        graph,
        truth,
        ground_truth_frontiers(truth, belief),
        sim.sensor,
        restarts=sim.oracle_restarts,
        seed=seed,
    )
    initial = plan_coverage(problem)
    budget = max(sim.budget_floor, math.ceil(sim.budget_factor * initial.cost / sim.d_n))
    return truth, pose, belief, budget


def run_episode(
    planner: Planner,
    seed: int,
    sim: SimConfig = SimConfig(),
    horizon: HorizonConfig = HorizonConfig(),
    keep_final_belief: bool = False,
    planner_seed: int | None = None,
) -> EpisodeResult:
    truth, pose, belief, budget = setup_episode(seed, sim)
    planner.start_episode(truth, pose, sim, seed if planner_seed is None else planner_seed)

    distance = 0.0
    steps = 0
    completed = is_complete(belief, truth)
    curve = [explored_fraction(belief, truth)]
    poses = [pose]
    plan_times = []
    violations = 0
    stuck = False

    while not completed and steps < budget and not stuck:
        graph = build_graph(belief, pose, sim.d_n)
        frontiers = detect_frontiers(belief)
        igraph = annotate(graph, belief, frontiers, sim.sensor)
        t0 = time.perf_counter()
        path = planner.plan(belief, igraph, frontiers, steps)
        plan_times.append(time.perf_counter() - t0)
        if path is None:
            stuck = True
            break
        node_steps = repair_collisions(path, igraph, horizon)
        if node_steps is None:
            stuck = True
            break
        for node in node_steps[: horizon.action]:
            if node != graph.current:
                if not graph.has_edge(graph.current, node):
                    violations += 1
                nxt = tuple(graph.positions[node])
                distance += math.hypot(nxt[0] - pose[0], nxt[1] - pose[1])
                pose = nxt
                graph = replace(graph, current=node)
            steps += 1
            belief = sense(truth, belief, pose, sim.sensor)
            poses.append(pose)
            curve.append(explored_fraction(belief, truth))
            completed = is_complete(belief, truth)
            if completed or steps >= budget:
                break

    return EpisodeResult(
        planner=planner.name,
        seed=seed,
        distance_m=distance,
        steps=steps,
        completed=completed,
        explored_curve=curve,
        plan_time_s=float(np.mean(plan_times)) if plan_times else 0.0,
        poses=poses,
        safety_violations=violations,
        budget=budget,
        final_belief=belief if keep_final_belief else None,
    )
