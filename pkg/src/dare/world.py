"""Grid-world simulator: procedural dungeons, lidar-like sensing, frontiers.

Cell codes are shared with :mod:`dare.grid_geom`: UNKNOWN=0 (belief only),
FREE=1, OCCUPIED=2. Grids are numpy uint8 arrays indexed ``grid[iy, ix]``;
world positions are ``(x, y)`` in meters with ``ix = floor(x / resolution)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid_geom import FREE, OCCUPIED, UNKNOWN, cast_rays


def cell_center(iy: int, ix: int, resolution: float) -> tuple[float, float]:
    """Metric (x, y) center of a grid cell; the canonical cell anchor used
    for all segment geometry."""
    return ((ix + 0.5) * resolution, (iy + 0.5) * resolution)


class GenerationError(RuntimeError):
    """Dungeon generation could not satisfy the map invariants."""


class InvalidPoseError(ValueError):
    """A pose fell outside free space (or outside the map)."""


@dataclass(frozen=True)
class SensorModel:
    """360-degree range sensor: max range in meters and angular samples."""

    range_m: float = 20.0
    ray_count: int = 360

    def __post_init__(self):
        if self.range_m < 0:
            raise ValueError(f"sensor range must be >= 0, got {self.range_m}")
        if self.ray_count < 8:
            raise ValueError(f"ray_count must be >= 8, got {self.ray_count}")


@dataclass
class GroundTruthMap:
    """Fully-known occupancy grid. Free space is one 4-connected component
    and the boundary ring is occupied."""

    cells: np.ndarray  # uint8, FREE/OCCUPIED
    resolution: float  # meters per cell

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    def cell_at(self, pos) -> tuple[int, int]:
        """(iy, ix) of the cell containing a metric position."""
        ix = int(math.floor(pos[0] / self.resolution))
        iy = int(math.floor(pos[1] / self.resolution))
        return iy, ix

    def in_bounds(self, iy: int, ix: int) -> bool:
        return 0 <= iy < self.height and 0 <= ix < self.width

    def is_free(self, pos) -> bool:
        iy, ix = self.cell_at(pos)
        return self.in_bounds(iy, ix) and self.cells[iy, ix] == FREE

    def free_count(self) -> int:
        return int(np.count_nonzero(self.cells == FREE))


@dataclass
class BeliefMap:
    """Partially-observed occupancy grid over the same lattice as its truth."""

    cells: np.ndarray  # uint8, UNKNOWN/FREE/OCCUPIED
    resolution: float

    @classmethod
    def unknown_like(cls, truth: GroundTruthMap) -> "BeliefMap":
        return cls(np.full_like(truth.cells, UNKNOWN), truth.resolution)

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    def cell_at(self, pos) -> tuple[int, int]:
        ix = int(math.floor(pos[0] / self.resolution))
        iy = int(math.floor(pos[1] / self.resolution))
        return iy, ix

    def is_free(self, pos) -> bool:
        iy, ix = self.cell_at(pos)
        return (
            0 <= iy < self.height
            and 0 <= ix < self.width
            and self.cells[iy, ix] == FREE
        )

    def known_count(self) -> int:
        return int(np.count_nonzero(self.cells != UNKNOWN))

    def copy(self) -> "BeliefMap":
        return BeliefMap(self.cells.copy(), self.resolution)


@dataclass
class Trajectory:
    """Ordered metric waypoints; cost is the summed segment length."""

    waypoints: list[tuple[float, float]]

    def length(self) -> float:
        total = 0.0
        for (x0, y0), (x1, y1) in zip(self.waypoints, self.waypoints[1:]):
            total += math.hypot(x1 - x0, y1 - y0)
        return total


@dataclass(frozen=True)
class DungeonParams:
    """Knobs for the room-and-corridor generator.

    Rooms are anchored on the planning lattice (see ``lattice_cells``) and
    corridors are carved along lattice rows/columns so that a graph with
    node spacing ``lattice_cells`` can traverse every passage.
    """

    room_count: tuple[int, int] = (4, 7)
    room_size: tuple[int, int] = (10, 18)  # cells, inclusive range per side
    corridor_width: int = 3
    dead_ends: tuple[int, int] = (0, 3)
    dead_end_length: tuple[int, int] = (8, 20)
    lattice_cells: int = 10
    max_retries: int = 25

    def validate(self):
        if self.room_count[0] < 1:
            raise GenerationError("room_count lower bound must be >= 1")
        if self.room_size[0] < 3:
            raise GenerationError("rooms must be at least 3 cells wide")
        if self.corridor_width < 1:
            raise GenerationError("corridor_width must be >= 1")
        if self.lattice_cells < 2:
            raise GenerationError("lattice_cells must be >= 2")


def _interior_lattice_cells(width: int, height: int, spacing: int):
    """Lattice cell indices (iy, ix) strictly inside the boundary ring."""
    xs = [x for x in range(spacing, width - 1, spacing) if 0 < x < width - 1]
    ys = [y for y in range(spacing, height - 1, spacing) if 0 < y < height - 1]
    return [(iy, ix) for iy in ys for ix in xs]


def _carve_rect(cells, y0, y1, x0, x1):
    h, w = cells.shape
    y0 = max(1, y0)
    x0 = max(1, x0)
    y1 = min(h - 1, y1)
    x1 = min(w - 1, x1)
    if y0 < y1 and x0 < x1:
        cells[y0:y1, x0:x1] = FREE


def _carve_corridor(cells, a, b, width):
    """L-shaped corridor between two lattice cells along lattice lines."""
    half = width // 2
    (ay, ax), (by, bx) = a, b
    x0, x1 = sorted((ax, bx))
    _carve_rect(cells, ay - half, ay + half + 1, x0 - half, x1 + half + 1)
    y0, y1 = sorted((ay, by))
    _carve_rect(cells, y0 - half, y1 + half + 1, bx - half, bx + half + 1)


def _largest_free_component(cells) -> np.ndarray:
    """Boolean mask of the largest 4-connected FREE component."""
    from scipy import ndimage

    free = cells == FREE
    labels, count = ndimage.label(free, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]]))
    if count == 0:
        return np.zeros_like(free)
    sizes = ndimage.sum_labels(free, labels, index=np.arange(1, count + 1))
    return labels == (int(np.argmax(sizes)) + 1)


def generate_dungeon(
    seed: int,
    width: int = 64,
    height: int = 64,
    params: DungeonParams = DungeonParams(),
) -> GroundTruthMap:
    """Deterministic room-and-corridor dungeon with an occupied border ring.

    Identical (seed, width, height, params) always produce the identical map.
    Raises GenerationError when the parameters cannot yield a connected free
    region after bounded retries.
    """
    if width < 20 or height < 20:
        raise GenerationError("maps must be at least 20x20 cells")
    params.validate()

    anchors_all = _interior_lattice_cells(width, height, params.lattice_cells)
    if not anchors_all:
        raise GenerationError("no interior lattice cell fits the requested size")

    rng = np.random.default_rng(seed)
    for _ in range(params.max_retries):
        cells = np.full((height, width), OCCUPIED, dtype=np.uint8)
        n_rooms = int(rng.integers(params.room_count[0], params.room_count[1] + 1))
        n_rooms = min(n_rooms, len(anchors_all))
        order = rng.permutation(len(anchors_all))
        room_anchors = [anchors_all[i] for i in order[:n_rooms]]

        for ay, ax in room_anchors:
            rw = int(rng.integers(params.room_size[0], params.room_size[1] + 1))
            rh = int(rng.integers(params.room_size[0], params.room_size[1] + 1))
            # Offset so the anchor cell stays inside the room.
            ox = int(rng.integers(1, rw - 1))
            oy = int(rng.integers(1, rh - 1))
            _carve_rect(cells, ay - oy, ay - oy + rh, ax - ox, ax - ox + rw)

        for a, b in zip(room_anchors, room_anchors[1:]):
            _carve_corridor(cells, a, b, params.corridor_width)

        n_dead = int(rng.integers(params.dead_ends[0], params.dead_ends[1] + 1))
        for _ in range(n_dead):
            ay, ax = room_anchors[int(rng.integers(0, len(room_anchors)))]
            length = int(rng.integers(params.dead_end_length[0], params.dead_end_length[1] + 1))
            direction = int(rng.integers(0, 4))
            dy, dx = [(0, 1), (0, -1), (1, 0), (-1, 0)][direction]
            end = (ay + dy * length, ax + dx * length)
            _carve_corridor(cells, (ay, ax), end, params.corridor_width)

        # Boundary ring stays occupied regardless of carving clamps.
        cells[0, :] = OCCUPIED
        cells[-1, :] = OCCUPIED
        cells[:, 0] = OCCUPIED
        cells[:, -1] = OCCUPIED

        keep = _largest_free_component(cells)
        cells[(cells == FREE) & ~keep] = OCCUPIED

        free_frac = np.count_nonzero(cells == FREE) / cells.size
        anchors_kept = sum(1 for (ay, ax) in room_anchors if cells[ay, ax] == FREE)
        if 0.15 <= free_frac <= 0.70 and anchors_kept == len(room_anchors):
            return GroundTruthMap(cells, 0.4)

    raise GenerationError(
        f"could not generate a valid dungeon for seed={seed} within "
        f"{params.max_retries} retries"
    )


def sense(
    truth: GroundTruthMap,
    belief: BeliefMap,
    pose,
    sensor: SensorModel,
) -> BeliefMap:
    """Reveal cells along ray_count rays from pose, returning a new belief.

    Each ray marks the cells it traverses FREE and the first occupied cell
    OCCUPIED, then stops; nothing beyond an occupied hit or the sensor range
    is touched. The pose must lie in ground-truth free space.
    """
    if truth.cells.shape != belief.cells.shape:
        raise ValueError("belief shape does not match ground truth")
    if not truth.is_free(pose):
        raise InvalidPoseError(f"sensing pose {pose} is not in free space")
    out = belief.copy()
    if sensor.range_m <= 0:
        return out
    res = truth.resolution
    cast_rays(
        truth.cells,
        out.cells,
        pose[0] / res,
        pose[1] / res,
        sensor.range_m / res,
        sensor.ray_count,
    )
    return out


def detect_frontiers(belief: BeliefMap) -> np.ndarray:
    """Free cells with at least one unknown 8-neighbor, as an (n, 2) array
    of (iy, ix) rows in row-major order."""
    free = belief.cells == FREE
    unknown = belief.cells == UNKNOWN
    near_unknown = np.zeros_like(unknown)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            src = unknown[
                max(0, dy) : unknown.shape[0] + min(0, dy),
                max(0, dx) : unknown.shape[1] + min(0, dx),
            ]
            near_unknown[
                max(0, -dy) : unknown.shape[0] + min(0, -dy),
                max(0, -dx) : unknown.shape[1] + min(0, -dx),
            ] |= src
    return np.argwhere(free & near_unknown)


def is_complete(belief: BeliefMap, truth: GroundTruthMap) -> bool:
    """True iff the belief's free space equals the ground-truth free space.

    With all free cells in one connected component and an occupied border,
    this is equivalent to the observed occupied space forming a closed
    contour around the reachable area.
    """
    return bool(np.array_equal(belief.cells == FREE, truth.cells == FREE))


def explored_fraction(belief: BeliefMap, truth: GroundTruthMap) -> float:
    total = truth.free_count()
    if total == 0:
        return 1.0
    return float(np.count_nonzero(belief.cells == FREE)) / total


# --- PGM map archive -------------------------------------------------------

_PGM_VALUES = {OCCUPIED: 0, UNKNOWN: 128, FREE: 255}
_PGM_CODES = {0: OCCUPIED, 128: UNKNOWN, 255: FREE}


def write_pgm(path, cells: np.ndarray, resolution: float):
    """Binary P5 graymap: 0=occupied, 128=unknown, 255=free; the comment
    line carries the resolution in meters per cell."""
    img = np.zeros_like(cells)
    for code, value in _PGM_VALUES.items():
        img[cells == code] = value
    h, w = cells.shape
    header = f"P5\n# resolution {resolution}\n{w} {h}\n255\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(img.astype(np.uint8).tobytes())


def read_pgm(path) -> tuple[np.ndarray, float]:
    """Inverse of write_pgm; returns (cells, resolution)."""
    with open(path, "rb") as f:
        data = f.read()
    lines = data.split(b"\n", 4)
    if lines[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    resolution = float(lines[1].decode("ascii").split()[-1])
    w, h = (int(v) for v in lines[2].split())
    raw = np.frombuffer(lines[4][: w * h], dtype=np.uint8).reshape(h, w)
    cells = np.zeros((h, w), dtype=np.uint8)
    for value, code in _PGM_CODES.items():
        cells[raw == value] = code
    return cells, resolution


def env_filename(seed: int) -> str:
    return f"env_{seed}.pgm"
