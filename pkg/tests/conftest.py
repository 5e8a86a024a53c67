import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dare.grid_geom import FREE, OCCUPIED, UNKNOWN  # noqa: E402
from dare.world import BeliefMap, GroundTruthMap  # noqa: E402


def make_truth(cells) -> GroundTruthMap:
    return GroundTruthMap(np.asarray(cells, dtype=np.uint8), 0.4)


def make_belief(cells) -> BeliefMap:
    return BeliefMap(np.asarray(cells, dtype=np.uint8), 0.4)


def open_box(h, w, code=FREE):
    """Occupied border ring around a uniform interior."""
    cells = np.full((h, w), OCCUPIED, dtype=np.uint8)
    cells[1 : h - 1, 1 : w - 1] = code
    return cells


def full_belief(truth: GroundTruthMap) -> BeliefMap:
    """A belief that already knows the whole ground truth."""
    return BeliefMap(truth.cells.copy(), truth.resolution)


def random_belief(rng, h=32, w=32, p_free=0.5, p_occ=0.25):
    """Random tri-state belief grid (no structural invariants)."""
    u = rng.random((h, w))
    cells = np.full((h, w), UNKNOWN, dtype=np.uint8)
    cells[u < p_free] = FREE
    cells[u > 1.0 - p_occ] = OCCUPIED
    return BeliefMap(cells, 0.4)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
