"""Low-level grid traversal kernels shared by sensing and graph construction.

All kernels work in *cell units* (world coordinates divided by the map
resolution) on uint8 grids using the cell codes from :mod:`dare.world`.
Anything that is not FREE blocks traversal, so the same kernels serve both
ground-truth grids (occupied blocks) and belief grids (occupied and unknown
block).

Segment/cell incidence convention: a cell is traversed if the closed segment
intersects the cell's closed unit square. When a segment passes exactly
through a grid corner, all four cells sharing that corner count as traversed.
Segments whose endpoints lie exactly on a grid line resolve to the floor
cell; callers keep positions at cell centers, where this never happens.

Corner ties are detected by exact float equality, so every caller must feed
the kernels coordinates converted the same canonical way: compute positions
in meters (cell centers via ``world.cell_center``) and divide by the map
resolution. Mixing conversion orders shifts segments by an ulp and flips
knife-edge diagonals.
"""

import math

import numpy as np
from numba import njit

UNKNOWN = np.uint8(0)
FREE = np.uint8(1)
OCCUPIED = np.uint8(2)


@njit(cache=True)
def _cell_blocked(grid, iy, ix, block_unknown):
    h, w = grid.shape
    if ix < 0 or ix >= w or iy < 0 or iy >= h:
        return True
    v = grid[iy, ix]
    if block_unknown:
        return v != FREE
    return v == OCCUPIED


@njit(cache=True)
def _segment_blocked(grid, x0, y0, x1, y1, block_unknown=True):
    """Exact supercover walk from (x0, y0) to (x1, y1) in cell units.

    Returns True as soon as a traversed cell is out of bounds or blocked.
    With block_unknown=False only occupied cells block (the optimistic view
    a physical sensing ray has of unexplored space).
    """
    ix = int(math.floor(x0))
    iy = int(math.floor(y0))
    ix1 = int(math.floor(x1))
    iy1 = int(math.floor(y1))

    dx = x1 - x0
    dy = y1 - y0
    step_x = 1 if dx > 0.0 else -1
    step_y = 1 if dy > 0.0 else -1

    if dx != 0.0:
        t_delta_x = abs(1.0 / dx)
        gx = ix + 1 if step_x > 0 else ix
        t_max_x = (gx - x0) / dx
    else:
        t_delta_x = np.inf
        t_max_x = np.inf
    if dy != 0.0:
        t_delta_y = abs(1.0 / dy)
        gy = iy + 1 if step_y > 0 else iy
        t_max_y = (gy - y0) / dy
    else:
        t_delta_y = np.inf
        t_max_y = np.inf

    max_steps = 2 * (abs(ix1 - ix) + abs(iy1 - iy)) + 4
    for _ in range(max_steps):
        if _cell_blocked(grid, iy, ix, block_unknown):
            return True
        if ix == ix1 and iy == iy1:
            return False
        if t_max_x == t_max_y:
            # Corner crossing: the segment touches both side cells too.
            if _cell_blocked(grid, iy, ix + step_x, block_unknown):
                return True
            if _cell_blocked(grid, iy + step_y, ix, block_unknown):
                return True
            ix += step_x
            iy += step_y
            t_max_x += t_delta_x
            t_max_y += t_delta_y
        elif t_max_x < t_max_y:
            ix += step_x
            t_max_x += t_delta_x
        else:
            iy += step_y
            t_max_y += t_delta_y
    return True  # drift guard; unreachable on sane inputs


@njit(cache=True)
def line_free(grid, x0, y0, x1, y1):
    """True iff every cell intersected by the segment is FREE and in bounds."""
    return not _segment_blocked(grid, x0, y0, x1, y1, True)


@njit(cache=True)
def visible_mask(grid, x0, y0, txs, tys, max_range, block_unknown=True):
    """Batched line-of-sight with a range gate from one origin.

    txs/tys are target coordinates in cell units, max_range in cell units.
    With block_unknown=False, unknown cells are transparent (used to count
    cells a physical sensing ray could reach).
    """
    n = txs.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    # Absolute slack absorbs meter->cell conversion noise on the inclusive
    # boundary; cell-center geometry keeps true distances far coarser.
    r2 = max_range * max_range + 1e-6
    for i in range(n):
        dx = txs[i] - x0
        dy = tys[i] - y0
        if dx * dx + dy * dy > r2:
            continue
        out[i] = not _segment_blocked(grid, x0, y0, txs[i], tys[i], block_unknown)
    return out


@njit(cache=True)
def first_unknown_contacts(cells, x0, y0, range_cells, ray_count):
    """Unknown cells a sensing sweep from (x0, y0) is guaranteed to reveal.

    Casts the same discrete rays as ``cast_rays`` but over the belief grid:
    each ray walks through known-free cells and stops at its first unknown
    or occupied cell. A first-contact unknown cell is reached through
    observed-free space only, so the physical sensor is certain to resolve
    it. Returns a boolean grid marking those cells.
    """
    h, w = cells.shape
    out = np.zeros((h, w), dtype=np.bool_)
    if range_cells <= 0.0:
        return out
    for r in range(ray_count):
        theta = 2.0 * math.pi * (r + 0.5) / ray_count
        dx = math.cos(theta)
        dy = math.sin(theta)
        x1 = x0 + dx * range_cells
        y1 = y0 + dy * range_cells

        ix = int(math.floor(x0))
        iy = int(math.floor(y0))
        step_x = 1 if dx > 0.0 else -1
        step_y = 1 if dy > 0.0 else -1
        if dx != 0.0:
            t_delta_x = abs(1.0 / (x1 - x0))
            gx = ix + 1 if step_x > 0 else ix
            t_max_x = (gx - x0) / (x1 - x0)
        else:
            t_delta_x = np.inf
            t_max_x = np.inf
        if dy != 0.0:
            t_delta_y = abs(1.0 / (y1 - y0))
            gy = iy + 1 if step_y > 0 else iy
            t_max_y = (gy - y0) / (y1 - y0)
        else:
            t_delta_y = np.inf
            t_max_y = np.inf

        t = 0.0
        while t <= 1.0:
            if ix < 0 or ix >= w or iy < 0 or iy >= h:
                break
            v = cells[iy, ix]
            if v == UNKNOWN:
                out[iy, ix] = True
                break
            if v == OCCUPIED:
                break
            if t_max_x < t_max_y:
                t = t_max_x
                ix += step_x
                t_max_x += t_delta_x
            else:
                t = t_max_y
                iy += step_y
                t_max_y += t_delta_y
    return out


@njit(cache=True)
def cast_rays(truth, belief, x0, y0, range_cells, ray_count):
    """Mark belief cells revealed by rays from (x0, y0), in place.

    Rays are offset by half an angular bin so that none runs exactly along a
    grid diagonal from a cell center. A ray marks the cells it enters (entry
    distance <= range) FREE until it enters an occupied cell, which is marked
    OCCUPIED and ends the ray.
    """
    if range_cells <= 0.0:
        return
    h, w = truth.shape
    for r in range(ray_count):
        theta = 2.0 * math.pi * (r + 0.5) / ray_count
        dx = math.cos(theta)
        dy = math.sin(theta)
        x1 = x0 + dx * range_cells
        y1 = y0 + dy * range_cells

        ix = int(math.floor(x0))
        iy = int(math.floor(y0))
        step_x = 1 if dx > 0.0 else -1
        step_y = 1 if dy > 0.0 else -1
        if dx != 0.0:
            t_delta_x = abs(1.0 / (x1 - x0))
            gx = ix + 1 if step_x > 0 else ix
            t_max_x = (gx - x0) / (x1 - x0)
        else:
            t_delta_x = np.inf
            t_max_x = np.inf
        if dy != 0.0:
            t_delta_y = abs(1.0 / (y1 - y0))
            gy = iy + 1 if step_y > 0 else iy
            t_max_y = (gy - y0) / (y1 - y0)
        else:
            t_delta_y = np.inf
            t_max_y = np.inf

        t = 0.0
        while t <= 1.0:
            if ix < 0 or ix >= w or iy < 0 or iy >= h:
                break
            if truth[iy, ix] == OCCUPIED:
                belief[iy, ix] = OCCUPIED
                break
            belief[iy, ix] = FREE
            if t_max_x < t_max_y:
                t = t_max_x
                ix += step_x
                t_max_x += t_delta_x
            else:
                t = t_max_y
                iy += step_y
                t_max_y += t_delta_y
