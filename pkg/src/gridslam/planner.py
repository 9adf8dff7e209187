"""Grid path planning and the two built-in action policies."""

from __future__ import annotations

import heapq
import math
from typing import Optional

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .env import Action
from .grid import FREE, OBSTACLE, UNKNOWN, OccupancyGrid, Pose, _wrap_angle

__all__ = ["astar", "random_policy", "frontier_policy", "frontier_cells"]

_SQRT2 = math.sqrt(2.0)

# Fixed neighbor order; diagonals interleaved. Deterministic expansion order
# plus the (f, flat-index) heap key makes results reproducible.
_DIRS = (
    (-1, 0, 1.0),
    (-1, 1, _SQRT2),
    (0, 1, 1.0),
    (1, 1, _SQRT2),
    (1, 0, 1.0),
    (1, -1, _SQRT2),
    (0, -1, 1.0),
    (-1, -1, _SQRT2),
)


def _octile(r0: int, c0: int, r1: int, c1: int) -> float:
    dr = abs(r0 - r1)
    dc = abs(c0 - c1)
    return max(dr, dc) + (_SQRT2 - 1.0) * min(dr, dc)


def astar(
    grid: OccupancyGrid, start: tuple[int, int], goal: tuple[int, int]
) -> list[tuple[int, int]]:
    """Shortest 8-connected path over Free cells, as a list of (row, col).

    Moves cost 1 (orthogonal) or sqrt(2) (diagonal). A diagonal move is
    blocked when both cells it clips past are Obstacle; a single obstacle
    corner may be cut. Ties on f are resolved toward the smaller flat cell
    index. Returns [] when no path exists and [start] when start == goal.
    """
    for name, cell in (("start", start), ("goal", goal)):
        if not grid.in_bounds(*cell):
            raise ValueError(f"{name} {cell} is outside the grid")
    cells = grid.cells
    if cells[start] != int(FREE) or cells[goal] != int(FREE):
        return []
    if start == goal:
        return [start]

    h, w = cells.shape
    start_f = start[0] * w + start[1]
    goal_f = goal[0] * w + goal[1]
    g = np.full(h * w, np.inf)
    parent = np.full(h * w, -1, dtype=np.int64)
    closed = np.zeros(h * w, dtype=bool)
    g[start_f] = 0.0
    heap: list[tuple[float, int]] = [(_octile(*start, *goal), start_f)]

    while heap:
        f, cur = heapq.heappop(heap)
        if closed[cur]:
            continue
        if cur == goal_f:
            path = []
            node = cur
            while node != -1:
                path.append((node // w, node % w))
                node = int(parent[node])
            path.reverse()
            return path
        closed[cur] = True
        r, c = divmod(cur, w)
        base = g[cur]
        for dr, dc, cost in _DIRS:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < h and 0 <= nc < w):
                continue
            if cells[nr, nc] != int(FREE):
                continue
            if dr and dc:
                if cells[r + dr, c] == int(OBSTACLE) and cells[r, c + dc] == int(OBSTACLE):
                    continue
            nf = nr * w + nc
            ng = base + cost
            if ng < g[nf] - 1e-12:
                g[nf] = ng
                parent[nf] = cur
                heapq.heappush(heap, (ng + _octile(nr, nc, *goal), nf))
    return []


def random_policy(rng: np.random.Generator) -> Action:
    """Uniform draw over the three actions."""
    return Action(int(rng.integers(3)))


def frontier_cells(built_map: OccupancyGrid) -> np.ndarray:
    """Boolean mask of Free cells 4-adjacent to at least one Unknown cell."""
    cells = built_map.cells
    unknown = cells == int(UNKNOWN)
    near = np.zeros_like(unknown)
    near[:-1, :] |= unknown[1:, :]
    near[1:, :] |= unknown[:-1, :]
    near[:, :-1] |= unknown[:, 1:]
    near[:, 1:] |= unknown[:, :-1]
    return (cells == int(FREE)) & near


def _adjacency(cells: np.ndarray, trav: np.ndarray) -> csr_matrix:
    h, w = cells.shape
    idx = np.arange(h * w).reshape(h, w)
    rows_all = []
    cols_all = []
    data_all = []
    obst = cells == int(OBSTACLE)
    for dr, dc, cost in _DIRS:
        src_r = slice(max(0, -dr), h - max(0, dr))
        src_c = slice(max(0, -dc), w - max(0, dc))
        dst_r = slice(max(0, dr), h - max(0, -dr))
        dst_c = slice(max(0, dc), w - max(0, -dc))
        ok = trav[src_r, src_c] & trav[dst_r, dst_c]
        if dr and dc:
            # Clipping past two obstacle corners is blocked; one is fine.
            flank_a = obst[dst_r, src_c]
            flank_b = obst[src_r, dst_c]
            ok &= ~(flank_a & flank_b)
        rows_all.append(idx[src_r, src_c][ok])
        cols_all.append(idx[dst_r, dst_c][ok])
        data_all.append(np.full(int(ok.sum()), cost))
    rows = np.concatenate(rows_all)
    cols = np.concatenate(cols_all)
    data = np.concatenate(data_all)
    return csr_matrix((data, (rows, cols)), shape=(h * w, h * w))


def _nearest_frontier(
    cells: np.ndarray, trav: np.ndarray, src: int, frontier_flat: np.ndarray
) -> Optional[tuple[int, np.ndarray]]:
    """(target flat index, predecessor array) of the cheapest reachable
    frontier cell, ties toward the smaller flat index; None if unreachable."""
    h, w = cells.shape
    if not trav.flat[src]:
        return None
    graph = _adjacency(cells, trav)
    dist, pred = dijkstra(
        graph, directed=True, indices=src, return_predecessors=True
    )
    d = dist[frontier_flat]
    finite = np.isfinite(d)
    if not finite.any():
        return None
    # frontier_flat is ascending, argmin picks the first minimum.
    best = int(frontier_flat[finite][int(np.argmin(d[finite]))])
    return best, pred


def frontier_policy(
    built_map: OccupancyGrid,
    pose: Pose,
    rng: np.random.Generator,
    robot_radius: float = 0.0,
    angular_step_deg: float = 10.0,
) -> Action:
    """Head for the nearest frontier; rotate first, then drive.

    Obstacles are inflated by the robot radius before path costing; when
    inflation disconnects everything the search retries uninflated, and with
    no reachable frontier at all the policy degrades to a random action.
    The first waypoint of the cheapest path sets the desired heading; the
    robot moves Forward once the heading error is under half an action turn.
    """
    cells = built_map.cells
    h, w = cells.shape
    frontier = frontier_cells(built_map)
    rc = built_map.world_to_cell(pose.x, pose.y)
    if not frontier.any() or not built_map.in_bounds(*rc):
        return random_policy(rng)
    frontier_flat = np.flatnonzero(frontier)
    src = rc[0] * w + rc[1]

    free = cells == int(FREE)
    clear = ndimage.distance_transform_edt(cells != int(OBSTACLE)) * built_map.resolution
    found = None
    for trav in (free & (clear > robot_radius), free):
        found = _nearest_frontier(cells, trav, src, frontier_flat)
        if found is not None:
            break
    if found is None:
        return random_policy(rng)
    target, pred = found

    if target == src:
        # Standing on the frontier: face its Unknown side and push outward.
        r, c = rc
        for dr, dc in ((-1, 0), (0, 1), (1, 0), (0, -1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and cells[nr, nc] == int(UNKNOWN):
                target = nr * w + nc
                break
        waypoint = target
    else:
        waypoint = target
        while int(pred[waypoint]) != src:
            waypoint = int(pred[waypoint])

    wr, wc = divmod(waypoint, w)
    wx, wy = built_map.cell_to_world(wr, wc)
    desired = math.atan2(wy - pose.y, wx - pose.x)
    err = _wrap_angle(desired - pose.theta)
    half_turn = math.radians(angular_step_deg) / 2.0
    if abs(err) < half_turn:
        return Action.FORWARD
    return Action.ROTATE_LEFT if err > 0 else Action.ROTATE_RIGHT
