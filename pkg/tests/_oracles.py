"""Independent reference implementations the tests compare against.

Nothing here may import private helpers from the package under test; each
oracle recomputes its answer by a different method (exact rational
arithmetic, globally sorted boundary crossings, plain flood fills and
Dijkstra) so a shared bug is unlikely.
"""

import heapq
import math
from collections import deque
from fractions import Fraction

import numpy as np

from gridslam import FREE, OBSTACLE, UNKNOWN


def _half_floor(v):
    # cell index of a continuous lattice coordinate (cells centered on ints)
    return math.floor(v + Fraction(1, 2)) if isinstance(v, Fraction) else math.floor(v + 0.5)


def frac_supercover(x0, y0, x1, y1):
    """Exact supercover cell set via sorted boundary-crossing times.

    Inputs are Fractions (or ints). Cells the segment crosses with positive
    measure come from interval midpoints; exact corner crossings contribute
    both side cells.
    """
    x0, y0, x1, y1 = (Fraction(v) for v in (x0, y0, x1, y1))
    dx, dy = x1 - x0, y1 - y0
    half = Fraction(1, 2)

    def crossings(p0, d):
        if d == 0:
            return set()
        lo, hi = (p0, p0 + d) if d > 0 else (p0 + d, p0)
        ts = set()
        b = math.floor(lo + half) + half  # first boundary at or above lo
        while b < hi:
            if lo < b:
                t = (b - p0) / d
                if 0 < t < 1:
                    ts.add(t)
            b += 1
        return ts

    tx = crossings(x0, dx)
    ty = crossings(y0, dy)
    ts = sorted(tx | ty | {Fraction(0), Fraction(1)})
    cells = set()
    for a, b in zip(ts, ts[1:]):
        tm = (a + b) / 2
        cells.add((_half_floor(x0 + dx * tm), _half_floor(y0 + dy * tm)))
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    for t in tx & ty:  # exact corner: both side cells
        px = x0 + dx * t
        py = y0 + dy * t
        before = (_half_floor(px - sx * half), _half_floor(py - sy * half))
        cells.add((before[0] + sx, before[1]))
        cells.add((before[0], before[1] + sy))
    return cells


def _float_ray_cells(u1, v1):
    """Cells from (0,0) toward (u1,v1) in crossing order, floats.

    Returns a list of (u, v) lattice cells. Near-coincident crossings are
    treated as a corner and contribute both side cells, mirroring the
    no-leak-through contract.
    """
    ts = [(0.0, "s"), (1.0, "e")]
    for p0, d, tag in ((0.0, u1, "u"), (0.0, v1, "v")):
        if d == 0.0:
            continue
        lo, hi = (p0, p0 + d) if d > 0 else (p0 + d, p0)
        b = math.floor(lo + 0.5) + 0.5
        while b < hi - 1e-15:
            if b > lo:
                t = (b - p0) / d
                if 0.0 < t < 1.0:
                    ts.append((t, tag))
            b += 1.0
    ts.sort()
    su = 1 if u1 > 0 else -1
    sv = 1 if v1 > 0 else -1
    out = []
    seen = set()

    def emit(c):
        if c not in seen:
            seen.add(c)
            out.append(c)

    i = 0
    while i < len(ts) - 1:
        t, tag = ts[i]
        tn, tagn = ts[i + 1]
        if tagn in ("u", "v") and tag in ("u", "v") and tag != tagn and tn - t < 1e-12:
            # corner: both side cells, then the diagonal via the next interval
            pu = u1 * t
            pv = v1 * t
            before = (_half_floor(pu - su * 0.25), _half_floor(pv - sv * 0.25))
            emit((before[0] + su, before[1]))
            emit((before[0], before[1] + sv))
            i += 1
            continue
        tm = (t + tn) / 2.0
        emit((_half_floor(u1 * tm), _half_floor(v1 * tm)))
        i += 1
    return out


def visibility_oracle(grid, pose, sensor):
    """Expected scan labels {(row, col): state} in ground-truth indices.

    Re-derives the ray fan (same documented angle policy) but walks each ray
    with the sorted-crossings method and applies the occlusion rule directly:
    Free strictly before the first blocker, Obstacle at an in-bounds obstacle
    blocker, nothing past it. Obstacle labels win over Free where rays
    disagree.
    """
    res = grid.resolution
    step_deg = sensor.angular_step_deg
    if step_deg is None:
        step_deg = math.degrees(math.atan2(res, sensor.range_m))
    n = int(math.floor(sensor.fov_deg / step_deg + 1e-9)) + 1
    if sensor.fov_deg >= 360.0 - 1e-9 and (n - 1) * step_deg >= 360.0 - 1e-9:
        n -= 1
    theta = round(pose.theta / 1e-6) * 1e-6  # the documented heading quantum
    start = theta - math.radians(sensor.fov_deg) / 2.0
    length = sensor.range_m / res
    r0, c0 = grid.world_to_cell(pose.x, pose.y)

    free = set()
    hits = set()
    for k in range(n):
        a = start + k * math.radians(step_deg)
        for du, dv in _float_ray_cells(length * math.cos(a), -length * math.sin(a)):
            r, c = r0 + dv, c0 + du
            if not (0 <= r < grid.height and 0 <= c < grid.width):
                break
            v = grid.cells[r, c]
            if v == int(OBSTACLE):
                hits.add((r, c))
                break
            if v == int(UNKNOWN):
                break
            free.add((r, c))
    labels = {cell: int(FREE) for cell in free}
    labels.update({cell: int(OBSTACLE) for cell in hits})
    return labels


def bfs_free(cells, start, conn=4):
    """Set of Free cells 4- (or 8-) reachable from start over Free cells."""
    if cells[start] != int(FREE):
        return set()
    if conn == 4:
        moves = ((-1, 0), (1, 0), (0, -1), (0, 1))
    else:
        moves = tuple((dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if dr or dc)
    h, w = cells.shape
    seen = {start}
    q = deque([start])
    while q:
        r, c = q.popleft()
        for dr, dc in moves:
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and (nr, nc) not in seen and cells[nr, nc] == int(FREE):
                seen.add((nr, nc))
                q.append((nr, nc))
    return seen


def bfs_reachable(cells, start, goal):
    """Plain BFS reachability under the planner's movement rule (8-connected,
    diagonals blocked between two flanking Obstacle cells). No costs: an
    independent mechanism from the Dijkstra-style cost oracle."""
    if cells[start] != int(FREE) or cells[goal] != int(FREE):
        return False
    h, w = cells.shape
    seen = {start}
    q = deque([start])
    while q:
        r, c = q.popleft()
        if (r, c) == goal:
            return True
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if not (dr or dc):
                    continue
                nr, nc = r + dr, c + dc
                if not (0 <= nr < h and 0 <= nc < w) or (nr, nc) in seen:
                    continue
                if cells[nr, nc] != int(FREE):
                    continue
                if dr and dc and cells[r + dr, c] == int(OBSTACLE) and cells[r, c + dc] == int(OBSTACLE):
                    continue
                seen.add((nr, nc))
                q.append((nr, nc))
    return False


def ucs_cost(cells, start, goal):
    """Uniform-cost search distance under the same movement rule the planner
    documents: 8-connected, diagonal cost sqrt(2), a diagonal blocked only
    when both flanking cells are Obstacle. inf when unreachable."""
    if cells[start] != int(FREE) or cells[goal] != int(FREE):
        return math.inf
    h, w = cells.shape
    dist = {start: 0.0}
    heap = [(0.0, start)]
    while heap:
        d, cur = heapq.heappop(heap)
        if cur == goal:
            return d
        if d > dist.get(cur, math.inf):
            continue
        r, c = cur
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if not (dr or dc):
                    continue
                nr, nc = r + dr, c + dc
                if not (0 <= nr < h and 0 <= nc < w):
                    continue
                if cells[nr, nc] != int(FREE):
                    continue
                if dr and dc and cells[r + dr, c] == int(OBSTACLE) and cells[r, c + dc] == int(OBSTACLE):
                    continue
                nd = d + (math.sqrt(2.0) if dr and dc else 1.0)
                if nd < dist.get((nr, nc), math.inf) - 1e-12:
                    dist[(nr, nc)] = nd
                    heapq.heappush(heap, (nd, (nr, nc)))
    return math.inf


def house_expected_cells(plan, grid):
    """Arithmetic ground truth for grids rasterized from _synth.house_plan.

    Works because every wall of those plans lies on a full line of cell
    centers at 0.1 m resolution: classification per cell center needs no
    geometry beyond comparisons.
    """
    meta = plan.extra["synth"]
    w, h = float(meta["w"]), float(meta["h"])
    res = grid.resolution
    xc = grid.origin[0] + res * np.arange(grid.width)
    yc = grid.origin[1] - res * np.arange(grid.height)
    X, Y = np.meshgrid(xc, yc)
    free = (X > 0.1) & (X < w - 0.1) & (Y > 0.1) & (Y < h - 0.1)
    dw = meta["door_width"]
    for dx, gy in meta["dividers"]:
        col = np.abs(X - dx) < 1e-6
        if meta["doors"]:
            wall_rows = (Y <= gy - dw / 2.0 + 1e-6) | (Y >= gy + dw / 2.0 - 1e-6)
        else:
            wall_rows = np.ones_like(col)
        free &= ~(col & wall_rows)
    return np.where(free, int(FREE), int(OBSTACLE)).astype(np.uint8)
