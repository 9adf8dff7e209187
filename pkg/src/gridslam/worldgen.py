"""World preparation: pocket filling, connectivity repair, cropping, dedup
and procedural obstacle placement.

These are the offline sanitation steps a raw floor-plan raster goes through
before it is usable as a simulation world, plus the per-episode obstacle
stamping (static or trajectory-driven).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np
from scipy import ndimage

from .grid import FREE, OBSTACLE, UNKNOWN, OccupancyGrid, Pose, supercover_line

__all__ = [
    "ShapeSpec",
    "ObstacleSpec",
    "PlacedObstacle",
    "RepairReport",
    "RepairError",
    "PlacementError",
    "DEFAULT_SHAPES",
    "fill_small_cells",
    "sample_free_points",
    "repair_connectivity",
    "refine_and_crop",
    "dedup",
    "generate_obstacles",
    "advance_obstacles",
    "footprint_overlaps",
]


class RepairError(RuntimeError):
    """Connectivity repair gave up; carries the partial report."""

    def __init__(self, message: str, report: "RepairReport"):
        super().__init__(message)
        self.report = report


class PlacementError(RuntimeError):
    """Obstacle placement failed; names the failing obstacle."""


# -- obstacle shapes ----------------------------------------------------------

@dataclass(frozen=True)
class ShapeSpec:
    """Axis-aligned rectangle (width x height m) or circle (radius m)."""

    kind: str
    width: float = 0.0
    height: float = 0.0
    radius: float = 0.0

    def __post_init__(self) -> None:
        if self.kind == "rectangle":
            if self.width <= 0.0 or self.height <= 0.0:
                raise ValueError("rectangle needs positive width and height")
        elif self.kind == "circle":
            if self.radius <= 0.0:
                raise ValueError("circle needs a positive radius")
        else:
            raise ValueError(f"unknown shape kind {self.kind!r}")

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "rectangle":
            return {"kind": "rectangle", "width": self.width, "height": self.height}
        return {"kind": "circle", "radius": self.radius}

    @staticmethod
    def from_dict(d: dict[str, Any]) -> "ShapeSpec":
        kind = d.get("kind")
        if kind == "rectangle":
            return ShapeSpec("rectangle", float(d["width"]), float(d["height"]))
        if kind == "circle":
            return ShapeSpec("circle", radius=float(d["radius"]))
        raise ValueError(f"unknown shape kind {kind!r}")


DEFAULT_SHAPES: tuple[ShapeSpec, ...] = (
    ShapeSpec("rectangle", 0.4, 0.4),
    ShapeSpec("rectangle", 0.6, 0.3),
    ShapeSpec("circle", radius=0.2),
)

_COUNT_RE = re.compile(r"random\((\d+)\.\.(\d+)\)")


@dataclass
class ObstacleSpec:
    """How many obstacles to stamp, their shapes, and where they go.

    ``count`` is an integer or the literal string "random(a..b)" for a
    uniform draw over {a..b}. ``placement`` is "random" or a list of (x, y)
    centers, one per obstacle. ``trajectories`` optionally gives obstacle i a
    looping list of per-step (x, y) centers; such an obstacle is dynamic and
    its initial position is trajectory[0].
    """

    count: int | str = 0
    shapes: Sequence[ShapeSpec] = DEFAULT_SHAPES
    placement: str | Sequence[tuple[float, float]] = "random"
    trajectories: Optional[Sequence[Optional[Sequence[tuple[float, float]]]]] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "count": self.count,
            "shapes": [s.to_dict() for s in self.shapes],
            "placement": self.placement
            if isinstance(self.placement, str)
            else [list(p) for p in self.placement],
            "trajectories": None
            if self.trajectories is None
            else [None if t is None else [list(p) for p in t] for t in self.trajectories],
        }

    @staticmethod
    def from_dict(d: dict[str, Any]) -> "ObstacleSpec":
        shapes = d.get("shapes")
        placement = d.get("placement", "random")
        if placement != "random":
            placement = [(float(p[0]), float(p[1])) for p in placement]
        traj = d.get("trajectories")
        if traj is not None:
            traj = [
                None if t is None else [(float(p[0]), float(p[1])) for p in t] for t in traj
            ]
        return ObstacleSpec(
            count=d.get("count", 0),
            shapes=DEFAULT_SHAPES if not shapes else [ShapeSpec.from_dict(s) for s in shapes],
            placement=placement,
            trajectories=traj,
        )


@dataclass
class PlacedObstacle:
    index: int
    shape: ShapeSpec
    position: tuple[float, float]
    trajectory: Optional[list[tuple[float, float]]] = None

    @property
    def is_dynamic(self) -> bool:
        return self.trajectory is not None


# -- sanitation ---------------------------------------------------------------

def fill_small_cells(grid: OccupancyGrid, area_threshold_m2: float) -> OccupancyGrid:
    """Fill every 4-connected Free component smaller than the threshold.

    Components with area (cells * resolution^2) strictly below the threshold
    become Obstacle; everything else is untouched.
    """
    if area_threshold_m2 <= 0.0:
        raise ValueError("area threshold must be positive")
    free = grid.cells == int(FREE)
    labels, n = ndimage.label(free)
    if n == 0:
        return grid.copy()
    cell_area = grid.resolution * grid.resolution
    sizes = np.bincount(labels.ravel())
    small = sizes * cell_area < area_threshold_m2
    small[0] = False
    out = grid.cells.copy()
    out[small[labels]] = int(OBSTACLE)
    return OccupancyGrid(out, grid.resolution, grid.origin)


def sample_free_points(
    grid: OccupancyGrid, m: int, rng: np.random.Generator
) -> list[tuple[int, int]]:
    """m distinct Free cells, uniform without replacement, as (row, col)."""
    if m < 0:
        raise ValueError("m must be non-negative")
    free = np.argwhere(grid.cells == int(FREE))
    if len(free) < m:
        raise ValueError(f"grid has {len(free)} free cells, need {m}")
    idx = rng.choice(len(free), size=m, replace=False)
    return [(int(r), int(c)) for r, c in free[idx]]


@dataclass
class RepairReport:
    sampled_points: int
    pairs_checked: int
    carves: list[dict[str, float]] = field(default_factory=list)
    connected: bool = False
    # The exact cells that were sampled, so callers can audit connectivity.
    points: list[tuple[int, int]] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "sampled_points": self.sampled_points,
                "pairs_checked": self.pairs_checked,
                "walls_carved": self.carves,
                "final_connectivity": self.connected,
            },
            indent=2,
        )


def _free_labels(cells: np.ndarray) -> np.ndarray:
    # 4-connectivity matches what a path planner that cannot squeeze between
    # two diagonal obstacles can actually reach.
    labels, _ = ndimage.label(cells == int(FREE))
    return labels


def _first_blocked_cell(
    grid: OccupancyGrid, a: tuple[int, int], b: tuple[int, int]
) -> Optional[tuple[int, int]]:
    """First non-Free cell on the straight segment between two cell centers."""
    for cu, cv, _ in supercover_line(float(a[1]), float(a[0]), float(b[1]), float(b[0])):
        if not grid.in_bounds(cv, cu):
            continue
        if grid.cells[cv, cu] != int(FREE):
            return (cv, cu)
    return None


def _stamp_free_disc(cells: np.ndarray, center: tuple[int, int], radius_cells: float) -> None:
    """Convert Obstacle cells within the disc to Free (Unknown stays put)."""
    r0, c0 = center
    rad = int(math.ceil(radius_cells))
    lo_r = max(0, r0 - rad)
    hi_r = min(cells.shape[0] - 1, r0 + rad)
    lo_c = max(0, c0 - rad)
    hi_c = min(cells.shape[1] - 1, c0 + rad)
    rr = np.arange(lo_r, hi_r + 1)[:, None] - r0
    cc = np.arange(lo_c, hi_c + 1)[None, :] - c0
    disc = rr * rr + cc * cc <= radius_cells * radius_cells
    window = cells[lo_r : hi_r + 1, lo_c : hi_c + 1]
    window[disc & (window == int(OBSTACLE))] = int(FREE)


def repair_connectivity(
    grid: OccupancyGrid,
    m: int,
    opening_width_m: float,
    rng: np.random.Generator,
    max_carves_per_pair: int = 32,
) -> tuple[OccupancyGrid, RepairReport]:
    """Carve wall openings until all m sampled free points are connected.

    Samples m free cells, walks point pairs in ascending Euclidean distance
    (ties broken by index), and for each still-disconnected pair carves a
    Free disc of the given width where the straight segment between the pair
    first crosses a wall, re-checking until the pair connects.

    Raises:
        RepairError: a pair would not connect within the carve budget; the
            exception carries the partial report.
    """
    if opening_width_m <= 0.0:
        raise ValueError("opening width must be positive")
    g = grid.copy()
    pts = sample_free_points(g, m, rng)
    report = RepairReport(sampled_points=m, pairs_checked=0, points=list(pts))

    order = sorted(
        ((i, j) for i in range(m) for j in range(i + 1, m)),
        key=lambda ij: (
            (pts[ij[0]][0] - pts[ij[1]][0]) ** 2 + (pts[ij[0]][1] - pts[ij[1]][1]) ** 2,
            ij,
        ),
    )
    labels = _free_labels(g.cells)
    radius_cells = opening_width_m / (2.0 * g.resolution)

    for i, j in order:
        report.pairs_checked += 1
        if labels[pts[i]] == labels[pts[j]]:
            continue
        for _ in range(max_carves_per_pair):
            crossing = _first_blocked_cell(g, pts[i], pts[j])
            if crossing is None:
                raise RepairError(
                    f"points {pts[i]} and {pts[j]} are disconnected but no wall "
                    "crossing lies between them",
                    report,
                )
            wx, wy = g.cell_to_world(*crossing)
            _stamp_free_disc(g.cells, crossing, radius_cells)
            report.carves.append({"x": wx, "y": wy, "width": opening_width_m})
            labels = _free_labels(g.cells)
            if labels[pts[i]] == labels[pts[j]]:
                break
        else:
            raise RepairError(
                f"points {pts[i]} and {pts[j]} not connectable within "
                f"{max_carves_per_pair} carves",
                report,
            )
    report.connected = True
    return g, report


def refine_and_crop(grid: OccupancyGrid) -> OccupancyGrid:
    """Close 1-cell nicks in walls, then crop to content plus a 1-cell margin.

    The close runs with a radius-1 structure over the obstacle mask, so a
    convex free-space corner counts as a nick too: right-angle room corners
    lose their single corner cell. Content is the free space plus its
    bounding wall shell (obstacle cells 8-adjacent to free space); the
    uniform exterior field is what gets cropped away.

    Raises:
        ValueError: grid without a single Free cell.
    """
    obst = grid.cells == int(OBSTACLE)
    closed = ndimage.binary_closing(obst)
    cells = grid.cells.copy()
    cells[closed & ~obst] = int(OBSTACLE)

    free = cells == int(FREE)
    if not free.any():
        raise ValueError("grid has no free cells left to crop around")
    shell = ndimage.binary_dilation(free, structure=np.ones((3, 3), dtype=bool))
    content = free | (shell & (cells == int(OBSTACLE)))
    rows = np.nonzero(content.any(axis=1))[0]
    cols = np.nonzero(content.any(axis=0))[0]
    top = max(0, int(rows[0]) - 1)
    bottom = min(grid.height - 1, int(rows[-1]) + 1)
    left = max(0, int(cols[0]) - 1)
    right = min(grid.width - 1, int(cols[-1]) + 1)

    out = cells[top : bottom + 1, left : right + 1].copy()
    ox, oy = grid.cell_to_world(top, left)
    return OccupancyGrid(out, grid.resolution, (ox, oy))


def dedup(grids: Sequence[OccupancyGrid], diff_threshold: float = 0.005) -> list[int]:
    """Indices of unique grids, collapsing near-duplicates.

    Grids are compared pairwise after aligning free-space centroids on a
    common Obstacle-padded canvas; pairs whose differing-cell fraction is
    strictly below the threshold are duplicates. The lowest index of each
    duplicate group survives.
    """
    if not 0.0 <= diff_threshold <= 1.0:
        raise ValueError("diff threshold must be in [0, 1]")
    n = len(grids)
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    centroids = []
    for g in grids:
        free = np.argwhere(g.cells == int(FREE))
        centroids.append(free.mean(axis=0) if len(free) else np.zeros(2))

    for i in range(n):
        for j in range(i + 1, n):
            if find(i) == find(j):
                continue
            if _aligned_diff(grids[i], grids[j], centroids[i], centroids[j]) < diff_threshold:
                parent[find(j)] = find(i)

    return sorted({find(i) for i in range(n)})


def _aligned_diff(
    a: OccupancyGrid, b: OccupancyGrid, ca: np.ndarray, cb: np.ndarray
) -> float:
    shift_r = int(math.floor(ca[0] - cb[0] + 0.5))
    shift_c = int(math.floor(ca[1] - cb[1] + 0.5))
    top = min(0, shift_r)
    left = min(0, shift_c)
    bottom = max(a.height, b.height + shift_r)
    right = max(a.width, b.width + shift_c)
    h, w = bottom - top, right - left
    ca_pad = np.full((h, w), int(OBSTACLE), dtype=np.uint8)
    cb_pad = np.full((h, w), int(OBSTACLE), dtype=np.uint8)
    ca_pad[-top : -top + a.height, -left : -left + a.width] = a.cells
    cb_pad[shift_r - top : shift_r - top + b.height, shift_c - left : shift_c - left + b.width] = (
        b.cells
    )
    return float(np.count_nonzero(ca_pad != cb_pad)) / float(h * w)


# -- obstacles ----------------------------------------------------------------

def _shape_cells(
    grid: OccupancyGrid, shape: ShapeSpec, cx: float, cy: float
) -> tuple[np.ndarray, np.ndarray]:
    """(rows, cols) of cells whose center falls inside the shape at (cx, cy)."""
    res = grid.resolution
    if shape.kind == "rectangle":
        half_w, half_h = shape.width / 2.0, shape.height / 2.0
    else:
        half_w = half_h = shape.radius
    r_lo = int(math.floor((grid.origin[1] - (cy + half_h)) / res + 0.5))
    r_hi = int(math.floor((grid.origin[1] - (cy - half_h)) / res + 0.5))
    c_lo = int(math.floor(((cx - half_w) - grid.origin[0]) / res + 0.5))
    c_hi = int(math.floor(((cx + half_w) - grid.origin[0]) / res + 0.5))
    rows = np.arange(r_lo, r_hi + 1)
    cols = np.arange(c_lo, c_hi + 1)
    py = grid.origin[1] - rows[:, None] * res
    px = grid.origin[0] + cols[None, :] * res
    if shape.kind == "rectangle":
        inside = (np.abs(px - cx) < half_w - 1e-9) & (np.abs(py - cy) < half_h - 1e-9)
    else:
        inside = (px - cx) ** 2 + (py - cy) ** 2 < (shape.radius - 1e-9) ** 2
    rr, cc = np.nonzero(inside)
    out_r = rows[rr]
    out_c = cols[cc]
    if out_r.size == 0:
        # Shapes smaller than a cell still occupy the cell under their center.
        r0, c0 = grid.world_to_cell(cx, cy)
        out_r = np.array([r0])
        out_c = np.array([c0])
    return out_r, out_c


def footprint_overlaps(
    grid: OccupancyGrid, x: float, y: float, radius: float
) -> bool:
    """True when the circular body at (x, y) covers any Obstacle cell.

    A cell is covered when the disc overlaps the cell's square with positive
    area. Cells beyond the grid border count as obstacles.
    """
    res = grid.resolution
    reach = int(math.ceil(radius / res)) + 1
    r0, c0 = grid.world_to_cell(x, y)
    rows = np.arange(r0 - reach, r0 + reach + 1)
    cols = np.arange(c0 - reach, c0 + reach + 1)
    py = grid.origin[1] - rows[:, None] * res
    px = grid.origin[0] + cols[None, :] * res
    # Distance from the disc center to each cell's closed square.
    dx = np.maximum(np.abs(x - px) - res / 2.0, 0.0)
    dy = np.maximum(np.abs(y - py) - res / 2.0, 0.0)
    covered = dx * dx + dy * dy < (radius - 1e-9) ** 2
    inside = (
        (rows[:, None] >= 0)
        & (rows[:, None] < grid.height)
        & (cols[None, :] >= 0)
        & (cols[None, :] < grid.width)
    )
    if bool((covered & ~inside).any()):
        return True
    rr, cc = np.nonzero(covered & inside)
    return bool((grid.cells[rows[rr], cols[cc]] == int(OBSTACLE)).any())


def _resolve_count(spec: ObstacleSpec, rng: np.random.Generator) -> int:
    if isinstance(spec.count, str):
        match = _COUNT_RE.fullmatch(spec.count.strip())
        if not match:
            raise ValueError(f'count must be an integer or "random(a..b)", got {spec.count!r}')
        lo, hi = int(match.group(1)), int(match.group(2))
        if lo > hi:
            raise ValueError("count range must have a <= b")
        return int(rng.integers(lo, hi + 1))
    n = int(spec.count)
    if n < 0:
        raise ValueError("count must be non-negative")
    return n


def generate_obstacles(
    ground_truth: OccupancyGrid,
    spec: ObstacleSpec,
    rng: np.random.Generator,
    robot_pose: Optional[Pose] = None,
    robot_radius: float = 0.0,
    max_attempts: int = 200,
) -> tuple[OccupancyGrid, list[PlacedObstacle]]:
    """Stamp obstacles into a copy of the ground truth.

    Random placements are rejection-sampled over free cells; nothing may
    overlap walls, previously placed obstacles or (when given) the robot
    footprint. Dynamic obstacles are validated against walls along their
    whole trajectory here, at placement time.

    Raises:
        PlacementError: a random placement found no room within the attempt
            budget, or a user placement violates the non-overlap rule.
        ValueError: malformed spec (count string, placement list length,
            trajectory length mismatch, wall collision on a trajectory).
    """
    n = _resolve_count(spec, rng)
    occupied = ground_truth.copy()
    placed: list[PlacedObstacle] = []
    if n == 0:
        return occupied, placed

    shapes = list(spec.shapes) if spec.shapes else list(DEFAULT_SHAPES)
    explicit = None
    if not isinstance(spec.placement, str):
        explicit = list(spec.placement)
        if len(explicit) != n:
            raise ValueError(f"placement list has {len(explicit)} entries for {n} obstacles")
    elif spec.placement != "random":
        raise ValueError(f'placement must be "random" or a list, got {spec.placement!r}')
    trajectories = list(spec.trajectories) if spec.trajectories is not None else [None] * n
    if len(trajectories) != n:
        raise ValueError(f"trajectories list has {len(trajectories)} entries for {n} obstacles")

    robot_blocked: Optional[tuple[np.ndarray, np.ndarray]] = None
    if robot_pose is not None and robot_radius > 0.0:
        robot_blocked = _disc_cells(occupied, robot_pose.x, robot_pose.y, robot_radius)

    for k in range(n):
        traj = trajectories[k]
        if traj is not None and len(traj) < 1:
            raise ValueError(f"obstacle {k}: trajectory must have at least one pose")

        if traj is not None or explicit is not None:
            shape = shapes[k % len(shapes)]
            pos = tuple(map(float, traj[0] if traj is not None else explicit[k]))
            rows, cols = _shape_cells(occupied, shape, *pos)
            problem = _placement_problem(occupied, rows, cols, robot_blocked)
            if problem:
                raise PlacementError(f"obstacle {k} at {pos}: {problem}")
            if traj is not None:
                for s, p in enumerate(traj):
                    tr, tc = _shape_cells(ground_truth, shape, float(p[0]), float(p[1]))
                    if _hits_walls(ground_truth, tr, tc):
                        raise ValueError(
                            f"obstacle {k}: trajectory pose {s} at {tuple(p)} hits a wall"
                        )
            occupied.cells[rows, cols] = int(OBSTACLE)
            placed.append(
                PlacedObstacle(k, shape, pos, None if traj is None else [tuple(map(float, p)) for p in traj])
            )
            continue

        # Random placement with rejection sampling.
        shape = shapes[int(rng.integers(len(shapes)))] if len(shapes) > 1 else shapes[0]
        done = False
        for _ in range(max_attempts):
            free = np.argwhere(occupied.cells == int(FREE))
            if len(free) == 0:
                break
            r, c = free[int(rng.integers(len(free)))]
            cx, cy = occupied.cell_to_world(int(r), int(c))
            rows, cols = _shape_cells(occupied, shape, cx, cy)
            if _placement_problem(occupied, rows, cols, robot_blocked):
                continue
            occupied.cells[rows, cols] = int(OBSTACLE)
            placed.append(PlacedObstacle(k, shape, (cx, cy), None))
            done = True
            break
        if not done:
            raise PlacementError(
                f"obstacle {k} ({shape.kind}): no valid placement in {max_attempts} attempts"
            )
    return occupied, placed


def _disc_cells(
    grid: OccupancyGrid, x: float, y: float, radius: float
) -> tuple[np.ndarray, np.ndarray]:
    res = grid.resolution
    reach = int(math.ceil(radius / res)) + 1
    r0, c0 = grid.world_to_cell(x, y)
    rows = np.arange(r0 - reach, r0 + reach + 1)
    cols = np.arange(c0 - reach, c0 + reach + 1)
    py = grid.origin[1] - rows[:, None] * res
    px = grid.origin[0] + cols[None, :] * res
    dx = np.maximum(np.abs(x - px) - res / 2.0, 0.0)
    dy = np.maximum(np.abs(y - py) - res / 2.0, 0.0)
    covered = dx * dx + dy * dy < (radius - 1e-9) ** 2
    rr, cc = np.nonzero(covered)
    return rows[rr], cols[cc]


def _in_bounds_all(grid: OccupancyGrid, rows: np.ndarray, cols: np.ndarray) -> bool:
    return bool(
        (rows >= 0).all()
        and (rows < grid.height).all()
        and (cols >= 0).all()
        and (cols < grid.width).all()
    )


def _hits_walls(grid: OccupancyGrid, rows: np.ndarray, cols: np.ndarray) -> bool:
    if not _in_bounds_all(grid, rows, cols):
        return True
    return bool((grid.cells[rows, cols] == int(OBSTACLE)).any())


def _placement_problem(
    occupied: OccupancyGrid,
    rows: np.ndarray,
    cols: np.ndarray,
    robot_blocked: Optional[tuple[np.ndarray, np.ndarray]],
) -> str:
    if not _in_bounds_all(occupied, rows, cols):
        return "extends outside the map"
    if bool((occupied.cells[rows, cols] != int(FREE)).any()):
        return "overlaps a wall or another obstacle"
    if robot_blocked is not None:
        mine = set(zip(rows.tolist(), cols.tolist()))
        theirs = set(zip(robot_blocked[0].tolist(), robot_blocked[1].tolist()))
        if mine & theirs:
            return "overlaps the robot footprint"
    return ""


def advance_obstacles(
    base_grid: OccupancyGrid, placed: Sequence[PlacedObstacle], step_index: int
) -> OccupancyGrid:
    """Re-stamp all obstacles for a step: dynamic ones follow their loop.

    ``base_grid`` is the obstacle-free ground truth; positions were already
    validated against its walls at placement time.
    """
    out = base_grid.copy()
    for p in placed:
        if p.trajectory:
            pos = p.trajectory[step_index % len(p.trajectory)]
        else:
            pos = p.position
        rows, cols = _shape_cells(out, p.shape, float(pos[0]), float(pos[1]))
        keep = (
            (rows >= 0) & (rows < out.height) & (cols >= 0) & (cols < out.width)
        )
        out.cells[rows[keep], cols[keep]] = int(OBSTACLE)
    return out
