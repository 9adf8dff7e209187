"""Occupancy grids, floor-plan rasterization and raster utilities.

Grids hold exactly three cell states (unknown, free, obstacle) in a row-major
uint8 raster. Row 0 is the northernmost row; world coordinates are meters with
x pointing east and y pointing north. ``origin`` is the world position of the
center of cell (0, 0).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import TYPE_CHECKING, Iterable, Mapping

import numpy as np
from PIL import Image
from scipy import ndimage

if TYPE_CHECKING:
    from .floorplan import FloorPlan

__all__ = [
    "CellState",
    "Pose",
    "OccupancyGrid",
    "DATASET_PALETTE",
    "OBSERVATION_PALETTE",
    "rasterize",
    "crop_local",
    "iou_free",
    "iou_obstacle",
    "render_png",
    "parse_png",
    "supercover_line",
]


class CellState(IntEnum):
    """The three representable cell states."""

    UNKNOWN = 0
    FREE = 1
    OBSTACLE = 2


UNKNOWN = CellState.UNKNOWN
FREE = CellState.FREE
OBSTACLE = CellState.OBSTACLE

# Grayscale palettes for 8-bit PNG export. The dataset palette matches the
# floor-plan corpus convention, the observation palette is what policies see.
DATASET_PALETTE: dict[CellState, int] = {OBSTACLE: 0, FREE: 255, UNKNOWN: 200}
OBSERVATION_PALETTE: dict[CellState, int] = {UNKNOWN: 0, FREE: 128, OBSTACLE: 255}

_PALETTES = {"dataset": DATASET_PALETTE, "observation": OBSERVATION_PALETTE}


def _wrap_angle(theta: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped < 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


def _iround(x: float) -> int:
    # Deterministic half-up rounding, banker-free.
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class Pose:
    """Robot pose in world meters, heading in radians CCW from +x."""

    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", _wrap_angle(float(self.theta)))


@dataclass
class OccupancyGrid:
    """A three-state occupancy raster with world anchoring.

    Attributes:
        cells: uint8 array of shape (height, width), values in CellState.
        resolution: cell edge length in meters per cell.
        origin: world (x, y) of the center of cell (0, 0); row 0 is north.
    """

    cells: np.ndarray
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        self.cells = np.asarray(self.cells, dtype=np.uint8)
        if self.cells.ndim != 2:
            raise ValueError("cells must be a 2-D raster")
        if self.resolution <= 0.0 or not math.isfinite(self.resolution):
            raise ValueError("resolution must be a positive finite number")
        if self.cells.size and int(self.cells.max()) > 2:
            raise ValueError("cell values must be one of {0, 1, 2}")
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    # -- geometry ----------------------------------------------------------

    @property
    def height(self) -> int:
        return int(self.cells.shape[0])

    @property
    def width(self) -> int:
        return int(self.cells.shape[1])

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        """Map a world point to the (row, col) of the containing cell."""
        col = _iround((x - self.origin[0]) / self.resolution)
        row = _iround((self.origin[1] - y) / self.resolution)
        return row, col

    def cell_to_world(self, row: int, col: int) -> tuple[float, float]:
        """World coordinates of a cell center."""
        return (
            self.origin[0] + col * self.resolution,
            self.origin[1] - row * self.resolution,
        )

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width

    def state_at(self, row: int, col: int) -> CellState:
        return CellState(int(self.cells[row, col]))

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.cells.copy(), self.resolution, self.origin)

    def count(self, state: CellState) -> int:
        return int(np.count_nonzero(self.cells == int(state)))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (
            self.resolution == other.resolution
            and self.origin == other.origin
            and self.cells.shape == other.cells.shape
            and bool(np.array_equal(self.cells, other.cells))
        )


# -- supercover traversal ---------------------------------------------------

def supercover_line(
    x0: float, y0: float, x1: float, y1: float
) -> list[tuple[int, int, float]]:
    """Every lattice cell the segment crosses, in traversal order.

    Coordinates are continuous cell coordinates on a lattice whose cell (i, j)
    is the unit square centered on integer (i, j). Returns (i, j, t_entry)
    triples where t_entry in [0, 1) is the segment parameter at which the
    segment enters the cell. When the segment passes exactly through a cell
    corner, both side cells are included (no diagonal leak-through). A
    boundary touched exactly at the segment's far end does not admit the
    next cell; the start cell is always included, ties resolved half-up.
    """
    eps = 1e-12
    ix, iy = _iround(x0), _iround(y0)
    out: list[tuple[int, int, float]] = [(ix, iy, 0.0)]
    dx = x1 - x0
    dy = y1 - y0
    if abs(dx) < eps and abs(dy) < eps:
        return out

    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1
    # Parameter step per unit cell and parameter of the first boundary.
    t_dx = abs(1.0 / dx) if dx != 0.0 else math.inf
    t_dy = abs(1.0 / dy) if dy != 0.0 else math.inf
    t_max_x = ((ix + 0.5 * step_x) - x0) / dx if dx != 0.0 else math.inf
    t_max_y = ((iy + 0.5 * step_y) - y0) / dy if dy != 0.0 else math.inf

    limit = 1.0 - 1e-12
    guard = 2 * int(abs(dx) + abs(dy)) + 8
    for _ in range(guard):
        if t_max_x < t_max_y - eps:
            t = t_max_x
            if t > limit:
                break
            ix += step_x
            out.append((ix, iy, t))
            t_max_x += t_dx
        elif t_max_y < t_max_x - eps:
            t = t_max_y
            if t > limit:
                break
            iy += step_y
            out.append((ix, iy, t))
            t_max_y += t_dy
        else:
            # Corner crossing: the segment touches both side cells.
            t = t_max_x
            if t > limit or math.isinf(t):
                break
            out.append((ix + step_x, iy, t))
            out.append((ix, iy + step_y, t))
            ix += step_x
            iy += step_y
            out.append((ix, iy, t))
            t_max_x += t_dx
            t_max_y += t_dy
    return out


# -- rasterization ----------------------------------------------------------

_MAX_SIDE_CELLS = 40_000


def rasterize(
    plan: "FloorPlan", resolution: float, wall_thickness: float = 0.1
) -> OccupancyGrid:
    """Rasterize a line-segment floor plan to a ground-truth grid.

    Walls are drawn as Obstacle with the given thickness, the enclosed
    interior becomes Free and everything outside the outermost walls is
    Obstacle. The grid tightly bounds the plan plus a one-cell margin.
    Thick walls cover the cells whose centers fall strictly inside the
    band, so a band edge running exactly along a line of centers leaves
    those cells out.

    Raises:
        ValueError: non-positive resolution/thickness, or a plan without a
            single positive-length segment.
    """
    if resolution <= 0.0 or not math.isfinite(resolution):
        raise ValueError("resolution must be positive")
    if wall_thickness <= 0.0 or not math.isfinite(wall_thickness):
        raise ValueError("wall_thickness must be positive")

    segs = np.asarray(plan.segments, dtype=float)
    if segs.size == 0:
        raise ValueError("plan has no segments")
    if segs.ndim != 2 or segs.shape[1] != 4:
        raise ValueError("segments must be (x1, y1, x2, y2) rows")
    if not np.all(np.isfinite(segs)):
        raise ValueError("segment coordinates must be finite")
    lengths = np.hypot(segs[:, 2] - segs[:, 0], segs[:, 3] - segs[:, 1])
    if not np.any(lengths > 1e-9):
        raise ValueError("plan needs at least one segment with positive length")

    xs = np.concatenate([segs[:, 0], segs[:, 2]])
    ys = np.concatenate([segs[:, 1], segs[:, 3]])
    xmin, xmax = float(xs.min()), float(xs.max())
    ymin, ymax = float(ys.min()), float(ys.max())

    nx = int(math.ceil((xmax - xmin) / resolution - 1e-9)) + 2
    ny = int(math.ceil((ymax - ymin) / resolution - 1e-9)) + 2
    if nx > _MAX_SIDE_CELLS or ny > _MAX_SIDE_CELLS:
        raise ValueError("plan extent too large for this resolution")
    origin = (xmin - resolution / 2.0, ymax + resolution / 2.0)

    wall = np.zeros((ny, nx), dtype=bool)

    # Endpoints exactly on cell boundaries are pulled a hair toward the plan
    # centroid so walls land on the interior side instead of straddling.
    cx = float(np.mean(np.concatenate([segs[:, 0], segs[:, 2]])))
    cy = float(np.mean(np.concatenate([segs[:, 1], segs[:, 3]])))
    shrink = 1.0 - 1e-9

    t_cells = wall_thickness / resolution
    for x1, y1, x2, y2 in segs:
        x1s = cx + (x1 - cx) * shrink
        y1s = cy + (y1 - cy) * shrink
        x2s = cx + (x2 - cx) * shrink
        y2s = cy + (y2 - cy) * shrink
        u1 = (x1s - origin[0]) / resolution
        v1 = (origin[1] - y1s) / resolution
        u2 = (x2s - origin[0]) / resolution
        v2 = (origin[1] - y2s) / resolution
        for cu, cv, _ in supercover_line(u1, v1, u2, v2):
            if 0 <= cv < ny and 0 <= cu < nx:
                wall[cv, cu] = True
        if t_cells > 1.0 + 1e-9:
            _stamp_band(wall, (x1s, y1s), (x2s, y2s), wall_thickness, origin, resolution)

    # Exterior is every non-wall region that reaches the border.
    open_lbl, n_open = ndimage.label(~wall)
    border = np.zeros_like(wall)
    border[0, :] = border[-1, :] = True
    border[:, 0] = border[:, -1] = True
    exterior_ids = np.unique(open_lbl[border & ~wall])
    exterior_ids = exterior_ids[exterior_ids != 0]

    cells = np.full((ny, nx), int(FREE), dtype=np.uint8)
    cells[wall] = int(OBSTACLE)
    if exterior_ids.size:
        cells[np.isin(open_lbl, exterior_ids)] = int(OBSTACLE)
    return OccupancyGrid(cells, resolution, origin)


def _stamp_band(
    wall: np.ndarray,
    p1: tuple[float, float],
    p2: tuple[float, float],
    thickness: float,
    origin: tuple[float, float],
    resolution: float,
) -> None:
    """Mark cells whose center lies strictly inside the dilated segment."""
    ny, nx = wall.shape
    half = thickness / 2.0
    pad = half + resolution
    lo_c = max(0, _iround((min(p1[0], p2[0]) - pad - origin[0]) / resolution))
    hi_c = min(nx - 1, _iround((max(p1[0], p2[0]) + pad - origin[0]) / resolution))
    lo_r = max(0, _iround((origin[1] - max(p1[1], p2[1]) - pad) / resolution))
    hi_r = min(ny - 1, _iround((origin[1] - min(p1[1], p2[1]) + pad) / resolution))
    if lo_c > hi_c or lo_r > hi_r:
        return
    rows = np.arange(lo_r, hi_r + 1)
    cols = np.arange(lo_c, hi_c + 1)
    px = origin[0] + cols[None, :] * resolution
    py = origin[1] - rows[:, None] * resolution
    vx = p2[0] - p1[0]
    vy = p2[1] - p1[1]
    norm2 = vx * vx + vy * vy
    if norm2 < 1e-18:
        d2 = (px - p1[0]) ** 2 + (py - p1[1]) ** 2
    else:
        t = ((px - p1[0]) * vx + (py - p1[1]) * vy) / norm2
        t = np.clip(t, 0.0, 1.0)
        d2 = (px - (p1[0] + t * vx)) ** 2 + (py - (p1[1] + t * vy)) ** 2
    inside = d2 < (half - 1e-9) ** 2
    wall[lo_r : hi_r + 1, lo_c : hi_c + 1] |= inside


# -- egocentric crops -------------------------------------------------------

def crop_local(grid: OccupancyGrid, pose: Pose, side_m: float) -> OccupancyGrid:
    """Egocentric square crop, rotated so the robot heading points at +x.

    The crop is ``round(side_m / resolution)`` cells on a side, sampled with
    nearest-neighbor lookups; samples outside the source map read Unknown.
    The robot sits at the crop center and the returned grid is expressed in
    the robot frame (x forward, y left).
    """
    n = _iround(side_m / grid.resolution)
    if n < 1:
        raise ValueError("crop side is smaller than one cell")
    res = grid.resolution
    c0 = (n - 1) / 2.0

    jj, ii = np.meshgrid(np.arange(n), np.arange(n))
    fwd = (jj - c0) * res
    left = (c0 - ii) * res
    cos_t = math.cos(pose.theta)
    sin_t = math.sin(pose.theta)
    px = pose.x + fwd * cos_t - left * sin_t
    py = pose.y + fwd * sin_t + left * cos_t

    cols = np.floor((px - grid.origin[0]) / res + 0.5).astype(np.int64)
    rows = np.floor((grid.origin[1] - py) / res + 0.5).astype(np.int64)
    inside = (rows >= 0) & (rows < grid.height) & (cols >= 0) & (cols < grid.width)

    out = np.full((n, n), int(UNKNOWN), dtype=np.uint8)
    out[inside] = grid.cells[rows[inside], cols[inside]]
    return OccupancyGrid(out, res, (-c0 * res, c0 * res))


# -- comparison -------------------------------------------------------------

def _iou(a: OccupancyGrid, b: OccupancyGrid, state: CellState) -> float:
    if a.cells.shape != b.cells.shape:
        raise ValueError("grid dimensions do not match")
    mask_a = a.cells == int(state)
    mask_b = b.cells == int(state)
    union = int(np.count_nonzero(mask_a | mask_b))
    if union == 0:
        return 1.0
    inter = int(np.count_nonzero(mask_a & mask_b))
    return inter / union


def iou_free(a: OccupancyGrid, b: OccupancyGrid) -> float:
    """Intersection over union of the Free masks; 1.0 when both are empty."""
    return _iou(a, b, FREE)


def iou_obstacle(a: OccupancyGrid, b: OccupancyGrid) -> float:
    """Companion overlap metric on the Obstacle masks."""
    return _iou(a, b, OBSTACLE)


# -- PNG export -------------------------------------------------------------

def _resolve_palette(palette: str | Mapping[CellState, int]) -> dict[CellState, int]:
    if isinstance(palette, str):
        try:
            return _PALETTES[palette]
        except KeyError:
            raise ValueError(f"unknown palette {palette!r}") from None
    got = {CellState(k): int(v) for k, v in palette.items()}
    if set(got) != {UNKNOWN, FREE, OBSTACLE}:
        raise ValueError("palette must map all three cell states")
    return got


def render_png(grid: OccupancyGrid, palette: str | Mapping[CellState, int] = "dataset") -> bytes:
    """Encode the raster as 8-bit grayscale PNG, one pixel per cell."""
    pal = _resolve_palette(palette)
    lut = np.zeros(3, dtype=np.uint8)
    for state, value in pal.items():
        lut[int(state)] = value
    img = Image.fromarray(lut[grid.cells], mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def parse_png(
    data: bytes,
    palette: str | Mapping[CellState, int] = "dataset",
    resolution: float = 1.0,
    origin: tuple[float, float] = (0.0, 0.0),
) -> OccupancyGrid:
    """Decode a grayscale PNG produced by :func:`render_png`.

    Raises:
        ValueError: a pixel value that is not part of the palette.
    """
    pal = _resolve_palette(palette)
    img = Image.open(io.BytesIO(data))
    arr = np.asarray(img.convert("L"), dtype=np.uint8)
    reverse = np.full(256, 255, dtype=np.uint8)
    for state, value in pal.items():
        reverse[value] = int(state)
    decoded = reverse[arr]
    if int(decoded.max(initial=0)) > 2:
        bad = int(arr.flat[int(np.argmax(decoded > 2))])
        raise ValueError(f"pixel value {bad} is not in the palette")
    return OccupancyGrid(decoded, resolution, origin)
