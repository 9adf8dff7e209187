"""Simulated mapping: sector scans, sensor noise and map merging.

A scan casts rays over the sensor FOV through the ground-truth grid and
returns a local sector raster aligned with the map lattice. Along each ray,
cells before the first obstacle read Free, the obstacle cell reads Obstacle
and everything behind it stays Unknown. Range noise slides obstacle returns
along their rays, registration noise rotates and shifts the whole sector
about the robot cell. Merging overwrites the map with every non-Unknown
sector cell, growing the map when needed.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .grid import FREE, OBSTACLE, UNKNOWN, OccupancyGrid, Pose, supercover_line

__all__ = [
    "SensorSpec",
    "NoiseSpec",
    "NoiseLog",
    "SectorScan",
    "default_angular_step_deg",
    "scan",
    "perturb_ranges",
    "perturb_registration",
    "merge",
]


@dataclass(frozen=True)
class SensorSpec:
    """Range sensor parameters.

    ``angular_step_deg=None`` picks the finest useful step for the grid at
    scan time: the angle one cell subtends at maximum range. Explicit steps
    coarser than that bound are rejected because they could leave radial
    gaps in the swept sector.
    """

    range_m: float = 5.0
    fov_deg: float = 360.0
    angular_step_deg: Optional[float] = None

    def __post_init__(self) -> None:
        if not (self.range_m > 0.0 and math.isfinite(self.range_m)):
            raise ValueError("sensor range must be positive")
        if not (0.0 < self.fov_deg <= 360.0):
            raise ValueError("fov must be in (0, 360] degrees")
        if self.angular_step_deg is not None and self.angular_step_deg <= 0.0:
            raise ValueError("angular step must be positive")


@dataclass(frozen=True)
class NoiseSpec:
    """Standard deviations for the two noise stages; zero disables a stage."""

    range_sigma_cells: float = 0.0
    reg_theta_sigma_rad: float = 0.0
    reg_xy_sigma_m: float = 0.0

    def __post_init__(self) -> None:
        for name in ("range_sigma_cells", "reg_theta_sigma_rad", "reg_xy_sigma_m"):
            v = getattr(self, name)
            if v < 0.0 or not math.isfinite(v):
                raise ValueError(f"{name} must be a finite non-negative number")


@dataclass
class NoiseLog:
    """Raw perturbation draws recorded on a sector, for diagnostics."""

    range_shifts: Optional[np.ndarray] = None
    reg_theta: Optional[float] = None
    reg_shift: Optional[tuple[float, float]] = None


@dataclass
class SectorScan:
    """A local scan raster plus the pose it was taken from.

    The grid shares the lattice of the ground truth it was scanned from, so
    merging reduces to an integer offset. Ray bookkeeping is kept privately
    so range noise can re-derive labels; registration resampling drops it.
    """

    grid: OccupancyGrid
    center: Pose
    noise_log: NoiseLog = field(default_factory=NoiseLog)
    _table: Optional["_RayTable"] = field(default=None, repr=False)
    _stop: Optional[np.ndarray] = field(default=None, repr=False)
    _hit: Optional[np.ndarray] = field(default=None, repr=False)
    _hit_t: Optional[np.ndarray] = field(default=None, repr=False)


def default_angular_step_deg(resolution: float, range_m: float) -> float:
    """Angle subtended by one cell at maximum range, in degrees."""
    return math.degrees(math.atan2(resolution, range_m))


# -- ray tables ---------------------------------------------------------------

class _RayTable:
    """Precomputed supercover traversals for one (sensor, resolution, heading).

    Rays are padded to a common length. All offset arrays are robot-relative
    cell offsets; ``entry`` is the distance (in cells) at which the ray
    enters each cell, ``hyp`` the center distance of the cell.
    """

    __slots__ = (
        "n_rays", "max_len", "lens", "angles",
        "dr", "dc", "entry", "hyp", "valid", "halo", "range_cells",
    )

    def __init__(self, resolution: float, sensor: SensorSpec, theta: float):
        step_deg = sensor.angular_step_deg
        if step_deg is None:
            step_deg = default_angular_step_deg(resolution, sensor.range_m)
        length = sensor.range_m / resolution
        self.range_cells = length

        n = int(math.floor(sensor.fov_deg / step_deg + 1e-9)) + 1
        if sensor.fov_deg >= 360.0 - 1e-9 and (n - 1) * step_deg >= 360.0 - 1e-9:
            n -= 1  # full circle: the closing ray duplicates the first
        start = theta - math.radians(sensor.fov_deg) / 2.0
        step = math.radians(step_deg)

        rays = []
        for k in range(n):
            a = start + k * step
            cells = supercover_line(0.0, 0.0, length * math.cos(a), -length * math.sin(a))
            rays.append((a, cells))

        self.n_rays = n
        self.max_len = max(len(c) for _, c in rays)
        self.lens = np.array([len(c) for _, c in rays], dtype=np.int32)
        self.angles = np.array([a for a, _ in rays], dtype=np.float64)
        self.dr = np.zeros((n, self.max_len), dtype=np.int16)
        self.dc = np.zeros((n, self.max_len), dtype=np.int16)
        self.entry = np.full((n, self.max_len), np.inf, dtype=np.float64)
        self.valid = np.zeros((n, self.max_len), dtype=bool)
        for i, (_, cells) in enumerate(rays):
            m = len(cells)
            self.dc[i, :m] = [cu for cu, _, _ in cells]
            self.dr[i, :m] = [cv for _, cv, _ in cells]
            self.entry[i, :m] = [t * length for _, _, t in cells]
            self.valid[i, :m] = True
        self.hyp = np.hypot(self.dr.astype(np.float64), self.dc.astype(np.float64))
        self.halo = int(max(np.abs(self.dr).max(), np.abs(self.dc).max()))


_TABLE_CACHE: "OrderedDict[tuple, _RayTable]" = OrderedDict()
_TABLE_CACHE_MAX = 48
_THETA_QUANTUM = 1e-6


def _ray_table(resolution: float, sensor: SensorSpec, theta: float) -> _RayTable:
    tq = round(theta / _THETA_QUANTUM)
    key = (
        round(resolution, 12),
        round(sensor.range_m, 9),
        round(sensor.fov_deg, 9),
        None if sensor.angular_step_deg is None else round(sensor.angular_step_deg, 12),
        tq,
    )
    table = _TABLE_CACHE.get(key)
    if table is None:
        table = _RayTable(resolution, sensor, tq * _THETA_QUANTUM)
        _TABLE_CACHE[key] = table
        if len(_TABLE_CACHE) > _TABLE_CACHE_MAX:
            _TABLE_CACHE.popitem(last=False)
    else:
        _TABLE_CACHE.move_to_end(key)
    return table


# -- scanning -----------------------------------------------------------------

def scan(ground_truth: OccupancyGrid, pose: Pose, sensor: SensorSpec) -> SectorScan:
    """Simulate one scan of the ground truth from ``pose``.

    Returns a sector raster of side ``2 * K + 1`` cells centered on the robot
    cell, where K covers the sensor range. Rays originate at the robot cell
    center. Unknown ground-truth cells and the map border behave as opaque:
    the ray stops without marking anything.

    Raises:
        ValueError: pose off the grid or not on a Free cell, or an explicit
            angular step too coarse for this grid and range.
    """
    res = ground_truth.resolution
    if sensor.angular_step_deg is not None:
        bound = default_angular_step_deg(res, sensor.range_m)
        if sensor.angular_step_deg > bound * (1.0 + 1e-9):
            raise ValueError(
                f"angular step {sensor.angular_step_deg:.4f} deg exceeds the "
                f"one-cell bound {bound:.4f} deg at range {sensor.range_m} m"
            )
    r0, c0 = ground_truth.world_to_cell(pose.x, pose.y)
    if not ground_truth.in_bounds(r0, c0):
        raise ValueError("scan pose lies outside the ground-truth grid")
    if ground_truth.cells[r0, c0] != int(FREE):
        raise ValueError("scan pose is not on a Free cell")

    table = _ray_table(res, sensor, pose.theta)
    K = table.halo
    side = 2 * K + 1

    abs_r = r0 + table.dr.astype(np.int64)
    abs_c = c0 + table.dc.astype(np.int64)
    inside = (
        (abs_r >= 0)
        & (abs_r < ground_truth.height)
        & (abs_c >= 0)
        & (abs_c < ground_truth.width)
        & table.valid
    )
    vals = np.full(abs_r.shape, int(UNKNOWN), dtype=np.uint8)
    vals[inside] = ground_truth.cells[abs_r[inside], abs_c[inside]]

    # A ray stops at the first obstacle, unknown cell or border crossing.
    blocking = (vals == int(OBSTACLE)) | (vals == int(UNKNOWN)) | ~inside
    has_stop = blocking.any(axis=1)
    first_stop = np.argmax(blocking, axis=1)
    stop = np.where(has_stop, first_stop, table.lens)

    rows = np.arange(table.n_rays)
    hit = has_stop & (vals[rows, first_stop] == int(OBSTACLE)) & inside[rows, first_stop]
    hit_t = np.where(hit, table.hyp[rows, first_stop], np.nan)

    cols = np.arange(table.max_len)
    free_sel = cols[None, :] < stop[:, None]
    sec = np.full((side, side), int(UNKNOWN), dtype=np.uint8)
    sec[K + table.dr[free_sel], K + table.dc[free_sel]] = int(FREE)
    if hit.any():
        hr = rows[hit]
        hs = first_stop[hit]
        sec[K + table.dr[hr, hs], K + table.dc[hr, hs]] = int(OBSTACLE)

    origin = (
        ground_truth.origin[0] + (c0 - K) * res,
        ground_truth.origin[1] - (r0 - K) * res,
    )
    return SectorScan(
        grid=OccupancyGrid(sec, res, origin),
        center=pose,
        _table=table,
        _stop=stop,
        _hit=hit,
        _hit_t=hit_t,
    )


def _rebuild_from_rays(sector: SectorScan) -> None:
    """Re-derive the sector raster from current per-ray stop bookkeeping."""
    table = sector._table
    assert table is not None and sector._stop is not None and sector._hit is not None
    K = table.halo
    side = 2 * K + 1
    cols = np.arange(table.max_len)
    free_sel = cols[None, :] < sector._stop[:, None]
    sec = np.full((side, side), int(UNKNOWN), dtype=np.uint8)
    sec[K + table.dr[free_sel], K + table.dc[free_sel]] = int(FREE)
    hit = sector._hit
    if hit.any():
        rows = np.arange(table.n_rays)[hit]
        idx = sector._stop[hit]
        # Obstacle labels win over Free from neighboring rays.
        sec[K + table.dr[rows, idx], K + table.dc[rows, idx]] = int(OBSTACLE)
    sector.grid = OccupancyGrid(sec, sector.grid.resolution, sector.grid.origin)


def perturb_ranges(sector: SectorScan, noise: NoiseSpec, rng: np.random.Generator) -> SectorScan:
    """Slide each obstacle return along its ray by a rounded Gaussian shift.

    Shifts are drawn per obstacle ray as N(0, sigma^2) in cells, rounded to
    the nearest cell and clamped so the return stays between one cell from
    the robot and the sensor range. Labels along the ray are re-derived from
    the shifted endpoint. Zero sigma is an exact identity.
    """
    if noise.range_sigma_cells == 0.0:
        return sector
    if sector._table is None:
        raise ValueError("sector no longer carries ray data (already resampled?)")
    table = sector._table
    hit = sector._hit
    assert hit is not None and sector._hit_t is not None and sector._stop is not None

    n_hits = int(np.count_nonzero(hit))
    draws = rng.normal(0.0, noise.range_sigma_cells, size=n_hits)
    log = sector.noise_log
    log.range_shifts = draws.copy()
    if n_hits == 0:
        return sector

    range_cells = _sensor_range_cells(sector)
    shift = np.floor(draws + 0.5)
    t_new = np.clip(sector._hit_t[hit] + shift, 1.0, range_cells)

    # Index of the last cell the shortened/lengthened ray still touches.
    hit_rows = np.nonzero(hit)[0]
    stop_new = np.empty(len(hit_rows), dtype=np.int64)
    for i, (row, t) in enumerate(zip(hit_rows, t_new)):
        stop_new[i] = int(np.searchsorted(table.entry[row], t + 1e-9, side="right")) - 1
    stop_new = np.maximum(stop_new, 1)

    stops = sector._stop.copy()
    stops[hit_rows] = stop_new
    sector._stop = stops
    new_hit_t = sector._hit_t.copy()
    new_hit_t[hit_rows] = table.hyp[hit_rows, stop_new]
    sector._hit_t = new_hit_t
    _rebuild_from_rays(sector)
    return sector


def _sensor_range_cells(sector: SectorScan) -> float:
    table = sector._table
    assert table is not None
    return float(table.range_cells)


def perturb_registration(
    sector: SectorScan, noise: NoiseSpec, rng: np.random.Generator
) -> SectorScan:
    """Rotate and shift the sector about the robot cell, NN-resampled.

    Draw order is rotation, then x shift, then y shift. The sector keeps its
    lattice alignment and center pose; only cell contents move. Ray
    bookkeeping is dropped, so range noise must run first. Zero sigmas are an
    exact identity.
    """
    if noise.reg_theta_sigma_rad == 0.0 and noise.reg_xy_sigma_m == 0.0:
        return sector
    theta = float(rng.normal(0.0, noise.reg_theta_sigma_rad))
    dx = float(rng.normal(0.0, noise.reg_xy_sigma_m))
    dy = float(rng.normal(0.0, noise.reg_xy_sigma_m))
    log = sector.noise_log
    log.reg_theta = theta
    log.reg_shift = (dx, dy)

    src = sector.grid.cells
    side = src.shape[0]
    K = (side - 1) // 2
    res = sector.grid.resolution

    jj, ii = np.meshgrid(np.arange(side), np.arange(side))
    u = (jj - K) * res - dx
    v = (K - ii) * res - dy
    cos_t = math.cos(theta)
    sin_t = math.sin(theta)
    xi = cos_t * u + sin_t * v
    yi = -sin_t * u + cos_t * v
    sc = K + np.floor(xi / res + 0.5).astype(np.int64)
    sr = K - np.floor(yi / res + 0.5).astype(np.int64)
    inside = (sr >= 0) & (sr < side) & (sc >= 0) & (sc < side)

    out = np.full_like(src, int(UNKNOWN))
    out[inside] = src[sr[inside], sc[inside]]
    sector.grid = OccupancyGrid(out, res, sector.grid.origin)
    sector._table = None
    sector._stop = None
    sector._hit = None
    sector._hit_t = None
    return sector


# -- merging ------------------------------------------------------------------

def merge(map_prev: OccupancyGrid, sector: SectorScan) -> OccupancyGrid:
    """Overwrite the map with every non-Unknown sector cell.

    The sector lattice must align with the map (same resolution, origins a
    whole number of cells apart). When non-Unknown content falls outside the
    map, the map grows and new cells start Unknown. Always returns a new
    grid; an all-Unknown sector yields an identical copy.
    """
    res = map_prev.resolution
    if abs(res - sector.grid.resolution) > 1e-12:
        raise ValueError("sector and map resolutions differ")

    content = sector.grid.cells != int(UNKNOWN)
    if not content.any():
        return map_prev.copy()
    rows_any = np.nonzero(content.any(axis=1))[0]
    cols_any = np.nonzero(content.any(axis=0))[0]
    i0, i1 = int(rows_any[0]), int(rows_any[-1])
    j0, j1 = int(cols_any[0]), int(cols_any[-1])

    c_off = int(math.floor((sector.grid.origin[0] - map_prev.origin[0]) / res + 0.5))
    r_off = int(math.floor((map_prev.origin[1] - sector.grid.origin[1]) / res + 0.5))

    top = r_off + i0
    bottom = r_off + i1
    left = c_off + j0
    right = c_off + j1

    grow_top = max(0, -top)
    grow_left = max(0, -left)
    grow_bottom = max(0, bottom - (map_prev.height - 1))
    grow_right = max(0, right - (map_prev.width - 1))

    if grow_top or grow_left or grow_bottom or grow_right:
        new_h = map_prev.height + grow_top + grow_bottom
        new_w = map_prev.width + grow_left + grow_right
        cells = np.full((new_h, new_w), int(UNKNOWN), dtype=np.uint8)
        cells[grow_top : grow_top + map_prev.height, grow_left : grow_left + map_prev.width] = (
            map_prev.cells
        )
        origin = (
            map_prev.origin[0] - grow_left * res,
            map_prev.origin[1] + grow_top * res,
        )
    else:
        cells = map_prev.cells.copy()
        origin = map_prev.origin

    window = cells[
        grow_top + top : grow_top + bottom + 1, grow_left + left : grow_left + right + 1
    ]
    patch = sector.grid.cells[i0 : i1 + 1, j0 : j1 + 1]
    patch_mask = content[i0 : i1 + 1, j0 : j1 + 1]
    window[patch_mask] = patch[patch_mask]
    return OccupancyGrid(cells, res, origin)
