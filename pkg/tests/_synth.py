"""Synthetic plans and grids shared by the tests.

House geometry is grid-friendly by construction: outer walls sit on integer
coordinates, interior dividers and door endpoints on odd multiples of 0.05 m,
so at 0.1 m resolution every wall lands on a full column/row of cell centers
and the expected raster can be computed by plain arithmetic.
"""

import numpy as np

from gridslam import FREE, OBSTACLE, FloorPlan, OccupancyGrid


def box_plan(w, h, plan_id="box"):
    segs = [
        (0.0, 0.0, float(w), 0.0),
        (float(w), 0.0, float(w), float(h)),
        (float(w), float(h), 0.0, float(h)),
        (0.0, float(h), 0.0, 0.0),
    ]
    return FloorPlan(id=plan_id, segments=segs, rooms=[])


def _snap_center(v):
    # nearest odd multiple of 0.05 (a cell-center x at 0.1 m resolution)
    return round(round(v * 10.0 - 0.5) / 10.0 + 0.05, 2)


def house_plan(rng, rooms=3, doors=True, door_width=0.8, plan_id=None):
    """A W x H box split into vertical strips by full-height dividers.

    Each divider optionally gets one door gap (0.8 m wide so the gap
    endpoints land on cell centers too). With doors=False the strips are
    sealed off from each other, which is what the connectivity-repair tests
    want as raw input.
    """
    w = int(rng.integers(5, 9))
    h = int(rng.integers(4, 8))
    plan = box_plan(w, h, plan_id or f"house{w}x{h}")
    dividers = []
    for i in range(1, max(1, rooms)):
        x = _snap_center(w * i / rooms + float(rng.uniform(-0.3, 0.3)))
        gy = _snap_center(float(rng.uniform(1.0, h - 1.0)))
        dividers.append((x, gy))
        if doors:
            lo = round(gy - door_width / 2.0, 2)
            hi = round(gy + door_width / 2.0, 2)
            plan.segments.append((x, 0.0, x, lo))
            plan.segments.append((x, hi, x, float(h)))
        else:
            plan.segments.append((x, 0.0, x, float(h)))
    plan.extra["synth"] = {
        "w": w,
        "h": h,
        "dividers": dividers,
        "doors": doors,
        "door_width": door_width,
    }
    return plan


def random_obstacle_grid(rng, n=20, density=0.3, resolution=1.0):
    cells = np.where(rng.random((n, n)) < density, int(OBSTACLE), int(FREE))
    return OccupancyGrid(cells.astype(np.uint8), resolution, (0.0, 0.0))
