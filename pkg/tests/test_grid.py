import math
from fractions import Fraction

import numpy as np
import pytest

from gridslam import (
    FREE,
    OBSTACLE,
    UNKNOWN,
    OccupancyGrid,
    Pose,
    crop_local,
    iou_free,
    iou_obstacle,
    parse_png,
    rasterize,
    render_png,
    supercover_line,
)

from _oracles import frac_supercover, house_expected_cells
from _synth import box_plan, house_plan


def grid_of(rows, resolution=1.0, origin=(0.0, 0.0)):
    return OccupancyGrid(np.array(rows, dtype=np.uint8), resolution, origin)


# -- pose / indexing -----------------------------------------------------------

def test_pose_wraps_theta():
    assert Pose(0, 0, math.pi).theta == pytest.approx(-math.pi)
    assert Pose(0, 0, 3 * math.pi).theta == pytest.approx(-math.pi)
    assert Pose(0, 0, -math.pi).theta == pytest.approx(-math.pi)
    assert Pose(0, 0, 0.5).theta == 0.5


def test_world_cell_round_trip():
    g = grid_of(np.zeros((7, 9)), resolution=0.25, origin=(-1.0, 2.0))
    for r in range(7):
        for c in range(9):
            x, y = g.cell_to_world(r, c)
            assert g.world_to_cell(x, y) == (r, c)


def test_world_to_cell_half_up():
    g = grid_of(np.zeros((4, 4)), resolution=1.0, origin=(0.0, 0.0))
    # points exactly between two centers round up in the index coordinate
    assert g.world_to_cell(0.5, 0.0) == (0, 1)
    assert g.world_to_cell(0.49, 0.0) == (0, 0)
    assert g.world_to_cell(0.0, -0.5) == (1, 0)
    assert g.world_to_cell(0.0, -0.49) == (0, 0)


def test_grid_validation():
    with pytest.raises(ValueError):
        OccupancyGrid(np.zeros((2, 2), dtype=np.uint8), 0.0, (0, 0))
    with pytest.raises(ValueError):
        OccupancyGrid(np.full((2, 2), 9, dtype=np.uint8), 0.1, (0, 0))
    with pytest.raises(ValueError):
        OccupancyGrid(np.zeros(4, dtype=np.uint8), 0.1, (0, 0))


# -- supercover ----------------------------------------------------------------

def test_supercover_axis_line():
    cells = [(i, j) for i, j, _ in supercover_line(0, 0, 3, 0)]
    assert cells == [(0, 0), (1, 0), (2, 0), (3, 0)]


def test_supercover_diagonal_emits_corner_pairs():
    cells = [(i, j) for i, j, _ in supercover_line(0, 0, 2, 2)]
    # every corner crossing contributes both side cells before the diagonal
    assert cells == [(0, 0), (1, 0), (0, 1), (1, 1), (2, 1), (1, 2), (2, 2)]


def test_supercover_single_cell():
    cells = supercover_line(0.2, -0.1, 0.3, 0.1)
    assert [(i, j) for i, j, _ in cells] == [(0, 0)]


def test_supercover_entry_params_sorted():
    ts = [t for _, _, t in supercover_line(-3.3, 1.2, 7.8, -4.4)]
    assert ts == sorted(ts)
    assert ts[0] == 0.0
    assert all(0.0 <= t < 1.0 for t in ts)


def test_supercover_matches_exact_oracle():
    rng = np.random.default_rng(42)
    for _ in range(200):
        # odd quarter-integer endpoints: exact in binary floats (so the
        # Fraction oracle sees the same segment) and never on a cell
        # boundary, where start-cell assignment is a tie-break convention
        # rather than geometry
        q = rng.integers(-14, 14, size=4) * 2 + 1
        x0, y0, x1, y1 = (int(v) for v in q)
        got = {(i, j) for i, j, _ in supercover_line(x0 / 4, y0 / 4, x1 / 4, y1 / 4)}
        want = frac_supercover(
            Fraction(x0, 4), Fraction(y0, 4), Fraction(x1, 4), Fraction(y1, 4)
        )
        assert got == want, (x0, y0, x1, y1)


def test_supercover_exact_long_diagonals():
    for k in (1, 3, 7):
        got = {(i, j) for i, j, _ in supercover_line(0, 0, k, k)}
        want = frac_supercover(0, 0, k, k)
        assert got == want


def test_supercover_reverse_same_cells():
    seg = (-1.25, 0.5, 3.75, 2.25)
    fwd = {(i, j) for i, j, _ in supercover_line(*seg)}
    rev = {(i, j) for i, j, _ in supercover_line(seg[2], seg[3], seg[0], seg[1])}
    assert fwd == rev


def test_supercover_chain_is_adjacent():
    rng = np.random.default_rng(7)
    for _ in range(50):
        x0, y0, x1, y1 = rng.uniform(-9, 9, size=4)
        cells = [(i, j) for i, j, _ in supercover_line(x0, y0, x1, y1)]
        assert len(set(cells)) == len(cells)
        for a, b in zip(cells, cells[1:]):
            assert max(abs(a[0] - b[0]), abs(a[1] - b[1])) == 1


# -- rasterize -----------------------------------------------------------------

def test_rasterize_unit_square_layout():
    g = rasterize(box_plan(1, 1), 0.1, 0.1)
    assert g.cells.shape == (12, 12)
    assert g.origin == pytest.approx((-0.05, 1.05))
    inner = g.cells[2:-2, 2:-2]
    assert (inner == int(FREE)).all()
    assert g.count(FREE) == 64
    # wall ring plus the margin/exterior ring are all obstacle
    assert (g.cells[0, :] == int(OBSTACLE)).all()
    assert (g.cells[1, 1:-1] == int(OBSTACLE)).all()
    assert (g.cells[:, 11] == int(OBSTACLE)).all()
    assert g.count(UNKNOWN) == 0


def test_rasterize_halving_resolution_scales_free_area():
    plan = box_plan(2, 2)
    coarse = rasterize(plan, 0.1, 0.1)
    fine = rasterize(plan, 0.05, 0.05)
    # 4x the free cells, up to one wall perimeter of quantization
    assert abs(fine.count(FREE) - 4 * coarse.count(FREE)) <= 2 * (fine.height + fine.width)


def test_rasterize_thick_wall_band():
    # a divider through cell centers widens to a 3-cell band at 0.3 m
    plan = box_plan(4, 4)
    plan.segments.append((2.05, 0.0, 2.05, 4.0))
    g = rasterize(plan, 0.1, 0.3)
    row = g.height // 2
    col = g.world_to_cell(2.05, 2.0)[1]
    assert (g.cells[row, col - 1 : col + 2] == int(OBSTACLE)).all()
    assert g.cells[row, col - 2] == int(FREE)
    assert g.cells[row, col + 2] == int(FREE)


def test_rasterize_sealed_pocket_stays_free():
    # interiorness comes from the flood fill, not reachability
    plan = house_plan(np.random.default_rng(3), rooms=3, doors=False)
    g = rasterize(plan, 0.1, 0.1)
    assert (g.cells == house_expected_cells(plan, g)).all()


def test_rasterize_matches_arithmetic_oracle():
    rng = np.random.default_rng(11)
    for k in range(8):
        plan = house_plan(rng, rooms=2 + k % 3, doors=bool(k % 2))
        g = rasterize(plan, 0.1, 0.1)
        expected = house_expected_cells(plan, g)
        assert (g.cells == expected).all(), plan.id


def test_rasterize_rejects_bad_input():
    plan = box_plan(1, 1)
    with pytest.raises(ValueError):
        rasterize(plan, 0.0, 0.1)
    with pytest.raises(ValueError):
        rasterize(plan, 0.1, 0.0)
    from gridslam import FloorPlan

    with pytest.raises(ValueError):
        rasterize(FloorPlan(id="empty", segments=[]), 0.1)
    with pytest.raises(ValueError):
        rasterize(FloorPlan(id="dot", segments=[(1.0, 1.0, 1.0, 1.0)]), 0.1)


# -- local crops ---------------------------------------------------------------

def _nine_by_nine():
    cells = np.full((9, 9), int(FREE), dtype=np.uint8)
    g = grid_of(cells, resolution=1.0, origin=(-4.0, 4.0))
    return g


def test_crop_local_facing_east():
    g = _nine_by_nine()
    g.cells[4, 6] = int(OBSTACLE)  # world (2, 0), east of center
    crop = crop_local(g, Pose(0.0, 0.0, 0.0), 5.0)
    assert crop.cells.shape == (5, 5)
    assert crop.cells[2, 2] == int(FREE)  # the robot cell
    assert crop.cells[2, 4] == int(OBSTACLE)  # ahead = +x = right of image


def test_crop_local_rotation_moves_world_features():
    g = _nine_by_nine()
    g.cells[4, 6] = int(OBSTACLE)
    crop = crop_local(g, Pose(0.0, 0.0, math.pi / 2), 5.0)
    # facing north, an eastern obstacle sits to the robot's right
    assert crop.cells[4, 2] == int(OBSTACLE)
    assert crop.cells[2, 4] != int(OBSTACLE)


def test_crop_local_outside_reads_unknown():
    g = _nine_by_nine()
    crop = crop_local(g, Pose(4.0, 4.0, 0.0), 7.0)
    assert crop.cells[0, -1] == int(UNKNOWN)  # beyond the map corner
    assert crop.cells[3, 3] == int(FREE)


def test_crop_local_rejects_subcell_side():
    g = _nine_by_nine()
    with pytest.raises(ValueError):
        crop_local(g, Pose(0, 0, 0), 0.4)


# -- iou ------------------------------------------------------------------------

def test_iou_identical_and_disjoint():
    a = grid_of([[1, 1], [2, 0]])
    assert iou_free(a, a) == 1.0
    assert iou_obstacle(a, a) == 1.0
    b = grid_of([[2, 2], [1, 1]])
    # free sets {(0,0),(0,1)} vs {(1,0),(1,1)} do not overlap
    assert iou_free(a, b) == 0.0


def test_iou_partial_overlap():
    a = grid_of([[1, 1, 1, 0]])
    b = grid_of([[1, 1, 0, 1]])
    assert iou_free(a, b) == pytest.approx(2 / 4)


def test_iou_empty_union_is_one():
    a = grid_of([[0, 0]])
    b = grid_of([[0, 0]])
    assert iou_free(a, b) == 1.0
    assert iou_obstacle(a, b) == 1.0


def test_iou_shape_mismatch():
    with pytest.raises(ValueError):
        iou_free(grid_of([[1]]), grid_of([[1, 1]]))


# -- png round trip -------------------------------------------------------------

def test_png_round_trip_both_palettes():
    rng = np.random.default_rng(5)
    cells = rng.integers(0, 3, size=(17, 23)).astype(np.uint8)
    g = grid_of(cells, resolution=0.1, origin=(1.0, 2.0))
    for palette in ("dataset", "observation"):
        data = render_png(g, palette=palette)
        back = parse_png(data, palette=palette, resolution=0.1, origin=(1.0, 2.0))
        assert back == g


def test_png_render_deterministic():
    g = grid_of(np.eye(5, dtype=np.uint8))
    assert render_png(g) == render_png(g)


def test_parse_png_rejects_foreign_pixels():
    from PIL import Image
    import io

    img = Image.new("L", (4, 4), color=17)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    with pytest.raises(ValueError):
        parse_png(buf.getvalue(), palette="dataset")
