"""A* against brute-force oracles, plus the two scripted policies."""

import math

import numpy as np
import pytest

from gridslam import (
    FREE,
    OBSTACLE,
    UNKNOWN,
    Action,
    OccupancyGrid,
    Pose,
    astar,
    frontier_cells,
    frontier_policy,
    random_policy,
)

from _oracles import bfs_free, bfs_reachable, ucs_cost
from _synth import random_obstacle_grid

SQRT2 = math.sqrt(2.0)


def grid_of(rows, resolution=1.0):
    """Build a grid from strings: '.' free, '#' obstacle, '?' unknown."""
    lut = {".": int(FREE), "#": int(OBSTACLE), "?": int(UNKNOWN)}
    cells = np.array([[lut[ch] for ch in row] for row in rows], dtype=np.uint8)
    return OccupancyGrid(cells, resolution, (0.0, 0.0))


def path_cost(path):
    total = 0.0
    for (r0, c0), (r1, c1) in zip(path, path[1:]):
        total += SQRT2 if (r0 != r1 and c0 != c1) else 1.0
    return total


def assert_valid_path(grid, path):
    cells = grid.cells
    for cell in path:
        assert cells[cell] == int(FREE)
    for (r0, c0), (r1, c1) in zip(path, path[1:]):
        dr, dc = r1 - r0, c1 - c0
        assert max(abs(dr), abs(dc)) == 1
        if dr and dc:
            both = (
                cells[r0 + dr, c0] == int(OBSTACLE)
                and cells[r0, c0 + dc] == int(OBSTACLE)
            )
            assert not both, f"corner cut at {(r0, c0)} -> {(r1, c1)}"


# -- astar ---------------------------------------------------------------------

def test_astar_corridor():
    g = grid_of([".........."])
    path = astar(g, (0, 0), (0, 9))
    assert len(path) == 10
    assert path[0] == (0, 0) and path[-1] == (0, 9)
    assert path_cost(path) == 9.0


def test_astar_start_is_goal():
    g = grid_of(["...", "...", "..."])
    assert astar(g, (1, 1), (1, 1)) == [(1, 1)]


def test_astar_prefers_diagonal():
    g = grid_of(["...", "...", "..."])
    path = astar(g, (0, 0), (2, 2))
    assert path == [(0, 0), (1, 1), (2, 2)]


def test_astar_detours_around_wall():
    g = grid_of([
        ".....",
        ".###.",
        ".#...",
        ".#.#.",
        "...#.",
    ])
    path = astar(g, (2, 2), (0, 0))
    assert_valid_path(g, path)
    assert path[0] == (2, 2) and path[-1] == (0, 0)
    assert abs(path_cost(path) - ucs_cost(g.cells, (2, 2), (0, 0))) < 1e-9


def test_astar_corner_rule_blocks_double_flank():
    g = grid_of([
        ".#",
        "#.",
    ])
    assert astar(g, (0, 0), (1, 1)) == []


def test_astar_corner_rule_allows_single_flank():
    g = grid_of([
        ".#",
        "..",
    ])
    path = astar(g, (0, 0), (1, 1))
    assert path == [(0, 0), (1, 1)]


def test_astar_unknown_flank_does_not_block():
    # Only a pair of Obstacle flanks voids the diagonal; Unknown does not,
    # even though Unknown itself is not traversable.
    g = grid_of([
        ".?",
        "#.",
    ])
    assert astar(g, (0, 0), (1, 1)) == [(0, 0), (1, 1)]


def test_astar_unreachable_is_empty():
    g = grid_of([
        "..#..",
        "..#..",
        "..#..",
    ])
    assert astar(g, (1, 0), (1, 4)) == []


def test_astar_obstacle_endpoints_empty():
    g = grid_of(["..#"])
    assert astar(g, (0, 2), (0, 0)) == []
    assert astar(g, (0, 0), (0, 2)) == []


def test_astar_out_of_bounds_raises():
    g = grid_of(["..."])
    with pytest.raises(ValueError):
        astar(g, (0, 0), (5, 5))
    with pytest.raises(ValueError):
        astar(g, (-1, 0), (0, 0))


def test_astar_matches_oracles_on_random_grids():
    rng = np.random.default_rng(2024)
    for trial in range(50):
        g = random_obstacle_grid(rng, n=20, density=0.3)
        free = np.argwhere(g.cells == int(FREE))
        s, t = free[rng.integers(len(free))], free[rng.integers(len(free))]
        start, goal = (int(s[0]), int(s[1])), (int(t[0]), int(t[1]))
        path = astar(g, start, goal)
        oracle = ucs_cost(g.cells, start, goal)
        reachable = bfs_reachable(g.cells, start, goal)
        assert (path != []) == reachable
        assert reachable == (oracle != math.inf)
        if path:
            assert path[0] == start and path[-1] == goal
            assert len(set(path)) == len(path)
            assert_valid_path(g, path)
            assert abs(path_cost(path) - oracle) < 1e-9


def test_astar_deterministic():
    rng = np.random.default_rng(5)
    g = random_obstacle_grid(rng, n=20, density=0.3)
    free = np.argwhere(g.cells == int(FREE))
    start = (int(free[0][0]), int(free[0][1]))
    goal = (int(free[-1][0]), int(free[-1][1]))
    assert astar(g, start, goal) == astar(g, start, goal)


def test_corner_rule_matches_4conn_on_two_state_grids():
    # With no Unknown cells, a single free flank always offers an orthogonal
    # detour, so corner-rule reachability collapses to plain 4-connectivity.
    # Cross-checks the two independent oracles against each other.
    rng = np.random.default_rng(77)
    for _ in range(10):
        g = random_obstacle_grid(rng, n=15, density=0.35)
        free = np.argwhere(g.cells == int(FREE))
        s = free[rng.integers(len(free))]
        start = (int(s[0]), int(s[1]))
        comp = bfs_free(g.cells, start, conn=4)
        for t in free[rng.integers(len(free), size=8)]:
            goal = (int(t[0]), int(t[1]))
            assert bfs_reachable(g.cells, start, goal) == (goal in comp)


# -- random policy --------------------------------------------------------------

def test_random_policy_uniform():
    rng = np.random.default_rng(123)
    counts = {a: 0 for a in Action}
    n = 300_000
    for _ in range(n):
        counts[random_policy(rng)] += 1
    for a in Action:
        assert abs(counts[a] / n - 1.0 / 3.0) < 0.01


def test_random_policy_seeded_reproducible():
    rng = np.random.default_rng(9)
    draws_1 = [random_policy(rng) for _ in range(100)]
    rng = np.random.default_rng(9)
    draws_2 = [random_policy(rng) for _ in range(100)]
    assert draws_1 == draws_2
    rng = np.random.default_rng(10)
    draws_3 = [random_policy(rng) for _ in range(100)]
    assert draws_1 != draws_3


# -- frontier detection -----------------------------------------------------------

def test_frontier_cells_mask():
    g = grid_of([
        "?????",
        "?...?",
        "?.#.?",
        "?...?",
        "?????",
    ])
    mask = frontier_cells(g)
    # Every free cell here borders the unknown rim except none - check exact set.
    expected = {(1, 1), (1, 2), (1, 3), (2, 1), (2, 3), (3, 1), (3, 2), (3, 3)}
    assert set(map(tuple, np.argwhere(mask))) == expected


def test_frontier_cells_interior_not_frontier():
    g = grid_of([
        "....?",
        "....?",
        "....?",
    ])
    mask = frontier_cells(g)
    assert set(map(tuple, np.argwhere(mask))) == {(0, 3), (1, 3), (2, 3)}


def test_frontier_cells_obstacle_never_frontier():
    g = grid_of(["#?", ".?"])
    mask = frontier_cells(g)
    assert set(map(tuple, np.argwhere(mask))) == {(1, 0)}


# -- frontier policy --------------------------------------------------------------

def centered_pose(g, r, c, theta):
    return Pose(*g.cell_to_world(r, c), theta)


def test_frontier_policy_forward_when_ahead():
    g = grid_of([
        "#####?",
        "#....?",
        "#####?",
    ], resolution=0.1)
    pose = centered_pose(g, 1, 1, 0.0)  # facing east, frontier at (1,4)
    action = frontier_policy(g, pose, np.random.default_rng(0))
    assert action == Action.FORWARD


def test_frontier_policy_rotates_left_for_left_frontier():
    g = grid_of([
        "##?##",
        "##.##",
        "##.##",
        "#...#",
        "#####",
    ], resolution=0.1)
    pose = centered_pose(g, 3, 2, 0.0)  # facing east; frontier path goes north
    action = frontier_policy(g, pose, np.random.default_rng(0))
    assert action == Action.ROTATE_LEFT


def test_frontier_policy_rotates_right_for_right_frontier():
    g = grid_of([
        "#####",
        "#...#",
        "##.##",
        "##.##",
        "##?##",
    ], resolution=0.1)
    pose = centered_pose(g, 1, 2, 0.0)  # facing east; frontier path goes south
    action = frontier_policy(g, pose, np.random.default_rng(0))
    assert action == Action.ROTATE_RIGHT


def test_frontier_policy_random_fallback_without_frontier():
    g = grid_of([
        "####",
        "#..#",
        "####",
    ], resolution=0.1)
    pose = centered_pose(g, 1, 1, 0.0)
    action = frontier_policy(g, pose, np.random.default_rng(31))
    expected = random_policy(np.random.default_rng(31))
    assert action == expected


def test_frontier_policy_standing_on_frontier_pushes_outward():
    g = grid_of([
        "??",
        ".?",
    ], resolution=0.1)
    # Robot on (1,0), unknown due north; facing north already.
    pose = centered_pose(g, 1, 0, math.pi / 2.0)
    action = frontier_policy(g, pose, np.random.default_rng(0))
    assert action == Action.FORWARD


def test_frontier_policy_inflation_fallback():
    # A 1-cell corridor is too narrow once inflated by the robot radius; the
    # uninflated retry must still find the frontier dead ahead.
    g = grid_of([
        "######?",
        "#.....?",
        "######?",
    ], resolution=0.1)
    pose = centered_pose(g, 1, 1, 0.0)
    action = frontier_policy(
        g, pose, np.random.default_rng(0), robot_radius=0.15
    )
    assert action == Action.FORWARD


def test_frontier_policy_deterministic():
    g = grid_of([
        "?????",
        "?...?",
        "?...?",
        "?????",
    ], resolution=0.1)
    pose = centered_pose(g, 1, 1, 0.3)
    acts = {
        frontier_policy(g, pose, np.random.default_rng(4)) for _ in range(5)
    }
    assert len(acts) == 1
