"""Deterministic occupancy-grid exploration simulator.

Floor plans (line-segment JSON) are rasterized into three-state grids; a
simulated scanner sweeps them with occlusion and optional noise; an episode
loop exposes discrete move/rotate actions with area-based rewards. Offline
tools sanitize raw plans (pocket filling, connectivity repair, dedup) and a
CLI ties it together.
"""

from .env import (
    ACTION_NAMES,
    Action,
    ConfigError,
    Environment,
    EpisodeConfig,
    RewardSpec,
    RobotSpec,
    StepInfo,
    StepResult,
    action_from_name,
    config_from_dict,
    explored_area,
    reward_exploration,
    reward_obstacle_avoidance,
)
from .floorplan import (
    FloorPlan,
    PlanError,
    PlanParseError,
    PlanSchemaError,
    RoomRecord,
    StatsReport,
    corpus_stats,
    load_json,
    save_json,
)
from .grid import (
    FREE,
    OBSTACLE,
    UNKNOWN,
    CellState,
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
from .planner import astar, frontier_cells, frontier_policy, random_policy
from .sensing import (
    NoiseSpec,
    SectorScan,
    SensorSpec,
    default_angular_step_deg,
    merge,
    perturb_ranges,
    perturb_registration,
    scan,
)
from .worldgen import (
    DEFAULT_SHAPES,
    ObstacleSpec,
    PlacedObstacle,
    PlacementError,
    RepairError,
    RepairReport,
    ShapeSpec,
    advance_obstacles,
    dedup,
    fill_small_cells,
    footprint_overlaps,
    generate_obstacles,
    refine_and_crop,
    repair_connectivity,
    sample_free_points,
)

__version__ = "0.1.0"
