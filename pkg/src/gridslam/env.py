"""Episode loop: discrete robot actions over a scanned occupancy world.

The environment owns three grids. The immutable wall raster from the floor
plan, the current ground truth (walls plus obstacles, re-stamped when any
obstacle is dynamic), and the accumulated belief map built from simulated
scans. Observations are egocentric local crops of the belief map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Any, Mapping, Optional

import numpy as np
from scipy import ndimage

from .floorplan import FloorPlan
from .grid import FREE, OBSTACLE, UNKNOWN, OccupancyGrid, Pose, crop_local, rasterize
from .sensing import (
    NoiseSpec,
    SensorSpec,
    merge,
    perturb_ranges,
    perturb_registration,
    scan,
)
from .worldgen import (
    ObstacleSpec,
    advance_obstacles,
    footprint_overlaps,
    generate_obstacles,
)

__all__ = [
    "Action",
    "ACTION_NAMES",
    "action_from_name",
    "RobotSpec",
    "RewardSpec",
    "EpisodeConfig",
    "ConfigError",
    "StepInfo",
    "StepResult",
    "Environment",
    "reward_exploration",
    "reward_obstacle_avoidance",
    "explored_area",
]

MODE_EXPLORATION = "exploration-unknown"
MODE_NAVIGATION = "navigation-known"


class Action(IntEnum):
    FORWARD = 0
    ROTATE_LEFT = 1
    ROTATE_RIGHT = 2


ACTION_NAMES = {
    Action.FORWARD: "Forward",
    Action.ROTATE_LEFT: "RotateLeft",
    Action.ROTATE_RIGHT: "RotateRight",
}
_NAME_TO_ACTION = {v: k for k, v in ACTION_NAMES.items()}


def action_from_name(name: str) -> Action:
    try:
        return _NAME_TO_ACTION[name]
    except KeyError:
        raise ValueError(f"unknown action {name!r}") from None


class ConfigError(ValueError):
    """Configuration rejected; the message names the offending key."""


@dataclass(frozen=True)
class RobotSpec:
    radius_m: float = 0.15
    linear_step_m: float = 0.3
    angular_step_deg: float = 10.0

    def __post_init__(self) -> None:
        if self.radius_m < 0.0:
            raise ConfigError("robot.radius_m must be non-negative")
        if self.linear_step_m <= 0.0:
            raise ConfigError("robot.linear_step_m must be positive")
        if not 0.0 < self.angular_step_deg <= 180.0:
            raise ConfigError("robot.angular_step_deg must be in (0, 180]")


@dataclass(frozen=True)
class RewardSpec:
    """Scalar reward shape for both tasks.

    Collisions always yield ``collision_penalty`` regardless of task; the
    task field selects the no-collision formula. The exploration preset zeroes
    the penalty so a collision step is worth exactly its (empty) area gain.
    """

    task: str = "exploration"
    alpha_s: float = 0.9
    alpha_a: float = 0.1
    collision_penalty: float = -1.0
    exploration_alpha: float = 1.0
    area_unit_m2: float = 1.0

    def __post_init__(self) -> None:
        if self.task not in ("exploration", "obstacle_avoidance"):
            raise ConfigError(f"reward.task must be exploration or obstacle_avoidance, got {self.task!r}")
        if self.area_unit_m2 <= 0.0:
            raise ConfigError("reward.area_unit_m2 must be positive")


@dataclass(frozen=True)
class EpisodeConfig:
    mode: str = MODE_EXPLORATION
    resolution: float = 0.1
    wall_thickness: float = 0.1
    sensor: SensorSpec = field(default_factory=SensorSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    robot: RobotSpec = field(default_factory=RobotSpec)
    obstacles: ObstacleSpec = field(default_factory=ObstacleSpec)
    observation_side_m: float = 4.0
    max_steps: int = 200
    reward: RewardSpec = field(default_factory=RewardSpec)
    seed: Optional[int] = None
    terminate_on_collision: bool = False

    def __post_init__(self) -> None:
        if self.mode not in (MODE_EXPLORATION, MODE_NAVIGATION):
            raise ConfigError(f"mode must be {MODE_EXPLORATION} or {MODE_NAVIGATION}, got {self.mode!r}")
        if self.resolution <= 0.0:
            raise ConfigError("resolution must be positive")
        if self.wall_thickness <= 0.0:
            raise ConfigError("wall_thickness must be positive")
        if self.observation_side_m < self.resolution:
            raise ConfigError("observation_side_m must cover at least one cell")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be at least 1")

    @staticmethod
    def exploration_defaults() -> "EpisodeConfig":
        """Unknown-map exploration: 4 m observation, pure area-rate reward."""
        return EpisodeConfig(
            mode=MODE_EXPLORATION,
            observation_side_m=4.0,
            reward=RewardSpec(task="exploration", collision_penalty=0.0),
        )

    @staticmethod
    def obstacle_avoidance_defaults() -> "EpisodeConfig":
        """Known-map navigation: 3 m observation, shaped reward with penalty."""
        return EpisodeConfig(
            mode=MODE_NAVIGATION,
            observation_side_m=3.0,
            reward=RewardSpec(task="obstacle_avoidance", collision_penalty=-1.0),
        )

    def with_seed(self, seed: Optional[int]) -> "EpisodeConfig":
        return replace(self, seed=seed)

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "resolution": self.resolution,
            "wall_thickness": self.wall_thickness,
            "sensor": {
                "range_m": self.sensor.range_m,
                "fov_deg": self.sensor.fov_deg,
                "angular_step_deg": self.sensor.angular_step_deg,
            },
            "noise": {
                "range_sigma_cells": self.noise.range_sigma_cells,
                "reg_theta_sigma_rad": self.noise.reg_theta_sigma_rad,
                "reg_xy_sigma_m": self.noise.reg_xy_sigma_m,
            },
            "robot": {
                "radius_m": self.robot.radius_m,
                "linear_step_m": self.robot.linear_step_m,
                "angular_step_deg": self.robot.angular_step_deg,
            },
            "obstacles": self.obstacles.to_dict(),
            "observation_side_m": self.observation_side_m,
            "max_steps": self.max_steps,
            "reward": {
                "task": self.reward.task,
                "alpha_s": self.reward.alpha_s,
                "alpha_a": self.reward.alpha_a,
                "collision_penalty": self.reward.collision_penalty,
                "exploration_alpha": self.reward.exploration_alpha,
                "area_unit_m2": self.reward.area_unit_m2,
            },
            "seed": self.seed,
            "terminate_on_collision": self.terminate_on_collision,
        }

    @staticmethod
    def from_dict(raw: Mapping[str, Any]) -> "EpisodeConfig":
        return config_from_dict(raw)


def _check_keys(raw: Mapping[str, Any], allowed: set[str], where: str) -> None:
    extra = sorted(set(raw) - allowed)
    if extra:
        raise ConfigError(f"unknown {where} key(s): {', '.join(extra)}")


def _num(raw: Mapping[str, Any], key: str, where: str) -> float:
    v = raw[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number, got {type(v).__name__}")
    return float(v)


def config_from_dict(raw: Mapping[str, Any]) -> EpisodeConfig:
    """Build a config from parsed JSON, rejecting unknown or mistyped keys."""
    if not isinstance(raw, Mapping):
        raise ConfigError("config must be a JSON object")
    _check_keys(
        raw,
        {
            "mode", "resolution", "wall_thickness", "sensor", "noise", "robot",
            "obstacles", "observation_side_m", "max_steps", "reward", "seed",
            "terminate_on_collision",
        },
        "config",
    )
    kwargs: dict[str, Any] = {}
    for key in ("mode",):
        if key in raw:
            kwargs[key] = raw[key]
    for key in ("resolution", "wall_thickness", "observation_side_m"):
        if key in raw:
            kwargs[key] = _num(raw, key, "config")
    if "max_steps" in raw:
        if isinstance(raw["max_steps"], bool) or not isinstance(raw["max_steps"], int):
            raise ConfigError("config.max_steps must be an integer")
        kwargs["max_steps"] = raw["max_steps"]
    if "seed" in raw and raw["seed"] is not None:
        if isinstance(raw["seed"], bool) or not isinstance(raw["seed"], int):
            raise ConfigError("config.seed must be an integer")
        kwargs["seed"] = raw["seed"]
    if "terminate_on_collision" in raw:
        if not isinstance(raw["terminate_on_collision"], bool):
            raise ConfigError("config.terminate_on_collision must be a boolean")
        kwargs["terminate_on_collision"] = raw["terminate_on_collision"]

    if "sensor" in raw:
        s = raw["sensor"]
        _check_keys(s, {"range_m", "fov_deg", "angular_step_deg"}, "sensor")
        sk: dict[str, Any] = {}
        for key in ("range_m", "fov_deg"):
            if key in s:
                sk[key] = _num(s, key, "sensor")
        if "angular_step_deg" in s and s["angular_step_deg"] is not None:
            sk["angular_step_deg"] = _num(s, "angular_step_deg", "sensor")
        try:
            kwargs["sensor"] = SensorSpec(**sk)
        except ValueError as exc:
            raise ConfigError(f"sensor: {exc}") from None
    if "noise" in raw:
        nz = raw["noise"]
        _check_keys(nz, {"range_sigma_cells", "reg_theta_sigma_rad", "reg_xy_sigma_m"}, "noise")
        try:
            kwargs["noise"] = NoiseSpec(**{k: _num(nz, k, "noise") for k in nz})
        except ValueError as exc:
            raise ConfigError(f"noise: {exc}") from None
    if "robot" in raw:
        rb = raw["robot"]
        _check_keys(rb, {"radius_m", "linear_step_m", "angular_step_deg"}, "robot")
        kwargs["robot"] = RobotSpec(**{k: _num(rb, k, "robot") for k in rb})
    if "obstacles" in raw:
        ob = raw["obstacles"]
        _check_keys(ob, {"count", "shapes", "placement", "trajectories"}, "obstacles")
        try:
            kwargs["obstacles"] = ObstacleSpec.from_dict(dict(ob))
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"obstacles: {exc}") from None
    if "reward" in raw:
        rw = raw["reward"]
        _check_keys(
            rw,
            {"task", "alpha_s", "alpha_a", "collision_penalty", "exploration_alpha", "area_unit_m2"},
            "reward",
        )
        rk: dict[str, Any] = {}
        if "task" in rw:
            rk["task"] = rw["task"]
        for key in ("alpha_s", "alpha_a", "collision_penalty", "exploration_alpha", "area_unit_m2"):
            if key in rw:
                rk[key] = _num(rw, key, "reward")
        kwargs["reward"] = RewardSpec(**rk)
    return EpisodeConfig(**kwargs)


# -- rewards ------------------------------------------------------------------

def explored_area(grid: OccupancyGrid) -> float:
    """Area in m^2 of all non-Unknown cells."""
    known = int(np.count_nonzero(grid.cells != int(UNKNOWN)))
    return known * grid.resolution * grid.resolution


def reward_exploration(new_area_m2: float, spec: RewardSpec) -> float:
    return spec.exploration_alpha * (new_area_m2 / spec.area_unit_m2)


def reward_obstacle_avoidance(
    collision: bool, new_area_m2: float, action: int, spec: RewardSpec
) -> float:
    if collision:
        return spec.collision_penalty
    r = spec.alpha_s * (new_area_m2 / spec.area_unit_m2)
    if Action(action) == Action.FORWARD:
        r += spec.alpha_a
    return r


# -- environment --------------------------------------------------------------

@dataclass(frozen=True)
class StepInfo:
    collision: bool
    new_cells: int
    explored_area_m2: float
    pose: Pose


@dataclass(frozen=True)
class StepResult:
    observation: OccupancyGrid
    reward: float
    done: bool
    info: StepInfo


class Environment:
    """One episode world bound to a floor plan.

    reset() rasterizes the plan, stamps obstacles, samples a collision-free
    start pose (uniform over adequately clear Free cells, uniform heading,
    position drawn before heading), initializes the belief map per mode,
    performs the initial scan and merge, and returns the first observation
    with reward 0.

    step() moves or rotates. A candidate pose whose circular footprint covers
    any ground-truth Obstacle cell is a collision: the pose reverts, reward is
    the collision penalty and no scan happens. Otherwise the pose commits,
    dynamic obstacles advance, and scan, noise and merge run. The episode
    ends after max_steps steps (optionally at the first collision).

    Streams are owned by one numpy Generator seeded from (seed, instance);
    reset() without a seed continues the stream, so successive episodes
    differ but the whole sequence replays from the same seed.
    """

    def __init__(self, config: EpisodeConfig, plan: FloorPlan, instance: int = 0):
        if not isinstance(config, EpisodeConfig):
            raise TypeError("config must be an EpisodeConfig")
        self._cfg = config
        self._plan = plan
        self._instance = int(instance)
        self._rng: Optional[np.random.Generator] = None
        self._entropy = config.seed
        self._base: Optional[OccupancyGrid] = None
        self._grid: Optional[OccupancyGrid] = None
        self._map: Optional[OccupancyGrid] = None
        self._placed = []
        self._dynamic = False
        self._pose: Optional[Pose] = None
        self._steps = 0
        self._done = True

    @property
    def config(self) -> EpisodeConfig:
        return self._cfg

    @property
    def ground_truth(self) -> OccupancyGrid:
        if self._grid is None:
            raise RuntimeError("reset() has not been called")
        return self._grid

    @property
    def map(self) -> OccupancyGrid:
        if self._map is None:
            raise RuntimeError("reset() has not been called")
        return self._map

    @property
    def pose(self) -> Pose:
        if self._pose is None:
            raise RuntimeError("reset() has not been called")
        return self._pose

    @property
    def steps(self) -> int:
        return self._steps

    @property
    def done(self) -> bool:
        return self._done

    @property
    def seed_entropy(self) -> Optional[int]:
        """The entropy actually seeding this environment's stream."""
        return self._entropy

    def _ensure_rng(self, seed: Optional[int]) -> None:
        if seed is not None:
            self._entropy = int(seed)
            self._rng = None
        if self._rng is None:
            if self._entropy is None:
                self._entropy = int(np.random.SeedSequence().entropy)
            ss = np.random.SeedSequence(entropy=self._entropy, spawn_key=(self._instance,))
            self._rng = np.random.Generator(np.random.PCG64(ss))

    def reset(self, seed: Optional[int] = None) -> StepResult:
        self._ensure_rng(seed)
        cfg = self._cfg
        if self._base is None:
            self._base = rasterize(self._plan, cfg.resolution, cfg.wall_thickness)
        grid, placed = generate_obstacles(self._base, cfg.obstacles, self._rng)
        self._grid = grid
        self._placed = placed
        self._dynamic = any(p.trajectory for p in placed)
        self._pose = self._sample_start_pose()

        if cfg.mode == MODE_NAVIGATION:
            self._map = grid.copy()
        else:
            blank = np.full_like(grid.cells, int(UNKNOWN))
            self._map = OccupancyGrid(blank, grid.resolution, grid.origin)
        known0 = int(np.count_nonzero(self._map.cells != int(UNKNOWN)))
        self._observe()
        new_cells = int(np.count_nonzero(self._map.cells != int(UNKNOWN))) - known0

        self._steps = 0
        self._done = False
        info = StepInfo(False, new_cells, explored_area(self._map), self._pose)
        return StepResult(self._observation(), 0.0, False, info)

    def step(self, action: int) -> StepResult:
        if self._done or self._pose is None:
            raise RuntimeError("call reset() before step()")
        act = Action(action)
        cfg = self._cfg
        pose = self._pose
        if act == Action.FORWARD:
            cand = Pose(
                pose.x + cfg.robot.linear_step_m * math.cos(pose.theta),
                pose.y + cfg.robot.linear_step_m * math.sin(pose.theta),
                pose.theta,
            )
        elif act == Action.ROTATE_LEFT:
            cand = Pose(pose.x, pose.y, pose.theta + math.radians(cfg.robot.angular_step_deg))
        else:
            cand = Pose(pose.x, pose.y, pose.theta - math.radians(cfg.robot.angular_step_deg))

        self._steps += 1
        collision = footprint_overlaps(self._grid, cand.x, cand.y, cfg.robot.radius_m)
        new_cells = 0
        if not collision:
            self._pose = cand
            if self._dynamic:
                self._grid = advance_obstacles(self._base, self._placed, self._steps)
                # A moving obstacle may have rolled over the robot.
                if footprint_overlaps(self._grid, cand.x, cand.y, cfg.robot.radius_m):
                    collision = True
        if not collision:
            known0 = int(np.count_nonzero(self._map.cells != int(UNKNOWN)))
            self._observe()
            new_cells = int(np.count_nonzero(self._map.cells != int(UNKNOWN))) - known0
            new_area = new_cells * cfg.resolution * cfg.resolution
            if cfg.reward.task == "obstacle_avoidance":
                reward = reward_obstacle_avoidance(False, new_area, act, cfg.reward)
            else:
                reward = reward_exploration(new_area, cfg.reward)
        else:
            reward = cfg.reward.collision_penalty

        self._done = self._steps >= cfg.max_steps or (
            cfg.terminate_on_collision and collision
        )
        info = StepInfo(collision, new_cells, explored_area(self._map), self._pose)
        return StepResult(self._observation(), float(reward), self._done, info)

    def _observe(self) -> None:
        cfg = self._cfg
        sector = scan(self._grid, self._pose, cfg.sensor)
        sector = perturb_ranges(sector, cfg.noise, self._rng)
        sector = perturb_registration(sector, cfg.noise, self._rng)
        self._map = merge(self._map, sector)

    def _observation(self) -> OccupancyGrid:
        return crop_local(self._map, self._pose, self._cfg.observation_side_m)

    def _sample_start_pose(self) -> Pose:
        cfg = self._cfg
        grid = self._grid
        clear = ndimage.distance_transform_edt(grid.cells != int(OBSTACLE)) * grid.resolution
        ok = (grid.cells == int(FREE)) & (clear > cfg.robot.radius_m + cfg.resolution)
        idx = np.flatnonzero(ok)
        if idx.size == 0:
            raise RuntimeError("no collision-free start pose exists on this map")
        pick = int(idx[int(self._rng.integers(idx.size))])
        r, c = divmod(pick, grid.width)
        x, y = grid.cell_to_world(r, c)
        theta = float(self._rng.uniform(-math.pi, math.pi))
        return Pose(x, y, theta)
