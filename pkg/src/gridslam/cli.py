"""Command-line surface.

Subcommands: rasterize, render, stats, repair, dedup, run, bench, serve.
Every command is replayable: --seed is accepted everywhere, and when omitted
a seed is drawn from OS entropy and printed to stderr. Corpus commands fan
out over a thread pool and merge results in deterministic (sorted) order;
episode commands are sequential.
"""

from __future__ import annotations

import argparse
import base64
import hashlib
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import floorplan
from .env import (
    ACTION_NAMES,
    Action,
    ConfigError,
    Environment,
    EpisodeConfig,
    config_from_dict,
    explored_area,
)
from .floorplan import FloorPlan, PlanError
from .grid import (
    FREE,
    OBSTACLE,
    OBSERVATION_PALETTE,
    UNKNOWN,
    OccupancyGrid,
    parse_png,
    render_png,
)
from .planner import frontier_policy, random_policy
from .worldgen import (
    PlacementError,
    RepairError,
    dedup as dedup_grids,
    fill_small_cells,
    refine_and_crop,
    repair_connectivity,
)

_OBS_LUT = np.zeros(3, dtype=np.uint8)
_OBS_LUT[int(UNKNOWN)] = OBSERVATION_PALETTE[UNKNOWN]
_OBS_LUT[int(FREE)] = OBSERVATION_PALETTE[FREE]
_OBS_LUT[int(OBSTACLE)] = OBSERVATION_PALETTE[OBSTACLE]


def observation_bytes(obs: OccupancyGrid) -> bytes:
    """Row-major palette bytes (0/128/255) of an observation crop."""
    return _OBS_LUT[obs.cells].tobytes()


def _resolve_seed(args: argparse.Namespace) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    seed = int.from_bytes(os.urandom(8), "big")
    print(f"seed (drawn from OS entropy): {seed}", file=sys.stderr)
    return seed


def _load_config(args: argparse.Namespace) -> EpisodeConfig:
    path = getattr(args, "config", None)
    if path is None:
        return EpisodeConfig()
    try:
        with open(path, "rb") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at offset {exc.pos}: {exc.msg}") from None
    return config_from_dict(raw)


def _load_grid(path: str, resolution: float, wall_thickness: float) -> OccupancyGrid:
    """A raster from either a plan JSON or a dataset-palette PNG."""
    from .grid import rasterize

    if path.endswith(".json"):
        return rasterize(floorplan.load_json(path), resolution, wall_thickness)
    with open(path, "rb") as fh:
        return parse_png(fh.read(), palette="dataset", resolution=resolution)


def _expand_paths(paths: list[str], suffix: str) -> list[str]:
    """Files as given; directories expanded to their sorted *.suffix files."""
    out: list[str] = []
    for p in paths:
        if os.path.isdir(p):
            out.extend(sorted(str(q) for q in Path(p).glob(f"*{suffix}")))
        else:
            out.append(p)
    if not out:
        raise ValueError(f"no {suffix} inputs found under {paths!r}")
    return out


def _table(rows: list[dict[str, Any]]) -> str:
    if not rows:
        return "(empty)"
    cols = list(rows[0].keys())
    cells = [[_fmt_cell(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths)).rstrip()]
    for row in cells:
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip())
    return "\n".join(lines)


def _fmt_cell(v: Any) -> str:
    if isinstance(v, float):
        return f"{v:.3f}"
    return str(v)


def _emit(args: argparse.Namespace, payload: dict[str, Any], rows: Optional[list[dict[str, Any]]] = None) -> None:
    if getattr(args, "format", "json") == "table":
        text = _table(rows) if rows is not None else _table([payload])
    else:
        text = json.dumps(payload, indent=2)
    print(text)
    out = getattr(args, "out_report", None)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(payload, indent=2) + "\n")


# -- rasterize / render -------------------------------------------------------

def _cmd_rasterize(args: argparse.Namespace) -> int:
    from .grid import rasterize

    plan = floorplan.load_json(args.plan)
    grid = rasterize(plan, args.resolution, args.wall_thickness)
    out = args.out or (Path(args.plan).stem + ".png")
    with open(out, "wb") as fh:
        fh.write(render_png(grid, palette=args.palette))
    _emit(
        args,
        {
            "plan": plan.id,
            "out": str(out),
            "cells": [grid.height, grid.width],
            "resolution": grid.resolution,
            "free_m2": grid.count(FREE) * grid.resolution**2,
        },
    )
    return 0


def _cmd_render(args: argparse.Namespace) -> int:
    grid = _load_grid(args.input, args.resolution, args.wall_thickness)
    out = args.out or (Path(args.input).stem + ".render.png")
    with open(out, "wb") as fh:
        fh.write(render_png(grid, palette=args.palette))
    _emit(args, {"out": str(out), "cells": [grid.height, grid.width], "palette": args.palette})
    return 0


# -- corpus commands ----------------------------------------------------------

def _data_default(paths: list[str]) -> list[str]:
    if paths:
        return paths
    env = os.environ.get("GRIDSLAM_DATA")
    if not env:
        raise ValueError("no inputs given and GRIDSLAM_DATA is not set")
    return [env]


def _cmd_stats(args: argparse.Namespace) -> int:
    files = _expand_paths(_data_default(args.paths), ".json")
    key_map = None
    if args.key_map:
        with open(args.key_map, "rb") as fh:
            key_map = json.load(fh)

    def load(path: str) -> FloorPlan:
        try:
            return floorplan.load_json(path, key_map=key_map)
        except PlanError as exc:
            raise PlanError(f"{path}: {exc}") from None

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        plans = list(pool.map(load, files))
    report = floorplan.corpus_stats(plans, implicit_room=args.implicit_room)
    if args.format == "table":
        print(report.to_table())
    else:
        print(report.to_json())
    if args.out_report:
        with open(args.out_report, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
    return 0


def _cmd_repair(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    grid = _load_grid(args.input, args.resolution, args.wall_thickness)
    grid = fill_small_cells(grid, args.area_threshold)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    repaired, report = repair_connectivity(
        grid, args.samples, args.opening_width, rng, max_carves_per_pair=args.max_carves
    )
    final = refine_and_crop(repaired)
    out = args.out or (Path(args.input).stem + ".repaired.png")
    with open(out, "wb") as fh:
        fh.write(render_png(final, palette="dataset"))
    _emit(
        args,
        {
            "out": str(out),
            "seed": seed,
            "sampled_points": report.sampled_points,
            "pairs_checked": report.pairs_checked,
            "walls_carved": len(report.carves),
            "connected": report.connected,
            "cells": [final.height, final.width],
        },
    )
    return 0


def _cmd_dedup(args: argparse.Namespace) -> int:
    files = _expand_paths(_data_default(args.paths), ".png")

    def load(path: str) -> OccupancyGrid:
        with open(path, "rb") as fh:
            return parse_png(fh.read(), palette="dataset", resolution=args.resolution)

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        grids = list(pool.map(load, files))
    kept = dedup_grids(grids, diff_threshold=args.threshold)
    kept_set = set(kept)
    rows = [
        {"index": i, "file": files[i], "status": "kept" if i in kept_set else "duplicate"}
        for i in range(len(files))
    ]
    payload = {
        "kept": [files[i] for i in kept],
        "duplicates": [files[i] for i in range(len(files)) if i not in kept_set],
        "threshold": args.threshold,
    }
    _emit(args, payload, rows=rows)
    return 0


# -- episodes -----------------------------------------------------------------

def _policy_step(policy: str, env: Environment, rng: np.random.Generator) -> Action:
    if policy == "frontier":
        return frontier_policy(
            env.map,
            env.pose,
            rng,
            robot_radius=env.config.robot.radius_m,
            angular_step_deg=env.config.robot.angular_step_deg,
        )
    return random_policy(rng)


def _rollout_record(step: int, action: Optional[Action], result) -> dict[str, Any]:
    return {
        "step": step,
        "pose": {
            "x": result.info.pose.x,
            "y": result.info.pose.y,
            "theta": result.info.pose.theta,
        },
        "action": None if action is None else ACTION_NAMES[action],
        "reward": result.reward,
        "collision": result.info.collision,
        "new_cells": result.info.new_cells,
        "explored_m2": result.info.explored_area_m2,
        "obs_sha256": hashlib.sha256(observation_bytes(result.observation)).hexdigest(),
    }


def _cmd_run(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    cfg = _load_config(args).with_seed(seed)
    plan = floorplan.load_json(args.plan)
    env = Environment(cfg, plan)
    policy_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
    )
    steps = cfg.max_steps if args.steps is None else args.steps
    if steps < 0:
        raise ValueError("--steps must be non-negative")

    dump_fh = open(args.dump, "w", encoding="utf-8") if args.dump else None
    obs_dir = None
    if args.obs_dir:
        obs_dir = Path(args.obs_dir)
        obs_dir.mkdir(parents=True, exist_ok=True)

    def record(step: int, action: Optional[Action], result) -> None:
        if dump_fh is not None:
            dump_fh.write(json.dumps(_rollout_record(step, action, result)) + "\n")
        if obs_dir is not None:
            with open(obs_dir / f"obs_{step:05d}.png", "wb") as fh:
                fh.write(render_png(result.observation, palette="observation"))

    try:
        result = env.reset()
        record(0, None, result)
        total_reward = 0.0
        collisions = 0
        k = 0
        while k < steps and not env.done:
            action = _policy_step(args.policy, env, policy_rng)
            result = env.step(action)
            k += 1
            total_reward += result.reward
            collisions += int(result.info.collision)
            record(k, action, result)
    finally:
        if dump_fh is not None:
            dump_fh.close()

    _emit(
        args,
        {
            "seed": seed,
            "policy": args.policy,
            "steps": k,
            "total_reward": total_reward,
            "explored_area_m2": explored_area(env.map),
            "collisions": collisions,
            "dump": args.dump,
        },
    )
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    if len(args.plans) < 2:
        raise ValueError("bench needs at least two plans")
    seed = _resolve_seed(args)
    base_cfg = _load_config(args)
    rows = []
    for i, plan_path in enumerate(args.plans):
        plan = floorplan.load_json(plan_path)
        # One long episode per map so no reset lands inside the timed loop.
        cfg = replace(base_cfg, max_steps=args.steps + 1, seed=seed)
        env = Environment(cfg, plan, instance=i)
        env.reset()
        policy_rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(1, i)))
        )
        times = []
        for _ in range(args.steps):
            action = random_policy(policy_rng)
            t0 = time.perf_counter()
            result = env.step(action)
            dt = time.perf_counter() - t0
            # Collision steps skip the scan pipeline; timing them would
            # dilute the mapping-speed measurement.
            if not result.info.collision:
                times.append(dt)
        arr = np.asarray(times) * 1e6
        if arr.size == 0:
            raise RuntimeError(f"{plan.id}: every bench step collided; nothing to time")
        mean_us = float(arr.mean())
        gt = env.ground_truth
        rows.append(
            {
                "map": plan.id,
                "area_m2": gt.count(FREE) * gt.resolution**2,
                "mean_step_us": mean_us,
                "p95_step_us": float(np.percentile(arr, 95)),
                "steps_per_s": 1e6 / mean_us,
                "timed_steps": int(arr.size),
            }
        )
    rows.sort(key=lambda r: (r["area_m2"], r["map"]))
    payload = {
        "rows": rows,
        "fingerprint": {
            "resolution": base_cfg.resolution,
            "sensor": {
                "range_m": base_cfg.sensor.range_m,
                "fov_deg": base_cfg.sensor.fov_deg,
                "angular_step_deg": base_cfg.sensor.angular_step_deg,
            },
            "host": f"{platform.platform()}, Python {platform.python_version()}",
        },
        "seed": seed,
        "steps_per_map": args.steps,
    }
    _emit(args, payload, rows=rows)
    return 0


# -- serve (line protocol for bindings) ----------------------------------------

def _obs_payload(result) -> dict[str, Any]:
    obs = result.observation
    return {
        "observation": {
            "shape": [obs.height, obs.width],
            "data": base64.b64encode(observation_bytes(obs)).decode("ascii"),
        },
        "reward": result.reward,
        "done": result.done,
        "info": {
            "collision": result.info.collision,
            "new_cells": result.info.new_cells,
            "explored_area_m2": result.info.explored_area_m2,
            "pose": {
                "x": result.info.pose.x,
                "y": result.info.pose.y,
                "theta": result.info.pose.theta,
            },
        },
    }


def _cmd_serve(args: argparse.Namespace) -> int:
    """One environment per process, driven by JSON lines on stdin.

    Requests: {"op": "make"|"reset"|"step"|"seed"|"close", ...}. Every
    request gets exactly one JSON reply line; failures reply
    {"ok": false, "kind": <exception class>, "error": <native message>}.
    """
    env: Optional[Environment] = None
    pending_seed: Optional[int] = None

    def reply(payload: dict[str, Any]) -> None:
        sys.stdout.write(json.dumps(payload) + "\n")
        sys.stdout.flush()

    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
            op = req.get("op")
            if op == "make":
                if req.get("config") is not None:
                    cfg = config_from_dict(req["config"])
                else:
                    cfg = _load_config(args)
                if req.get("seed") is not None:
                    cfg = cfg.with_seed(int(req["seed"]))
                plan_path = req.get("plan") or args.plan
                if plan_path is None:
                    raise ConfigError("make: no plan given (request or --plan)")
                env = Environment(cfg, floorplan.load_json(plan_path), instance=args.instance)
                side = int(math.floor(cfg.observation_side_m / cfg.resolution + 0.5))
                reply(
                    {
                        "ok": True,
                        "observation_shape": [side, side],
                        "resolution": cfg.resolution,
                        "max_steps": cfg.max_steps,
                        "actions": [ACTION_NAMES[a] for a in Action],
                    }
                )
            elif op == "reset":
                if env is None:
                    raise RuntimeError("reset before make")
                seed = req.get("seed")
                if seed is None:
                    seed = pending_seed
                pending_seed = None
                result = env.reset(seed=None if seed is None else int(seed))
                reply({"ok": True, **_obs_payload(result)})
            elif op == "step":
                if env is None:
                    raise RuntimeError("step before make")
                result = env.step(int(req["action"]))
                reply({"ok": True, **_obs_payload(result)})
            elif op == "seed":
                pending_seed = int(req["seed"])
                reply({"ok": True, "seed": pending_seed})
            elif op == "close":
                reply({"ok": True})
                return 0
            else:
                raise ValueError(f"unknown op {op!r}")
        except Exception as exc:  # the client needs the native diagnostic
            reply({"ok": False, "kind": type(exc).__name__, "error": str(exc)})
    return 0


# -- parser -------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="episode config JSON")
    common.add_argument("--seed", type=int, help="RNG seed (omitted: drawn from OS entropy and printed)")
    common.add_argument("--format", choices=("json", "table"), default="json")
    common.add_argument("--out-report", help="also write the JSON report here")

    parser = argparse.ArgumentParser(prog="gridslam", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rasterize", parents=[common], help="plan JSON to occupancy raster PNG")
    p.add_argument("plan")
    p.add_argument("--resolution", type=float, default=0.1)
    p.add_argument("--wall-thickness", type=float, default=0.1)
    p.add_argument("--palette", choices=("dataset", "observation"), default="dataset")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_rasterize)

    p = sub.add_parser("render", parents=[common], help="re-render a plan or raster as PNG")
    p.add_argument("input", help="plan .json or dataset-palette .png")
    p.add_argument("--resolution", type=float, default=0.1)
    p.add_argument("--wall-thickness", type=float, default=0.1)
    p.add_argument("--palette", choices=("dataset", "observation"), default="dataset")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("stats", parents=[common], help="corpus room statistics")
    p.add_argument("paths", nargs="*", help="plan files or directories (default: $GRIDSLAM_DATA)")
    p.add_argument("--implicit-room", action="store_true", help="count zero-room plans as one room")
    p.add_argument("--key-map", help="JSON object mapping canonical keys to dataset keys")
    p.add_argument("--jobs", type=int, default=8)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("repair", parents=[common], help="fill pockets, carve connectivity, refine, crop")
    p.add_argument("input", help="raster .png or plan .json")
    p.add_argument("--resolution", type=float, default=0.1)
    p.add_argument("--wall-thickness", type=float, default=0.1)
    p.add_argument("--area-threshold", type=float, default=2.0)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--opening-width", type=float, default=0.8)
    p.add_argument("--max-carves", type=int, default=32)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_repair)

    p = sub.add_parser("dedup", parents=[common], help="report near-duplicate rasters")
    p.add_argument("paths", nargs="*", help="raster files or directories (default: $GRIDSLAM_DATA)")
    p.add_argument("--resolution", type=float, default=0.1)
    p.add_argument("--threshold", type=float, default=0.005)
    p.add_argument("--jobs", type=int, default=8)
    p.set_defaults(func=_cmd_dedup)

    p = sub.add_parser("run", parents=[common], help="run one episode with a scripted policy")
    p.add_argument("plan")
    p.add_argument("--policy", choices=("random", "frontier"), default="random")
    p.add_argument("--steps", type=int, help="steps to run (default: config max_steps)")
    p.add_argument("--dump", help="write a JSON-lines rollout here")
    p.add_argument("--obs-dir", help="write per-step observation PNGs here")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("bench", parents=[common], help="step-throughput benchmark across maps")
    p.add_argument("--plans", nargs="+", required=True)
    p.add_argument("--steps", type=int, default=300)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("serve", parents=[common], help="JSON-lines environment server on stdio")
    p.add_argument("--plan", help="default plan for make requests")
    p.add_argument("--instance", type=int, default=0)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RepairError as exc:
        print(f"gridslam: error: RepairError: {exc}", file=sys.stderr)
        print(exc.report.to_json(), file=sys.stderr)
        return 1
    except (ConfigError, PlanError, PlacementError, ValueError, RuntimeError, OSError) as exc:
        print(f"gridslam: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
