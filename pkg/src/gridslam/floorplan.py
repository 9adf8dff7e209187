"""Line-segment floor plans: JSON storage, normalization and corpus stats.

A plan stores walls as line segments in meters, normalized so the centroid of
all segment endpoints sits at the origin. The translation removed during
normalization is kept on the plan so the original frame can be recovered.
"""

from __future__ import annotations

import json
import math
import os
import statistics
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

__all__ = [
    "PlanError",
    "PlanParseError",
    "PlanSchemaError",
    "RoomRecord",
    "FloorPlan",
    "load_json",
    "save_json",
    "corpus_stats",
    "StatsReport",
]


class PlanError(ValueError):
    """Base error for floor-plan handling."""


class PlanParseError(PlanError):
    """Malformed JSON; carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(message)
        self.offset = offset


class PlanSchemaError(PlanError):
    """Structurally valid JSON that violates the plan schema."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass
class RoomRecord:
    """One room annotation: a category label and an axis-aligned bbox."""

    category: str
    bbox: tuple[float, float, float, float]
    extra: dict[str, Any] = field(default_factory=dict)


@dataclass
class FloorPlan:
    """A normalized floor plan.

    Attributes:
        id: corpus identifier.
        segments: wall segments as (x1, y1, x2, y2) meter tuples.
        rooms: room annotations sharing the segment frame.
        offset: translation removed at load time; original coordinates are
            ``normalized + offset``.
        extra: unknown top-level keys, preserved verbatim for round-trips.
    """

    id: str
    segments: list[tuple[float, float, float, float]]
    rooms: list[RoomRecord] = field(default_factory=list)
    offset: tuple[float, float] = (0.0, 0.0)
    extra: dict[str, Any] = field(default_factory=dict)


_CANONICAL_KEYS = ("id", "offset", "segments", "rooms")


def _reject_constant(name: str) -> float:
    raise PlanSchemaError(f"non-finite number {name!r} in plan JSON")


def _as_floats(values: Sequence[Any], count: int, what: str) -> tuple[float, ...]:
    if not isinstance(values, (list, tuple)) or len(values) != count:
        raise PlanSchemaError(f"{what} must be a list of {count} numbers")
    out = []
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise PlanSchemaError(f"{what} must contain only numbers")
        f = float(v)
        if not math.isfinite(f):
            raise PlanSchemaError(f"{what} contains a non-finite value")
        out.append(f)
    return tuple(out)


def load_json(
    source: str | os.PathLike | bytes,
    key_map: Mapping[str, str] | None = None,
) -> FloorPlan:
    """Load a plan from a path (str/PathLike) or raw JSON bytes.

    The plan is re-normalized so the centroid of its segment endpoints lands
    on the origin; the removed translation is folded into ``offset``.

    ``key_map`` is the adapter hook for corpora that store the canonical
    fields under different top-level names. It maps canonical key -> actual
    key, e.g. ``{"segments": "walls"}``. Mapped values must already have the
    canonical shape.

    Raises:
        PlanParseError: malformed JSON (carries ``offset``, in bytes).
        PlanSchemaError: missing or ill-typed fields, non-finite numbers.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8", errors="replace")
    else:
        with open(source, "rb") as fh:
            text = fh.read().decode("utf-8", errors="replace")

    try:
        raw = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise PlanParseError(f"malformed plan JSON at byte {exc.pos}: {exc.msg}", exc.pos) from None
    if not isinstance(raw, dict):
        raise PlanSchemaError("plan JSON must be an object")

    def pick(canonical: str) -> Any:
        actual = key_map.get(canonical, canonical) if key_map else canonical
        return raw.get(actual), actual

    plan_id, id_key = pick("id")
    if plan_id is None:
        raise PlanSchemaError(f"missing required key: {id_key}", key=id_key)
    if not isinstance(plan_id, str):
        raise PlanSchemaError("id must be a string", key=id_key)

    raw_segments, seg_key = pick("segments")
    if raw_segments is None:
        raise PlanSchemaError(f"missing required key: {seg_key}", key=seg_key)
    if not isinstance(raw_segments, list):
        raise PlanSchemaError("segments must be a list", key=seg_key)
    segments = [_as_floats(s, 4, "segment") for s in raw_segments]

    raw_rooms, _ = pick("rooms")
    rooms: list[RoomRecord] = []
    if raw_rooms is not None:
        if not isinstance(raw_rooms, list):
            raise PlanSchemaError("rooms must be a list")
        for rec in raw_rooms:
            if not isinstance(rec, dict):
                raise PlanSchemaError("room records must be objects")
            if "category" not in rec:
                raise PlanSchemaError("missing required key: category", key="category")
            if "bbox" not in rec:
                raise PlanSchemaError("missing required key: bbox", key="bbox")
            category = rec["category"]
            if not isinstance(category, str):
                raise PlanSchemaError("room category must be a string")
            bbox = _as_floats(rec["bbox"], 4, "room bbox")
            room_extra = {k: v for k, v in rec.items() if k not in ("category", "bbox")}
            rooms.append(RoomRecord(category, bbox, room_extra))

    raw_offset, _ = pick("offset")
    offset = _as_floats(raw_offset, 2, "offset") if raw_offset is not None else (0.0, 0.0)

    consumed = set()
    for canonical in _CANONICAL_KEYS:
        consumed.add(key_map.get(canonical, canonical) if key_map else canonical)
    extra = {k: v for k, v in raw.items() if k not in consumed}

    # Re-normalize to centroid origin and fold the shift into the offset.
    if segments:
        arr_x = [s[0] for s in segments] + [s[2] for s in segments]
        arr_y = [s[1] for s in segments] + [s[3] for s in segments]
        cx = sum(arr_x) / len(arr_x)
        cy = sum(arr_y) / len(arr_y)
    else:
        cx = cy = 0.0
    if cx != 0.0 or cy != 0.0:
        segments = [(x1 - cx, y1 - cy, x2 - cx, y2 - cy) for x1, y1, x2, y2 in segments]
        rooms = [
            RoomRecord(
                r.category,
                (r.bbox[0] - cx, r.bbox[1] - cy, r.bbox[2] - cx, r.bbox[3] - cy),
                r.extra,
            )
            for r in rooms
        ]
        offset = (offset[0] + cx, offset[1] + cy)

    return FloorPlan(plan_id, segments, rooms, offset, extra)


def save_json(plan: FloorPlan, path: str | os.PathLike | None = None) -> bytes:
    """Serialize a plan canonically; also writes ``path`` when given."""
    doc: dict[str, Any] = {
        "id": plan.id,
        "offset": list(plan.offset),
        "segments": [list(s) for s in plan.segments],
        "rooms": [
            {"category": r.category, "bbox": list(r.bbox), **r.extra} for r in plan.rooms
        ],
    }
    for key in sorted(plan.extra):
        doc[key] = plan.extra[key]
    data = json.dumps(doc, indent=2, allow_nan=False).encode("utf-8")
    if path is not None:
        with open(path, "wb") as fh:
            fh.write(data)
    return data


# -- corpus statistics -------------------------------------------------------

@dataclass
class StatsReport:
    """Corpus-level room statistics."""

    house_count: int
    counted_houses: int
    room_total: int
    rooms_mean: float
    rooms_median: float
    categories: dict[str, int]

    def to_json(self) -> str:
        return json.dumps(
            {
                "house_count": self.house_count,
                "counted_houses": self.counted_houses,
                "room_total": self.room_total,
                "rooms_mean": self.rooms_mean,
                "rooms_median": self.rooms_median,
                "categories": dict(sorted(self.categories.items())),
            },
            indent=2,
        )

    def to_table(self) -> str:
        rows = [
            ("houses", str(self.house_count)),
            ("houses with rooms counted", str(self.counted_houses)),
            ("rooms total", str(self.room_total)),
            ("rooms per house (mean)", f"{self.rooms_mean:.2f}"),
            ("rooms per house (median)", f"{self.rooms_median:.1f}"),
        ]
        rows += [(f"category: {k}", str(v)) for k, v in sorted(self.categories.items())]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


def corpus_stats(plans: Iterable[FloorPlan], implicit_room: bool = False) -> StatsReport:
    """Aggregate room statistics over a corpus.

    Plans without room annotations are skipped by the per-house statistics
    unless ``implicit_room`` is set, in which case each counts as one room.
    """
    per_house: list[int] = []
    house_count = 0
    categories: Counter[str] = Counter()
    for plan in plans:
        house_count += 1
        n = len(plan.rooms)
        for room in plan.rooms:
            categories[room.category] += 1
        if n == 0:
            if implicit_room:
                per_house.append(1)
            continue
        per_house.append(n)

    if per_house:
        mean = sum(per_house) / len(per_house)
        median = float(statistics.median(per_house))
    else:
        mean = median = 0.0
    return StatsReport(
        house_count=house_count,
        counted_houses=len(per_house),
        room_total=sum(per_house),
        rooms_mean=mean,
        rooms_median=median,
        categories=dict(categories),
    )
