"""Geometry kernel: region membership, oriented box corners, convex clipping and IoU.

Coordinates are ego-centric and right-handed: x forward (longitudinal),
y left (lateral), z up. Yaw is counter-clockwise about +z with zero along +x.
Boxes are centred at their geometric centre.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

Point2 = Tuple[float, float]
Polygon = Tuple[Point2, ...]

AREA_EPS = 1e-12
VERTEX_EPS = 1e-9


@dataclass(frozen=True)
class Vec3:
    x: float
    y: float
    z: float = 0.0

    def __post_init__(self) -> None:
        if not all(math.isfinite(c) for c in (self.x, self.y, self.z)):
            raise ValueError(f"non-finite coordinate in {self!r}")


@dataclass(frozen=True)
class OrientedBox:
    """7-parameter 3D box with a category tag and optional detector confidence."""

    center: Vec3
    length: float
    width: float
    height: float
    yaw: float = 0.0
    category: str = "car"
    confidence: Optional[float] = None

    def __post_init__(self) -> None:
        for name in ("length", "width", "height"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"box {name} must be positive and finite, got {value}")
        if not math.isfinite(self.yaw):
            raise ValueError(f"box yaw must be finite, got {self.yaw}")
        if self.confidence is not None and not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")
        object.__setattr__(self, "category", self.category.strip().lower())

    @property
    def volume(self) -> float:
        return self.length * self.width * self.height

    @property
    def z_min(self) -> float:
        return self.center.z - self.height / 2.0

    @property
    def z_max(self) -> float:
        return self.center.z + self.height / 2.0

    def to_dict(self) -> dict:
        out = {
            "category": self.category,
            "center": [self.center.x, self.center.y, self.center.z],
            "length": self.length,
            "width": self.width,
            "height": self.height,
            "yaw": self.yaw,
        }
        if self.confidence is not None:
            out["confidence"] = self.confidence
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "OrientedBox":
        return cls(
            center=Vec3(*data["center"]),
            length=data["length"],
            width=data["width"],
            height=data["height"],
            yaw=data["yaw"],
            category=data["category"],
            confidence=data.get("confidence"),
        )


@dataclass(frozen=True)
class SpatialRegion:
    """Area of interest on the horizontal plane.

    ``semi_long``/``semi_lat`` are the ellipse semi-axes, or the rectangle
    half-extents, along x and y. The shape is centred at
    ``(offset_long, offset_lat)``.
    """

    shape: str
    semi_long: float
    semi_lat: float
    offset_long: float = 0.0
    offset_lat: float = 0.0

    def __post_init__(self) -> None:
        if self.shape not in ("ellipse", "rectangle"):
            raise ValueError(f"unknown region shape {self.shape!r}")
        if not (self.semi_long > 0 and self.semi_lat > 0):
            raise ValueError("region semi-axes must be positive")
        if not all(math.isfinite(v) for v in (self.semi_long, self.semi_lat,
                                              self.offset_long, self.offset_lat)):
            raise ValueError("region parameters must be finite")

    @classmethod
    def parse(cls, spec: str) -> "SpatialRegion":
        """Parse ``ellipse:A,B,DX,DY`` or ``rect:A,B,DX,DY``."""
        try:
            kind, _, params = spec.partition(":")
            values = [float(v) for v in params.split(",")]
        except ValueError as exc:
            raise ValueError(f"bad region spec {spec!r}") from exc
        kind = {"rect": "rectangle"}.get(kind.strip().lower(), kind.strip().lower())
        if len(values) != 4:
            raise ValueError(f"region spec {spec!r} needs 4 numbers, got {len(values)}")
        return cls(kind, *values)

    def to_spec(self) -> str:
        kind = "rect" if self.shape == "rectangle" else "ellipse"
        return f"{kind}:{self.semi_long!r},{self.semi_lat!r},{self.offset_long!r},{self.offset_lat!r}"

    def contains_xy(self, xy: np.ndarray) -> np.ndarray:
        """Vectorised membership for an ``(N, >=2)`` array; only the first two columns are read."""
        xy = np.asarray(xy, dtype=np.float64)
        dx = (xy[:, 0] - self.offset_long) / self.semi_long
        dy = (xy[:, 1] - self.offset_lat) / self.semi_lat
        if self.shape == "ellipse":
            return dx * dx + dy * dy <= 1.0
        return (np.abs(dx) <= 1.0) & (np.abs(dy) <= 1.0)

    def outline(self, segments: int = 128) -> list[Point2]:
        if self.shape == "rectangle":
            a, b = self.semi_long, self.semi_lat
            local = [(a, b), (-a, b), (-a, -b), (a, -b)]
        else:
            angles = np.linspace(0.0, 2.0 * math.pi, segments, endpoint=False)
            local = [(self.semi_long * math.cos(t), self.semi_lat * math.sin(t)) for t in angles]
        return [(x + self.offset_long, y + self.offset_lat) for x, y in local]


def region_contains_point(region: SpatialRegion, p: Vec3 | Sequence[float]) -> bool:
    """Closed membership test on the horizontal projection; z is ignored."""
    x, y = (p.x, p.y) if isinstance(p, Vec3) else (p[0], p[1])
    dx = (x - region.offset_long) / region.semi_long
    dy = (y - region.offset_lat) / region.semi_lat
    if region.shape == "ellipse":
        return dx * dx + dy * dy <= 1.0
    return abs(dx) <= 1.0 and abs(dy) <= 1.0


def box_corners_bev(box: OrientedBox) -> Polygon:
    """Footprint corners, counter-clockwise from the front-right corner."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    hl, hw = box.length / 2.0, box.width / 2.0
    local = ((hl, -hw), (hl, hw), (-hl, hw), (-hl, -hw))
    return tuple(
        (box.center.x + c * lx - s * ly, box.center.y + s * lx + c * ly) for lx, ly in local
    )


def _cross(o: Point2, a: Point2, b: Point2) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _signed_area(poly: Sequence[Point2]) -> float:
    n = len(poly)
    total = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        total += x0 * y1 - x1 * y0
    return total / 2.0


def polygon_area(poly: Sequence[Point2]) -> float:
    """Shoelace area; empty and degenerate polygons give 0."""
    if len(poly) < 3:
        return 0.0
    area = abs(_signed_area(poly))
    return area if area >= AREA_EPS else 0.0


def _clean(poly: list[Point2]) -> Polygon:
    out: list[Point2] = []
    for p in poly:
        if out and abs(p[0] - out[-1][0]) <= VERTEX_EPS and abs(p[1] - out[-1][1]) <= VERTEX_EPS:
            continue
        out.append(p)
    while len(out) > 1 and abs(out[0][0] - out[-1][0]) <= VERTEX_EPS \
            and abs(out[0][1] - out[-1][1]) <= VERTEX_EPS:
        out.pop()
    if len(out) < 3 or abs(_signed_area(out)) < AREA_EPS:
        return ()
    return tuple(out)


def _ensure_ccw(poly: Sequence[Point2]) -> list[Point2]:
    pts = list(poly)
    if len(pts) >= 3 and _signed_area(pts) < 0:
        pts.reverse()
    return pts


def convex_intersection(a: Sequence[Point2], b: Sequence[Point2]) -> Polygon:
    """Intersection of two convex polygons by Sutherland-Hodgman clipping.

    Returns an empty tuple when the overlap is empty or has zero area.
    """
    subject = _ensure_ccw(a)
    clip = _ensure_ccw(b)
    if len(subject) < 3 or len(clip) < 3:
        return ()

    output = subject
    for i in range(len(clip)):
        e0, e1 = clip[i], clip[(i + 1) % len(clip)]
        inputs, output = output, []
        if not inputs:
            break
        prev = inputs[-1]
        prev_side = _cross(e0, e1, prev)
        for cur in inputs:
            cur_side = _cross(e0, e1, cur)
            if cur_side >= 0.0:
                if prev_side < 0.0:
                    output.append(_edge_hit(prev, cur, prev_side, cur_side))
                output.append(cur)
            elif prev_side >= 0.0:
                output.append(_edge_hit(prev, cur, prev_side, cur_side))
            prev, prev_side = cur, cur_side
    return _clean(output)


def _edge_hit(p: Point2, q: Point2, dp: float, dq: float) -> Point2:
    t = dp / (dp - dq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def bev_intersection_area(a: OrientedBox, b: OrientedBox) -> float:
    return polygon_area(convex_intersection(box_corners_bev(a), box_corners_bev(b)))


def vertical_overlap(a: OrientedBox, b: OrientedBox) -> float:
    return max(0.0, min(a.z_max, b.z_max) - max(a.z_min, b.z_min))


def iou3d(a: OrientedBox, b: OrientedBox) -> float:
    if a == b:
        return 1.0
    # order-independent evaluation keeps the result exactly symmetric
    if _box_key(b) < _box_key(a):
        a, b = b, a
    dz = vertical_overlap(a, b)
    if dz <= 0.0:
        return 0.0
    inter = bev_intersection_area(a, b) * dz
    if inter <= 0.0:
        return 0.0
    union = a.volume + b.volume - inter
    return min(1.0, max(0.0, inter / union))


def iou_bev(a: OrientedBox, b: OrientedBox) -> float:
    if a == b:
        return 1.0
    if _box_key(b) < _box_key(a):
        a, b = b, a
    inter = bev_intersection_area(a, b)
    if inter <= 0.0:
        return 0.0
    union = a.length * a.width + b.length * b.width - inter
    return min(1.0, max(0.0, inter / union))


def _box_key(box: OrientedBox) -> tuple:
    return (box.center.x, box.center.y, box.center.z, box.length, box.width,
            box.height, box.yaw)


def box_intersects_region(box: OrientedBox, region: SpatialRegion) -> bool:
    """True if any footprint corner, or the box centre, lies in the region."""
    if region_contains_point(region, box.center):
        return True
    return any(region_contains_point(region, c) for c in box_corners_bev(box))


def points_in_box(box: OrientedBox, pts: np.ndarray) -> np.ndarray:
    """Boolean mask of ``(N, 3)`` points inside the closed box."""
    pts = np.asarray(pts, dtype=np.float64)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx = pts[:, 0] - box.center.x
    dy = pts[:, 1] - box.center.y
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    lz = pts[:, 2] - box.center.z
    return (
        (np.abs(lx) <= box.length / 2.0)
        & (np.abs(ly) <= box.width / 2.0)
        & (np.abs(lz) <= box.height / 2.0)
    )

