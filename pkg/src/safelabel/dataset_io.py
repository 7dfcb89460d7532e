"""Readers and writers for sweeps, object lists, calibration, tracks and manifests."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np

from safelabel.geometry import OrientedBox, Vec3

POINT_STRIDE = 16
NATIVE_COLUMNS = ("category", "cx", "cy", "cz", "length", "width", "height", "yaw")


class MalformedInputError(ValueError):
    """Input file violates its documented layout."""


@dataclass
class PointCloudFrame:
    """One sweep. ``points`` is an ``(N, 4)`` float32 array of x, y, z, intensity."""

    frame_id: str
    points: np.ndarray
    timestamp: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.frame_id:
            raise ValueError("frame_id must be non-empty")
        pts = np.asarray(self.points, dtype=np.float32)
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError(f"points must have shape (N, 4), got {pts.shape}")
        if not np.isfinite(pts[:, :3]).all():
            raise ValueError("point coordinates must be finite")
        self.points = pts

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PointCloudFrame):
            return NotImplemented
        return (self.frame_id == other.frame_id and self.timestamp == other.timestamp
                and np.array_equal(self.points, other.points))


@dataclass
class ParseReport:
    rejected: list[tuple[int, str]] = field(default_factory=list)

    @property
    def rejected_count(self) -> int:
        return len(self.rejected)


@dataclass
class ObjectList:
    frame_id: str
    objects: list[OrientedBox] = field(default_factory=list)
    report: ParseReport = field(default_factory=ParseReport, compare=False)

    def __len__(self) -> int:
        return len(self.objects)

    def __iter__(self):
        return iter(self.objects)


# -- sweeps -----------------------------------------------------------------

def parse_pointcloud_bin(path: str | Path, frame_id: Optional[str] = None) -> PointCloudFrame:
    path = Path(path)
    raw = path.read_bytes()
    usable = len(raw) - len(raw) % POINT_STRIDE
    if usable != len(raw):
        raise MalformedInputError(
            f"{path}: {len(raw)} bytes is not a multiple of {POINT_STRIDE}; "
            f"truncated record at byte offset {usable}"
        )
    pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    bad = ~np.isfinite(pts).all(axis=1)
    if bad.any():
        raise MalformedInputError(f"{path}: {int(bad.sum())} points with non-finite values")
    return PointCloudFrame(frame_id or path.stem, pts.astype(np.float32))


def write_pointcloud_bin(frame: PointCloudFrame, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(np.ascontiguousarray(frame.points, dtype="<f4").tobytes())


# -- object lists -------------------------------------------------------------

def _kitti_to_box(cols: list[str]) -> OrientedBox:
    # KITTI rectified camera frame: x right, y down, z forward, location at box bottom.
    # Re-expressed here as a z-up frame (forward, left, up); calibration to LiDAR is a separate step.
    h, w, l = (float(v) for v in cols[8:11])
    x, y, z = (float(v) for v in cols[11:14])
    ry = float(cols[14])
    conf = float(cols[15]) if len(cols) > 15 else None
    return OrientedBox(
        center=Vec3(z, -x, -(y - h / 2.0)),
        length=l,
        width=w,
        height=h,
        yaw=_wrap(-ry - math.pi / 2.0),
        category=cols[0],
        confidence=conf,
    )


def _native_to_box(cols: list[str]) -> OrientedBox:
    cx, cy, cz, length, width, height, yaw = (float(v) for v in cols[1:8])
    conf = float(cols[8]) if len(cols) > 8 else None
    return OrientedBox(Vec3(cx, cy, cz), length, width, height, yaw, cols[0], conf)


def parse_object_labels(path: str | Path, frame_convention: str = "native",
                        frame_id: Optional[str] = None) -> ObjectList:
    """Read one object per line.

    ``native``: ``category cx cy cz length width height yaw [confidence]``.
    ``kitti``: the 15/16-column KITTI label layout. ``DontCare`` rows are kept
    as opaque categories; downstream category filters decide.
    Invalid boxes (non-positive dimensions, confidence out of range) are
    excluded and listed in ``report``; a wrong column count aborts.
    """
    path = Path(path)
    if frame_convention == "native":
        allowed, convert = (8, 9), _native_to_box
    elif frame_convention == "kitti":
        allowed, convert = (15, 16), _kitti_to_box
    else:
        raise ValueError(f"unknown frame convention {frame_convention!r}")

    out = ObjectList(frame_id or path.stem)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            cols = text.split()
            if len(cols) not in allowed:
                raise MalformedInputError(
                    f"{path}:{lineno}: expected {' or '.join(map(str, allowed))} columns, got {len(cols)}"
                )
            try:
                box = convert(cols)
            except ValueError as exc:
                out.report.rejected.append((lineno, str(exc)))
                continue
            out.objects.append(box)
    return out


def write_object_labels(objects: ObjectList | Iterable[OrientedBox], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for b in objects:
        cols = [b.category] + [repr(float(v)) for v in
                               (b.center.x, b.center.y, b.center.z, b.length, b.width, b.height, b.yaw)]
        if b.confidence is not None:
            cols.append(repr(float(b.confidence)))
        lines.append(" ".join(cols))
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


# -- calibration --------------------------------------------------------------

def _wrap(angle: float) -> float:
    return math.atan2(math.sin(angle), math.cos(angle))


def check_rigid(T: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    T = np.asarray(T, dtype=np.float64)
    if T.shape != (4, 4):
        raise ValueError(f"transform must be 4x4, got {T.shape}")
    R = T[:3, :3]
    if not np.allclose(T[3], [0.0, 0.0, 0.0, 1.0], atol=tol):
        raise ValueError("transform bottom row must be [0, 0, 0, 1]")
    if np.abs(R.T @ R - np.eye(3)).max() > tol:
        raise ValueError("transform rotation is not orthonormal")
    det = float(np.linalg.det(R))
    if abs(abs(det) - 1.0) > tol or det < 0:
        raise ValueError(f"transform is not a proper rotation (det={det:.9f})")
    return T


def apply_calibration(objects: ObjectList, T: np.ndarray) -> ObjectList:
    """Move box centres by the rigid transform ``T`` and turn yaws by its heading change."""
    T = check_rigid(T)
    R, t = T[:3, :3], T[:3, 3]
    moved = []
    for b in objects.objects:
        c = R @ np.array([b.center.x, b.center.y, b.center.z]) + t
        cy, sy = math.cos(b.yaw), math.sin(b.yaw)
        hx, hy, _ = R @ np.array([cy, sy, 0.0])
        # signed turn of the projected heading; exactly zero when R leaves it unchanged
        yaw = b.yaw + math.atan2(cy * hy - sy * hx, cy * hx + sy * hy)
        moved.append(OrientedBox(Vec3(float(c[0]), float(c[1]), float(c[2])), b.length, b.width,
                                 b.height, yaw, b.category, b.confidence))
    return ObjectList(objects.frame_id, moved, objects.report)


_CAM_ZUP_TO_CAM = np.array([
    [0.0, -1.0, 0.0, 0.0],
    [0.0, 0.0, -1.0, 0.0],
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
])


def _nearest_rotation(R: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(R)
    rot = u @ vt
    if np.linalg.det(rot) < 0:
        u[:, -1] *= -1
        rot = u @ vt
    return rot


def read_kitti_calib(path: str | Path) -> np.ndarray:
    """Transform from the z-up camera frame used by ``kitti`` labels to the LiDAR frame.

    Published KITTI matrices are orthonormal only to a few 1e-7; both
    rotations are projected onto SO(3) before composing.
    """
    entries: dict[str, np.ndarray] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if ":" not in line:
            continue
        key, _, values = line.partition(":")
        entries[key.strip()] = np.array([float(v) for v in values.split()])
    try:
        velo_to_cam = entries.get("Tr_velo_to_cam", entries.get("Tr_velo_cam"))
        r0 = entries.get("R0_rect", entries.get("R_rect"))
        if velo_to_cam is None or r0 is None:
            raise KeyError("Tr_velo_to_cam/R0_rect")
    except KeyError as exc:
        raise MalformedInputError(f"{path}: missing calibration entry {exc}") from None
    Tv = np.eye(4)
    Tv[:3, :4] = velo_to_cam.reshape(3, 4)
    Tv[:3, :3] = _nearest_rotation(Tv[:3, :3])
    R0 = np.eye(4)
    R0[:3, :3] = _nearest_rotation(r0.reshape(3, 3))
    # z-up camera -> rectified camera -> unrectified camera -> LiDAR
    return np.linalg.inv(Tv) @ np.linalg.inv(R0) @ _CAM_ZUP_TO_CAM


# -- tracks -------------------------------------------------------------------

@dataclass(frozen=True)
class TrackSample:
    actor_id: str
    t: float
    position: Vec3
    velocity: tuple[float, float]
    yaw: float
    is_ego: bool = False
    scene_id: str = ""

    def to_dict(self) -> dict:
        out = {
            "actor_id": self.actor_id, "t": self.t,
            "x": self.position.x, "y": self.position.y, "z": self.position.z,
            "vx": self.velocity[0], "vy": self.velocity[1], "yaw": self.yaw,
            "is_ego": self.is_ego,
        }
        if self.scene_id:
            out["scene_id"] = self.scene_id
        return out


TRACK_FIELDS = ("actor_id", "t", "x", "y", "z", "vx", "vy", "yaw", "is_ego")


def _sample_from_row(row: dict, where: str, default_scene: str) -> TrackSample:
    missing = [k for k in TRACK_FIELDS if k not in row]
    if missing:
        raise MalformedInputError(f"{where}: missing fields {missing}")
    try:
        nums = [float(row[k]) for k in ("t", "x", "y", "z", "vx", "vy", "yaw")]
    except (TypeError, ValueError) as exc:
        raise MalformedInputError(f"{where}: non-numeric field ({exc})") from None
    if not all(math.isfinite(v) for v in nums):
        raise MalformedInputError(f"{where}: non-finite value")
    if not isinstance(row["is_ego"], bool):
        raise MalformedInputError(f"{where}: is_ego must be a boolean")
    t, x, y, z, vx, vy, yaw = nums
    return TrackSample(str(row["actor_id"]), t, Vec3(x, y, z), (vx, vy), yaw,
                       row["is_ego"], str(row.get("scene_id", default_scene)))


def parse_tracks(path: str | Path) -> list[TrackSample]:
    """Read the JSON-lines track layout.

    Each actor's samples must appear with strictly increasing ``t``. Rows
    may carry a ``scene_id``; otherwise the file stem is used. The result
    is grouped by scene and actor in order of first appearance.
    """
    path = Path(path)
    per_actor: dict[tuple[str, str], list[TrackSample]] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedInputError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(row, dict):
                raise MalformedInputError(f"{path}:{lineno}: expected a JSON object")
            s = _sample_from_row(row, f"{path}:{lineno}", path.stem)
            samples = per_actor.setdefault((s.scene_id, s.actor_id), [])
            if samples:
                if s.t <= samples[-1].t:
                    raise MalformedInputError(
                        f"{path}:{lineno}: timestamps of actor {s.actor_id!r} are not strictly "
                        f"increasing ({samples[-1].t} then {s.t})"
                    )
                if s.is_ego != samples[-1].is_ego:
                    raise MalformedInputError(
                        f"{path}:{lineno}: actor {s.actor_id!r} changes its is_ego flag")
            samples.append(s)

    egos: dict[str, set[str]] = {}
    for (scene, actor), samples in per_actor.items():
        egos.setdefault(scene, set())
        if samples[0].is_ego:
            egos[scene].add(actor)
    for scene, ids in egos.items():
        if len(ids) != 1:
            label = f"scene {scene!r}" if scene else "track file"
            raise MalformedInputError(
                f"{path}: {label} must flag exactly one ego actor, found {sorted(ids) or 'none'}")
    return [s for samples in per_actor.values() for s in samples]


def write_tracks(samples: Iterable[TrackSample], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_dict()) + "\n")


# -- manifests ----------------------------------------------------------------

@dataclass(frozen=True)
class AnnotationRecord:
    frame_id: str
    mode: str
    label: str
    evidence: dict[str, Any]
    config_digest: str

    def to_dict(self) -> dict:
        return {"frame_id": self.frame_id, "mode": self.mode, "label": self.label,
                "evidence": self.evidence, "config_digest": self.config_digest}

    @classmethod
    def from_dict(cls, data: dict) -> "AnnotationRecord":
        return cls(data["frame_id"], data["mode"], data["label"], data["evidence"],
                   data["config_digest"])


RECORD_MODES = ("spatial", "label-only", "hazard")
RECORD_LABELS = ("error", "no-error", "hazardous", "safe")


def config_digest(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def write_manifest(records: Iterable[AnnotationRecord], path: str | Path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write manifest {path}: {exc.strerror or exc}") from exc


def read_manifest(path: str | Path) -> list[AnnotationRecord]:
    path = Path(path)
    records = []
    try:
        fh = path.open(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read manifest {path}: {exc.strerror or exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                rec = AnnotationRecord.from_dict(data)
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise MalformedInputError(f"{path}:{lineno}: corrupt manifest line ({exc})") from None
            if rec.mode not in RECORD_MODES or rec.label not in RECORD_LABELS:
                raise MalformedInputError(f"{path}:{lineno}: unknown mode/label {rec.mode}/{rec.label}")
            records.append(rec)
    return records
