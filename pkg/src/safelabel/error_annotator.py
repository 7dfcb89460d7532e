"""Perception-error labels from region-filtered ground truth and detections.

A frame is labelled ``error`` when a ground-truth object touching the area
of interest has no same-category detection with IoU strictly above the
threshold. ``spatial`` mode also crops the sweep to the region;
``label-only`` leaves the sweep untouched. Both modes give identical verdicts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from safelabel.dataset_io import AnnotationRecord, ObjectList, PointCloudFrame, config_digest
from safelabel.geometry import OrientedBox, SpatialRegion, box_intersects_region, iou3d, iou_bev

ERROR = "error"
NO_ERROR = "no-error"
MODES = ("spatial", "label-only")
DEFAULT_CATEGORIES = frozenset({"car", "pedestrian", "cyclist"})
DEFAULT_REGION = SpatialRegion("ellipse", 25.0, 10.0, 5.0, 0.0)


@dataclass(frozen=True)
class FilterConfig:
    region: SpatialRegion = DEFAULT_REGION
    iou_threshold: float = 0.7
    mode: str = "spatial"
    categories_of_interest: frozenset = DEFAULT_CATEGORIES
    bev_only: bool = False
    confidence_floor: Optional[float] = None
    max_tolerated_misses: int = 0

    def __post_init__(self) -> None:
        if not (0.0 < self.iou_threshold <= 1.0):
            raise ValueError(f"iou_threshold must lie in (0, 1], got {self.iou_threshold}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.max_tolerated_misses < 0:
            raise ValueError("max_tolerated_misses must be >= 0")
        cats = frozenset(c.strip().lower() for c in self.categories_of_interest)
        object.__setattr__(self, "categories_of_interest", cats)

    def to_dict(self) -> dict:
        return {
            "region": self.region.to_spec(),
            "iou_threshold": self.iou_threshold,
            "iou_kind": "bev" if self.bev_only else "3d",
            "mode": self.mode,
            "categories": sorted(self.categories_of_interest),
            "confidence_floor": self.confidence_floor,
            "max_tolerated_misses": self.max_tolerated_misses,
            "matching": "greedy-one-to-one-same-category",
        }

    @property
    def digest(self) -> str:
        return config_digest(self.to_dict())


@dataclass
class FrameVerdict:
    frame_id: str
    label: str
    missed: list[OrientedBox] = field(default_factory=list)
    matched: list[tuple[OrientedBox, OrientedBox, float]] = field(default_factory=list)
    gt_in_region_count: int = 0

    @property
    def is_error(self) -> bool:
        return self.label == ERROR

    def evidence(self) -> dict:
        return {
            "gt_in_region_count": self.gt_in_region_count,
            "missed": [b.to_dict() for b in self.missed],
            "matched": [{"gt": g.to_dict(), "det": d.to_dict(), "iou": iou}
                        for g, d, iou in self.matched],
        }


@dataclass
class FrameAnnotation:
    verdict: FrameVerdict
    filtered_cloud: Optional[PointCloudFrame] = None


def filter_pointcloud(frame: PointCloudFrame, region: SpatialRegion) -> PointCloudFrame:
    keep = region.contains_xy(frame.points)
    return PointCloudFrame(frame.frame_id, frame.points[keep], frame.timestamp)


def filter_ground_truth(gt: ObjectList, region: SpatialRegion,
                        categories=DEFAULT_CATEGORIES) -> ObjectList:
    cats = {c.lower() for c in categories}
    kept = [b for b in gt.objects if b.category in cats and box_intersects_region(b, region)]
    return ObjectList(gt.frame_id, kept, gt.report)


def match_detections(filtered_gt: ObjectList | Sequence[OrientedBox],
                     detections: ObjectList | Sequence[OrientedBox],
                     iou_threshold: float = 0.7, *, bev_only: bool = False,
                     max_tolerated_misses: int = 0, frame_id: Optional[str] = None) -> FrameVerdict:
    """Greedy one-to-one matching by descending IoU, same category only.

    A pair qualifies only when IoU is strictly greater than ``iou_threshold``.
    """
    if isinstance(filtered_gt, ObjectList) and isinstance(detections, ObjectList) \
            and filtered_gt.frame_id != detections.frame_id:
        raise ValueError(f"frame mismatch: {filtered_gt.frame_id!r} vs {detections.frame_id!r}")
    if frame_id is None:
        frame_id = filtered_gt.frame_id if isinstance(filtered_gt, ObjectList) else ""
    gts = list(filtered_gt)
    dets = list(detections)
    iou_fn = iou_bev if bev_only else iou3d

    candidates = []
    for gi, g in enumerate(gts):
        for di, d in enumerate(dets):
            if g.category != d.category:
                continue
            iou = iou_fn(g, d)
            if iou > iou_threshold:
                candidates.append((-iou, gi, di))
    candidates.sort()

    gt_match: dict[int, tuple[int, float]] = {}
    used: set[int] = set()
    for neg_iou, gi, di in candidates:
        if gi in gt_match or di in used:
            continue
        gt_match[gi] = (di, -neg_iou)
        used.add(di)

    matched = [(gts[gi], dets[di], iou) for gi, (di, iou) in sorted(gt_match.items())]
    missed = [g for gi, g in enumerate(gts) if gi not in gt_match]
    label = ERROR if len(missed) > max_tolerated_misses else NO_ERROR
    return FrameVerdict(frame_id, label, missed, matched, len(gts))


def annotate_frame(frame: Optional[PointCloudFrame], gt: ObjectList, detections: ObjectList,
                   config: FilterConfig) -> FrameAnnotation:
    if frame is not None and frame.frame_id != gt.frame_id:
        raise ValueError(f"frame mismatch: sweep {frame.frame_id!r} vs labels {gt.frame_id!r}")
    dets = detections
    if config.confidence_floor is not None:
        dets = ObjectList(detections.frame_id,
                          [d for d in detections if d.confidence is None
                           or d.confidence >= config.confidence_floor])
    filtered = filter_ground_truth(gt, config.region, config.categories_of_interest)
    verdict = match_detections(filtered, dets, config.iou_threshold, bev_only=config.bev_only,
                               max_tolerated_misses=config.max_tolerated_misses)
    cloud = None
    if config.mode == "spatial":
        if frame is None:
            raise ValueError("spatial mode needs the sweep")
        cloud = filter_pointcloud(frame, config.region)
    return FrameAnnotation(verdict, cloud)


def to_record(verdict: FrameVerdict, config: FilterConfig) -> AnnotationRecord:
    return AnnotationRecord(verdict.frame_id, config.mode, verdict.label, verdict.evidence(),
                            config.digest)


@dataclass
class DatasetStats:
    total: int
    errors: int
    no_errors: int
    error_ratio: float
    class_weights: dict[str, Optional[float]]

    def to_dict(self) -> dict:
        return {"total": self.total, "error": self.errors, "no-error": self.no_errors,
                "error_ratio": self.error_ratio, "class_weights": self.class_weights}


def dataset_stats(verdicts: Sequence[FrameVerdict] | Sequence[str]) -> DatasetStats:
    """Error ratio and inverse-frequency class weights (sample-weighted mean of 1).

    Accepts verdicts or bare label strings. A class with no samples gets
    weight ``None``.
    """
    labels = [v.label if isinstance(v, FrameVerdict) else v for v in verdicts]
    if not labels:
        raise ValueError("dataset_stats needs at least one verdict")
    total = len(labels)
    errors = sum(1 for label in labels if label == ERROR)
    counts = {NO_ERROR: total - errors, ERROR: errors}
    weights = {k: (total / (2.0 * n) if n else None) for k, n in counts.items()}
    return DatasetStats(total, errors, total - errors, errors / total, weights)

