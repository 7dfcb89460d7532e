"""Top-down SVG view of a sweep, the area of interest and labelled boxes.

Forward (+x) points up the page and left (+y) points left. Output is
byte-identical for identical input.
"""

from __future__ import annotations

from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from safelabel.dataset_io import PointCloudFrame
from safelabel.geometry import OrientedBox, SpatialRegion, box_corners_bev

MATCHED_COLOR = "#2ca02c"
MISSED_COLOR = "#ff7f0e"
DETECTION_COLOR = "#1f77b4"
POINT_COLOR = "#555555"
REGION_COLOR = "#9467bd"

Extent = tuple[float, float, float, float]  # x_min, x_max, y_min, y_max


def default_extent(region: Optional[SpatialRegion], margin: float = 10.0) -> Extent:
    if region is None:
        return (-30.0, 50.0, -30.0, 30.0)
    return (region.offset_long - region.semi_long - margin, region.offset_long + region.semi_long + margin,
            region.offset_lat - region.semi_lat - margin, region.offset_lat + region.semi_lat + margin)


def _num(v: float) -> str:
    text = f"{v:.2f}".rstrip("0").rstrip(".")
    return "0" if text == "-0" else text


def render_svg(frame: Optional[PointCloudFrame] = None, region: Optional[SpatialRegion] = None,
               matched: Sequence[OrientedBox] = (), missed: Sequence[OrientedBox] = (),
               detections: Sequence[OrientedBox] = (), meters_per_px: float = 0.1,
               extent: Optional[Extent] = None, max_points: Optional[int] = None) -> str:
    """Build the SVG document.

    Args:
        frame: sweep to draw as dots; may be ``None``.
        region: area-of-interest outline.
        matched: ground-truth boxes that were detected (green).
        missed: ground-truth boxes without a match (orange).
        detections: detector boxes (blue, dashed).
        meters_per_px: scale, metres per pixel.
        extent: visible window ``(x_min, x_max, y_min, y_max)`` in metres.
        max_points: draw every k-th point so at most this many remain.
    """
    if meters_per_px <= 0:
        raise ValueError("meters_per_px must be positive")
    x_min, x_max, y_min, y_max = extent or default_extent(region)
    width = (y_max - y_min) / meters_per_px
    height = (x_max - x_min) / meters_per_px

    def to_px(x: float, y: float) -> tuple[float, float]:
        return (y_max - y) / meters_per_px, (x_max - x) / meters_per_px

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_num(width)}" height="{_num(height)}" '
        f'viewBox="0 0 {_num(width)} {_num(height)}">',
        f'<rect x="0" y="0" width="{_num(width)}" height="{_num(height)}" fill="white"/>',
    ]

    # axes through the ego origin
    ox, oy = to_px(0.0, 0.0)
    out.append('<g id="axes" stroke="#bbbbbb" stroke-width="1">')
    out.append(f'<line x1="0" y1="{_num(oy)}" x2="{_num(width)}" y2="{_num(oy)}"/>')
    out.append(f'<line x1="{_num(ox)}" y1="0" x2="{_num(ox)}" y2="{_num(height)}"/>')
    out.append(f'<text x="{_num(ox + 4)}" y="12" font-size="10" fill="#888888">x</text>')
    out.append(f'<text x="4" y="{_num(oy - 4)}" font-size="10" fill="#888888">y</text>')
    out.append('</g>')

    if frame is not None and len(frame):
        pts = frame.points
        keep = (pts[:, 0] >= x_min) & (pts[:, 0] <= x_max) & (pts[:, 1] >= y_min) & (pts[:, 1] <= y_max)
        pts = pts[keep]
        if max_points and len(pts) > max_points:
            pts = pts[:: int(np.ceil(len(pts) / max_points))]
        out.append(f'<g id="points" fill="{POINT_COLOR}">')
        for x, y in pts[:, :2].astype(np.float64):
            px, py = to_px(x, y)
            out.append(f'<circle cx="{_num(px)}" cy="{_num(py)}" r="0.8"/>')
        out.append('</g>')

    if region is not None:
        pts = " ".join(f"{_num(px)},{_num(py)}" for px, py in (to_px(x, y) for x, y in region.outline()))
        out.append(f'<polygon id="region" points="{pts}" fill="none" stroke="{REGION_COLOR}" '
                   f'stroke-width="1.5"/>')

    def boxes(group: str, items: Sequence[OrientedBox], color: str, extra: str = "") -> None:
        out.append(f'<g id="{group}">')
        for b in items:
            pts = " ".join(f"{_num(px)},{_num(py)}" for px, py in (to_px(x, y) for x, y in box_corners_bev(b)))
            out.append(f'<polygon class="{group}" points="{pts}" fill="none" stroke="{color}" '
                       f'stroke-width="2"{extra}><title>{escape(b.category)}</title></polygon>')
        out.append('</g>')

    boxes("detections", detections, DETECTION_COLOR, ' stroke-dasharray="4 2"')
    boxes("matched", matched, MATCHED_COLOR)
    boxes("missed", missed, MISSED_COLOR)
    out.append('</svg>')
    return "\n".join(out) + "\n"
