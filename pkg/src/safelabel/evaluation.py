"""Score introspector predictions against generated error labels.

The positive class is always ``error``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

from safelabel.dataset_io import AnnotationRecord, MalformedInputError

ERROR = "error"
NO_ERROR = "no-error"


class AlignmentError(ValueError):
    """Predictions and labels do not cover the same frame ids."""

    def __init__(self, missing_predictions: list[str], missing_labels: list[str]):
        self.missing_predictions = missing_predictions
        self.missing_labels = missing_labels
        parts = []
        if missing_predictions:
            parts.append(f"no prediction for {missing_predictions}")
        if missing_labels:
            parts.append(f"no label for {missing_labels}")
        super().__init__("; ".join(parts))


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int


def _is_error(label: str | bool) -> bool:
    if isinstance(label, bool):
        return label
    if label not in (ERROR, NO_ERROR):
        raise ValueError(f"unknown label {label!r}")
    return label == ERROR


def align(preds: Mapping[str, float], labels: Mapping[str, str | bool]) -> tuple[list[float], list[bool]]:
    """Scores and positive flags in label order; raises on any id mismatch."""
    missing_p = sorted(set(labels) - set(preds))
    missing_l = sorted(set(preds) - set(labels))
    if missing_p or missing_l:
        raise AlignmentError(missing_p, missing_l)
    scores = []
    for k in labels:
        s = float(preds[k])
        if not math.isfinite(s):
            raise ValueError(f"score for {k!r} is not finite")
        scores.append(s)
    return scores, [_is_error(labels[k]) for k in labels]


def confusion(preds: Mapping[str, float], labels: Mapping[str, str | bool], threshold: float = 0.5) -> Confusion:
    scores, pos = align(preds, labels)
    tp = fp = tn = fn = 0
    for s, p in zip(scores, pos):
        if s >= threshold:
            if p:
                tp += 1
            else:
                fp += 1
        elif p:
            fn += 1
        else:
            tn += 1
    return Confusion(tp, fp, tn, fn)


def recall_pair(counts: Confusion) -> tuple[Optional[float], Optional[float]]:
    """(positive recall, negative recall); ``None`` where the class is absent."""
    pos = counts.tp + counts.fn
    neg = counts.tn + counts.fp
    return (counts.tp / pos if pos else None, counts.tn / neg if neg else None)


def roc_points(scores: Sequence[float], positives: Sequence[bool]) -> list[tuple[int, int]]:
    """ROC vertices as (false positives, true positives) counts, one per distinct score."""
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    points = [(0, 0)]
    fp = tp = 0
    i = 0
    while i < len(order):
        j = i
        while j < len(order) and scores[order[j]] == scores[order[i]]:
            if positives[order[j]]:
                tp += 1
            else:
                fp += 1
            j += 1
        points.append((fp, tp))
        i = j
    return points


def auroc(scores: Sequence[float], positives: Sequence[bool]) -> float:
    """Trapezoidal area under the ROC curve; tied scores form a single diagonal step.

    Accumulated in integer counts, so it equals the Mann-Whitney statistic
    (ties counted half) up to one final division.
    """
    n_pos = sum(1 for p in positives if p)
    n_neg = len(positives) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs at least one error and one no-error frame")
    pts = roc_points(scores, positives)
    twice_area = 0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        twice_area += (x1 - x0) * (y0 + y1)
    return twice_area / (2 * n_pos * n_neg)


def load_predictions(path: str | Path) -> tuple[dict[str, float], bool]:
    """Read ``{"frame_id", "score"}`` JSON lines.

    Rows may give ``label`` (``error``/``no-error``) instead of a score; the
    second return value is True when every row was a hard label.
    """
    path = Path(path)
    preds: dict[str, float] = {}
    hard = True
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                fid = str(row["frame_id"])
                if "score" in row:
                    value = float(row["score"])
                    hard = False
                else:
                    value = 1.0 if _is_error(row["label"]) else 0.0
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise MalformedInputError(f"{path}:{lineno}: bad prediction row ({exc})") from None
            if not math.isfinite(value):
                raise MalformedInputError(f"{path}:{lineno}: score is not finite")
            if fid in preds:
                raise MalformedInputError(f"{path}:{lineno}: duplicate frame id {fid!r}")
            preds[fid] = value
    return preds, hard and bool(preds)


def labels_from_manifest(records: Sequence[AnnotationRecord]) -> dict[str, str]:
    out = {}
    for r in records:
        if r.label not in (ERROR, NO_ERROR):
            continue
        out[r.frame_id] = r.label
    return out


def evaluate(preds: Mapping[str, float], labels: Mapping[str, str | bool], threshold: float = 0.5,
             hard_labels: bool = False) -> dict:
    """AUROC and both recalls. Hard-label input gives a one-point ROC, flagged ``degenerate``."""
    counts = confusion(preds, labels, threshold)
    scores, pos = align(preds, labels)
    rec_pos, rec_neg = recall_pair(counts)
    return {
        "frames": len(pos),
        "threshold": threshold,
        "auroc": auroc(scores, pos),
        "auroc_degenerate": hard_labels,
        "recall_pos": rec_pos,
        "recall_neg": rec_neg,
        "confusion": {"tp": counts.tp, "fp": counts.fp, "tn": counts.tn, "fn": counts.fn},
    }


def format_eval(report: dict) -> str:
    def fmt(v: Optional[float]) -> str:
        return "undefined" if v is None else f"{v:.4f}"

    auroc_txt = fmt(report["auroc"]) + (" (degenerate)" if report["auroc_degenerate"] else "")
    rows = [("frames", str(report["frames"])), ("AUROC", auroc_txt),
            ("recall (+, error)", fmt(report["recall_pos"])),
            ("recall (-, no-error)", fmt(report["recall_neg"]))]
    c = report["confusion"]
    rows.append(("TP/FP/TN/FN", f"{c['tp']}/{c['fp']}/{c['tn']}/{c['fn']}"))
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)
