"""Command-line entry point.

Subcommands: ``annotate-errors``, ``annotate-hazards``, ``eval``, ``render``
and ``stats``. Settings come from an optional INI file (sections
``[errors]``, ``[hazard]``, ``[run]``); command-line flags override it.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Sequence

from safelabel import __version__
from safelabel.dataset_io import (
    AnnotationRecord,
    MalformedInputError,
    apply_calibration,
    parse_object_labels,
    parse_pointcloud_bin,
    parse_tracks,
    read_kitti_calib,
    read_manifest,
    write_manifest,
    write_pointcloud_bin,
)
from safelabel.error_annotator import (
    ERROR,
    FilterConfig,
    NO_ERROR,
    annotate_frame,
    dataset_stats,
    to_record,
)
from safelabel.evaluation import AlignmentError, evaluate, format_eval, labels_from_manifest, load_predictions
from safelabel.geometry import OrientedBox, SpatialRegion
from safelabel.hazard import (
    HAZARDOUS,
    HazardConfig,
    format_report,
    label_scene,
    per_metric_report,
    split_scenes,
    to_records,
)
from safelabel.render import render_svg

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_INVARIANT = 0, 1, 2, 3


class ValidationError(Exception):
    pass


class InvariantViolation(Exception):
    pass


# -- configuration ------------------------------------------------------------

def load_config(path: Optional[str]) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    if path:
        if not Path(path).is_file():
            raise ValidationError(f"config file not found: {path}")
        parser.read(path, encoding="utf-8")
    return parser


def _pick(flag: Any, cfg: configparser.ConfigParser, section: str, key: str,
          convert: Callable[[str], Any], default: Any) -> Any:
    if flag is not None:
        return flag
    if cfg.has_option(section, key):
        return convert(cfg.get(section, key))
    return default


def _bool(text: str) -> bool:
    return text.strip().lower() in ("1", "true", "yes", "on")


def _jobs(args: argparse.Namespace, cfg: configparser.ConfigParser) -> int:
    jobs = _pick(args.jobs, cfg, "run", "jobs", int, os.cpu_count() or 1)
    if jobs < 1:
        raise ValidationError("--jobs must be >= 1")
    return jobs


def ordered_map(fn: Callable, items: Sequence, jobs: int) -> list:
    """Map preserving input order; a process pool when ``jobs > 1``."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def build_filter_config(args: argparse.Namespace, cfg: configparser.ConfigParser) -> FilterConfig:
    region = _pick(args.region, cfg, "errors", "region", str, "ellipse:25,10,5,0")
    categories = _pick(args.categories, cfg, "errors", "categories", str, "car,pedestrian,cyclist")
    floor = _pick(args.confidence_floor, cfg, "errors", "confidence_floor", float, None)
    try:
        return FilterConfig(
            region=SpatialRegion.parse(region),
            iou_threshold=_pick(args.iou, cfg, "errors", "iou", float, 0.7),
            mode=_pick(args.mode, cfg, "errors", "mode", str, "spatial"),
            categories_of_interest=frozenset(c for c in categories.split(",") if c.strip()),
            bev_only=_pick(args.bev_iou, cfg, "errors", "bev_iou", _bool, False),
            confidence_floor=floor,
            max_tolerated_misses=_pick(args.max_misses, cfg, "errors", "max_misses", int, 0),
        )
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc


def build_hazard_config(cfg: configparser.ConfigParser) -> HazardConfig:
    values = dict(cfg.items("hazard")) if cfg.has_section("hazard") else {}
    try:
        return HazardConfig.from_mapping(values)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"[hazard] section: {exc}") from exc


# -- annotate-errors ----------------------------------------------------------

def _error_job(job: tuple) -> dict:
    frame_id, gt_path, det_path, pc_path, calib_path, gt_format, det_format, filtered_dir, config = job
    gt = parse_object_labels(gt_path, gt_format, frame_id=frame_id)
    dets = parse_object_labels(det_path, det_format, frame_id=frame_id)
    if calib_path is not None:
        T = read_kitti_calib(calib_path)
        if gt_format == "kitti":
            gt = apply_calibration(gt, T)
        if det_format == "kitti":
            dets = apply_calibration(dets, T)
    frame = parse_pointcloud_bin(pc_path, frame_id) if pc_path is not None else None
    result = annotate_frame(frame, gt, dets, config)
    v = result.verdict
    if len(v.matched) + len(v.missed) != v.gt_in_region_count:
        raise InvariantViolation(f"{frame_id}: matched + missed != in-region count")
    if (v.label == ERROR) != (len(v.missed) > config.max_tolerated_misses):
        raise InvariantViolation(f"{frame_id}: label inconsistent with missed set")
    if any(iou <= config.iou_threshold for _, _, iou in v.matched):
        raise InvariantViolation(f"{frame_id}: matched pair at or below threshold")
    record = to_record(v, config)
    record.evidence["rejected_gt_lines"] = gt.report.rejected_count
    record.evidence["rejected_det_lines"] = dets.report.rejected_count
    if result.filtered_cloud is not None:
        record.evidence["points_in"] = len(frame)
        record.evidence["points_kept"] = len(result.filtered_cloud)
        if filtered_dir is not None:
            write_pointcloud_bin(result.filtered_cloud, Path(filtered_dir) / f"{frame_id}.bin")
    return record.to_dict()


def _require_dir(path: Optional[str], flag: str) -> Path:
    if path is None:
        raise ValidationError(f"{flag} is required")
    p = Path(path)
    if not p.is_dir():
        raise ValidationError(f"{flag} directory not found: {path}")
    return p


def cmd_annotate_errors(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    config = build_filter_config(args, cfg)
    jobs = _jobs(args, cfg)
    gt_dir = _require_dir(args.gt, "--gt")
    det_dir = _require_dir(args.det, "--det")
    pc_dir = _require_dir(args.pc, "--pc") if config.mode == "spatial" else None
    calib_dir = _require_dir(args.calib, "--calib") if args.calib else None
    out = Path(args.out)

    filtered_dir = None
    if config.mode == "spatial":
        filtered_dir = Path(args.filtered_dir) if args.filtered_dir else out.parent / f"{out.stem}_filtered"

    frame_ids = sorted(p.stem for p in gt_dir.glob("*.txt"))
    if not frame_ids:
        raise ValidationError(f"no ground-truth label files (*.txt) in {gt_dir}")
    jobs_list, missing = [], []
    for fid in frame_ids:
        det_path = det_dir / f"{fid}.txt"
        pc_path = pc_dir / f"{fid}.bin" if pc_dir is not None else None
        calib_path = calib_dir / f"{fid}.txt" if calib_dir is not None else None
        absent = [str(p) for p in (det_path, pc_path, calib_path) if p is not None and not p.is_file()]
        if absent:
            missing.append((fid, absent))
            continue
        jobs_list.append((fid, gt_dir / f"{fid}.txt", det_path, pc_path, calib_path,
                          args.gt_format, args.det_format, filtered_dir, config))
    if missing:
        for fid, absent in missing:
            print(f"missing input for frame {fid}: {', '.join(absent)}", file=sys.stderr)
        if not args.skip_missing:
            raise ValidationError(f"{len(missing)} frame(s) lack a complete input set "
                                  "(use --skip-missing to continue without them)")
    if not jobs_list:
        raise ValidationError("no frame has a complete input set")

    records = [AnnotationRecord.from_dict(r) for r in ordered_map(_error_job, jobs_list, jobs)]
    write_manifest(records, out)
    stats = dataset_stats([r.label for r in records]).to_dict()
    stats["config_digest"] = config.digest
    stats["skipped_frames"] = [fid for fid, _ in missing]
    stats_path = out.with_name(out.name + ".stats.json")
    stats_path.write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {len(records)} records to {out} (config {config.digest})")
    print(f"error ratio {stats['error_ratio']:.4f} ({stats['error']}/{stats['total']})")
    return EXIT_OK


# -- annotate-hazards ---------------------------------------------------------

def _hazard_job(job: tuple) -> tuple[list[dict], Any]:
    scene_id, actors, hcfg = job
    result = label_scene(actors, hcfg, scene_id)
    for v in result.frames:
        if (v.label == HAZARDOUS) != any(f.hazardous for f in v.flags.values()):
            raise InvariantViolation(f"{scene_id}/{v.frame_id}: label inconsistent with flags")
    return [r.to_dict() for r in to_records(result, hcfg)], result


def _read_reference(path: str) -> dict[str, str]:
    ref: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                scene, label = str(row["scene_id"]), row["label"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise MalformedInputError(f"{path}:{lineno}: bad reference row ({exc})") from None
            if label not in ("hazardous", "safe"):
                raise MalformedInputError(f"{path}:{lineno}: label must be hazardous or safe")
            ref[scene] = label
    return ref


def cmd_annotate_hazards(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    hcfg = build_hazard_config(cfg)
    jobs = _jobs(args, cfg)
    if not Path(args.tracks).is_file():
        raise ValidationError(f"track file not found: {args.tracks}")
    samples = parse_tracks(args.tracks)
    scenes = split_scenes(samples)
    outputs = ordered_map(_hazard_job, [(sid, actors, hcfg) for sid, actors in scenes.items()], jobs)
    records = [AnnotationRecord.from_dict(r) for recs, _ in outputs for r in recs]
    results = [res for _, res in outputs]
    out = Path(args.out)
    write_manifest(records, out)
    hazardous = sum(r.label == HAZARDOUS for r in results)
    print(f"wrote {len(records)} records to {out} (config {hcfg.digest})")
    print(f"{hazardous} of {len(results)} scene(s) hazardous")
    if args.ref:
        report = per_metric_report(results, _read_reference(args.ref))
        report["config_digest"] = hcfg.digest
        report_path = out.with_name(out.name + ".report.json")
        report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        print(format_report(report))
    return EXIT_OK


# -- eval ---------------------------------------------------------------------

def cmd_eval(args: argparse.Namespace) -> int:
    preds, hard = load_predictions(args.pred)
    labels = labels_from_manifest(read_manifest(args.labels))
    try:
        report = evaluate(preds, labels, args.threshold, hard_labels=hard)
    except AlignmentError as exc:
        for fid in exc.missing_predictions:
            print(f"no prediction for frame {fid}", file=sys.stderr)
        for fid in exc.missing_labels:
            print(f"no label for frame {fid}", file=sys.stderr)
        raise ValidationError("predictions and labels do not cover the same frames") from exc
    except ValueError as exc:
        present = sorted(set(labels.values()))
        raise ValidationError(f"{exc}; labels contain only {present}") from exc
    text = format_eval(report)
    print(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        Path(args.out).with_suffix(".txt").write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


# -- render -------------------------------------------------------------------

def _parse_extent(text: Optional[str]):
    if text is None:
        return None
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise ValidationError(f"bad --extent {text!r}") from exc
    if len(values) != 4 or values[0] >= values[1] or values[2] >= values[3]:
        raise ValidationError("--extent needs XMIN,XMAX,YMIN,YMAX with XMIN<XMAX and YMIN<YMAX")
    return values


def _verdict_boxes(path: str, frame_id: str) -> tuple[list[OrientedBox], list[OrientedBox], list[OrientedBox]]:
    records = [r for r in read_manifest(path) if r.label in (ERROR, NO_ERROR)]
    chosen = [r for r in records if r.frame_id == frame_id]
    if not chosen and len(records) == 1:
        chosen = records
    if not chosen:
        raise ValidationError(f"no error-label record for frame {frame_id!r} in {path}")
    ev = chosen[0].evidence
    matched = [OrientedBox.from_dict(m["gt"]) for m in ev.get("matched", [])]
    dets = [OrientedBox.from_dict(m["det"]) for m in ev.get("matched", [])]
    missed = [OrientedBox.from_dict(b) for b in ev.get("missed", [])]
    return matched, missed, dets


def cmd_render(args: argparse.Namespace) -> int:
    frame = parse_pointcloud_bin(args.frame)
    try:
        region = SpatialRegion.parse(args.region) if args.region else None
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    matched: list[OrientedBox] = []
    missed: list[OrientedBox] = []
    dets: list[OrientedBox] = []
    if args.verdict:
        matched, missed, dets = _verdict_boxes(args.verdict, frame.frame_id)
    if args.det:
        dets = list(parse_object_labels(args.det, frame_id=frame.frame_id))
    if args.scale <= 0:
        raise ValidationError("--scale must be positive")
    svg = render_svg(frame, region, matched, missed, dets, meters_per_px=args.scale,
                     extent=_parse_extent(args.extent), max_points=args.max_points)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg, encoding="utf-8")
    print(f"wrote {out}")
    return EXIT_OK


# -- stats --------------------------------------------------------------------

def cmd_stats(args: argparse.Namespace) -> int:
    records = read_manifest(args.manifest)
    errors = [r.label for r in records if r.label in (ERROR, NO_ERROR)]
    hazards = [r for r in records if r.mode == "hazard"]
    out: dict[str, Any] = {"records": len(records)}
    if errors:
        out["errors"] = dataset_stats(errors).to_dict()
    if hazards:
        scenes = [r for r in hazards if r.evidence.get("level") == "scene"]
        frames = [r for r in hazards if r.evidence.get("level") != "scene"]
        out["hazard"] = {
            "scenes": len(scenes),
            "hazardous_scenes": sum(r.label == HAZARDOUS for r in scenes),
            "frames": len(frames),
            "hazardous_frames": sum(r.label == HAZARDOUS for r in frames),
        }
    if not errors and not hazards:
        raise ValidationError(f"{args.manifest} has no records")
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


# -- wiring -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="safelabel", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("annotate-errors", help="label frames Error/No-Error")
    p.add_argument("--config")
    p.add_argument("--mode", choices=("spatial", "label-only"))
    p.add_argument("--region", help="ellipse:A,B,DX,DY or rect:A,B,DX,DY (default ellipse:25,10,5,0)")
    p.add_argument("--iou", type=float)
    p.add_argument("--bev-iou", action="store_const", const=True, default=None,
                   help="match on bird's-eye-view IoU instead of 3D IoU")
    p.add_argument("--categories", help="comma-separated categories of interest")
    p.add_argument("--confidence-floor", type=float)
    p.add_argument("--max-misses", type=int, help="misses tolerated before a frame is an error")
    p.add_argument("--gt", required=True)
    p.add_argument("--det", required=True)
    p.add_argument("--pc")
    p.add_argument("--calib", help="per-frame KITTI calibration directory")
    p.add_argument("--gt-format", choices=("native", "kitti"), default="native")
    p.add_argument("--det-format", choices=("native", "kitti"), default="native")
    p.add_argument("--filtered-dir", help="where spatial mode writes cropped sweeps")
    p.add_argument("--skip-missing", action="store_true")
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_annotate_errors)

    p = sub.add_parser("annotate-hazards", help="label scenes hazardous/safe from tracks")
    p.add_argument("--tracks", required=True)
    p.add_argument("--ref", help="reference scene labels (JSON lines: scene_id, label)")
    p.add_argument("--config")
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_annotate_hazards)

    p = sub.add_parser("eval", help="score introspector predictions")
    p.add_argument("--pred", required=True)
    p.add_argument("--labels", required=True, help="error-label manifest")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="bird's-eye-view SVG of a sweep")
    p.add_argument("--frame", required=True)
    p.add_argument("--region")
    p.add_argument("--verdict", help="manifest holding the frame's error record")
    p.add_argument("--det", help="native detection file to overlay")
    p.add_argument("--scale", type=float, default=0.1, help="metres per pixel")
    p.add_argument("--extent", help="XMIN,XMAX,YMIN,YMAX in metres")
    p.add_argument("--max-points", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("stats", help="summarise a manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: Optional[Iterable[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(None if argv is None else list(argv))
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
