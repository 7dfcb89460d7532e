"""Hazardous-event labels from actor kinematics and dynamic safe gaps.

Pipeline per scene: finite-difference kinematics on each actor's track,
rotation into the ego frame at every ego timestamp, kinematic threshold
flags, longitudinal/lateral safe-gap checks against every actor, and the
combined rule: a frame is hazardous if any kinematic flag fires or if some
actor violates both the longitudinal and the lateral safe gap.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

from safelabel.dataset_io import AnnotationRecord, TrackSample, config_digest

HAZARDOUS = "hazardous"
SAFE = "safe"
KINEMATIC_METRICS = ("long_decel", "lat_accel", "long_jerk", "lat_jerk")
GAP_METRICS = ("long_gap_violated", "lat_gap_violated")
ALL_METRICS = KINEMATIC_METRICS + GAP_METRICS
TIME_MATCH_TOL = 1e-6


@dataclass(frozen=True)
class HazardConfig:
    mu: float = 1.0
    a_max: float = -8.0
    t_gap: float = 0.5
    d_min_long: float = 5.0
    psi_max: float = math.radians(12.0)
    d_max_lat: float = 1.5
    d_min_lat: float = 0.65
    decel_thresh: float = -4.0
    lat_acc_thresh: float = 4.0
    jerk_thresh: float = 0.9
    window: int = 3
    stride: int = 1
    long_jerk_mode: str = "magnitude"
    include_ego_kinematics: bool = True
    symmetric_long_gap: bool = False

    def __post_init__(self) -> None:
        problems = []
        if not (0.0 < self.mu <= 1.5):
            problems.append(f"mu must lie in (0, 1.5], got {self.mu}")
        if not self.a_max < 0:
            problems.append(f"a_max must be negative, got {self.a_max}")
        if not self.t_gap > 0:
            problems.append(f"t_gap must be positive, got {self.t_gap}")
        if not (self.d_max_lat >= self.d_min_lat > 0):
            problems.append("need d_max_lat >= d_min_lat > 0")
        if self.window < 3 or self.window % 2 == 0:
            problems.append(f"window must be an odd integer >= 3, got {self.window}")
        if self.stride < 1:
            problems.append(f"stride must be >= 1, got {self.stride}")
        if self.long_jerk_mode not in ("magnitude", "one-sided"):
            problems.append("long_jerk_mode must be 'magnitude' or 'one-sided'")
        if problems:
            raise ValueError("; ".join(problems))

    @classmethod
    def from_mapping(cls, values: Mapping[str, object]) -> "HazardConfig":
        """Build from string or typed values; ``psi_max_deg`` is accepted in degrees."""
        kwargs: dict[str, object] = {}
        types = {f: type(v) for f, v in asdict(cls()).items()}
        for key, raw in values.items():
            if key == "psi_max_deg":
                kwargs["psi_max"] = math.radians(float(raw))
                continue
            if key not in types:
                raise ValueError(f"unknown hazard setting {key!r}")
            kind = types[key]
            if kind is bool and isinstance(raw, str):
                kwargs[key] = raw.strip().lower() in ("1", "true", "yes", "on")
            else:
                kwargs[key] = kind(raw)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def digest(self) -> str:
        return config_digest({"hazard": self.to_dict()})


@dataclass(frozen=True)
class KinematicState:
    """Actor state at one timestamp. Derivatives are ``None`` where the window does not fit."""

    actor_id: str
    t: float
    position: tuple[float, float]
    velocity: tuple[float, float]
    yaw: float
    accel: Optional[tuple[float, float]] = None
    jerk: Optional[tuple[float, float]] = None
    is_ego: bool = False

    @property
    def has_derivatives(self) -> bool:
        return self.accel is not None and self.jerk is not None

    @property
    def accel_long(self) -> Optional[float]:
        return None if self.accel is None else self.accel[0]

    @property
    def accel_lat(self) -> Optional[float]:
        return None if self.accel is None else self.accel[1]

    @property
    def jerk_long(self) -> Optional[float]:
        return None if self.jerk is None else self.jerk[0]

    @property
    def jerk_lat(self) -> Optional[float]:
        return None if self.jerk is None else self.jerk[1]


def _derivatives(t0: float, t1: float, t2: float, f0: float, f1: float, f2: float) -> tuple[float, float]:
    """First and second derivative at ``t1`` from three samples; exact for quadratics."""
    h1 = t1 - t0
    h2 = t2 - t1
    d1 = (-h2 / (h1 * (h1 + h2))) * f0 + ((h2 - h1) / (h1 * h2)) * f1 + (h1 / (h2 * (h1 + h2))) * f2
    d2 = 2.0 * (h1 * f2 - (h1 + h2) * f1 + h2 * f0) / (h1 * h2 * (h1 + h2))
    return d1, d2


def compute_kinematics(track: Sequence[TrackSample], window: int = 3, stride: int = 1) -> list[KinematicState]:
    """Slide a ``window``-frame window with ``stride`` over one actor's samples.

    Acceleration is the first derivative and jerk the second derivative of
    velocity, both taken at the window centre from its first, centre and
    last samples with the real time steps. Frames the window cannot centre
    on, and centres skipped by the stride, carry no derivatives.
    """
    if len(track) < 3:
        raise ValueError(f"need at least 3 samples, got {len(track)}")
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be an odd integer >= 3, got {window}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    for a, b in zip(track, track[1:]):
        if b.t - a.t <= 0.0:
            raise ValueError(f"actor {a.actor_id!r}: zero or negative time step at t={a.t}")

    half = window // 2
    states = []
    for i, s in enumerate(track):
        accel = jerk = None
        if half <= i < len(track) - half and (i - half) % stride == 0:
            p, n = track[i - half], track[i + half]
            ax, jx = _derivatives(p.t, s.t, n.t, p.velocity[0], s.velocity[0], n.velocity[0])
            ay, jy = _derivatives(p.t, s.t, n.t, p.velocity[1], s.velocity[1], n.velocity[1])
            accel, jerk = (ax, ay), (jx, jy)
        states.append(KinematicState(s.actor_id, s.t, (s.position.x, s.position.y),
                                     (float(s.velocity[0]), float(s.velocity[1])), s.yaw,
                                     accel, jerk, s.is_ego))
    return states


def _rotate(v: Optional[tuple[float, float]], c: float, s: float) -> Optional[tuple[float, float]]:
    if v is None:
        return None
    return (c * v[0] + s * v[1], -s * v[0] + c * v[1])


def rotate_to_ego_frame(states: Iterable[KinematicState], ego_yaw: float,
                        ego_position: tuple[float, float] = (0.0, 0.0)) -> list[KinematicState]:
    """Express states relative to the ego: positions about ``ego_position``, axes turned by ``-ego_yaw``."""
    c, s = math.cos(ego_yaw), math.sin(ego_yaw)
    out = []
    for st in states:
        rel = (st.position[0] - ego_position[0], st.position[1] - ego_position[1])
        out.append(replace(
            st,
            position=_rotate(rel, c, s),
            velocity=_rotate(st.velocity, c, s),
            accel=_rotate(st.accel, c, s),
            jerk=_rotate(st.jerk, c, s),
            yaw=st.yaw - ego_yaw,
        ))
    return out


def long_safe_distance(v_ego_long: float, v_target_long: float, cfg: HazardConfig = HazardConfig()) -> float:
    """Braking distance for the closing speed plus the larger of time gap and standstill gap."""
    if cfg.mu <= 0:
        raise ValueError("friction coefficient must be positive")
    braking = (v_ego_long - v_target_long) ** 2 / (2.0 * cfg.mu * abs(cfg.a_max))
    return braking + max(cfg.t_gap * v_target_long, cfg.d_min_long)


def lat_safe_distance(v_ego_abs: float, v_target_lat: float, cfg: HazardConfig = HazardConfig()) -> float:
    """Lateral drift of a ``psi_max`` heading change over ``t_gap``, clamped to [d_min_lat, d_max_lat].

    ``v_target_lat`` is the actor's lateral speed towards the ego; an actor
    moving away contributes zero.
    """
    raw = (abs(v_ego_abs) * math.sin(cfg.psi_max) + max(0.0, v_target_lat)) * cfg.t_gap
    return max(min(raw, cfg.d_max_lat), cfg.d_min_lat)


def kinematic_flags(state: KinematicState, cfg: HazardConfig = HazardConfig()) -> dict[str, bool]:
    if not state.has_derivatives:
        raise ValueError(f"actor {state.actor_id!r} at t={state.t}: derivatives unavailable")
    a_long, a_lat = state.accel
    j_long, j_lat = state.jerk
    if cfg.long_jerk_mode == "magnitude":
        long_jerk = abs(j_long) > cfg.jerk_thresh
    else:
        long_jerk = j_long < -cfg.jerk_thresh
    return {
        "long_decel": a_long < cfg.decel_thresh,
        "lat_accel": abs(a_lat) > cfg.lat_acc_thresh,
        "long_jerk": long_jerk,
        "lat_jerk": abs(j_lat) > cfg.jerk_thresh,
    }


def gap_violations(ego: KinematicState, actor: KinematicState,
                   cfg: HazardConfig = HazardConfig()) -> tuple[bool, bool]:
    """Longitudinal and lateral safe-gap violations of ``actor`` seen from ``ego``.

    Both states must already be in the ego frame, i.e. after
    :func:`rotate_to_ego_frame` with the ego pose at the same timestamp.
    """
    dx = actor.position[0] - ego.position[0]
    dy = actor.position[1] - ego.position[1]
    v_ego_long = ego.velocity[0]
    v_act_long = actor.velocity[0]

    if cfg.symmetric_long_gap:
        long_violated = abs(dx) < long_safe_distance(v_ego_long, v_act_long, cfg)
    else:
        ahead_and_closing = dx > 0.0 and v_ego_long - v_act_long >= 0.0
        long_violated = ahead_and_closing and dx < long_safe_distance(v_ego_long, v_act_long, cfg)

    v_lat = actor.velocity[1]
    closing_lat = abs(v_lat) if dy == 0.0 else -math.copysign(1.0, dy) * v_lat
    v_ego_abs = math.hypot(*ego.velocity)
    lat_violated = abs(dy) < lat_safe_distance(v_ego_abs, closing_lat, cfg)
    return long_violated, lat_violated


@dataclass
class ActorFlags:
    long_decel: bool = False
    lat_accel: bool = False
    long_jerk: bool = False
    lat_jerk: bool = False
    long_gap_violated: bool = False
    lat_gap_violated: bool = False

    @property
    def kinematic(self) -> bool:
        return self.long_decel or self.lat_accel or self.long_jerk or self.lat_jerk

    @property
    def gap(self) -> bool:
        return self.long_gap_violated and self.lat_gap_violated

    @property
    def hazardous(self) -> bool:
        return self.kinematic or self.gap


@dataclass
class HazardVerdict:
    scene_id: str
    frame_id: str
    t: float
    flags: dict[str, ActorFlags] = field(default_factory=dict)
    label: str = SAFE
    triggering_actor: Optional[str] = None

    def evidence(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "t": self.t,
            "triggering_actor": self.triggering_actor,
            "flags": {a: asdict(f) for a, f in self.flags.items()},
        }


@dataclass
class SceneResult:
    scene_id: str
    frames: list[HazardVerdict]
    label: str
    triggering_actor: Optional[str]

    def metric_fired(self, metric: str) -> bool:
        if metric == "combined":
            return self.label == HAZARDOUS
        if metric == "gap":
            return any(f.gap for v in self.frames for f in v.flags.values())
        return any(getattr(f, metric) for v in self.frames for f in v.flags.values())

    @property
    def fired_metrics(self) -> list[str]:
        """Every metric that fired on any frame and actor, including the joint ``gap`` rule."""
        return [m for m in ALL_METRICS + ("gap",) if self.metric_fired(m)]


def split_scenes(samples: Sequence[TrackSample]) -> dict[str, dict[str, list[TrackSample]]]:
    """Group samples as ``{scene_id: {actor_id: samples}}`` preserving first-seen order."""
    scenes: dict[str, dict[str, list[TrackSample]]] = {}
    for s in samples:
        scenes.setdefault(s.scene_id, {}).setdefault(s.actor_id, []).append(s)
    return scenes


def _frame_of(states: list[KinematicState], t: float, start: int) -> tuple[Optional[KinematicState], int]:
    i = start
    while i < len(states) and states[i].t < t - TIME_MATCH_TOL:
        i += 1
    if i < len(states) and abs(states[i].t - t) <= TIME_MATCH_TOL:
        return states[i], i
    return None, i


def label_scene(tracks: Mapping[str, Sequence[TrackSample]], cfg: HazardConfig = HazardConfig(),
                scene_id: str = "") -> SceneResult:
    """Label every ego timestamp of one scene and the scene as a whole.

    ``tracks`` maps actor id to that actor's time-ordered samples; exactly
    one actor is the ego. Actor samples are aligned to ego timestamps within
    1 microsecond; actors with fewer than three samples only take part in
    the gap checks.
    """
    egos = [a for a, samples in tracks.items() if samples and samples[0].is_ego]
    if len(egos) != 1:
        raise ValueError(f"scene {scene_id!r}: expected exactly one ego actor, found {egos}")
    ego_id = egos[0]
    ego_samples = tracks[ego_id]
    if len(ego_samples) < 3:
        raise ValueError(f"scene {scene_id!r}: ego track needs at least 3 samples")

    kin: dict[str, list[KinematicState]] = {}
    for actor_id, samples in tracks.items():
        if len(samples) >= 3:
            kin[actor_id] = compute_kinematics(samples, cfg.window, cfg.stride)
        else:
            kin[actor_id] = [KinematicState(s.actor_id, s.t, (s.position.x, s.position.y),
                                            s.velocity, s.yaw, is_ego=s.is_ego) for s in samples]
    order = [ego_id] + [a for a in tracks if a != ego_id]
    cursors = {a: 0 for a in order}

    frames: list[HazardVerdict] = []
    for idx, ego_raw in enumerate(kin[ego_id]):
        ego_pos, ego_yaw = ego_raw.position, ego_raw.yaw
        (ego_state,) = rotate_to_ego_frame([ego_raw], ego_yaw, ego_pos)
        verdict = HazardVerdict(scene_id, str(idx), ego_raw.t)
        for actor_id in order:
            if actor_id == ego_id:
                flags = ActorFlags()
                if cfg.include_ego_kinematics and ego_state.has_derivatives:
                    flags = ActorFlags(**kinematic_flags(ego_state, cfg))
                verdict.flags[actor_id] = flags
                continue
            raw, cursors[actor_id] = _frame_of(kin[actor_id], ego_raw.t, cursors[actor_id])
            if raw is None:
                continue
            (state,) = rotate_to_ego_frame([raw], ego_yaw, ego_pos)
            flags = ActorFlags(**kinematic_flags(state, cfg)) if state.has_derivatives else ActorFlags()
            flags.long_gap_violated, flags.lat_gap_violated = gap_violations(ego_state, state, cfg)
            verdict.flags[actor_id] = flags
        for actor_id, flags in verdict.flags.items():
            if flags.hazardous:
                verdict.label = HAZARDOUS
                verdict.triggering_actor = actor_id
                break
        frames.append(verdict)

    first = next((v for v in frames if v.label == HAZARDOUS), None)
    if first is None:
        return SceneResult(scene_id, frames, SAFE, None)
    return SceneResult(scene_id, frames, HAZARDOUS, first.triggering_actor)


def label_tracks(samples: Sequence[TrackSample], cfg: HazardConfig = HazardConfig()) -> list[SceneResult]:
    return [label_scene(actors, cfg, scene_id) for scene_id, actors in split_scenes(samples).items()]


def to_records(result: SceneResult, cfg: HazardConfig) -> list[AnnotationRecord]:
    """Per-frame records (``<scene>/<frame>``) followed by one scene-level record."""
    digest = cfg.digest
    records = [AnnotationRecord(f"{result.scene_id}/{v.frame_id}", "hazard", v.label,
                                v.evidence(), digest) for v in result.frames]
    records.append(AnnotationRecord(result.scene_id, "hazard", result.label, {
        "level": "scene",
        "triggering_actor": result.triggering_actor,
        "fired_metrics": result.fired_metrics,
        "hazardous_frames": sum(v.label == HAZARDOUS for v in result.frames),
        "frames": len(result.frames),
    }, digest))
    return records


REPORT_ROWS = KINEMATIC_METRICS + GAP_METRICS + ("combined",)


def per_metric_report(results: Sequence[SceneResult], reference_labels: Mapping[str, str | bool]) -> dict:
    """Fraction of reference-hazardous scenes each metric (and the combined rule) flags.

    Rates are ``None`` when the reference has no hazardous scenes.
    """
    if not reference_labels:
        raise ValueError("reference label set is empty")
    by_id = {r.scene_id: r for r in results}
    ref = {k: (v is True or v == HAZARDOUS) for k, v in reference_labels.items()}
    missing = sorted(set(ref) - set(by_id))
    extra = sorted(set(by_id) - set(ref))
    if missing or extra:
        raise ValueError(f"scene ids misaligned: missing verdicts {missing}, unreferenced {extra}")
    positives = [by_id[k] for k, hazardous in ref.items() if hazardous]
    rows = {}
    for metric in REPORT_ROWS:
        hits = sum(r.metric_fired(metric) for r in positives)
        rows[metric] = hits / len(positives) if positives else None
    return {"reference_hazardous": len(positives), "scenes": len(ref), "rates": rows}


def format_report(report: dict) -> str:
    lines = [f"{'metric':<20} {'rate':>8}"]
    for metric, rate in report["rates"].items():
        value = "n/a" if rate is None else f"{100.0 * rate:7.2f}%"
        lines.append(f"{metric:<20} {value:>8}")
    lines.append(f"reference hazardous scenes: {report['reference_hazardous']} of {report['scenes']}")
    return "\n".join(lines)
