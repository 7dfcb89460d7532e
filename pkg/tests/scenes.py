"""Analytic driving scenes for the hazard tests.

Actors are described in a road frame (x along the road, y to the left)
by closed-form position and velocity functions of time. ``build`` samples
them at a fixed rate and places the road in the world with an arbitrary
heading and origin, so the pipeline's ego-frame rotation is exercised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

from safelabel.dataset_io import TrackSample
from safelabel.geometry import Vec3

Motion = Callable[[float], tuple[float, float, float, float]]  # t -> (x, y, vx, vy)


def cruise(x0: float, y0: float, vx: float, vy: float = 0.0) -> Motion:
    return lambda t: (x0 + vx * t, y0 + vy * t, vx, vy)


def brake(x0: float, y0: float, v0: float, decel: float, t_on: float) -> Motion:
    """Constant speed, then constant ``decel`` (< 0) from ``t_on`` until standstill."""
    t_stop = t_on - v0 / decel

    def f(t):
        tau = min(max(0.0, t - t_on), t_stop - t_on)
        x = x0 + v0 * t + 0.5 * decel * tau * tau + (decel * tau) * max(0.0, t - t_stop)
        return (x, y0, v0 + decel * tau, 0.0)
    return f


@dataclass
class Scene:
    name: str
    ego: Motion
    actors: dict[str, Motion] = field(default_factory=dict)
    duration: float = 4.0
    rate: float = 10.0
    heading: float = 0.0
    origin: tuple[float, float] = (0.0, 0.0)
    expected_label: str = "safe"
    expected_flags: frozenset = frozenset()
    forbidden_flags: frozenset = frozenset()

    def build(self) -> list[TrackSample]:
        c, s = math.cos(self.heading), math.sin(self.heading)
        n = int(round(self.duration * self.rate)) + 1
        out = []
        for actor_id, motion in [("ego", self.ego)] + list(self.actors.items()):
            for k in range(n):
                t = k / self.rate
                x, y, vx, vy = motion(t)
                wx = self.origin[0] + c * x - s * y
                wy = self.origin[1] + s * x + c * y
                wvx, wvy = c * vx - s * vy, s * vx + c * vy
                yaw = self.heading + (math.atan2(vy, vx) if (vx or vy) else 0.0)
                out.append(TrackSample(actor_id, t, Vec3(wx, wy, 0.0), (wvx, wvy), yaw,
                                       actor_id == "ego", self.name))
        return out

    def tracks(self) -> dict[str, list[TrackSample]]:
        grouped: dict[str, list[TrackSample]] = {}
        for smp in self.build():
            grouped.setdefault(smp.actor_id, []).append(smp)
        return grouped


def _cut_in(x_rel: float, v: float, y0: float, t0: float, dur: float) -> Motion:
    """Cosine-ramped lane change from ``y0`` to 0 over ``[t0, t0 + dur]``."""
    w = math.pi / dur

    def f(t):
        tau = min(max(0.0, t - t0), dur)
        y = y0 * (1 + math.cos(w * tau)) / 2
        vy = -y0 * w * math.sin(w * tau) / 2 if 0.0 < t - t0 < dur else 0.0
        return (x_rel + v * t, y, v, vy)
    return f


def _swerve(x_rel: float, v: float, y0: float, amp: float, omega: float) -> Motion:
    return lambda t: (x_rel + v * t, y0 + amp * math.sin(omega * t), v, amp * omega * math.cos(omega * t))


def _long_jerk_lead(x0: float, v0: float) -> Motion:
    # jerk -1.5 m/s^3 for 2 s, then constant -3 m/s^2: never below the -4 decel threshold
    def f(t):
        if t <= 2.0:
            return (x0 + v0 * t - 0.25 * t ** 3, 0.0, v0 - 0.75 * t * t, 0.0)
        tau = t - 2.0
        return (x0 + 2 * v0 - 2.0 + (v0 - 3.0) * tau - 1.5 * tau * tau, 0.0, v0 - 3.0 - 3.0 * tau, 0.0)
    return f


def _lat_jerk_actor(x0: float, v: float, y0: float) -> Motion:
    # lateral jerk 1 m/s^3, lateral accel peaks at 4 m/s^2 only at the last sample (no derivative there)
    return lambda t: (x0 + v * t, y0 + t ** 3 / 6, v, t * t / 2)


K = {"long_decel", "lat_accel", "long_jerk", "lat_jerk"}


def fixture_scenes() -> list[Scene]:
    v = 20.0
    return [
        Scene("sudden_brake", cruise(0, 0, v), {"lead": brake(30, 0, v, -6.0, 1.05)},
              expected_label="hazardous",
              expected_flags=frozenset({"long_decel", "long_jerk", "long_gap_violated", "lat_gap_violated", "gap"}),
              forbidden_flags=frozenset({"lat_accel", "lat_jerk"})),
        Scene("lane_cut_in", cruise(0, 0, v), {"cutter": _cut_in(8.0, v, 3.5, 0.5, 3.0)},
              heading=math.radians(-120), origin=(500.0, -20.0), expected_label="hazardous",
              expected_flags=frozenset({"lat_jerk", "long_gap_violated", "lat_gap_violated", "gap"}),
              forbidden_flags=frozenset({"long_decel", "lat_accel", "long_jerk"})),
        Scene("adjacent_overtake", cruise(0, 0, v), {"slow_car": cruise(20, 2.0, 15.0)},
              expected_label="safe", expected_flags=frozenset({"long_gap_violated"}),
              forbidden_flags=frozenset(K | {"lat_gap_violated", "gap"})),
        Scene("stationary_obstacle", cruise(0, 0, 15.0), {"debris": cruise(40, 0, 0.0)},
              heading=math.radians(37), origin=(-310.0, 42.0), expected_label="hazardous",
              expected_flags=frozenset({"long_gap_violated", "lat_gap_violated", "gap"}),
              forbidden_flags=frozenset(K)),
        Scene("smooth_follow", cruise(0, 0, v), {"lead": cruise(40, 0, v)},
              expected_label="safe", expected_flags=frozenset({"lat_gap_violated"}),
              forbidden_flags=frozenset(K | {"long_gap_violated", "gap"})),
        Scene("ego_emergency_brake", brake(0, 0, v, -6.0, 1.05), {"far": cruise(200, 0, v)},
              heading=math.radians(90), expected_label="hazardous",
              expected_flags=frozenset({"long_decel", "long_jerk"}),
              forbidden_flags=frozenset({"lat_accel", "lat_jerk"})),
        Scene("swerving_actor", cruise(0, 0, v), {"swerver": _swerve(0, v, -7.0, 1.5, 2.0)},
              expected_label="hazardous", expected_flags=frozenset({"lat_accel", "lat_jerk"}),
              forbidden_flags=frozenset({"long_decel", "long_jerk", "lat_gap_violated", "gap"})),
        Scene("lead_long_jerk", cruise(0, 0, v), {"lead": _long_jerk_lead(50, v)},
              heading=math.radians(200), expected_label="hazardous",
              expected_flags=frozenset({"long_jerk"}),
              forbidden_flags=frozenset({"long_decel", "lat_accel", "lat_jerk", "long_gap_violated", "gap"})),
        Scene("actor_lat_jerk", cruise(0, 0, v), {"drifter": _lat_jerk_actor(0, v, -30.0)},
              expected_label="hazardous", expected_flags=frozenset({"lat_jerk"}),
              forbidden_flags=frozenset({"long_decel", "lat_accel", "long_jerk", "lat_gap_violated", "gap"})),
        Scene("oncoming_traffic", cruise(0, 0, v), {"oncoming": cruise(80, 3.5, -v)},
              expected_label="safe", expected_flags=frozenset({"long_gap_violated"}),
              forbidden_flags=frozenset(K | {"lat_gap_violated", "gap"})),
        Scene("close_trailer", cruise(0, 0, v), {"tailgater": cruise(-6, 0, v)},
              expected_label="safe", expected_flags=frozenset({"lat_gap_violated"}),
              forbidden_flags=frozenset(K | {"long_gap_violated", "gap"})),
        Scene("worked_example", cruise(0, 0, 80 / 3.6), {"lead": cruise(8, 0, 72 / 3.6)},
              expected_label="hazardous",
              expected_flags=frozenset({"long_gap_violated", "lat_gap_violated", "gap"}),
              forbidden_flags=frozenset(K)),
    ]
