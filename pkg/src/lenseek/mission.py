"""Dual-phase search mission: zigzag coverage, direction-guided approach,
stop criterion, and first-order point-mass kinematics.

World directions here use the hemisphere convention of
:mod:`lenseek.geometry`: z is "downness", so a target straight below the
drone sits at elevation 90 degrees. Positions are ENU metres with z = altitude.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .geometry import Attitude, Direction, body_to_world
from .estimator import DirectionEstimate


@dataclass(frozen=True)
class Aoi:
    """Axis-aligned search rectangle, metres."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self) -> None:
        if self.xmax <= self.xmin or self.ymax <= self.ymin:
            raise ConfigError("AOI must have positive extent")


@dataclass(frozen=True)
class SearchConfig:
    aoi: Aoi
    operational_range_m: float = 100.0
    altitude_m: float = 60.0
    speed_mps: float = 2.0
    stop_elevation_deg: float = 80.0
    smoothing_window: int = 5
    score_gate: float = 0.5
    leg_mode: str = "inset"  # or "edge"
    step_s: float = 1.0
    max_time_s: float = 3600.0
    guided: bool = True

    def __post_init__(self) -> None:
        if self.operational_range_m <= 0:
            raise ConfigError("operational range must be > 0")
        if not (0.0 < self.speed_mps <= 17.0):
            raise ConfigError("speed must be in (0, 17] m/s")
        if not (45.0 < self.stop_elevation_deg < 90.0):
            raise ConfigError("stop threshold must be in (45, 90) degrees")
        if self.leg_mode not in ("inset", "edge"):
            raise ConfigError(f"unknown leg mode {self.leg_mode!r}")
        if self.smoothing_window < 1:
            raise ConfigError("smoothing window must be >= 1")


def plan_zigzag(cfg: SearchConfig) -> np.ndarray:
    """Boustrophedon waypoints covering the AOI, shape (n, 3).

    Legs run parallel to the AOI's long axis. In "inset" mode the outer
    legs sit one operational range from the edges (clamped to the midline
    for narrow areas), which is coverage-optimal; "edge" mode puts the
    outer legs on the boundary itself. Leg spacing never exceeds twice the
    operational range, so every AOI point lies within one operational
    range of the path.
    """
    aoi, r = cfg.aoi, cfg.operational_range_m
    w_x = aoi.xmax - aoi.xmin
    w_y = aoi.ymax - aoi.ymin
    # legs parallel to the long axis; ties go to legs along y
    legs_along_y = w_y >= w_x
    width = w_x if legs_along_y else w_y
    lo = aoi.xmin if legs_along_y else aoi.ymin
    hi = aoi.xmax if legs_along_y else aoi.ymax
    leg_lo = aoi.ymin if legs_along_y else aoi.xmin
    leg_hi = aoi.ymax if legs_along_y else aoi.xmax

    spacing = min(2.0 * r, width)
    if cfg.leg_mode == "inset":
        span = max(width - 2.0 * r, 0.0)
        if span == 0.0:
            offsets = [lo + width / 2.0]
        else:
            n_legs = math.ceil(span / spacing) + 1
            offsets = list(np.linspace(lo + r, hi - r, n_legs))
    else:
        n_legs = math.ceil(width / spacing) + 1
        offsets = list(np.linspace(lo, hi, n_legs))

    pts = []
    for i, off in enumerate(offsets):
        ends = (leg_lo, leg_hi) if i % 2 == 0 else (leg_hi, leg_lo)
        for e in ends:
            pts.append((off, e) if legs_along_y else (e, off))
    out = np.array([(x, y, cfg.altitude_m) for x, y in pts])
    return out


def path_length(waypoints: np.ndarray) -> float:
    return float(np.sum(np.linalg.norm(np.diff(waypoints[:, :2], axis=0), axis=1)))


def min_distance_to_path(points: np.ndarray, waypoints: np.ndarray) -> np.ndarray:
    """Horizontal distance from each point to the nearest path segment."""
    pts = np.atleast_2d(points)[:, :2]
    best = np.full(pts.shape[0], np.inf)
    wp = waypoints[:, :2]
    for a, b in zip(wp[:-1], wp[1:]):
        ab = b - a
        denom = float(ab @ ab)
        if denom == 0.0:
            d = np.linalg.norm(pts - a, axis=1)
        else:
            t = np.clip((pts - a) @ ab / denom, 0.0, 1.0)
            proj = a + t[:, None] * ab
            d = np.linalg.norm(pts - proj, axis=1)
        best = np.minimum(best, d)
    return best


@dataclass
class MissionState:
    """Mutable state of one search mission."""

    phase: str  # exploratory | guided | done
    position: np.ndarray  # (3,) ENU metres
    attitude: Attitude
    waypoints: np.ndarray
    next_waypoint: int = 0
    history: deque = field(default_factory=lambda: deque(maxlen=32))
    final_fix: tuple[float, float] | None = None
    clock: float = 0.0
    waypoints_exhausted: bool = False
    phase_change_times: dict = field(default_factory=dict)

    @classmethod
    def start(cls, cfg: SearchConfig) -> "MissionState":
        wp = plan_zigzag(cfg)
        state = cls(
            phase="exploratory",
            position=wp[0].copy(),
            attitude=Attitude.level(),
            waypoints=wp,
            next_waypoint=1,
        )
        state.history = deque(maxlen=max(cfg.smoothing_window, 1))
        return state


@dataclass(frozen=True)
class MotionCommand:
    velocity: np.ndarray  # (3,) m/s
    hover: bool = False


def world_elevation_deg(d: Direction) -> float:
    """Elevation of a world direction above the horizontal, toward nadir."""
    return math.degrees(math.asin(min(1.0, max(-1.0, d.z))))


def apply_attitude(est: DirectionEstimate, att: Attitude) -> DirectionEstimate:
    """Rotate a body-frame estimate into the world frame; score/timestamp kept."""
    w = body_to_world(est.direction, att)
    theta = math.asin(min(1.0, max(-1.0, w.z)))
    phi = math.atan2(w.y, w.x) if (abs(w.x) > 1e-12 or abs(w.y) > 1e-12) else 0.0
    return DirectionEstimate(
        direction=w,
        theta=theta,
        phi=phi,
        score=est.score,
        n_valid=est.n_valid,
        timestamp=est.timestamp,
    )


def smooth_direction(
    history, window: int, score_gate: float
) -> tuple[Direction, float] | None:
    """Score-weighted mean of recent world-frame estimates.

    Uses the last ``window`` estimates with score >= gate; if none pass,
    falls back to the single best-scoring estimate. Returns the direction
    and its elevation in degrees, or None for an empty history.
    """
    recent = list(history)[-window:]
    if not recent:
        return None
    passed = [e for e in recent if e.score >= score_gate]
    if not passed:
        best = max(recent, key=lambda e: e.score)
        return best.direction, world_elevation_deg(best.direction)
    acc = np.zeros(3)
    for e in passed:
        acc += max(e.score, 0.0) * e.direction.as_array()
    norm = float(np.linalg.norm(acc))
    if norm < 1e-12:
        best = max(recent, key=lambda e: e.score)
        return best.direction, world_elevation_deg(best.direction)
    d = Direction.from_array(acc / norm)
    return d, world_elevation_deg(d)


def stop_check(smoothed_elevation_deg: float, cfg: SearchConfig) -> bool:
    """True once the smoothed elevation reaches the stop threshold."""
    return smoothed_elevation_deg >= cfg.stop_elevation_deg


def mission_step(
    st: MissionState,
    cfg: SearchConfig,
    new_estimates: list[DirectionEstimate],
    dt: float,
) -> MotionCommand:
    """Advance the mission by ``dt`` seconds, consuming new world-frame
    estimates (already attitude-compensated and credential-verified).

    Phase transitions are monotone: exploratory -> guided -> done.
    """
    if dt <= 0:
        raise ConfigError("dt must be > 0")
    st.clock += dt
    for e in new_estimates:
        st.history.append(e)

    if st.phase == "exploratory":
        if cfg.guided and any(e.score >= cfg.score_gate for e in new_estimates):
            st.phase = "guided"
            st.phase_change_times["guided"] = st.clock - dt
        else:
            return _follow_waypoints(st, cfg, dt)

    if st.phase == "guided":
        smoothed = smooth_direction(st.history, cfg.smoothing_window, cfg.score_gate)
        if smoothed is None:
            return MotionCommand(np.zeros(3), hover=True)
        direction, elevation = smoothed
        if stop_check(elevation, cfg):
            st.phase = "done"
            st.phase_change_times["done"] = st.clock - dt
            st.final_fix = (float(st.position[0]), float(st.position[1]))
            return MotionCommand(np.zeros(3), hover=True)
        horiz = np.array([direction.x, direction.y])
        n = float(np.linalg.norm(horiz))
        if n < 1e-9:
            # directly overhead but below threshold: hold position
            return MotionCommand(np.zeros(3), hover=True)
        v = cfg.speed_mps * horiz / n
        st.position[0] += v[0] * dt
        st.position[1] += v[1] * dt
        return MotionCommand(np.array([v[0], v[1], 0.0]))

    return MotionCommand(np.zeros(3), hover=True)


def _follow_waypoints(st: MissionState, cfg: SearchConfig, dt: float) -> MotionCommand:
    budget = cfg.speed_mps * dt
    moved = np.zeros(3)
    while budget > 1e-12 and st.next_waypoint < len(st.waypoints):
        target = st.waypoints[st.next_waypoint]
        delta = target - st.position
        dist = float(np.linalg.norm(delta))
        if dist <= budget:
            st.position = target.copy()
            st.next_waypoint += 1
            budget -= dist
            moved += delta
        else:
            step = delta * (budget / dist)
            st.position = st.position + step
            moved += step
            budget = 0.0
    if st.next_waypoint >= len(st.waypoints) and budget > 1e-12:
        st.waypoints_exhausted = True
        return MotionCommand(np.zeros(3), hover=True)
    return MotionCommand(moved / dt)
