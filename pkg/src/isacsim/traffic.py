"""Vehicle kinematics, driving constraints, gap/error bookkeeping and safety metrics.

Vehicles are immutable value objects; every operation returns a new state.
Units are SI throughout (m, s, m/s, m/s^2, rad).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

CAV = "CAV"
HDV = "HDV"


@dataclass(frozen=True)
class VehicleState:
    id: int
    kind: str
    lane: int
    x: float
    y: float
    speed: float
    accel: float = 0.0
    heading: float = 0.0
    length: float = 4.0
    lag: float = 0.02
    time_gap: float = 1.0

    def __post_init__(self):
        if self.kind not in (CAV, HDV):
            raise ValueError(f"unknown vehicle kind {self.kind!r}")
        if self.lane < 1:
            raise ValueError("lane index starts at 1")
        if not self.length > 0:
            raise ValueError("vehicle length must be positive")
        if not self.lag > 0:
            raise ValueError("actuation lag must be positive")


@dataclass(frozen=True)
class ControlInput:
    u: float = 0.0
    alpha: float = 0.0


@dataclass(frozen=True)
class LaneGeometry:
    count: int
    width: float

    def center(self, lane: int) -> float:
        if not 1 <= lane <= self.count:
            raise ValueError(f"lane {lane} outside 1..{self.count}")
        return self.width / 2 + (lane - 1) * self.width


@dataclass(frozen=True)
class Limits:
    """Driving bounds. ``accel_min``/``accel_max`` bound z*cos(heading)."""

    u_max: float = 5.0
    alpha_max: float = 0.01
    speed_min: float = 0.0
    speed_max: float = 40.0
    accel_min: float = -3.0
    accel_max: float = 5.0


@dataclass(frozen=True)
class GapReport:
    gap: float
    desired: float
    spacing_error: float
    velocity_error: float
    standstill: float
    collision: bool = False


@dataclass(frozen=True)
class SafetyRecord:
    ttc: float
    threshold: float
    react: float
    brake: float
    flag: int


@dataclass(frozen=True)
class IdmParams:
    desired_speed: float = 15.0
    max_accel: float = 1.0
    comfort_decel: float = 1.5
    min_gap: float = 2.0
    headway: float = 1.5
    delta: float = 4.0

    def __post_init__(self):
        if not (self.desired_speed > 0 and self.max_accel > 0 and self.comfort_decel > 0):
            raise ValueError("IDM desired speed and accelerations must be positive")


def wrap_angle(theta: float) -> float:
    return math.remainder(theta, 2 * math.pi)


def _check_finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"non-finite input {v!r}")


def step_vehicle(state: VehicleState, control: ControlInput, dt: float) -> VehicleState:
    """One explicit Euler step of the bicycle kinematics with first-order actuator lag.

    All derivatives use the pre-step values. The lag is dz/dt = (u - z)/lag.
    """
    _check_finite(state.x, state.y, state.speed, state.accel, state.heading,
                  control.u, control.alpha, dt)
    if dt <= 0:
        raise ValueError("dt must be positive")
    v, th, z = state.speed, state.heading, state.accel
    return replace(
        state,
        x=state.x + v * math.cos(th) * dt,
        y=state.y + v * math.sin(th) * dt,
        speed=v + z * dt,
        heading=wrap_angle(th + math.tan(control.alpha) * v / state.length * dt),
        accel=z + (control.u - z) / state.lag * dt,
    )


def integrate(state: VehicleState, control: ControlInput, duration: float,
              max_substep: float, limits: Optional[Limits] = None) -> VehicleState:
    """Advance ``duration`` seconds in equal Euler substeps no longer than ``max_substep``.

    With ``limits`` the speed is clamped into [speed_min, speed_max] afterwards.
    """
    if duration <= 0 or max_substep <= 0:
        raise ValueError("duration and max_substep must be positive")
    n = max(1, math.ceil(duration / max_substep - 1e-12))
    dt = duration / n
    for _ in range(n):
        state = step_vehicle(state, control, dt)
    if limits is not None:
        speed = min(max(state.speed, limits.speed_min), limits.speed_max)
        if speed != state.speed:
            state = replace(state, speed=speed)
    return state


def enforce_constraints(state: VehicleState, control: ControlInput, limits: Limits,
                        gap: Optional[GapReport] = None) -> tuple[ControlInput, list[str]]:
    """Clip the control into its box and list every violated driving constraint.

    Violation tags: ``gap``, ``speed``, ``accel`` (state constraints, reported only)
    and ``u``, ``alpha`` (control bounds, clipped).
    """
    violations = []
    if gap is not None and gap.gap < gap.desired:
        violations.append("gap")
    lon_speed = state.speed * math.cos(state.heading)
    if not limits.speed_min <= lon_speed <= limits.speed_max:
        violations.append("speed")
    lon_accel = state.accel * math.cos(state.heading)
    if not limits.accel_min <= lon_accel <= limits.accel_max:
        violations.append("accel")
    u = min(max(control.u, -limits.u_max), limits.u_max)
    if u != control.u:
        violations.append("u")
    alpha = min(max(control.alpha, -limits.alpha_max), limits.alpha_max)
    if alpha != control.alpha:
        violations.append("alpha")
    return ControlInput(u=u, alpha=alpha), violations


def gap_report(follower: VehicleState, leader: VehicleState, standstill: float) -> GapReport:
    if follower.id == leader.id:
        raise ValueError("follower and leader are the same vehicle")
    if follower.lane != leader.lane:
        raise ValueError("gap is only defined on a shared lane")
    raw = math.hypot(leader.x - follower.x, leader.y - follower.y) - follower.length
    collision = raw < 0
    gap = max(raw, 0.0)
    rel = follower.speed - leader.speed
    desired = standstill + follower.time_gap * rel
    return GapReport(gap=gap, desired=desired, spacing_error=gap - desired,
                     velocity_error=rel, standstill=standstill, collision=collision)


def neighbor_set(world: Sequence[VehicleState], vid: int, threshold: float) -> set[int]:
    """Ids of same-lane vehicles whose gap to ``vid`` is at most ``threshold``."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    me = next((s for s in world if s.id == vid), None)
    if me is None:
        raise KeyError(f"unknown vehicle id {vid}")
    out = set()
    for other in world:
        if other.id == vid or other.lane != me.lane:
            continue
        if math.hypot(other.x - me.x, other.y - me.y) - me.length <= threshold:
            out.add(other.id)
    return out


def ttc(follower: VehicleState, leader: VehicleState, gap: float, eps: float = 1e-3) -> float:
    """Gap over absolute relative speed; ``inf`` when the speeds match within ``eps``."""
    gap = max(gap, 0.0)
    rel = abs(follower.speed - leader.speed)
    if rel < eps:
        return math.inf
    return gap / rel


def cr_flag(ttc_value: float, speed: float, accel: float, react: float = 1.0,
            brake_decel: float = 3.0) -> SafetyRecord:
    if react < 0:
        raise ValueError("reaction time must be non-negative")
    if accel > 0:
        brake = speed / accel
    else:
        brake = speed / brake_decel
    threshold = react + brake
    return SafetyRecord(ttc=ttc_value, threshold=threshold, react=react, brake=brake,
                        flag=int(ttc_value < threshold))


def cr_ratio(history: Iterable[int]) -> float:
    flags = list(history)
    if not flags:
        raise ValueError("empty collision-risk history")
    return sum(1 for f in flags if f) / len(flags)


def idm_gap_target(speed: float, rel_speed: float, p: IdmParams) -> float:
    return p.min_gap + speed * p.headway + speed * rel_speed / (2 * math.sqrt(p.max_accel * p.comfort_decel))


def hdv_accel(me: VehicleState, leader: Optional[VehicleState], params: IdmParams,
              limits: Limits) -> float:
    """Intelligent Driver Model acceleration, clipped to [accel_min, u_max]."""
    free = 1.0 - (max(me.speed, 0.0) / params.desired_speed) ** params.delta
    interaction = 0.0
    if leader is not None:
        gap = max(math.hypot(leader.x - me.x, leader.y - me.y) - me.length, 1e-3)
        s_star = max(idm_gap_target(me.speed, me.speed - leader.speed, params), 0.0)
        interaction = (s_star / gap) ** 2
    acc = params.max_accel * (free - interaction)
    return min(max(acc, limits.accel_min), limits.u_max)
