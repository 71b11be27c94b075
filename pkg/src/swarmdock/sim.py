"""Deterministic discrete-time engine: platform motion, drone kinematics,
fault injection, full scenario execution, and landing metrics.

Each tick runs platform update, fault application, perception for every
healthy camera, the mode update, the control tick, and first-order drone
integration, all at the camera rate (default 30 Hz). Runs are bit
reproducible for a given (config, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .geometry import Pose, Quat, Vec3, clamp_speed, wrap_angle
from .planning import ApfParams
from .state import (
    CameraMount,
    DroneState,
    Phase,
    PlatformState,
    Role,
    WorldState,
    face_up_tag_pose,
    platform_tag_mount,
    PLATFORM_TAG_OFFSETS,
)
from .swarm import (
    DRONE_TAG_BASE,
    ControlParams,
    EstimateBook,
    FormationSpec,
    LocalizationEstimate,
    LocalizationSource,
    PlatformTracker,
    SwarmController,
    TotalCameraFailureError,
    camera_world_pose,
    fuse_platform_estimate,
    leader_guidance,
)
from .vision import CameraModel, TagSpec, detect_tags

N_DRONES = 3

# Initial placement: drones start behind the platform, facing along its
# heading, on a spread-out copy of the landing formation. The offset keeps
# the platform tags in every forward camera's view and range at t = 0.
START_SPREAD = 4.0
START_BACK = 2.5


class ScenarioError(ValueError):
    """Configuration problem, surfaced before the first tick."""


class MetricsUnavailableError(RuntimeError):
    """Raised when metrics are requested for a run with no touchdowns."""


class TrajectoryKind(Enum):
    STATIONARY = "stationary"
    LINE = "line"
    RECTANGLE = "rectangle"


class FaultKind(Enum):
    CAMERA_LOSS = "camera_loss"
    CAMERA_RECOVER = "camera_recover"


class Termination(Enum):
    ALL_LANDED = "all_landed"
    TIMEOUT = "timeout"
    ABORT = "abort"


@dataclass(frozen=True)
class FaultEvent:
    t: float
    drone_id: int
    kind: FaultKind


@dataclass(frozen=True)
class ScenarioConfig:
    """One experiment: platform trajectory, fault schedule, noise, gains."""

    trajectory: TrajectoryKind = TrajectoryKind.STATIONARY
    platform_speed: float = 0.5
    rectangle_extents: tuple[float, float] = (4.0, 2.0)
    dt: float = 1.0 / 30.0
    duration_max: float = 60.0
    faults: tuple[FaultEvent, ...] = ()
    seed: int = 0
    pixel_noise_sigma: float = 0.5
    formation: FormationSpec = FormationSpec()
    apf: ApfParams = ApfParams()
    drone_time_constant: float = 0.3
    landing_threshold: float = 0.05
    name: str = "scenario"

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ScenarioError("dt must be positive")
        if self.duration_max <= 0:
            raise ScenarioError("duration_max must be positive")
        if self.platform_speed < 0:
            raise ScenarioError("platform_speed must be nonnegative")
        if self.rectangle_extents[0] <= 0 or self.rectangle_extents[1] <= 0:
            raise ScenarioError("rectangle extents must be positive")
        if self.pixel_noise_sigma < 0:
            raise ScenarioError("pixel_noise_sigma must be nonnegative")
        if self.drone_time_constant <= 0:
            raise ScenarioError("drone_time_constant must be positive")
        if self.landing_threshold <= 0:
            raise ScenarioError("landing_threshold must be positive")
        for ev in self.faults:
            if not (0 <= ev.t <= self.duration_max):
                raise ScenarioError(f"fault time {ev.t} outside [0, {self.duration_max}]")
            if not (0 <= ev.drone_id < N_DRONES):
                raise ScenarioError(f"fault names unknown drone id {ev.drone_id}")


@dataclass(frozen=True)
class DroneRow:
    id: int
    x: float
    y: float
    z: float
    vx: float
    vy: float
    vz: float
    yaw: float
    role: Role
    leader_id: Optional[int]
    phase: Phase
    camera_ok: bool


@dataclass(frozen=True)
class RunRow:
    t: float
    drones: tuple[DroneRow, ...]
    platform_x: float
    platform_y: float
    platform_heading: float
    platform_speed: float


@dataclass(frozen=True)
class SimEvent:
    t: float
    kind: str
    drone_id: Optional[int] = None
    detail: str = ""


@dataclass(frozen=True)
class Touchdown:
    drone_id: int
    t: float
    x: float
    y: float
    platform_x: float
    platform_y: float
    platform_heading: float


@dataclass(frozen=True)
class RunRecord:
    config: ScenarioConfig
    rows: tuple[RunRow, ...]
    events: tuple[SimEvent, ...]
    touchdowns: tuple[Touchdown, ...]
    termination: Termination


@dataclass(frozen=True)
class LandingMetrics:
    """Touchdown accuracy in the platform frame, plus run-wide separation."""

    errors: dict[int, float]
    rmse: float
    boundary_radius: float
    min_separation: float


def platform_pose(kind: TrajectoryKind, t: float, config: ScenarioConfig) -> PlatformState:
    """Platform state at time t for the configured trajectory.

    Stationary holds the origin. Line advances along heading 0 at the
    configured speed. Rectangle walks the perimeter counterclockwise from
    the origin with instantaneous quarter turns at the corners, then halts
    after one full circuit.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    speed = config.platform_speed
    if kind is TrajectoryKind.STATIONARY or speed == 0.0:
        return PlatformState(x=0.0, y=0.0, heading=0.0, speed=0.0)
    if kind is TrajectoryKind.LINE:
        return PlatformState(x=speed * t, y=0.0, heading=0.0, speed=speed)
    w, h = config.rectangle_extents
    corners = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)]
    headings = [0.0, math.pi / 2.0, -math.pi, -math.pi / 2.0]
    lengths = [w, h, w, h]
    dist = speed * t
    if dist >= 2.0 * (w + h):
        return PlatformState(x=0.0, y=0.0, heading=headings[-1], speed=0.0)
    for (cx, cy), heading, length in zip(corners, headings, lengths):
        if dist < length:
            return PlatformState(
                x=cx + dist * math.cos(heading),
                y=cy + dist * math.sin(heading),
                heading=wrap_angle(heading),
                speed=speed,
            )
        dist -= length
    return PlatformState(x=0.0, y=0.0, heading=headings[-1], speed=0.0)


def step_drone(
    state: DroneState,
    command_velocity: Vec3,
    dt: float,
    time_constant: float,
    vmax: float = 2.5,
    yaw_command: Optional[float] = None,
) -> DroneState:
    """First-order velocity tracking: v' = v + (dt/tau)(v_cmd - v).

    Position integrates the updated velocity; speed is clamped to vmax;
    altitude never goes below ground. Yaw relaxes toward the commanded
    heading with the same time constant.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if time_constant <= 0:
        raise ValueError("time_constant must be positive")
    alpha = min(1.0, dt / time_constant)
    v = state.velocity
    v_new = clamp_speed(v + (command_velocity - v).scaled(alpha), vmax)
    p = state.position + v_new.scaled(dt)
    p = Vec3(p.x, p.y, max(0.0, p.z))
    yaw = state.yaw
    if yaw_command is not None:
        yaw = wrap_angle(yaw + alpha * wrap_angle(yaw_command - yaw))
    return replace(state, pose=Pose(p, Quat.from_yaw(yaw)), velocity=v_new)


def apply_faults(
    schedule: Sequence[FaultEvent], t: float, initial_health: dict[int, bool]
) -> dict[int, bool]:
    """Camera health at time t: every event with event time <= t applied once.

    Recomputed from the initial health on each call, so repeated calls at
    the same t agree and later events win for the same drone.
    """
    health = dict(initial_health)
    for ev in sorted(schedule, key=lambda e: e.t):
        if ev.t <= t:
            if ev.drone_id not in health:
                raise ScenarioError(f"fault schedule names unknown drone {ev.drone_id}")
            health[ev.drone_id] = ev.kind is FaultKind.CAMERA_RECOVER
    return health


def _initial_drones(config: ScenarioConfig, control: ControlParams) -> list[DroneState]:
    p0 = platform_pose(config.trajectory, 0.0, config)
    cos_h, sin_h = math.cos(p0.heading), math.sin(p0.heading)
    drones = []
    for i in range(N_DRONES):
        dx, dy = config.formation.offset_for(i)
        sx = START_SPREAD * dx - START_BACK
        sy = START_SPREAD * dy
        drones.append(
            DroneState(
                id=i,
                pose=Pose.from_yaw(
                    p0.x + cos_h * sx - sin_h * sy,
                    p0.y + sin_h * sx + cos_h * sy,
                    control.approach_altitude,
                    p0.heading,
                ),
                velocity=Vec3.zero(),
            )
        )
    return drones


def _drone_row(d: DroneState) -> DroneRow:
    return DroneRow(
        id=d.id,
        x=d.position.x,
        y=d.position.y,
        z=d.position.z,
        vx=d.velocity.x,
        vy=d.velocity.y,
        vz=d.velocity.z,
        yaw=d.yaw,
        role=d.role,
        leader_id=d.leader_id,
        phase=d.phase,
        camera_ok=d.camera_ok,
    )


def run_scenario(config: ScenarioConfig) -> RunRecord:
    """Execute one scenario to termination and return the full record."""
    rng = np.random.default_rng(config.seed)
    control = ControlParams(
        landing_threshold=config.landing_threshold,
        wait_for_platform_halt=config.trajectory is TrajectoryKind.RECTANGLE,
    )
    formation = config.formation
    drones = _initial_drones(config, control)
    controller = SwarmController()
    tracker = PlatformTracker()
    est_table: dict[int, LocalizationEstimate] = {}
    pending_mounts: dict[int, tuple[CameraMount, float]] = {}
    tag_mounts = {i: platform_tag_mount(i) for i in PLATFORM_TAG_OFFSETS}

    rows: list[RunRow] = []
    events: list[SimEvent] = []
    touchdowns: list[Touchdown] = []
    termination = Termination.TIMEOUT
    # Platform-frame anchor of each landed drone; it rides the deck.
    landed_anchor: dict[int, tuple[float, float, float]] = {}

    initial_health = {d.id: True for d in drones}
    prev_health = dict(initial_health)
    num_ticks = int(math.floor(config.duration_max / config.dt + 1e-9)) + 1

    for tick in range(num_ticks):
        t = tick * config.dt
        platform = platform_pose(config.trajectory, t, config)

        if landed_anchor:
            carried = []
            for d in drones:
                if d.id in landed_anchor:
                    ax, ay, ayaw = landed_anchor[d.id]
                    spot = platform.pose.transform(Vec3(ax, ay, 0.0))
                    d = replace(
                        d,
                        pose=Pose(spot, Quat.from_yaw(wrap_angle(platform.heading + ayaw))),
                        velocity=platform.velocity,
                    )
                carried.append(d)
            drones = carried

        health = apply_faults(config.faults, t, initial_health)
        for drone_id, ok in health.items():
            if ok != prev_health[drone_id]:
                kind = "camera_recover" if ok else "camera_loss"
                events.append(SimEvent(t=t, kind=kind, drone_id=drone_id))
        prev_health = dict(health)
        drones = [
            d if d.camera_ok == health[d.id] else replace(d, camera_ok=health[d.id])
            for d in drones
        ]

        # Finish any camera mount rotations that have run their course.
        for drone_id in list(pending_mounts):
            mount, ready = pending_mounts[drone_id]
            if t + 1e-9 >= ready:
                drones = [
                    replace(d, camera_mount=mount) if d.id == drone_id else d for d in drones
                ]
                del pending_mounts[drone_id]

        world = WorldState(t=t, drones=tuple(drones), platform=platform, rng=rng)

        # Perception: platform tags for everyone, drone-top tags for a
        # downward-looking camera. A drone whose mount is mid-rotation has
        # no usable feed this tick.
        platform_tags = [
            (TagSpec(i), platform.tag_poses[i]) for i in sorted(PLATFORM_TAG_OFFSETS)
        ]
        fixes = []
        leader_estimates: list[LocalizationEstimate] = []
        for drone in drones:
            if not drone.camera_ok or drone.id in pending_mounts:
                continue
            cam = CameraModel(pixel_noise_sigma=config.pixel_noise_sigma, mount=drone.camera_mount)
            tags = list(platform_tags)
            if drone.camera_mount is CameraMount.DOWNWARD:
                for other in drones:
                    if other.id != drone.id:
                        tags.append(
                            (
                                TagSpec(DRONE_TAG_BASE + other.id),
                                face_up_tag_pose(
                                    other.position.x, other.position.y, other.position.z, other.yaw
                                ),
                            )
                        )
            observations = detect_tags(world, drone, cam, tags, rng)
            platform_obs = [o for o in observations if o.tag_id < DRONE_TAG_BASE]
            fix = fuse_platform_estimate(
                platform_obs, camera_world_pose(drone.pose, drone.camera_mount), tag_mounts
            )
            if fix is not None:
                fixes.append(fix)
            if drone.camera_mount is CameraMount.DOWNWARD:
                leader_estimates.extend(leader_guidance(drone, observations))
        tracker.update(fixes)
        for est in leader_estimates:
            if not health[est.drone_id]:
                est_table[est.drone_id] = est
        for drone in drones:
            if drone.camera_ok:
                est_table[drone.id] = LocalizationEstimate(
                    drone_id=drone.id,
                    position=drone.position,
                    source=LocalizationSource.OWN_CAMERA,
                    timestamp=t,
                )

        # Mode update per the health signal.
        try:
            decision = controller.update_modes(drones, health)
        except TotalCameraFailureError:
            events.append(SimEvent(t=t, kind="abort", detail="total camera failure"))
            termination = Termination.ABORT
            rows.append(
                RunRow(
                    t=t,
                    drones=tuple(_drone_row(d) for d in drones),
                    platform_x=platform.x,
                    platform_y=platform.y,
                    platform_heading=platform.heading,
                    platform_speed=platform.speed,
                )
            )
            break
        if decision.elected is not None:
            events.append(
                SimEvent(t=t, kind="election", drone_id=decision.elected, detail="leader")
            )
        if decision.roles is not None:
            updated = []
            for d in drones:
                role, leader_id = decision.roles[d.id]
                if d.role is not role or d.leader_id != leader_id:
                    events.append(
                        SimEvent(
                            t=t,
                            kind="role_change",
                            drone_id=d.id,
                            detail=f"{d.role.value}->{role.value}",
                        )
                    )
                    d = replace(d, role=role, leader_id=leader_id)
                updated.append(d)
            drones = updated

        world = WorldState(t=t, drones=tuple(drones), platform=platform, rng=rng)
        commands = controller.control_tick(
            world,
            EstimateBook(platform=tracker.query(t), drones=dict(est_table)),
            formation,
            config.apf,
            control,
        )

        # Phase transitions requested this tick (forward moves only).
        updated = []
        for d in drones:
            cmd = commands.for_drone(d.id)
            if cmd.phase > d.phase:
                events.append(
                    SimEvent(
                        t=t,
                        kind="phase_change",
                        drone_id=d.id,
                        detail=f"{d.phase.name.lower()}->{cmd.phase.name.lower()}",
                    )
                )
                if cmd.phase is Phase.LANDED:
                    touchdowns.append(
                        Touchdown(
                            drone_id=d.id,
                            t=t,
                            x=d.position.x,
                            y=d.position.y,
                            platform_x=platform.x,
                            platform_y=platform.y,
                            platform_heading=platform.heading,
                        )
                    )
                    # Motors cut: settle on the deck and ride it from here.
                    rel = platform.pose.inverse().transform(
                        Vec3(d.position.x, d.position.y, 0.0)
                    )
                    landed_anchor[d.id] = (
                        rel.x,
                        rel.y,
                        wrap_angle(d.yaw - platform.heading),
                    )
                    grounded = Pose(
                        Vec3(d.position.x, d.position.y, 0.0), d.pose.orientation
                    )
                    d = replace(
                        d, phase=cmd.phase, pose=grounded, velocity=platform.velocity
                    )
                else:
                    d = replace(d, phase=cmd.phase)
            if cmd.mount is not d.camera_mount and d.id not in pending_mounts:
                pending_mounts[d.id] = (cmd.mount, t + control.mount_switch_time)
            updated.append(d)
        drones = updated

        rows.append(
            RunRow(
                t=t,
                drones=tuple(_drone_row(d) for d in drones),
                platform_x=platform.x,
                platform_y=platform.y,
                platform_heading=platform.heading,
                platform_speed=platform.speed,
            )
        )

        if all(d.phase is Phase.LANDED for d in drones):
            termination = Termination.ALL_LANDED
            break

        # Integrate airborne drones toward their commanded velocities.
        stepped = []
        for d in drones:
            cmd = commands.for_drone(d.id)
            if d.phase is Phase.LANDED:
                stepped.append(d)
            else:
                stepped.append(
                    step_drone(
                        d,
                        cmd.velocity,
                        config.dt,
                        config.drone_time_constant,
                        vmax=config.apf.vmax,
                        yaw_command=cmd.yaw,
                    )
                )
        drones = stepped

    return RunRecord(
        config=config,
        rows=tuple(rows),
        events=tuple(events),
        touchdowns=tuple(touchdowns),
        termination=termination,
    )


def compute_metrics(record: RunRecord, formation: Optional[FormationSpec] = None) -> LandingMetrics:
    """Touchdown error per drone in the platform frame at touchdown time.

    The boundary radius is the maximum per-drone error; minimum pairwise
    separation is scanned across every logged tick.
    """
    if not record.touchdowns:
        raise MetricsUnavailableError("run produced no touchdowns")
    formation = formation or record.config.formation
    errors: dict[int, float] = {}
    for td in record.touchdowns:
        rx = td.x - td.platform_x
        ry = td.y - td.platform_y
        cos_h, sin_h = math.cos(td.platform_heading), math.sin(td.platform_heading)
        ex = cos_h * rx + sin_h * ry
        ey = -sin_h * rx + cos_h * ry
        ox, oy = formation.offset_for(td.drone_id)
        errors[td.drone_id] = math.hypot(ex - ox, ey - oy)
    values = list(errors.values())
    rmse = math.sqrt(sum(e * e for e in values) / len(values))
    min_sep = math.inf
    for row in record.rows:
        for i in range(len(row.drones)):
            for j in range(i + 1, len(row.drones)):
                a, b = row.drones[i], row.drones[j]
                sep = math.sqrt((a.x - b.x) ** 2 + (a.y - b.y) ** 2 + (a.z - b.z) ** 2)
                min_sep = min(min_sep, sep)
    return LandingMetrics(
        errors=errors,
        rmse=rmse,
        boundary_radius=max(values),
        min_separation=min_sep,
    )
