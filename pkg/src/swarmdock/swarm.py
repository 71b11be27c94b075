"""Mode-switching swarm controller.

Mode 1 (all cameras healthy): every drone localizes itself and tracks the
landing platform with its own forward camera. Mode 2 (one or more cameras
dead): a camera-healthy drone is elected leader by minimum summed distance
to the dead drones, rotates its camera downward, and relays position
estimates for the drones that cannot see; everyone else becomes a
follower. The controller is centralized: one ground-station instance is
advanced once per tick.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from .geometry import Pose, Vec3, clamp_speed, wrap_angle
from .planning import ApfParams, Obstacle, velocity_command
from .state import (
    PLATFORM_HALF_X,
    PLATFORM_HALF_Y,
    CameraMount,
    DroneState,
    Phase,
    Role,
    WorldState,
)
from .vision import TagObservation, camera_world_pose

# Tag ids 100+ are carried face-up on top of the drones; ids below that
# belong to the platform.
DRONE_TAG_BASE = 100


class LeaderElectionError(RuntimeError):
    """Raised when an election is requested in a state that does not need one."""


class TotalCameraFailureError(RuntimeError):
    """Raised when no drone has a working camera; the mission cannot continue."""


class LocalizationSource(Enum):
    OWN_CAMERA = "own_camera"
    LEADER_CAMERA = "leader_camera"


@dataclass(frozen=True)
class LocalizationEstimate:
    drone_id: int
    position: Vec3
    source: LocalizationSource
    timestamp: float


@dataclass(frozen=True)
class FormationSpec:
    """Landing slots in the platform frame plus leader hold geometry."""

    offsets: tuple[tuple[float, float], ...] = ((0.0, 0.15), (-0.13, -0.10), (0.13, -0.10))
    leader_altitude: float = 2.0
    leader_lag: float = 0.5

    def __post_init__(self) -> None:
        if len(set(self.offsets)) != len(self.offsets):
            raise ValueError("formation offsets must be pairwise distinct")
        for dx, dy in self.offsets:
            if abs(dx) > PLATFORM_HALF_X or abs(dy) > PLATFORM_HALF_Y:
                raise ValueError(f"offset ({dx}, {dy}) falls outside the platform footprint")
        if self.leader_altitude <= 0 or self.leader_lag < 0:
            raise ValueError("leader altitude must be positive and lag nonnegative")

    def offset_for(self, drone_id: int) -> tuple[float, float]:
        return self.offsets[drone_id % len(self.offsets)]


@dataclass(frozen=True)
class ControlParams:
    """Thresholds and rates for the landing state machine."""

    landing_threshold: float = 0.05
    touchdown_height: float = 0.02
    # Low enough that forward cameras keep a usable (not edge-on) view of
    # the flat platform tags through most of the approach.
    approach_altitude: float = 0.35
    descent_rate: float = 0.5
    staleness_timeout: float = 1.0
    mount_switch_time: float = 0.5
    # A drone may start or continue losing altitude only while its own
    # position feed is essentially live; anything older pauses the descent
    # (the 1 s staleness timeout still governs holding outright).
    descend_fresh_age: float = 0.1
    # Circuit missions land only once the platform has stopped; missions on
    # straight trajectories land on the mover.
    wait_for_platform_halt: bool = False
    halt_speed_threshold: float = 0.1


@dataclass(frozen=True)
class DroneCommand:
    velocity: Vec3
    mount: CameraMount
    phase: Phase
    yaw: float


@dataclass(frozen=True)
class SwarmCommand:
    """One command per live drone for a single control tick."""

    commands: dict[int, DroneCommand]

    def for_drone(self, drone_id: int) -> DroneCommand:
        return self.commands[drone_id]


@dataclass(frozen=True)
class PlatformEstimate:
    """Tracked platform pose with fitted planar velocity.

    good is False while the track rests only on ambiguous long-range
    sightings; such an estimate steers the approach but does not authorize
    a landing.
    """

    x: float
    y: float
    heading: float
    vx: float
    vy: float
    timestamp: float
    good: bool = True
    velocity_valid: bool = False


@dataclass(frozen=True)
class EstimateBook:
    """Everything the controller knows this tick, all vision-derived."""

    platform: Optional[PlatformEstimate]
    drones: dict[int, LocalizationEstimate] = field(default_factory=dict)


def leader_cost(candidate: Vec3, blind: Vec3) -> float:
    """Euclidean distance from a healthy candidate to a camera-dead drone."""
    return candidate.distance_to(blind)


def select_leader(drones: Sequence[DroneState]) -> int:
    """Healthy drone minimizing the summed distance to all camera-dead drones.

    Ties break to the lowest id, so the result is deterministic.
    """
    healthy = [d for d in drones if d.camera_ok]
    blind = [d for d in drones if not d.camera_ok]
    if not healthy:
        raise TotalCameraFailureError("no drone has a working camera")
    if not blind:
        raise LeaderElectionError("all cameras are healthy; no leader is needed")
    best_id = -1
    best_cost = math.inf
    for d in sorted(healthy, key=lambda d: d.id):
        cost = sum(leader_cost(d.position, b.position) for b in blind)
        if cost < best_cost:
            best_cost = cost
            best_id = d.id
    return best_id


def assign_followers(leader_id: int, drones: Sequence[DroneState]) -> list[tuple[int, int]]:
    """Pair every camera-dead drone with the single elected leader."""
    return [(d.id, leader_id) for d in sorted(drones, key=lambda d: d.id)
            if not d.camera_ok and d.id != leader_id]


def camera_mount_command(role: Role) -> CameraMount:
    return CameraMount.DOWNWARD if role is Role.LEADER else CameraMount.FORWARD


@dataclass(frozen=True)
class PlatformFix:
    t: float
    x: float
    y: float
    heading: Optional[float]
    good: bool = True


def fuse_platform_estimate(
    observations: Sequence[TagObservation],
    camera_pose: Pose,
    tag_mounts: dict[int, Pose],
) -> Optional[PlatformFix]:
    """Platform pose implied by one observer's tag sightings.

    Confident observations chain camera -> tag -> platform through the
    known mounting offsets and average (circularly for heading). When only
    ambiguous long-range sightings exist, the fix falls back to the mean
    of the tag positions, which sits at the platform center when both tags
    are in view; its heading is unknown and it is marked not good.
    Returns None when no observation maps to a known platform tag.
    """
    confident = []
    coarse = []
    for obs in observations:
        if obs.tag_id in tag_mounts:
            (confident if obs.trusted else coarse).append(obs)
    if confident:
        xs: list[float] = []
        ys: list[float] = []
        sin_h = 0.0
        cos_h = 0.0
        t = 0.0
        for obs in confident:
            mount = tag_mounts[obs.tag_id]
            world_platform = camera_pose.compose(obs.relative_pose).compose(mount.inverse())
            xs.append(world_platform.position.x)
            ys.append(world_platform.position.y)
            h = world_platform.orientation.yaw()
            sin_h += math.sin(h)
            cos_h += math.cos(h)
            t = max(t, obs.timestamp)
        return PlatformFix(
            t=t,
            x=sum(xs) / len(xs),
            y=sum(ys) / len(ys),
            heading=wrap_angle(math.atan2(sin_h, cos_h)),
            good=True,
        )
    if not coarse:
        return None
    positions = [camera_pose.compose(obs.relative_pose).position for obs in coarse]
    return PlatformFix(
        t=max(obs.timestamp for obs in coarse),
        x=sum(p.x for p in positions) / len(positions),
        y=sum(p.y for p in positions) / len(positions),
        heading=None,
        good=False,
    )


class PlatformTracker:
    """Constant-velocity tracker over fused platform fixes.

    The tags can leave every field of view during the final approach, so
    the tracker keeps answering queries by extrapolating the last fix with
    a velocity fitted over the trailing window of good fixes. Coarse
    (ambiguous long-range) fixes bootstrap the track but are dropped the
    moment a good fix arrives, and a good track never regresses to coarse.
    Good fixes far from the extrapolated track are rejected as outliers.
    """

    def __init__(
        self,
        window: float = 1.0,
        min_fit_points: int = 8,
        min_fit_span: float = 0.3,
        gate_radius: float = 0.75,
    ):
        self._window = window
        self._min_fit_points = min_fit_points
        self._min_fit_span = min_fit_span
        self._gate_radius = gate_radius
        self._fixes: deque[PlatformFix] = deque()
        self._has_good = False
        self._last_heading = 0.0

    def update(self, fixes: Sequence[PlatformFix]) -> None:
        """Fold in this tick's fixes (one per observing drone)."""
        good = [f for f in fixes if f.good]
        usable = good if (good or self._has_good) else list(fixes)
        if not usable:
            return
        t = max(f.t for f in usable)
        x = sum(f.x for f in usable) / len(usable)
        y = sum(f.y for f in usable) / len(usable)
        if good:
            if self._has_good and len(self._fixes) >= self._min_fit_points:
                predicted = self.query(t)
                if predicted is not None and math.hypot(x - predicted.x, y - predicted.y) > self._gate_radius:
                    return
            if not self._has_good:
                self._fixes.clear()
            self._has_good = True
            sin_h = sum(math.sin(f.heading) for f in good if f.heading is not None)
            cos_h = sum(math.cos(f.heading) for f in good if f.heading is not None)
            self._last_heading = wrap_angle(math.atan2(sin_h, cos_h))
        self._fixes.append(PlatformFix(t=t, x=x, y=y, heading=self._last_heading, good=bool(good)))
        while self._fixes and self._fixes[0].t < t - self._window:
            self._fixes.popleft()

    def _fit_velocity(self) -> tuple[float, float, bool]:
        n = len(self._fixes)
        if n < self._min_fit_points:
            return (0.0, 0.0, False)
        ts = [f.t for f in self._fixes]
        span = ts[-1] - ts[0]
        if span < self._min_fit_span:
            return (0.0, 0.0, False)
        mean_t = sum(ts) / n
        mean_x = sum(f.x for f in self._fixes) / n
        mean_y = sum(f.y for f in self._fixes) / n
        sxx = sum((t - mean_t) ** 2 for t in ts)
        sxy = sum((f.t - mean_t) * (f.x - mean_x) for f in self._fixes)
        syy = sum((f.t - mean_t) * (f.y - mean_y) for f in self._fixes)
        return (sxy / sxx, syy / sxx, True)

    def query(self, t: float) -> Optional[PlatformEstimate]:
        if not self._fixes:
            return None
        last = self._fixes[-1]
        vx, vy, valid = self._fit_velocity() if self._has_good else (0.0, 0.0, False)
        dt = t - last.t
        return PlatformEstimate(
            x=last.x + vx * dt,
            y=last.y + vy * dt,
            heading=self._last_heading,
            vx=vx,
            vy=vy,
            timestamp=last.t,
            good=self._has_good,
            velocity_valid=valid,
        )


def leader_guidance(
    leader: DroneState, observations: Sequence[TagObservation]
) -> list[LocalizationEstimate]:
    """World-frame follower positions from the leader's downward camera.

    Followers carry face-up tags at their body origin, so the tag position
    is the drone position. Followers outside the image simply have no
    entry; their consumers see the estimate age out.
    """
    if leader.camera_mount is not CameraMount.DOWNWARD:
        raise ValueError("leader guidance requires the downward mount")
    cam_pose = camera_world_pose(leader.pose, CameraMount.DOWNWARD)
    estimates = []
    for obs in observations:
        if obs.tag_id < DRONE_TAG_BASE:
            continue
        world_tag = cam_pose.compose(obs.relative_pose)
        estimates.append(
            LocalizationEstimate(
                drone_id=obs.tag_id - DRONE_TAG_BASE,
                position=world_tag.position,
                source=LocalizationSource.LEADER_CAMERA,
                timestamp=obs.timestamp,
            )
        )
    return estimates


@dataclass(frozen=True)
class ModeDecision:
    """Outcome of one mode-update pass."""

    mode: int
    roles: Optional[dict[int, tuple[Role, Optional[int]]]]
    elected: Optional[int] = None


class SwarmController:
    """Single-owner state machine running the two-mode landing mission."""

    def __init__(self) -> None:
        self._leader_selected = False
        self._leader_id: Optional[int] = None

    @property
    def leader_id(self) -> Optional[int]:
        return self._leader_id if self._leader_selected else None

    def update_modes(
        self, drones: Sequence[DroneState], camera_health: dict[int, bool]
    ) -> ModeDecision:
        """Re-evaluate roles from the current camera-health signal.

        All healthy: clear any leader selection, everyone homogeneous.
        Otherwise, elect a leader on the first pass (roles untouched that
        tick) and assign leader/follower roles on subsequent passes. The
        two-pass shape means the decision is idempotent once roles have
        settled for a given health input.
        """
        synced = [
            d if d.camera_ok == camera_health[d.id]
            else _with_camera(d, camera_health[d.id])
            for d in drones
        ]
        if all(camera_health[d.id] for d in drones):
            self._leader_selected = False
            self._leader_id = None
            return ModeDecision(
                mode=1,
                roles={d.id: (Role.HOMOGENEOUS, None) for d in drones},
            )
        if not any(camera_health[d.id] for d in drones):
            raise TotalCameraFailureError("every camera in the swarm is down")
        if not self._leader_selected:
            leader = select_leader(synced)
            self._leader_selected = True
            self._leader_id = leader
            return ModeDecision(mode=2, roles=None, elected=leader)
        roles: dict[int, tuple[Role, Optional[int]]] = {}
        for d in drones:
            if d.id == self._leader_id:
                roles[d.id] = (Role.LEADER, None)
            else:
                roles[d.id] = (Role.FOLLOWER, self._leader_id)
        return ModeDecision(mode=2, roles=roles)

    def control_tick(
        self,
        world: WorldState,
        estimates: EstimateBook,
        formation: FormationSpec,
        apf: ApfParams,
        control: ControlParams,
    ) -> SwarmCommand:
        """Velocity, mount, phase, and yaw setpoints for every drone.

        Targets come from the tracked platform estimate; own positions come
        from the per-drone estimate book. A drone whose estimate is missing
        or older than the staleness timeout holds position. Horizontal
        error below the landing threshold moves a drone from tracking to
        landing; touchdown (estimated height at or below the touchdown
        height) moves it to landed. In mode 2 the leader holds altitude
        with a horizontal lag behind the platform and only begins its own
        landing after every other drone is down.
        """
        t = world.t
        platform = estimates.platform
        commands: dict[int, DroneCommand] = {}
        others_landed = {
            d.id: all(o.phase is Phase.LANDED for o in world.drones if o.id != d.id)
            for d in world.drones
        }
        for drone in sorted(world.drones, key=lambda d: d.id):
            mount = camera_mount_command(drone.role)
            if drone.phase is Phase.LANDED:
                commands[drone.id] = DroneCommand(Vec3.zero(), mount, Phase.LANDED, drone.yaw)
                continue
            est = estimates.drones.get(drone.id)
            fresh = est is not None and (t - est.timestamp) <= control.staleness_timeout
            if not fresh or platform is None:
                phase = Phase.TRACKING if drone.phase is Phase.IDLE else drone.phase
                commands[drone.id] = DroneCommand(Vec3.zero(), mount, phase, drone.yaw)
                continue
            pos = est.position
            feedforward = Vec3(platform.vx, platform.vy, 0.0)
            cos_h, sin_h = math.cos(platform.heading), math.sin(platform.heading)
            dx, dy = formation.offset_for(drone.id)
            slot = Vec3(
                platform.x + cos_h * dx - sin_h * dy,
                platform.y + sin_h * dx + cos_h * dy,
                control.approach_altitude,
            )
            obstacles = _obstacles_for(drone.id, world, estimates)

            if drone.role is Role.LEADER and not others_landed[drone.id]:
                hold = Vec3(
                    platform.x - formation.leader_lag * cos_h,
                    platform.y - formation.leader_lag * sin_h,
                    formation.leader_altitude,
                )
                vel = clamp_speed(
                    feedforward + velocity_command(pos, hold, obstacles, apf), apf.vmax
                )
                commands[drone.id] = DroneCommand(vel, mount, Phase.TRACKING, platform.heading)
                continue

            phase = Phase.TRACKING if drone.phase is Phase.IDLE else drone.phase
            horiz_err = math.hypot(slot.x - pos.x, slot.y - pos.y)
            self_live = (t - est.timestamp) <= control.descend_fresh_age
            may_land = (
                platform.good
                and platform.velocity_valid
                and self_live
                and (
                    not control.wait_for_platform_halt
                    or math.hypot(platform.vx, platform.vy) < control.halt_speed_threshold
                )
            )
            if phase is Phase.TRACKING and may_land and horiz_err < control.landing_threshold:
                phase = Phase.LANDING
            if phase is Phase.TRACKING:
                vel = clamp_speed(
                    feedforward + velocity_command(pos, slot, obstacles, apf), apf.vmax
                )
            else:  # LANDING: servo horizontally on pure attraction, sink while tracked
                gain = 2.0 * apf.xi * apf.k
                sink = -control.descent_rate if self_live else 0.0
                vel = clamp_speed(
                    Vec3(
                        feedforward.x + gain * (slot.x - pos.x),
                        feedforward.y + gain * (slot.y - pos.y),
                        sink,
                    ),
                    apf.vmax,
                )
                if self_live and pos.z <= control.touchdown_height:
                    phase = Phase.LANDED
                    vel = Vec3.zero()
            commands[drone.id] = DroneCommand(vel, mount, phase, platform.heading)
        return SwarmCommand(commands=commands)


def _with_camera(drone: DroneState, camera_ok: bool) -> DroneState:
    from dataclasses import replace

    return replace(drone, camera_ok=camera_ok)


def _obstacles_for(drone_id: int, world: WorldState, estimates: EstimateBook) -> list[Obstacle]:
    """Other airborne drones, at their best-known positions.

    Landed drones sit inside the shared footprint by design and are not
    treated as obstacles, otherwise neighbors could never reach their own
    slots.
    """
    obstacles = []
    for other in world.drones:
        if other.id == drone_id or other.phase is Phase.LANDED:
            continue
        est = estimates.drones.get(other.id)
        if est is not None:
            obstacles.append(Obstacle(est.position))
    return obstacles
