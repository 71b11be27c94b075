"""World-state containers shared by perception, control, and the engine."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Optional

from .geometry import Pose, Quat, Vec3

# Landing platform footprint in meters (x by y in the platform frame).
PLATFORM_SIZE = (0.45, 0.57)
PLATFORM_HALF_X = PLATFORM_SIZE[0] / 2.0
PLATFORM_HALF_Y = PLATFORM_SIZE[1] / 2.0


class CameraMount(Enum):
    FORWARD = "forward"
    DOWNWARD = "downward"


class Role(Enum):
    HOMOGENEOUS = "homogeneous"
    LEADER = "leader"
    FOLLOWER = "follower"
    # Camera-dead drone with no relay assigned; only reachable in terminal
    # failure states, the controller otherwise promotes dead drones to
    # followers of the elected leader.
    BLIND = "blind"


class Phase(IntEnum):
    """Flight phases; transitions only move forward."""

    IDLE = 0
    TRACKING = 1
    LANDING = 2
    LANDED = 3


@dataclass(frozen=True)
class DroneState:
    """Kinematic state of one swarm agent (velocity-tracking point with yaw)."""

    id: int
    pose: Pose
    velocity: Vec3
    camera_ok: bool = True
    camera_mount: CameraMount = CameraMount.FORWARD
    role: Role = Role.HOMOGENEOUS
    leader_id: Optional[int] = None
    phase: Phase = Phase.IDLE

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValueError("drone id must be nonnegative")
        if self.role is Role.FOLLOWER and self.leader_id is None:
            raise ValueError("follower role requires a leader assignment")

    @property
    def position(self) -> Vec3:
        return self.pose.position

    @property
    def yaw(self) -> float:
        return self.pose.orientation.yaw()


def face_up_tag_pose(x: float, y: float, z: float, yaw: float) -> Pose:
    """World pose of a tag lying flat, front face up.

    Tag-local axes follow the image convention seen by a viewer facing the
    tag: x right, y down in the tag plane, z through the tag away from the
    viewer. A face-up tag therefore has its local z pointing at the floor.
    """
    flip_x = Quat(0.0, 1.0, 0.0, 0.0)  # pi about x
    return Pose(Vec3(x, y, z), Quat.from_yaw(yaw).multiply(flip_x))


# Platform-frame mounting offsets of the two platform tags (meters).
PLATFORM_TAG_OFFSETS = {0: (0.0, 0.13), 1: (0.0, -0.13)}


def platform_tag_mount(tag_id: int) -> Pose:
    """Pose of a platform tag in the platform frame."""
    dx, dy = PLATFORM_TAG_OFFSETS[tag_id]
    return face_up_tag_pose(dx, dy, 0.0, 0.0)


@dataclass(frozen=True)
class PlatformState:
    """Ground-plane pose and motion of the mobile landing platform."""

    x: float
    y: float
    heading: float
    speed: float
    tag_poses: tuple[Pose, ...] = ()

    def __post_init__(self) -> None:
        if not (-math.pi <= self.heading < math.pi):
            raise ValueError(f"heading {self.heading} outside [-pi, pi)")
        if self.speed < 0.0:
            raise ValueError("platform speed must be nonnegative")
        if not self.tag_poses:
            pose = self.pose
            tags = tuple(
                pose.compose(platform_tag_mount(i)) for i in sorted(PLATFORM_TAG_OFFSETS)
            )
            object.__setattr__(self, "tag_poses", tags)

    @property
    def pose(self) -> Pose:
        return Pose.from_yaw(self.x, self.y, 0.0, self.heading)

    @property
    def velocity(self) -> Vec3:
        return Vec3(self.speed * math.cos(self.heading), self.speed * math.sin(self.heading), 0.0)


@dataclass(frozen=True)
class WorldState:
    """Full simulation state at one instant."""

    t: float
    drones: tuple[DroneState, ...]
    platform: PlatformState
    rng: object = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        ids = [d.id for d in self.drones]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate drone ids: {ids}")

    def drone(self, drone_id: int) -> DroneState:
        for d in self.drones:
            if d.id == drone_id:
                return d
        raise KeyError(f"no drone with id {drone_id}")
