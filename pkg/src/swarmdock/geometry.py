"""Minimal 3D geometry: vectors, unit quaternions, rigid poses.

Conventions used across the package:
  - World frame is right-handed, z up. The platform moves in the z = 0
    plane, drones fly at z > 0.
  - Orientations are unit quaternions (w, x, y, z) internally; yaw angles
    appear only at config and log boundaries.
  - A pose maps local coordinates into its parent frame:
    p_parent = R * p_local + t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

UNIT_NORM_TOL = 1e-6


def _require_finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"non-finite component: {v!r}")


def wrap_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    wrapped = math.fmod(a + math.pi, 2.0 * math.pi)
    if wrapped < 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class Vec3:
    """Cartesian triple; meters for positions, m/s for velocities."""

    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        _require_finite(self.x, self.y, self.z)

    def __add__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def __neg__(self) -> "Vec3":
        return Vec3(-self.x, -self.y, -self.z)

    def scaled(self, k: float) -> "Vec3":
        return Vec3(self.x * k, self.y * k, self.z * k)

    def dot(self, other: "Vec3") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def norm(self) -> float:
        return math.sqrt(self.dot(self))

    def norm_xy(self) -> float:
        """Horizontal (ground-plane) magnitude."""
        return math.hypot(self.x, self.y)

    def distance_to(self, other: "Vec3") -> float:
        return (self - other).norm()

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)

    @staticmethod
    def zero() -> "Vec3":
        return Vec3(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Quat:
    """Unit quaternion (w, x, y, z) representing a rotation."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        _require_finite(self.w, self.x, self.y, self.z)
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if abs(n - 1.0) > UNIT_NORM_TOL:
            raise ValueError(f"quaternion norm {n} not within {UNIT_NORM_TOL} of 1")

    @staticmethod
    def identity() -> "Quat":
        return Quat(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def _normalized(w: float, x: float, y: float, z: float) -> "Quat":
        n = math.sqrt(w * w + x * x + y * y + z * z)
        if n < 1e-12:
            raise ValueError("cannot normalize a near-zero quaternion")
        return Quat(w / n, x / n, y / n, z / n)

    @staticmethod
    def from_axis_angle(axis: Vec3, angle: float) -> "Quat":
        n = axis.norm()
        if n < 1e-12:
            raise ValueError("rotation axis must be nonzero")
        half = 0.5 * angle
        s = math.sin(half) / n
        return Quat._normalized(math.cos(half), axis.x * s, axis.y * s, axis.z * s)

    @staticmethod
    def from_yaw(yaw: float) -> "Quat":
        """Rotation about world z by yaw radians."""
        half = 0.5 * yaw
        return Quat(math.cos(half), 0.0, 0.0, math.sin(half))

    def multiply(self, other: "Quat") -> "Quat":
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Quat._normalized(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def conjugate(self) -> "Quat":
        return Quat(self.w, -self.x, -self.y, -self.z)

    def rotate(self, v: Vec3) -> Vec3:
        # q * (0, v) * q^-1 expanded to avoid building intermediates
        w, x, y, z = self.w, self.x, self.y, self.z
        tx = 2.0 * (y * v.z - z * v.y)
        ty = 2.0 * (z * v.x - x * v.z)
        tz = 2.0 * (x * v.y - y * v.x)
        return Vec3(
            v.x + w * tx + (y * tz - z * ty),
            v.y + w * ty + (z * tx - x * tz),
            v.z + w * tz + (x * ty - y * tx),
        )

    def to_matrix(self) -> list[list[float]]:
        w, x, y, z = self.w, self.x, self.y, self.z
        return [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]

    @staticmethod
    def from_matrix(m) -> "Quat":
        """Build from a 3x3 rotation matrix (nested sequence or ndarray)."""
        t = m[0][0] + m[1][1] + m[2][2]
        if t > 0.0:
            s = math.sqrt(t + 1.0) * 2.0
            w = 0.25 * s
            x = (m[2][1] - m[1][2]) / s
            y = (m[0][2] - m[2][0]) / s
            z = (m[1][0] - m[0][1]) / s
        elif m[0][0] > m[1][1] and m[0][0] > m[2][2]:
            s = math.sqrt(1.0 + m[0][0] - m[1][1] - m[2][2]) * 2.0
            w = (m[2][1] - m[1][2]) / s
            x = 0.25 * s
            y = (m[0][1] + m[1][0]) / s
            z = (m[0][2] + m[2][0]) / s
        elif m[1][1] > m[2][2]:
            s = math.sqrt(1.0 + m[1][1] - m[0][0] - m[2][2]) * 2.0
            w = (m[0][2] - m[2][0]) / s
            x = (m[0][1] + m[1][0]) / s
            y = 0.25 * s
            z = (m[1][2] + m[2][1]) / s
        else:
            s = math.sqrt(1.0 + m[2][2] - m[0][0] - m[1][1]) * 2.0
            w = (m[1][0] - m[0][1]) / s
            x = (m[0][2] + m[2][0]) / s
            y = (m[1][2] + m[2][1]) / s
            z = 0.25 * s
        return Quat._normalized(w, x, y, z)

    def yaw(self) -> float:
        """Heading about world z (ZYX convention)."""
        w, x, y, z = self.w, self.x, self.y, self.z
        return math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))

    def angle_to(self, other: "Quat") -> float:
        """Magnitude of the rotation taking self to other, in radians."""
        d = abs(self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z)
        return 2.0 * math.acos(min(1.0, d))


@dataclass(frozen=True)
class Pose:
    """Rigid transform: p_parent = orientation * p_local + position."""

    position: Vec3
    orientation: Quat

    @staticmethod
    def identity() -> "Pose":
        return Pose(Vec3.zero(), Quat.identity())

    @staticmethod
    def from_translation(x: float, y: float, z: float) -> "Pose":
        return Pose(Vec3(x, y, z), Quat.identity())

    @staticmethod
    def from_yaw(x: float, y: float, z: float, yaw: float) -> "Pose":
        return Pose(Vec3(x, y, z), Quat.from_yaw(yaw))

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other: (self o other)(p) = self(other(p))."""
        return Pose(
            self.position + self.orientation.rotate(other.position),
            self.orientation.multiply(other.orientation),
        )

    def inverse(self) -> "Pose":
        inv_q = self.orientation.conjugate()
        return Pose(inv_q.rotate(self.position).scaled(-1.0), inv_q)

    def transform(self, v: Vec3) -> Vec3:
        return self.orientation.rotate(v) + self.position


def compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def transform_point(p: Pose, v: Vec3) -> Vec3:
    return p.transform(v)


def clamp_speed(v: Vec3, vmax: float) -> Vec3:
    """Scale v down to magnitude vmax if it exceeds the limit.

    Direction is preserved. A relative tolerance of 1e-12 on the norm check
    makes the operation exactly idempotent despite rounding in the rescale.
    """
    if vmax <= 0.0:
        raise ValueError(f"vmax must be positive, got {vmax}")
    n2 = v.dot(v)
    if n2 <= vmax * vmax * (1.0 + 1e-12):
        return v
    return v.scaled(vmax / math.sqrt(n2))
