"""Simulated fiducial-tag vision: pinhole projection, detection gating, pose recovery.

Camera frame convention (computer-vision style): x right, y down, z forward
along the boresight. Pixels: u = cx + fx * X/Z, v = cy + fy * Y/Z.

Tag frame convention: x right and y down as seen by a viewer facing the
tag, z through the tag away from the viewer. With this choice a tag seen
squarely head-on has identity relative orientation in the camera frame.
Corner order is counterclockwise in pixel coordinates when the front face
is toward the camera:

    c0 = (-s/2, -s/2)   c1 = (+s/2, -s/2)
    c3 = (-s/2, +s/2)   c2 = (+s/2, +s/2)

Tag identity is known to the projector; payload decoding is not simulated.
Detection range limits default to 0.30 m minimum and 4.00 m maximum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import Pose, Quat, Vec3
from .state import CameraMount, DroneState, WorldState

MIN_DETECTION_RANGE = 0.30
MAX_DETECTION_RANGE = 4.00

# Planar pose recovery from four corners admits two solutions whose
# reprojection residuals converge as the view grazes the tag plane. An
# observation with a residual ratio at or above this value is trustworthy
# in full 6-DoF; below it only the bearing and apparent-size range are.
AMBIGUITY_CONFIDENT = 8.0


class CameraFaultError(RuntimeError):
    """Raised when a dead camera is queried for detections."""


class PoseEstimationError(RuntimeError):
    """Raised when corner geometry is too degenerate to recover a pose."""


# Body-from-camera mount rotations. Forward: boresight along body +x,
# image right = body -y, image down = body -z. Downward: boresight along
# body -z, image right = body +x, image down = body -y.
_FORWARD_MOUNT = Quat.from_matrix([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
_DOWNWARD_MOUNT = Quat(0.0, 1.0, 0.0, 0.0)


def mount_rotation(mount: CameraMount) -> Quat:
    return _FORWARD_MOUNT if mount is CameraMount.FORWARD else _DOWNWARD_MOUNT


def camera_world_pose(body_pose: Pose, mount: CameraMount) -> Pose:
    """World pose of the camera frame for a body pose and mount setting."""
    return body_pose.compose(Pose(Vec3.zero(), mount_rotation(mount)))


@dataclass(frozen=True)
class CameraModel:
    fx: float = 500.0
    fy: float = 500.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480
    pixel_noise_sigma: float = 0.0
    fov_half_angle: float = 0.0
    mount: CameraMount = CameraMount.FORWARD

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.pixel_noise_sigma < 0:
            raise ValueError("pixel noise sigma must be nonnegative")
        if self.fov_half_angle == 0.0:
            # Diagonal half-angle; the image rectangle is the authoritative
            # frustum, this is informational only.
            half_diag = math.hypot(self.width / 2.0, self.height / 2.0)
            object.__setattr__(self, "fov_half_angle", math.atan2(half_diag, self.fx))

    def in_image(self, u: float, v: float) -> bool:
        return 0.0 <= u < self.width and 0.0 <= v < self.height


@dataclass(frozen=True)
class TagSpec:
    id: int
    side: float = 0.166

    def __post_init__(self) -> None:
        if self.side <= 0:
            raise ValueError("tag side must be positive")


def tag_corners_local(side: float) -> list[Vec3]:
    h = side / 2.0
    return [Vec3(-h, -h, 0.0), Vec3(h, -h, 0.0), Vec3(h, h, 0.0), Vec3(-h, h, 0.0)]


@dataclass(frozen=True)
class TagObservation:
    """One tag sighting: pixel corners plus the recovered camera-frame pose.

    ambiguity is the residual ratio between the two planar-pose solutions
    (infinite when there is no meaningful alternate). trusted reports
    whether the full 6-DoF pose is reliable; untrusted observations carry
    a bounded bearing-and-apparent-size position instead of the (wild)
    planar-pose depth, and their orientation should not be used.
    """

    tag_id: int
    corners: tuple[tuple[float, float], ...]
    relative_pose: Pose
    range_m: float
    timestamp: float
    ambiguity: float = math.inf
    trusted: bool = True


def project_point(camera_pose: Pose, cam: CameraModel, point_world: Vec3) -> Optional[tuple[float, float]]:
    """Pinhole projection of a world point; None if behind or out of frame."""
    p = camera_pose.inverse().transform(point_world)
    if p.z <= 1e-9:
        return None
    u = cam.cx + cam.fx * p.x / p.z
    v = cam.cy + cam.fy * p.y / p.z
    if not cam.in_image(u, v):
        return None
    return (u, v)


def project_tag(
    camera_pose: Pose, cam: CameraModel, tag_pose: Pose, tag: TagSpec
) -> Optional[list[tuple[float, float]]]:
    """Noiseless projection of the four tag corners, or None if not fully visible."""
    corners = []
    for c in tag_corners_local(tag.side):
        px = project_point(camera_pose, cam, tag_pose.transform(c))
        if px is None:
            return None
        corners.append(px)
    return corners


def detect_tags(
    world: WorldState,
    observer: DroneState,
    cam: CameraModel,
    tags: Sequence[tuple[TagSpec, Pose]],
    rng: np.random.Generator,
    min_range: float = MIN_DETECTION_RANGE,
    max_range: float = MAX_DETECTION_RANGE,
) -> list[TagObservation]:
    """Detections visible to one drone's camera this instant.

    A tag is reported only when its range lies in [min_range, max_range],
    all four corners project inside the image, and the front face points
    toward the camera. Corner pixels carry independent Gaussian noise of
    cam.pixel_noise_sigma; the reported pose is recovered from the noisy
    corners. Deterministic for a given generator state.
    """
    if not observer.camera_ok:
        raise CameraFaultError(f"drone {observer.id} camera is not operational")
    camera_pose = camera_world_pose(observer.pose, cam.mount)
    cam_pos = camera_pose.position
    observations: list[TagObservation] = []
    for spec, tag_pose in tags:
        corners = project_tag(camera_pose, cam, tag_pose, spec)
        if corners is None:
            continue
        rng_m = cam_pos.distance_to(tag_pose.position)
        if not (min_range <= rng_m <= max_range):
            continue
        # Front face is the -z side of the tag frame.
        outward = tag_pose.orientation.rotate(Vec3(0.0, 0.0, -1.0))
        if outward.dot(cam_pos - tag_pose.position) <= 0.0:
            continue
        pts = np.asarray(corners, dtype=float)
        if cam.pixel_noise_sigma > 0.0:
            pts = pts + rng.normal(0.0, cam.pixel_noise_sigma, size=(4, 2))
            if not all(cam.in_image(u, v) for u, v in pts):
                continue
        corner_tuple = tuple((float(u), float(v)) for u, v in pts)
        try:
            pose, ambiguity, trusted = _estimate_pose_and_ambiguity(corner_tuple, cam, spec)
        except PoseEstimationError:
            # Degenerate quad (grazing view); a detector would reject it too.
            continue
        observations.append(
            TagObservation(
                tag_id=spec.id,
                corners=corner_tuple,
                relative_pose=pose,
                range_m=rng_m,
                timestamp=world.t,
                ambiguity=ambiguity,
                trusted=trusted,
            )
        )
    return observations


def estimate_tag_pose(obs: TagObservation, cam: CameraModel, tag: TagSpec) -> Pose:
    """Recover the tag pose in the camera frame from its four pixel corners."""
    pose, _, _ = _estimate_pose_and_ambiguity(obs.corners, cam, tag)
    return pose


def scale_range(corners: Sequence[tuple[float, float]], cam: CameraModel, tag: TagSpec) -> float:
    """Depth from apparent size: the longest tag edge spans ~f*side/Z pixels.

    Robust at grazing views where the planar pose solution is ambiguous;
    a tag rotated in its own plane biases this long by at most sqrt(2).
    """
    px = np.asarray(corners, dtype=float)
    edges = [np.linalg.norm(px[(i + 1) % 4] - px[i]) for i in range(4)]
    longest = max(edges)
    if longest < 1e-9:
        raise PoseEstimationError("corners coincide; no apparent size")
    return 0.5 * (cam.fx + cam.fy) * tag.side / longest


def _estimate_pose_and_ambiguity(
    corners: Sequence[tuple[float, float]], cam: CameraModel, tag: TagSpec
) -> tuple[Pose, float, bool]:
    if len(corners) != 4:
        raise PoseEstimationError(f"need 4 corners, got {len(corners)}")
    px = np.asarray(corners, dtype=float)
    for i in range(4):
        for j in range(i + 1, 4):
            if np.linalg.norm(px[i] - px[j]) < 1e-6:
                raise PoseEstimationError("repeated corner coordinates")
    # Shoelace area in pixel space; collinear corners give (near) zero.
    x, y = px[:, 0], px[:, 1]
    area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    if area < 1e-6:
        raise PoseEstimationError("corners are (nearly) collinear")

    norm_pts = np.column_stack(((px[:, 0] - cam.cx) / cam.fx, (px[:, 1] - cam.cy) / cam.fy))
    plane_pts = np.asarray([(c.x, c.y) for c in tag_corners_local(tag.side)])

    homography = _dlt_homography(plane_pts, norm_pts)
    r, t = _pose_from_homography(homography)
    r, t = _refine_pose(r, t, plane_pts, norm_pts)
    err = _reprojection_rms(r, t, plane_pts, norm_pts)

    ambiguity = math.inf
    gap_ok = True
    alt = _mirrored_pose(r, t)
    if alt is not None:
        r_alt, t_alt = _refine_pose(*alt, plane_pts, norm_pts)
        err_alt = _reprojection_rms(r_alt, t_alt, plane_pts, norm_pts)
        if err_alt < err:
            (r, t, err), (r_alt, t_alt, err_alt) = (r_alt, t_alt, err_alt), (r, t, err)
        ambiguity = err_alt / max(err, 1e-15)
        # Near fronto-parallel views the two candidates fit equally well but
        # also nearly coincide, which makes the ambiguity harmless.
        gap_ok = float(np.linalg.norm(t - t_alt)) <= max(0.02, 0.03 * float(np.linalg.norm(t)))

    if err < 1e-9:
        # The corners are explained exactly; nothing to distrust.
        trusted = True
    else:
        # A depth that contradicts the apparent tag size marks a fit gone
        # wild at a grazing view, whatever the candidate ratio says.
        z_apparent = scale_range(corners, cam, tag)
        depth_ok = 0.75 <= float(t[2]) / z_apparent <= 1.35
        trusted = depth_ok and (ambiguity >= AMBIGUITY_CONFIDENT or gap_ok)

    position = Vec3(float(t[0]), float(t[1]), float(t[2]))
    if not trusted:
        # Report a bounded position: the corner-centroid bearing at the
        # apparent-size range.
        z = scale_range(corners, cam, tag)
        center = norm_pts.mean(axis=0)
        position = Vec3(float(center[0] * z), float(center[1] * z), float(z))
    return Pose(position, Quat.from_matrix(r)), ambiguity, trusted


def _reprojection_rms(
    r: np.ndarray, t: np.ndarray, plane_pts: np.ndarray, norm_pts: np.ndarray
) -> float:
    try:
        res = _project_normalized(r, t, plane_pts) - norm_pts
    except PoseEstimationError:
        return math.inf
    return float(np.sqrt(np.mean(res * res)))


def _mirrored_pose(r: np.ndarray, t: np.ndarray) -> Optional[tuple[np.ndarray, np.ndarray]]:
    """Second planar-pose candidate: tag normal mirrored about the view ray.

    Near fronto-parallel views the two candidates coincide and there is no
    ambiguity to measure; returns None in that case.
    """
    norm_t = np.linalg.norm(t)
    if norm_t < 1e-12:
        return None
    view = t / norm_t
    normal = r[:, 2]
    mirrored = 2.0 * float(normal @ view) * view - normal
    axis = np.cross(normal, mirrored)
    sin_angle = np.linalg.norm(axis)
    if sin_angle < 1e-6:
        return None
    cos_angle = float(np.clip(normal @ mirrored, -1.0, 1.0))
    angle = math.atan2(sin_angle, cos_angle)
    return _exp_so3(axis / sin_angle * angle) @ r, t.copy()


def _dlt_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Homography mapping plane points (X, Y) to normalized image points."""
    rows = []
    for (xs, ys), (xd, yd) in zip(src, dst):
        rows.append([xs, ys, 1, 0, 0, 0, -xd * xs, -xd * ys, -xd])
        rows.append([0, 0, 0, xs, ys, 1, -yd * xs, -yd * ys, -yd])
    a = np.asarray(rows, dtype=float)
    _, s, vt = np.linalg.svd(a)
    h = vt[-1].reshape(3, 3)
    if abs(h[2, 2]) < 1e-15 and s[-2] < 1e-12:
        raise PoseEstimationError("degenerate corner configuration")
    return h


def _pose_from_homography(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    r1, r2, t = h[:, 0], h[:, 1], h[:, 2]
    scale = 2.0 / (np.linalg.norm(r1) + np.linalg.norm(r2))
    if not np.isfinite(scale):
        raise PoseEstimationError("degenerate homography")
    # The tag must sit in front of the camera (positive z).
    if t[2] * scale < 0.0:
        scale = -scale
    r1 = r1 * scale
    r2 = r2 * scale
    t = t * scale
    r0 = np.column_stack((r1, r2, np.cross(r1, r2)))
    u, _, vt = np.linalg.svd(r0)
    r = u @ np.diag([1.0, 1.0, np.linalg.det(u @ vt)]) @ vt
    return r, t


def _project_normalized(r: np.ndarray, t: np.ndarray, plane_pts: np.ndarray) -> np.ndarray:
    pts3 = (r[:, :2] @ plane_pts.T).T + t
    z = pts3[:, 2]
    if np.any(z <= 1e-9):
        raise PoseEstimationError("hypothesized pose places corners behind the camera")
    return pts3[:, :2] / z[:, None]


def _refine_pose(
    r: np.ndarray, t: np.ndarray, plane_pts: np.ndarray, norm_pts: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Newton reprojection refinement over rotation and translation.

    The closed-form homography decomposition fits the (noisy) corners
    exactly with 8 dof; re-minimizing geometric error over the 6 rigid dof
    noticeably tightens noisy estimates. Rotation updates are applied on
    the left as R <- exp([w]x) R.
    """
    try:
        for _ in range(12):
            pts3 = (r[:, :2] @ plane_pts.T).T + t
            z = pts3[:, 2]
            if np.any(z <= 1e-9):
                raise PoseEstimationError("corners behind the camera")
            proj = pts3[:, :2] / z[:, None]
            res = (proj - norm_pts).ravel()
            jac = np.empty((8, 6))
            for i, q in enumerate(pts3):
                inv_z = 1.0 / q[2]
                dpi = np.array(
                    [
                        [inv_z, 0.0, -q[0] * inv_z * inv_z],
                        [0.0, inv_z, -q[1] * inv_z * inv_z],
                    ]
                )
                skew = np.array(
                    [[0.0, -q[2], q[1]], [q[2], 0.0, -q[0]], [-q[1], q[0], 0.0]]
                )
                # q = R p + t, perturbed as dq = dw x (q - t) + dt; the skew
                # of t cancels out of the rotation block below.
                rot_block = dpi @ (-skew + _skew(t))
                jac[2 * i : 2 * i + 2, :3] = rot_block
                jac[2 * i : 2 * i + 2, 3:] = dpi
            delta, *_ = np.linalg.lstsq(jac, -res, rcond=None)
            r_next = _exp_so3(delta[:3]) @ r
            t_next = t + delta[3:]
            pts_next = (r_next[:, :2] @ plane_pts.T).T + t_next
            if np.any(pts_next[:, 2] <= 1e-9):
                break  # step leaves the visible half-space; keep last iterate
            r, t = r_next, t_next
            if np.linalg.norm(delta) < 1e-13:
                break
    except PoseEstimationError:
        pass
    return r, t


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _exp_so3(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    kx = np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]])
    if theta < 1e-12:
        return np.eye(3) + kx
    return (
        np.eye(3)
        + math.sin(theta) / theta * kx
        + (1.0 - math.cos(theta)) / (theta * theta) * (kx @ kx)
    )
