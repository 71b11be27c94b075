"""Point-feature video stabilization on synthetic intensity frames.

Pipeline: corner scoring from the gradient structure tensor, sparse
iterative optical flow, least-squares similarity fits between consecutive
frames, and moving-average smoothing of the fitted motion. Frames are
plain grayscale grids in [0, 1]; no real image I/O beyond a debug PGM
writer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import wrap_angle


class StabilizationError(RuntimeError):
    """Raised when a frame sequence carries no trackable structure."""


@dataclass
class Frame:
    """Grayscale intensity grid, values in [0, 1]."""

    intensities: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.intensities, dtype=float)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2D grid, got shape {arr.shape}")
        if arr.min() < -1e-12 or arr.max() > 1.0 + 1e-12:
            raise ValueError("intensities must lie in [0, 1]")
        self.intensities = arr

    @property
    def width(self) -> int:
        return self.intensities.shape[1]

    @property
    def height(self) -> int:
        return self.intensities.shape[0]


@dataclass(frozen=True)
class StructureTensor:
    """Symmetric 2x2 gradient-product matrix [[m11, m12], [m12, m22]]."""

    m11: float
    m12: float
    m22: float

    def min_eigenvalue(self) -> float:
        half_trace = 0.5 * (self.m11 + self.m22)
        half_diff = 0.5 * (self.m11 - self.m22)
        return half_trace - math.sqrt(half_diff * half_diff + self.m12 * self.m12)

    def max_eigenvalue(self) -> float:
        half_trace = 0.5 * (self.m11 + self.m22)
        half_diff = 0.5 * (self.m11 - self.m22)
        return half_trace + math.sqrt(half_diff * half_diff + self.m12 * self.m12)


@dataclass(frozen=True)
class SimilarityTransform2D:
    """2D similarity: p' = scale * R(theta) * p + (dx, dy). Pixels/radians."""

    dx: float
    dy: float
    theta: float
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @staticmethod
    def identity() -> "SimilarityTransform2D":
        return SimilarityTransform2D(0.0, 0.0, 0.0, 1.0)

    def apply(self, x: float, y: float) -> tuple[float, float]:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return (
            self.scale * (c * x - s * y) + self.dx,
            self.scale * (s * x + c * y) + self.dy,
        )


def _gradients(frame: Frame) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference derivatives with replicate padding at borders."""
    img = frame.intensities
    padded = np.pad(img, 1, mode="edge")
    ix = (padded[1:-1, 2:] - padded[1:-1, :-2]) / 2.0
    iy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / 2.0
    return ix, iy


def structure_tensor(
    frame: Frame,
    center: tuple[int, int],
    window: int,
    weights: Optional[np.ndarray] = None,
) -> StructureTensor:
    """Weighted sum of gradient products over a (2*window+1)^2 patch.

    center is (x, y); the patch must fit inside the frame.
    """
    cx, cy = center
    if window < 0:
        raise ValueError("window must be nonnegative")
    if not (window <= cx < frame.width - window and window <= cy < frame.height - window):
        raise IndexError(f"window of half-width {window} at {center} exceeds frame bounds")
    ix, iy = _gradients(frame)
    sl = (slice(cy - window, cy + window + 1), slice(cx - window, cx + window + 1))
    wx = np.ones((2 * window + 1, 2 * window + 1)) if weights is None else np.asarray(weights, dtype=float)
    if wx.shape != (2 * window + 1, 2 * window + 1):
        raise ValueError("weights shape must match the window")
    gx, gy = ix[sl], iy[sl]
    return StructureTensor(
        m11=float(np.sum(wx * gx * gx)),
        m12=float(np.sum(wx * gx * gy)),
        m22=float(np.sum(wx * gy * gy)),
    )


def intensity_error(m: StructureTensor, u: float, v: float) -> float:
    """Quadratic form [u v] M [u v]^T: predicted intensity change for a shift."""
    return m.m11 * u * u + 2.0 * m.m12 * u * v + m.m22 * v * v


def _min_eig_map(frame: Frame, window: int) -> np.ndarray:
    """Minimum structure-tensor eigenvalue at every valid center (box window)."""
    ix, iy = _gradients(frame)
    k = 2 * window + 1

    def box(a: np.ndarray) -> np.ndarray:
        c = np.cumsum(np.cumsum(a, axis=0), axis=1)
        c = np.pad(c, ((1, 0), (1, 0)))
        return c[k:, k:] - c[:-k, k:] - c[k:, :-k] + c[:-k, :-k]

    sxx, sxy, syy = box(ix * ix), box(ix * iy), box(iy * iy)
    half_trace = 0.5 * (sxx + syy)
    half_diff = 0.5 * (sxx - syy)
    eig = half_trace - np.sqrt(half_diff * half_diff + sxy * sxy)
    out = np.full(frame.intensities.shape, -np.inf)
    out[window : frame.height - window, window : frame.width - window] = eig
    return out


def good_features(
    frame: Frame,
    max_count: int = 64,
    quality_threshold: float = 0.05,
    window: int = 2,
    nms_radius: float = 4.0,
) -> list[tuple[float, float]]:
    """Strongest corner points by minimum eigenvalue, with non-max suppression.

    Returns up to max_count (x, y) points whose score exceeds
    quality_threshold times the global maximum. A constant frame has no
    gradients and yields an empty list.
    """
    eig = _min_eig_map(frame, window)
    best = float(eig.max())
    if best <= 0.0:
        return []
    ys, xs = np.nonzero(eig >= quality_threshold * best)
    scores = eig[ys, xs]
    # Deterministic order: strongest first, row-major tie-break.
    order = np.lexsort((xs, ys, -scores))
    chosen: list[tuple[float, float]] = []
    for idx in order:
        x, y = float(xs[idx]), float(ys[idx])
        if all((x - px) ** 2 + (y - py) ** 2 >= nms_radius**2 for px, py in chosen):
            chosen.append((x, y))
            if len(chosen) >= max_count:
                break
    return chosen


def _bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    h, w = img.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 2)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 2)
    fx = xs - x0
    fy = ys - y0
    return (
        img[y0, x0] * (1 - fx) * (1 - fy)
        + img[y0, x0 + 1] * fx * (1 - fy)
        + img[y0 + 1, x0] * (1 - fx) * fy
        + img[y0 + 1, x0 + 1] * fx * fy
    )


def lk_flow(
    prev: Frame,
    next_frame: Frame,
    features: Sequence[tuple[float, float]],
    window: int = 8,
) -> list[Optional[tuple[float, float]]]:
    """Per-feature displacement from prev to next by iterative least squares.

    Solves M d = -b in a (2*window+1)^2 patch, resampling the target frame
    at the shifted location each iteration. Features in flat regions have a
    singular M and come back as None (untrackable) rather than failing the
    whole call.
    """
    if prev.intensities.shape != next_frame.intensities.shape:
        raise ValueError("frames must have identical dimensions")
    ix, iy = _gradients(prev)
    img_prev = prev.intensities
    img_next = next_frame.intensities
    offsets = np.arange(-window, window + 1, dtype=float)
    ox, oy = np.meshgrid(offsets, offsets)
    results: list[Optional[tuple[float, float]]] = []
    for fx, fy in features:
        xs = ox + fx
        ys = oy + fy
        gx = _bilinear(ix, xs, ys)
        gy = _bilinear(iy, xs, ys)
        m11 = float(np.sum(gx * gx))
        m12 = float(np.sum(gx * gy))
        m22 = float(np.sum(gy * gy))
        det = m11 * m22 - m12 * m12
        tensor = StructureTensor(m11, m12, m22)
        if tensor.min_eigenvalue() < 1e-10 or det <= 0.0:
            results.append(None)
            continue
        template = _bilinear(img_prev, xs, ys)
        du, dv = 0.0, 0.0
        converged = False
        for _ in range(60):
            moved = _bilinear(img_next, xs + du, ys + dv)
            diff = moved - template
            b1 = float(np.sum(gx * diff))
            b2 = float(np.sum(gy * diff))
            step_u = -(m22 * b1 - m12 * b2) / det
            step_v = -(-m12 * b1 + m11 * b2) / det
            du += step_u
            dv += step_v
            if math.hypot(step_u, step_v) < 1e-6:
                converged = True
                break
        if not converged and math.hypot(du, dv) > 2.0 * window:
            results.append(None)
            continue
        results.append((du, dv))
    return results


def fit_similarity(
    src: Sequence[tuple[float, float]], dst: Sequence[tuple[float, float]]
) -> SimilarityTransform2D:
    """Least-squares similarity (translation, rotation, uniform scale).

    Uses the closed-form complex regression: with centered points z -> w,
    the optimal scale*exp(i*theta) is sum(conj(z) w) / sum(|z|^2). Exact on
    noise-free similarity pairs and invariant to point relabeling.
    """
    if len(src) != len(dst):
        raise ValueError("src and dst must pair up")
    if len(src) < 2:
        raise StabilizationError("need at least 2 point pairs")
    z = np.asarray([complex(x, y) for x, y in src])
    w = np.asarray([complex(x, y) for x, y in dst])
    zc = z - z.mean()
    wc = w - w.mean()
    denom = float(np.sum(np.abs(zc) ** 2))
    if denom < 1e-12:
        raise StabilizationError("source points are (nearly) coincident")
    alpha = complex(np.sum(np.conj(zc) * wc)) / denom
    scale = abs(alpha)
    if scale < 1e-12:
        raise StabilizationError("destination points collapse to a point")
    theta = math.atan2(alpha.imag, alpha.real)
    trans = w.mean() - alpha * z.mean()
    return SimilarityTransform2D(dx=trans.real, dy=trans.imag, theta=theta, scale=scale)


def smooth_transforms(
    sequence: Sequence[SimilarityTransform2D], window: int
) -> list[SimilarityTransform2D]:
    """Moving-average smoothing of the per-frame motion parameters.

    Centered windows of the given odd width, truncated at the sequence
    edges. Translation and angle average arithmetically, scale averages in
    log space. window=1 returns the input unchanged; constant sequences are
    fixed points for any window.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be odd and >= 1")
    n = len(sequence)
    if n == 0 or window == 1:
        return list(sequence)
    params = np.array([[t.dx, t.dy, t.theta, math.log(t.scale)] for t in sequence])
    half = window // 2
    smoothed = np.empty_like(params)
    for i in range(n):
        lo, hi = max(0, i - half), min(n, i + half + 1)
        smoothed[i] = params[lo:hi].mean(axis=0)
    return [
        SimilarityTransform2D(dx=row[0], dy=row[1], theta=row[2], scale=math.exp(row[3]))
        for row in smoothed
    ]


def stabilize(
    frames: Sequence[Frame],
    smoothing_window: int = 7,
    max_features: int = 60,
    lk_window: int = 10,
    quality_threshold: float = 0.05,
) -> tuple[list[SimilarityTransform2D], float]:
    """Full pipeline: features, flow, similarity fits, motion smoothing.

    Returns the smoothed per-frame-pair transforms (length len(frames)-1)
    and the residual jitter: the RMS displacement of compensated feature
    tracks about their per-track linear motion trend, in pixels. Detrending
    keeps deliberate pans out of the jitter figure.
    """
    if len(frames) < 2:
        raise ValueError("need at least 2 frames")
    features = good_features(frames[0], max_count=max_features, quality_threshold=quality_threshold)
    if not features:
        raise StabilizationError("no trackable features in the first frame")

    n = len(frames)
    positions = [np.asarray(features, dtype=float)]
    active = np.ones(len(features), dtype=bool)
    transforms: list[SimilarityTransform2D] = []
    for k in range(1, n):
        prev_pts = positions[-1]
        idx = np.nonzero(active)[0]
        flows = lk_flow(frames[k - 1], frames[k], [tuple(prev_pts[i]) for i in idx], window=lk_window)
        new_pts = prev_pts.copy()
        for i, flow in zip(idx, flows):
            if flow is None:
                active[i] = False
            else:
                new_pts[i] = prev_pts[i] + flow
        idx = np.nonzero(active)[0]
        if len(idx) < 2:
            raise StabilizationError(f"lost track of the scene at frame {k}")
        transforms.append(
            fit_similarity(
                [tuple(prev_pts[i]) for i in idx], [tuple(new_pts[i]) for i in idx]
            )
        )
        positions.append(new_pts)

    smoothed = smooth_transforms(transforms, smoothing_window)

    # Cumulative raw and smoothed motion; the per-frame correction is their
    # difference, applied to each tracked point before measuring jitter.
    raw = np.array([[t.dx, t.dy, t.theta, math.log(t.scale)] for t in transforms])
    smo = np.array([[t.dx, t.dy, t.theta, math.log(t.scale)] for t in smoothed])
    cum_raw = np.vstack([np.zeros(4), np.cumsum(raw, axis=0)])
    cum_smo = np.vstack([np.zeros(4), np.cumsum(smo, axis=0)])
    idx = np.nonzero(active)[0]
    track = np.array([[positions[k][i] for i in idx] for k in range(n)])  # (n, m, 2)
    corr = cum_smo - cum_raw
    comp = np.empty_like(track)
    for k in range(n):
        ddx, ddy, dth, dls = corr[k]
        c, s = math.cos(dth), math.sin(dth)
        sc = math.exp(dls)
        x, y = track[k, :, 0], track[k, :, 1]
        comp[k, :, 0] = sc * (c * x - s * y) + ddx
        comp[k, :, 1] = sc * (s * x + c * y) + ddy

    # RMS residual about each track's linear trend over frame index.
    ks = np.arange(n, dtype=float)
    basis = np.column_stack([np.ones(n), ks])
    resid_sq = 0.0
    count = 0
    for j in range(comp.shape[1]):
        for axis in range(2):
            series = comp[:, j, axis]
            coef, *_ = np.linalg.lstsq(basis, series, rcond=None)
            r = series - basis @ coef
            resid_sq += float(np.sum(r * r))
            count += n
    jitter = math.sqrt(resid_sq / count) if count else 0.0
    return smoothed, jitter


def write_pgm(frame: Frame, path) -> None:
    """Write a frame as plain-text PGM (P2), for eyeballing test imagery."""
    img = np.clip(np.round(frame.intensities * 255), 0, 255).astype(int)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"P2\n{frame.width} {frame.height}\n255\n")
        for row in img:
            fh.write(" ".join(str(v) for v in row))
            fh.write("\n")
