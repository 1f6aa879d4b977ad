"""Pinhole cameras, rigid poses, the 9-value camera encoding, and the
normalisations applied to auxiliary inputs and to training targets.

Conventions: poses map world to camera (``x_cam = R x_world + t``),
quaternions are ``(w, x, y, z)`` with ``w >= 0``, pixel centres sit at
``(u + 0.5, v + 0.5)``, fields of view are in radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class InvalidRotationError(ValueError):
    pass


class EmptySceneError(ValueError):
    pass


class EmptyDepthError(ValueError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy, self.width, self.height], dtype=np.float64)


@dataclass(frozen=True)
class CameraPose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> CameraPose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> CameraPose:
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> CameraPose:
        rt = self.rotation.T
        return CameraPose(rt, -rt @ self.translation)

    def compose(self, other: CameraPose) -> CameraPose:
        """``self * other``: apply ``other`` first."""
        return CameraPose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def is_valid(self, tol: float = 1e-9) -> bool:
        r = self.rotation
        return bool(np.allclose(r.T @ r, np.eye(3), atol=tol) and abs(np.linalg.det(r) - 1.0) < tol)


@dataclass
class CameraParamVector:
    q: np.ndarray
    t: np.ndarray
    fov: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.q, self.t, self.fov]).astype(np.float64)

    @classmethod
    def from_array(cls, v: np.ndarray) -> CameraParamVector:
        v = np.asarray(v, dtype=np.float64).reshape(9)
        return cls(v[:4].copy(), v[4:7].copy(), v[7:9].copy())


@dataclass
class DepthObservation:
    depth: np.ndarray
    mask: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.depth.shape != self.mask.shape:
            raise ValueError(f"depth {self.depth.shape} and mask {self.mask.shape} differ in shape")


@dataclass
class PointMap:
    points: np.ndarray  # H x W x 3
    mask: np.ndarray = field(default=None)  # H x W

    def __post_init__(self):
        if self.mask is None:
            self.mask = np.ones(self.points.shape[:2])

    def valid_points(self) -> np.ndarray:
        return self.points[self.mask > 0.5]


# -- rotations ------------------------------------------------------------------

def nearest_rotation(m: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def canonical_quaternion(q: np.ndarray) -> np.ndarray:
    """Unit norm, ``w >= 0``; ties at ``w == 0`` resolved by the first nonzero component."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q)
    for c in q:
        if abs(c) > 1e-15:
            return q if c > 0 else -q
    return q


def rotation_to_quaternion(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    det = np.linalg.det(r)
    if det <= 0:
        raise InvalidRotationError(f"rotation has non-positive determinant {det:.3g}")
    if not np.allclose(r.T @ r, np.eye(3), atol=1e-6) or abs(det - 1) > 1e-6:
        r = nearest_rotation(r)
    # Shepperd: branch on the largest of (trace, diagonal) for stability
    tr = np.trace(r)
    if tr > max(r[0, 0], r[1, 1], r[2, 2]):
        s = 2.0 * math.sqrt(1.0 + tr)
        q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
    elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
        s = 2.0 * math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
    elif r[1, 1] >= r[2, 2]:
        s = 2.0 * math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    return canonical_quaternion(np.array(q))


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n < 1e-12:
        return np.eye(3)
    w, x, y, z = q / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def axis_angle_to_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)


def rotation_angle(r: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, radians."""
    c = (np.trace(r) - 1.0) / 2.0
    return float(math.acos(min(1.0, max(-1.0, c))))


def rotation_geodesic(r1: np.ndarray, r2: np.ndarray) -> float:
    # arctan2 form stays accurate near zero, unlike acos of the trace
    m = r1.T @ r2
    s = np.linalg.norm(np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])) / 2.0
    c = (np.trace(m) - 1.0) / 2.0
    return float(math.atan2(s, c))


# -- intrinsics ---------------------------------------------------------------------

def intrinsics_to_fov(k: CameraIntrinsics) -> tuple[float, float]:
    return 2.0 * math.atan(k.width / (2.0 * k.fx)), 2.0 * math.atan(k.height / (2.0 * k.fy))


def fov_to_intrinsics(fov_x: float, fov_y: float, width: int, height: int) -> CameraIntrinsics:
    if not (0 < fov_x < math.pi and 0 < fov_y < math.pi):
        raise ValueError(f"field of view must lie in (0, pi), got ({fov_x}, {fov_y})")
    return CameraIntrinsics(
        fx=width / (2.0 * math.tan(fov_x / 2.0)),
        fy=height / (2.0 * math.tan(fov_y / 2.0)),
        cx=width / 2.0,
        cy=height / 2.0,
        width=width,
        height=height,
    )


# -- pose normalisation and camera encoding ------------------------------------------

def normalize_poses(poses: Sequence[CameraPose]) -> tuple[list[CameraPose], float]:
    """Express all poses relative to the first one and rescale translations.

    Returns poses ``G_j G_1^{-1}`` with translations divided by the mean
    distance of cameras 2..Q from the first camera. A single camera, or a
    set whose cameras all coincide, keeps scale 1.
    """
    if not poses:
        raise ValueError("normalize_poses needs at least one pose")
    first_inv = poses[0].inverse()
    rel = [p.compose(first_inv) for p in poses]
    rel[0] = CameraPose.identity()
    s = 1.0
    if len(rel) > 1:
        # t'_1 = 0, so ||t'_j - t'_1|| is just ||t'_j||
        dists = [np.linalg.norm(p.translation) for p in rel[1:]]
        s = float(np.mean(dists))
        if s < 1e-9:
            s = 1.0
    return [CameraPose(p.rotation, p.translation / s) for p in rel], s


def encode_camera(k: CameraIntrinsics, g: CameraPose) -> CameraParamVector:
    return CameraParamVector(
        q=rotation_to_quaternion(g.rotation),
        t=g.translation.copy(),
        fov=np.array(intrinsics_to_fov(k)),
    )


def decode_camera(vec: CameraParamVector | np.ndarray, width: int, height: int) -> tuple[CameraIntrinsics, CameraPose]:
    if not isinstance(vec, CameraParamVector):
        vec = CameraParamVector.from_array(vec)
    fov = np.clip(vec.fov, 1e-6, math.pi - 1e-6)
    k = fov_to_intrinsics(float(fov[0]), float(fov[1]), width, height)
    return k, CameraPose(quaternion_to_rotation(vec.q), vec.t)


# -- depth and point maps --------------------------------------------------------------

def pixel_rays(k: CameraIntrinsics) -> np.ndarray:
    """``K^{-1} (u+0.5, v+0.5, 1)`` for every pixel, shape ``[H, W, 3]``."""
    v, u = np.meshgrid(np.arange(k.height) + 0.5, np.arange(k.width) + 0.5, indexing="ij")
    return np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1)


def unproject(depth: DepthObservation, k: CameraIntrinsics, g: CameraPose) -> PointMap:
    """Lift valid pixels to 3D and map them through ``G^{-1}``; invalid pixels give zeros."""
    if depth.depth.shape != (k.height, k.width):
        raise ValueError(f"depth {depth.depth.shape} does not match camera {k.height}x{k.width}")
    valid = depth.mask > 0.5
    cam = pixel_rays(k) * np.where(valid, depth.depth, 0.0)[..., None]
    pts = g.inverse().apply(cam.reshape(-1, 3)).reshape(cam.shape)
    pts[~valid] = 0.0
    return PointMap(pts, valid.astype(np.float64))


def normalize_scene_gt(
    pmaps: Sequence[PointMap],
    depths: Sequence[np.ndarray],
    translations: Sequence[np.ndarray],
) -> tuple[list[PointMap], list[np.ndarray], list[np.ndarray], float]:
    """Divide point maps, depths and camera translations by the mean norm of all valid points."""
    norms = [np.linalg.norm(pm.valid_points(), axis=-1) for pm in pmaps]
    count = sum(n.size for n in norms)
    if count == 0:
        raise EmptySceneError("scene has no valid points")
    scale = float(sum(n.sum() for n in norms) / count)
    if scale <= 0:
        raise EmptySceneError("all valid points sit at the origin")
    out_p = [PointMap(pm.points / scale, pm.mask.copy()) for pm in pmaps]
    out_d = [np.asarray(d) / scale for d in depths]
    out_t = [np.asarray(t) / scale for t in translations]
    return out_p, out_d, out_t, scale


def normalize_depth_batch(obs: Sequence[DepthObservation]) -> tuple[list[DepthObservation], float]:
    """Divide every map by one mean taken over all valid pixels of all maps."""
    total = 0.0
    count = 0
    for o in obs:
        valid = o.mask > 0.5
        total += float(o.depth[valid].sum())
        count += int(valid.sum())
    if count == 0:
        raise EmptyDepthError("no valid depth pixels in batch")
    m = total / count
    if m <= 0:
        raise EmptyDepthError("mean valid depth is not positive")
    return [DepthObservation(o.depth / m, o.mask.copy(), o.frame_index) for o in obs], m
