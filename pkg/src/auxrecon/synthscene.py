"""Deterministic ray-cast scenes: shaded images, exact z-depth, hit masks,
cameras on an orbit, plus the pose-similarity frame sampler and an on-disk
scene directory format.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import (
    CameraIntrinsics,
    CameraPose,
    DepthObservation,
    PointMap,
    fov_to_intrinsics,
    pixel_rays,
    rotation_geodesic,
    unproject,
)


class SceneGenerationError(RuntimeError):
    pass


class FrameSamplingError(ValueError):
    pass


WORLD_TYPES = ("planes", "blobs")
_NEAR = 1e-6
_MIN_COVERAGE = 0.3


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    num_frames: int = 8
    height: int = 32
    width: int = 32
    world: str = "planes"
    radius_range: tuple[float, float] = (3.0, 4.5)
    elevation_range: tuple[float, float] = (0.25, 0.6)
    orbit_span: float = math.pi / 2
    jitter: float = 0.15
    fov_range: tuple[float, float] = (0.8, 1.2)
    max_retries: int = 20

    def __post_init__(self):
        if self.num_frames < 1:
            raise ValueError("num_frames must be >= 1")
        if self.world not in WORLD_TYPES:
            raise ValueError(f"world must be one of {WORLD_TYPES}, got {self.world!r}")
        lo, hi = self.fov_range
        if not (0 < lo <= hi < math.pi):
            raise ValueError(f"fov range must lie inside (0, pi), got {self.fov_range}")


@dataclass
class Rect:
    center: np.ndarray
    normal: np.ndarray
    u: np.ndarray
    v: np.ndarray
    half: tuple[float, float]
    color: np.ndarray
    freq: float


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    color: np.ndarray
    freq: float


@dataclass
class SceneSample:
    images: np.ndarray  # F x 3 x H x W
    depths: list[DepthObservation]
    intrinsics: list[CameraIntrinsics]
    poses: list[CameraPose]
    points: list[PointMap] = field(default_factory=list)  # world frame
    seed: int = 0

    @property
    def num_frames(self) -> int:
        return len(self.poses)

    def subset(self, indices: Sequence[int]) -> SceneSample:
        idx = list(indices)
        return SceneSample(
            images=self.images[idx].copy(),
            depths=[DepthObservation(self.depths[i].depth, self.depths[i].mask, k) for k, i in enumerate(idx)],
            intrinsics=[self.intrinsics[i] for i in idx],
            poses=[self.poses[i] for i in idx],
            points=[self.points[i] for i in idx] if self.points else [],
            seed=self.seed,
        )


# -- world construction -----------------------------------------------------------

def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([1.0, 0.0, 0.0]) if abs(normal[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = _unit(np.cross(normal, helper))
    return u, np.cross(normal, u)


def _build_world(spec: SceneSpec, rng: np.random.Generator) -> list:
    floor_n = np.array([0.0, 0.0, 1.0])
    fu, fv = _basis(floor_n)
    prims: list = [Rect(np.array([0.0, 0.0, -1.0]), floor_n, fu, fv, (6.0, 6.0),
                        rng.uniform(0.4, 0.9, 3), rng.uniform(1.0, 3.0))]
    if spec.world == "planes":
        for _ in range(rng.integers(2, 5)):
            n = _unit(rng.normal(size=3) + np.array([0.0, 0.0, 0.5]))
            u, v = _basis(n)
            c = np.array([rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2), rng.uniform(-0.6, 0.6)])
            prims.append(Rect(c, n, u, v, (rng.uniform(0.4, 1.0), rng.uniform(0.4, 1.0)),
                              rng.uniform(0.2, 1.0, 3), rng.uniform(2.0, 6.0)))
    else:
        for _ in range(rng.integers(3, 7)):
            r = rng.uniform(0.3, 0.8)
            c = np.array([rng.uniform(-1.3, 1.3), rng.uniform(-1.3, 1.3), -1.0 + r + rng.uniform(0.0, 0.5)])
            prims.append(Sphere(c, r, rng.uniform(0.2, 1.0, 3), rng.uniform(2.0, 6.0)))
    return prims


def look_at(center: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0), roll: float = 0.0) -> CameraPose:
    """World-to-camera pose with +z forward, +x right, +y down."""
    f = _unit(target - center)
    right = _unit(np.cross(f, np.asarray(up, dtype=np.float64)))
    down = np.cross(f, right)
    if roll:
        c, s = math.cos(roll), math.sin(roll)
        right, down = c * right + s * down, -s * right + c * down
    r = np.stack([right, down, f])
    return CameraPose(r, -r @ center)


# -- ray casting --------------------------------------------------------------------

def _intersect(prim, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Ray parameter of the first hit per ray (inf on miss). ``dirs`` has z-depth 1 in camera frame."""
    if isinstance(prim, Rect):
        denom = dirs @ prim.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = ((prim.center - origin) @ prim.normal) / denom
        hit = origin + lam[:, None] * dirs - prim.center
        inside = (np.abs(hit @ prim.u) <= prim.half[0]) & (np.abs(hit @ prim.v) <= prim.half[1])
        ok = np.isfinite(lam) & (lam > _NEAR) & inside & (np.abs(denom) > 1e-12)
        return np.where(ok, lam, np.inf)
    oc = origin - prim.center
    a = np.einsum("ij,ij->i", dirs, dirs)
    b = 2.0 * dirs @ oc
    c = oc @ oc - prim.radius ** 2
    disc = b * b - 4 * a * c
    sq = np.sqrt(np.maximum(disc, 0.0))
    l1 = (-b - sq) / (2 * a)
    l2 = (-b + sq) / (2 * a)
    lam = np.where(l1 > _NEAR, l1, np.where(l2 > _NEAR, l2, np.inf))
    return np.where(disc >= 0, lam, np.inf)


def _surface(prim, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normals and albedo at surface points."""
    if isinstance(prim, Rect):
        normals = np.broadcast_to(prim.normal, pts.shape)
        local = pts - prim.center
        tex = np.sin(prim.freq * (local @ prim.u)) * np.sin(prim.freq * (local @ prim.v))
    else:
        normals = (pts - prim.center) / prim.radius
        tex = np.sin(prim.freq * pts[:, 0]) * np.sin(prim.freq * pts[:, 1] + pts[:, 2])
    albedo = prim.color[None, :] * (0.65 + 0.35 * tex)[:, None]
    return normals, albedo


_LIGHT = _unit(np.array([0.4, -0.3, 0.85]))


def render(prims: list, k: CameraIntrinsics, g: CameraPose) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (image 3xHxW, z-depth HxW, mask HxW)."""
    h, w = k.height, k.width
    rays_cam = pixel_rays(k).reshape(-1, 3)
    origin = g.inverse().translation
    dirs = rays_cam @ g.rotation  # R^T applied to each row
    lam = np.full(h * w, np.inf)
    owner = np.full(h * w, -1)
    for i, prim in enumerate(prims):
        li = _intersect(prim, origin, dirs)
        closer = li < lam
        lam[closer] = li[closer]
        owner[closer] = i
    hit = np.isfinite(lam)
    img = np.empty((h * w, 3))
    img[:] = np.array([0.55, 0.7, 0.9])  # sky
    pts = origin + np.where(hit, lam, 0.0)[:, None] * dirs
    for i, prim in enumerate(prims):
        sel = owner == i
        if not sel.any():
            continue
        normals, albedo = _surface(prim, pts[sel])
        facing = np.sign(np.einsum("ij,ij->i", normals, origin - pts[sel]))[:, None]
        normals = normals * np.where(facing == 0, 1.0, facing)
        shade = 0.25 + 0.75 * np.clip(normals @ _LIGHT, 0.0, None)
        img[sel] = albedo * shade[:, None]
    depth = np.where(hit, lam, 0.0).reshape(h, w)
    return img.reshape(h, w, 3).transpose(2, 0, 1).copy(), depth, hit.reshape(h, w).astype(np.float64)


def project(points: np.ndarray, k: CameraIntrinsics, g: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """World points to continuous pixel indices (u, v) and camera z-depth."""
    cam = g.apply(np.asarray(points, dtype=np.float64))
    z = cam[:, 2]
    u = k.fx * cam[:, 0] / z + k.cx - 0.5
    v = k.fy * cam[:, 1] / z + k.cy - 0.5
    return np.stack([u, v], axis=-1), z


# -- generation ---------------------------------------------------------------------

def _orbit_pose(spec: SceneSpec, rng: np.random.Generator, azimuth: float, radius: float, elevation: float) -> CameraPose:
    j = spec.jitter
    az = azimuth + rng.uniform(-j, j)
    el = elevation + rng.uniform(-j, j) * 0.5
    rad = radius * (1.0 + rng.uniform(-j, j) * 0.5)
    center = rad * np.array([math.cos(az) * math.cos(el), math.sin(az) * math.cos(el), math.sin(el)])
    target = rng.uniform(-j, j, 3) * np.array([2.0, 2.0, 1.0]) + np.array([0.0, 0.0, -0.5])
    return look_at(center, target, roll=rng.uniform(-j, j) * 0.3)


def generate(spec: SceneSpec) -> SceneSample:
    rng = np.random.default_rng(spec.seed)
    prims = _build_world(spec, rng)
    radius = rng.uniform(*spec.radius_range)
    elevation = rng.uniform(*spec.elevation_range)
    start = rng.uniform(0.0, 2 * math.pi)
    step = spec.orbit_span / max(spec.num_frames - 1, 1)

    images, depths, ks, poses, points = [], [], [], [], []
    for i in range(spec.num_frames):
        fov = rng.uniform(*spec.fov_range)
        k = fov_to_intrinsics(fov, 2 * math.atan(math.tan(fov / 2) * spec.height / spec.width),
                              spec.width, spec.height)
        for _ in range(spec.max_retries):
            g = _orbit_pose(spec, rng, start + i * step, radius, elevation)
            img, depth, mask = render(prims, k, g)
            if mask.mean() >= _MIN_COVERAGE:
                break
        else:
            raise SceneGenerationError(
                f"seed {spec.seed}: frame {i} never reached {_MIN_COVERAGE:.0%} coverage "
                f"after {spec.max_retries} retries")
        obs = DepthObservation(depth, mask, i)
        images.append(img)
        depths.append(obs)
        ks.append(k)
        poses.append(g)
        points.append(unproject(obs, k, g))
    return SceneSample(np.stack(images), depths, ks, poses, points, seed=spec.seed)


# -- pose-similarity frame sampling ----------------------------------------------------

def pose_distance_matrix(poses: Sequence[CameraPose], trans_weight: float = 1.0) -> np.ndarray:
    """Rotation geodesic (rad) plus weighted camera-centre distance.

    Centres are first divided by their mean distance to the centroid so the
    weight is unit-free.
    """
    n = len(poses)
    centers = np.stack([p.inverse().translation for p in poses])
    spread = np.linalg.norm(centers - centers.mean(axis=0), axis=1).mean() if n > 1 else 1.0
    centers = centers / (spread if spread > 1e-12 else 1.0)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = (rotation_geodesic(poses[i].rotation, poses[j].rotation)
                                 + trans_weight * np.linalg.norm(centers[i] - centers[j]))
    return d


def valid_ranges(poses: Sequence[CameraPose], top_n: int, trans_weight: float = 1.0) -> list[np.ndarray]:
    d = pose_distance_matrix(poses, trans_weight)
    out = []
    for i in range(len(poses)):
        order = [j for j in np.argsort(d[i], kind="stable") if j != i]
        out.append(np.array(order[:top_n], dtype=int))
    return out


def sample_frames(
    poses: Sequence[CameraPose],
    count: int,
    top_n: int,
    rng: np.random.Generator,
    trans_weight: float = 1.0,
) -> list[int]:
    """Pick a random anchor, then ``count - 1`` distinct frames from its most similar ``top_n``."""
    n = len(poses)
    if not 1 <= count <= n:
        raise FrameSamplingError(f"cannot sample {count} frames from {n}")
    top_n = min(top_n, n - 1)
    if top_n < count - 1:
        raise FrameSamplingError(f"top_n={top_n} leaves too few candidates for {count} frames")
    ranges = valid_ranges(poses, top_n, trans_weight)
    anchor = int(rng.integers(n))
    if count == 1:
        return [anchor]
    rest = rng.choice(ranges[anchor], size=count - 1, replace=False)
    return [anchor] + [int(i) for i in rest]


# -- scene directory format --------------------------------------------------------------

HEADER = "scene.txt"


def save_scene(scene: SceneSample, directory: str | Path) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    f, c, h, w = scene.images.shape
    lines = [f"frames {f}", f"size {c} {h} {w}"]
    for i, (k, g) in enumerate(zip(scene.intrinsics, scene.poses)):
        lines.append(f"intrinsics {i} " + " ".join(repr(float(x)) for x in k.as_array()))
        rt = np.concatenate([g.rotation, g.translation[:, None]], axis=1).reshape(-1)
        lines.append(f"pose {i} " + " ".join(repr(float(x)) for x in rt))
    (d / HEADER).write_text("\n".join(lines) + "\n")
    for i in range(f):
        scene.images[i].astype("<f4").tofile(d / f"frame_{i:03d}.img")
        scene.depths[i].depth.astype("<f4").tofile(d / f"frame_{i:03d}.dpt")
        scene.depths[i].mask.astype("<f4").tofile(d / f"frame_{i:03d}.msk")
    return d


def load_scene(directory: str | Path) -> SceneSample:
    d = Path(directory)
    ks: dict[int, CameraIntrinsics] = {}
    gs: dict[int, CameraPose] = {}
    frames = c = h = w = None
    for lineno, line in enumerate((d / HEADER).read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        try:
            if parts[0] == "frames":
                frames = int(parts[1])
            elif parts[0] == "size":
                c, h, w = (int(x) for x in parts[1:4])
            elif parts[0] == "intrinsics":
                v = [float(x) for x in parts[2:8]]
                ks[int(parts[1])] = CameraIntrinsics(v[0], v[1], v[2], v[3], int(v[4]), int(v[5]))
            elif parts[0] == "pose":
                m = np.array([float(x) for x in parts[2:14]]).reshape(3, 4)
                gs[int(parts[1])] = CameraPose(m[:, :3], m[:, 3])
            else:
                raise ValueError(f"unknown record {parts[0]!r}")
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{d / HEADER}:{lineno}: {exc}") from exc
    if frames is None or c is None:
        raise ValueError(f"{d / HEADER}: missing frames/size records")
    images, depths = [], []
    for i in range(frames):
        images.append(np.fromfile(d / f"frame_{i:03d}.img", dtype="<f4").reshape(c, h, w).astype(np.float64))
        dep = np.fromfile(d / f"frame_{i:03d}.dpt", dtype="<f4").reshape(h, w).astype(np.float64)
        msk = np.fromfile(d / f"frame_{i:03d}.msk", dtype="<f4").reshape(h, w).astype(np.float64)
        depths.append(DepthObservation(dep, msk, i))
    intr = [ks[i] for i in range(frames)]
    poses = [gs[i] for i in range(frames)]
    points = [unproject(o, k, g) for o, k, g in zip(depths, intr, poses)]
    return SceneSample(np.stack(images), depths, intr, poses, points)
