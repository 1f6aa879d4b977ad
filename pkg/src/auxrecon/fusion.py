"""Stochastic choice of which frames see ground-truth cameras and depths."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundle import FrameBundle
from .synthscene import SceneSample


@dataclass(frozen=True)
class SamplerConfig:
    rgb_only_prob: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rgb_only_prob <= 1.0:
            raise ValueError(f"rgb_only_prob must lie in [0, 1], got {self.rgb_only_prob}")


@dataclass
class ModalityAssignment:
    camera_flags: np.ndarray
    depth_flags: np.ndarray
    rgb_only: bool = False

    def __post_init__(self):
        self.camera_flags = np.asarray(self.camera_flags, dtype=np.int64)
        self.depth_flags = np.asarray(self.depth_flags, dtype=np.int64)

    @property
    def num_cameras(self) -> int:
        return int(self.camera_flags.sum())

    @property
    def num_depths(self) -> int:
        return int(self.depth_flags.sum())

    def describe(self) -> str:
        cam = "".join(map(str, self.camera_flags))
        dep = "".join(map(str, self.depth_flags))
        return f"{int(self.rgb_only)},{cam},{dep}"


def worker_rng(seed: int, worker: int = 0) -> np.random.Generator:
    """Independent stream for one worker, derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(worker + 1)[worker])


def sample_assignment(s: int, cfg: SamplerConfig, rng: np.random.Generator) -> ModalityAssignment:
    """Cameras on the first Q frames, depths on a random O-subset, Q and O uniform on {0..S}.

    With probability ``cfg.rgb_only_prob`` the whole sequence gets nothing.
    """
    if s < 1:
        raise ValueError("sequence length must be >= 1")
    zeros = np.zeros(s, dtype=np.int64)
    if rng.random() < cfg.rgb_only_prob:
        return ModalityAssignment(zeros, zeros.copy(), rgb_only=True)
    q = int(rng.integers(0, s + 1))
    o = int(rng.integers(0, s + 1))
    cams = zeros.copy()
    cams[:q] = 1
    depths = zeros.copy()
    depths[rng.choice(s, size=o, replace=False)] = 1
    return ModalityAssignment(cams, depths)


def fixed_assignment(s: int, camera_pct: float, depth_pct: float, depth_order: np.ndarray | None = None) -> ModalityAssignment:
    """Evaluation pattern: ceil(S*pct/100) cameras as a prefix and depths on
    the first entries of ``depth_order`` (prefix order when omitted)."""
    n_cam = int(np.ceil(s * camera_pct / 100.0 - 1e-9))
    n_dep = int(np.ceil(s * depth_pct / 100.0 - 1e-9))
    order = np.arange(s) if depth_order is None else np.asarray(depth_order)
    cams = np.zeros(s, dtype=np.int64)
    cams[:n_cam] = 1
    depths = np.zeros(s, dtype=np.int64)
    depths[order[:n_dep]] = 1
    return ModalityAssignment(cams, depths)


def apply_assignment(scene: SceneSample, assignment: ModalityAssignment) -> FrameBundle:
    n = scene.num_frames
    if len(assignment.camera_flags) != n or len(assignment.depth_flags) != n:
        raise ValueError(
            f"assignment covers {len(assignment.camera_flags)}/{len(assignment.depth_flags)} frames, scene has {n}")
    cam = assignment.camera_flags.astype(bool)
    dep = assignment.depth_flags.astype(bool)
    return FrameBundle(
        images=scene.images,
        intrinsics=[scene.intrinsics[i] if cam[i] else None for i in range(n)],
        poses=[scene.poses[i] if cam[i] else None for i in range(n)],
        depths=[scene.depths[i] if dep[i] else None for i in range(n)],
    )
