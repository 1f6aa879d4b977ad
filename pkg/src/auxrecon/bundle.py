from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, CameraPose, DepthObservation


@dataclass
class FrameBundle:
    """One input sequence: images plus whichever cameras and depths are known.

    A frame's camera counts as annotated only when both its intrinsics and
    pose are present.
    """

    images: np.ndarray  # N x C x H x W
    intrinsics: list[CameraIntrinsics | None] = field(default_factory=list)
    poses: list[CameraPose | None] = field(default_factory=list)
    depths: list[DepthObservation | None] = field(default_factory=list)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be N x C x H x W, got {self.images.shape}")
        n = self.images.shape[0]
        self.intrinsics = list(self.intrinsics) or [None] * n
        self.poses = list(self.poses) or [None] * n
        self.depths = list(self.depths) or [None] * n
        if not (len(self.intrinsics) == len(self.poses) == len(self.depths) == n):
            raise ValueError("per-frame annotation lists must match the frame count")
        for i, (k, g) in enumerate(zip(self.intrinsics, self.poses)):
            if (k is None) != (g is None):
                raise ValueError(f"frame {i}: camera annotation needs both intrinsics and pose")
        h, w = self.images.shape[-2:]
        for i, d in enumerate(self.depths):
            if d is not None and d.depth.shape != (h, w):
                raise ValueError(f"frame {i}: depth {d.depth.shape} does not match image {h}x{w}")

    @classmethod
    def images_only(cls, images: np.ndarray) -> FrameBundle:
        return cls(images)

    @property
    def num_frames(self) -> int:
        return self.images.shape[0]

    @property
    def camera_flags(self) -> np.ndarray:
        return np.array([g is not None for g in self.poses], dtype=np.int64)

    @property
    def depth_flags(self) -> np.ndarray:
        return np.array([d is not None for d in self.depths], dtype=np.int64)

    @property
    def has_aux(self) -> bool:
        return bool(self.camera_flags.any() or self.depth_flags.any())
