"""Camera L1 loss and confidence-weighted dense losses with gradient terms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import Predictions
from .geometry import CameraPose, encode_camera, normalize_scene_gt, unproject
from .synthscene import SceneSample
from .tensor import Tensor, abs_, log


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.2
    grad_term: bool = True

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")


@dataclass
class LossBreakdown:
    camera: Tensor
    depth: Tensor
    pmap: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {k: float(getattr(self, k).data) for k in ("camera", "depth", "pmap", "total")}


@dataclass
class SequenceTargets:
    """Supervision for one sequence, in the first frame's coordinates and
    divided by the mean norm of all valid points."""

    cameras: np.ndarray  # N x 9
    depth: np.ndarray  # N x H x W
    mask: np.ndarray  # N x H x W
    pmap: np.ndarray  # N x 3 x H x W
    poses: list[CameraPose]
    scale: float


def build_targets(scene: SceneSample) -> SequenceTargets:
    first_inv = scene.poses[0].inverse()
    rel = [g.compose(first_inv) for g in scene.poses]
    rel[0] = CameraPose.identity()
    pmaps = [unproject(o, k, g) for o, k, g in zip(scene.depths, scene.intrinsics, rel)]
    pmaps, depths, trans, scale = normalize_scene_gt(
        pmaps, [o.depth * (o.mask > 0.5) for o in scene.depths], [g.translation for g in rel])
    poses = [CameraPose(g.rotation, t) for g, t in zip(rel, trans)]
    cams = np.stack([encode_camera(k, g).as_array() for k, g in zip(scene.intrinsics, poses)])
    return SequenceTargets(
        cameras=cams,
        depth=np.stack(depths),
        mask=np.stack([pm.mask for pm in pmaps]),
        pmap=np.stack([pm.points.transpose(2, 0, 1) for pm in pmaps]),
        poses=poses,
        scale=scale,
    )


def camera_loss(pred: Tensor, gt: np.ndarray) -> Tensor:
    """Sum of per-frame L1 distances; each target quaternion is flipped to the prediction's hemisphere."""
    gt = np.asarray(gt, dtype=pred.dtype)
    if pred.shape != gt.shape:
        raise ValueError(f"camera prediction {pred.shape} vs target {gt.shape}")
    gt = gt.copy()
    flip = (pred.data[:, :4] * gt[:, :4]).sum(axis=1) < 0
    gt[flip, :4] *= -1
    return abs_(pred - gt).sum()


def _forward_diffs(x, axis: int):
    if axis == -1:
        return x[..., :, 1:] - x[..., :, :-1]
    return x[..., 1:, :] - x[..., :-1, :]


def dense_loss(pred: Tensor, gt: np.ndarray, mask: np.ndarray, conf: Tensor, cfg: LossConfig = LossConfig()) -> Tensor:
    """Confidence-aware L1 over valid pixels.

    ``pred``/``gt`` are ``[..., C, H, W]`` (or ``[..., H, W]`` for one
    channel); ``mask`` and ``conf`` are ``[..., H, W]`` and broadcast over
    channels. Gradient residuals use forward differences restricted to
    pixel pairs that are both valid, weighted by the confidence of the first
    pixel of the pair.
    """
    gt = np.asarray(gt, dtype=pred.dtype)
    mask = np.asarray(mask, dtype=pred.dtype)
    if pred.shape != gt.shape:
        raise ValueError(f"dense prediction {pred.shape} vs target {gt.shape}")
    if conf.shape != mask.shape or pred.shape[-2:] != conf.shape[-2:]:
        raise ValueError(f"confidence {conf.shape} / mask {mask.shape} do not fit prediction {pred.shape}")
    pred_c, gt_c = pred, gt
    if pred.ndim == conf.ndim:
        conf_c, mask_c = conf, mask
    elif pred.ndim == conf.ndim + 1:
        lead, (h, w) = conf.shape[:-2], conf.shape[-2:]
        conf_c = conf.reshape(*lead, 1, h, w)
        mask_c = mask.reshape(*lead, 1, h, w)
    else:
        raise ValueError(f"prediction {pred.shape} and confidence {conf.shape} ranks are incompatible")

    loss = (abs_((pred_c - gt_c) * conf_c) * mask_c).sum()
    if cfg.grad_term:
        for axis in (-1, -2):
            dp = _forward_diffs(pred_c, axis)
            dg = _forward_diffs(gt_c, axis)
            pair = mask_c[..., :, 1:] * mask_c[..., :, :-1] if axis == -1 else mask_c[..., 1:, :] * mask_c[..., :-1, :]
            cw = conf_c[..., :, :-1] if axis == -1 else conf_c[..., :-1, :]
            loss = loss + (abs_((dp - dg) * cw) * pair).sum()
    if cfg.alpha:
        loss = loss - (log(conf) * mask).sum() * cfg.alpha
    return loss


def total_loss(preds: Predictions, targets: SequenceTargets, cfg: LossConfig = LossConfig()) -> LossBreakdown:
    """Full supervision on every frame, whatever subset of frames had auxiliary inputs."""
    cam = camera_loss(preds.cameras, targets.cameras)
    depth = dense_loss(preds.depth, targets.depth, targets.mask, preds.depth_conf, cfg)
    pmap = dense_loss(preds.pmap, targets.pmap, targets.mask, preds.pmap_conf, cfg)
    return LossBreakdown(cam, depth, pmap, cam + depth + pmap)
