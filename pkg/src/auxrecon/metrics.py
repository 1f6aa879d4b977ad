"""Depth, relative-pose and point-cloud reconstruction metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import CameraPose, rotation_geodesic


class EmptyInputError(ValueError):
    pass


METRIC_KEYS = ("abs_rel", "delta_125", "rra5", "rta5", "auc30",
               "acc_mean", "acc_med", "comp_mean", "comp_med", "nc_mean", "nc_med")


@dataclass
class MetricsReport:
    abs_rel: float = float("nan")
    delta_125: float = float("nan")
    rra5: float = float("nan")
    rta5: float = float("nan")
    auc30: float = float("nan")
    acc_mean: float = float("nan")
    acc_med: float = float("nan")
    comp_mean: float = float("nan")
    comp_med: float = float("nan")
    nc_mean: float = float("nan")
    nc_med: float = float("nan")

    def to_dict(self) -> dict[str, float]:
        return {k: float(v) for k, v in asdict(self).items()}

    def to_json(self, **extra) -> str:
        return json.dumps({**self.to_dict(), **extra}, indent=2, sort_keys=False)

    @classmethod
    def average(cls, reports: Sequence[MetricsReport]) -> MetricsReport:
        if not reports:
            raise EmptyInputError("no reports to average")
        return cls(**{k: float(np.mean([getattr(r, k) for r in reports])) for k in METRIC_KEYS})


# -- depth ----------------------------------------------------------------------

def median_scale(pred: np.ndarray, gt: np.ndarray) -> float:
    mp = float(np.median(pred))
    return float(np.median(gt)) / mp if mp > 0 else 1.0


def depth_metrics(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None) -> tuple[float, float]:
    """Abs Rel and delta<1.25 after median-ratio alignment of ``pred`` to ``gt``."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    valid = gt > 0
    if mask is not None:
        valid &= np.asarray(mask) > 0.5
    if not valid.any():
        raise EmptyInputError("no valid depth pixels")
    p, g = pred[valid], gt[valid]
    p = p * median_scale(p, g)
    abs_rel = float(np.mean(np.abs(p - g) / g))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.maximum(p / g, g / p)
    delta = float(np.mean(ratio < 1.25))
    return abs_rel, delta


# -- poses ----------------------------------------------------------------------------

def _direction_angle_deg(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if nb < 1e-9:
        return 0.0
    if na < 1e-9:
        return 90.0
    c = float(np.dot(a, b) / (na * nb))
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def pairwise_pose_errors(pred: Sequence[CameraPose], gt: Sequence[CameraPose]) -> tuple[np.ndarray, np.ndarray]:
    """Rotation and translation-direction errors (degrees) for every unordered pair."""
    if len(pred) != len(gt):
        raise ValueError(f"{len(pred)} predicted vs {len(gt)} ground-truth poses")
    if len(gt) < 2:
        raise EmptyInputError("pose metrics need at least two cameras")
    rot, trans = [], []
    n = len(gt)
    for i in range(n):
        for j in range(i + 1, n):
            rel_p = pred[j].compose(pred[i].inverse())
            rel_g = gt[j].compose(gt[i].inverse())
            rot.append(math.degrees(rotation_geodesic(rel_p.rotation, rel_g.rotation)))
            trans.append(_direction_angle_deg(rel_p.translation, rel_g.translation))
    return np.array(rot), np.array(trans)


def rra_rta_auc(rot_err: np.ndarray, trans_err: np.ndarray, tau_deg: float = 5.0,
                auc_max_deg: float = 30.0) -> tuple[float, float, float]:
    """Accuracies at ``tau_deg`` and the normalised area under the
    max(rot, trans)-error accuracy curve on [0, auc_max_deg].

    The curve is a step function of the sorted errors, so the integral is
    exact: each pair contributes ``max(0, auc_max - err) / auc_max``.
    """
    rot_err = np.asarray(rot_err, dtype=np.float64)
    trans_err = np.asarray(trans_err, dtype=np.float64)
    if rot_err.size == 0:
        raise EmptyInputError("no pairs")
    rra = float(np.mean(rot_err < tau_deg))
    rta = float(np.mean(trans_err < tau_deg))
    worst = np.maximum(rot_err, trans_err)
    auc = float(np.mean(np.clip(auc_max_deg - worst, 0.0, None)) / auc_max_deg)
    return rra, rta, auc


# -- point clouds ----------------------------------------------------------------------------

def nearest_neighbors(query: np.ndarray, ref: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact nearest ``ref`` point for each ``query`` point: (distances, indices)."""
    query = np.asarray(query, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if len(query) == 0 or len(ref) == 0:
        raise EmptyInputError("nearest-neighbour search on an empty cloud")
    _, idx = cKDTree(ref).query(query, k=1)
    dist = np.sqrt(((query - ref[idx]) ** 2).sum(axis=-1))
    return dist, idx


def estimate_normals(points: np.ndarray, k: int = 10) -> np.ndarray:
    """Unit normals from a PCA plane fit over each point's k nearest neighbours."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n < 3:
        return np.tile([0.0, 0.0, 1.0], (n, 1))
    k = min(k, n)
    _, idx = cKDTree(points).query(points, k=k)
    nbrs = points[idx]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    _, vecs = np.linalg.eigh(cov)
    return vecs[:, :, 0]


def reconstruction_metrics(pred: np.ndarray, gt: np.ndarray, k_normals: int = 10) -> dict[str, float]:
    """Accuracy (pred->gt), completeness (gt->pred) and normal consistency.

    Normal consistency averages |n_pred . n_gt| over nearest-neighbour
    matches in both directions.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    acc, acc_idx = nearest_neighbors(pred, gt)
    comp, comp_idx = nearest_neighbors(gt, pred)
    n_pred = estimate_normals(pred, k_normals)
    n_gt = estimate_normals(gt, k_normals)
    nc1 = np.abs(np.einsum("ij,ij->i", n_pred, n_gt[acc_idx]))
    nc2 = np.abs(np.einsum("ij,ij->i", n_gt, n_pred[comp_idx]))
    return {
        "acc_mean": float(acc.mean()),
        "acc_med": float(np.median(acc)),
        "comp_mean": float(comp.mean()),
        "comp_med": float(np.median(comp)),
        "nc_mean": float((nc1.mean() + nc2.mean()) / 2),
        "nc_med": float((np.median(nc1) + np.median(nc2)) / 2),
    }


def align_cloud_scale(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Median-ratio scale alignment of a point cloud about the origin."""
    return pred * median_scale(np.linalg.norm(pred, axis=-1), np.linalg.norm(gt, axis=-1))
