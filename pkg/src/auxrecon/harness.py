"""Training loop, injection sweeps and the adapter ablation on synthetic scenes."""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .backbone import Predictions, ReconModel
from .config import RunConfig
from .fusion import apply_assignment, fixed_assignment, sample_assignment, worker_rng
from .geoadapter import AdapterVariant
from .geometry import CameraPose, decode_camera
from .losses import build_targets, total_loss
from .metrics import (MetricsReport, align_cloud_scale, depth_metrics, pairwise_pose_errors,
                      reconstruction_metrics, rra_rta_auc)
from .optim import build_optimizer, clip_grad_norm
from .synthscene import SceneSample, generate, sample_frames
from .tensor import no_grad

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("OVGT_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn: Callable, items: Sequence) -> list:
    workers = worker_count()
    if workers == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def build_scene_pool(cfg: RunConfig, count: int, seed_base: int, num_frames: int | None = None) -> list[SceneSample]:
    return _map(lambda s: generate(cfg.scene_spec(s, num_frames)), [seed_base + i for i in range(count)])


def build_model(cfg: RunConfig, variant: str | None = None) -> ReconModel:
    return ReconModel(cfg.backbone_config(), variant or cfg.variant, seed=cfg.seed)


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)
    assignments: list[str] = field(default_factory=list)

    def write_losses(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "camera", "depth", "pmap", "total"])
            for r in self.rows:
                w.writerow([r["step"], repr(r["camera"]), repr(r["depth"]), repr(r["pmap"]), repr(r["total"])])

    def write_assignments(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            f.write("step,item,rgb_only,camera_flags,depth_flags\n")
            for line in self.assignments:
                f.write(line + "\n")


def train(cfg: RunConfig, model: ReconModel | None = None, scenes: list[SceneSample] | None = None,
          progress: Callable[[int, dict], None] | None = None) -> tuple[ReconModel, TrainLog]:
    """Stochastic multimodal training.

    Each step draws ``batch_size`` sequences (pose-similar frames from a
    random pool scene), assigns auxiliary inputs at random, and sums the
    per-sequence losses averaged over the batch.
    """
    model = model or build_model(cfg)
    scenes = scenes if scenes is not None else build_scene_pool(cfg, cfg.train_scenes, cfg.scene_seed)
    params = model.parameters()
    opt = build_optimizer(cfg.optimizer, params, cfg.lr, cfg.momentum, (cfg.beta1, cfg.beta2), cfg.weight_decay)
    rng = worker_rng(cfg.seed, 0)
    sampler = cfg.sampler_config()
    loss_cfg = cfg.loss_config()
    out = TrainLog()
    for step in range(1, cfg.steps + 1):
        # overflow shows up as a non-finite loss below, which aborts the run
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            row = _train_step(model, cfg, scenes, rng, sampler, loss_cfg, params, opt, out, step)
        out.rows.append(row)
        if progress is not None:
            progress(step, row)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("step %d total %.4f (cam %.4f depth %.4f pmap %.4f)",
                     step, row["total"], row["camera"], row["depth"], row["pmap"])
    return model, out


def _train_step(model, cfg, scenes, rng, sampler, loss_cfg, params, opt, out: TrainLog, step: int) -> dict:
    """One optimiser update over ``cfg.batch_size`` sampled sequences; returns the logged row."""
    model.zero_grad()
    batch_total = None
    parts = np.zeros(4)
    for item in range(cfg.batch_size):
        scene = scenes[int(rng.integers(len(scenes)))]
        s = int(rng.integers(cfg.min_frames, cfg.frames + 1)) if cfg.variable_frames else cfg.frames
        seq = scene.subset(sample_frames(scene.poses, s, cfg.top_n, rng, cfg.pose_trans_weight))
        assignment = sample_assignment(s, sampler, rng)
        out.assignments.append(f"{step},{item},{assignment.describe()}")
        breakdown = total_loss(model(apply_assignment(seq, assignment)), build_targets(seq), loss_cfg)
        batch_total = breakdown.total if batch_total is None else batch_total + breakdown.total
        parts += [breakdown.values()[k] for k in ("camera", "depth", "pmap", "total")]
    loss = batch_total * (1.0 / cfg.batch_size)
    parts /= cfg.batch_size
    if not np.all(np.isfinite(parts)):
        raise TrainingDivergedError(f"non-finite loss at step {step}: {parts.tolist()}")
    loss.backward()
    if cfg.clip_grad > 0:
        clip_grad_norm(params, cfg.clip_grad)
    opt.step()
    return {"step": step, "camera": float(parts[0]), "depth": float(parts[1]),
            "pmap": float(parts[2]), "total": float(parts[3])}


# -- evaluation ------------------------------------------------------------------------

@dataclass
class EvalSequence:
    scene: SceneSample
    depth_order: np.ndarray


def build_eval_set(cfg: RunConfig) -> list[EvalSequence]:
    """Held-out scenes (disjoint seed range) with fixed frames and a fixed depth-injection order."""
    pool = build_scene_pool(cfg, cfg.eval_scenes, cfg.eval_seed, max(cfg.scene_frames, cfg.eval_frames))
    seqs = []
    for i, scene in enumerate(pool):
        rng = np.random.default_rng([cfg.eval_seed, i])
        idx = sample_frames(scene.poses, cfg.eval_frames, max(cfg.top_n, cfg.eval_frames - 1), rng,
                            cfg.pose_trans_weight)
        n = cfg.eval_frames
        order = rng.permutation(n) if cfg.eval_depth_subset == "random" else np.arange(n)
        seqs.append(EvalSequence(scene.subset(idx), order))
    return seqs


def predicted_poses(preds: Predictions, width: int, height: int) -> list[CameraPose]:
    return [decode_camera(v, width, height)[1] for v in preds.cameras.data.astype(np.float64)]


def sequence_metrics(preds: Predictions, seq: SceneSample) -> MetricsReport:
    targets = build_targets(seq)
    h, w = targets.depth.shape[-2:]
    abs_rel, delta = depth_metrics(preds.depth.data, targets.depth, targets.mask)
    rot, trans = pairwise_pose_errors(predicted_poses(preds, w, h), targets.poses) if len(targets.poses) > 1 \
        else (np.zeros(1), np.zeros(1))
    rra, rta, auc = rra_rta_auc(rot, trans, 5.0, 30.0)
    valid = targets.mask > 0.5
    pred_pts = preds.pmap.data.astype(np.float64).transpose(0, 2, 3, 1)[valid]
    gt_pts = targets.pmap.transpose(0, 2, 3, 1)[valid]
    recon = reconstruction_metrics(align_cloud_scale(pred_pts, gt_pts), gt_pts)
    return MetricsReport(abs_rel=abs_rel, delta_125=delta, rra5=rra, rta5=rta, auc30=auc, **recon)


def evaluate_setting(model: ReconModel, seqs: Sequence[EvalSequence], camera_pct: float,
                     depth_pct: float) -> MetricsReport:
    def run(es: EvalSequence) -> MetricsReport:
        n = es.scene.num_frames
        assignment = fixed_assignment(n, camera_pct, depth_pct, es.depth_order)
        with no_grad():
            preds = model(apply_assignment(es.scene, assignment))
        return sequence_metrics(preds, es.scene)

    # graph recording is a module-level switch, so keep forwards on one thread
    return MetricsReport.average([run(es) for es in seqs])


def run_sweep(model: ReconModel, cfg: RunConfig, seqs: Sequence[EvalSequence] | None = None,
              schedule: Sequence[tuple[int, int]] | None = None) -> list[tuple[int, int, MetricsReport]]:
    seqs = seqs if seqs is not None else build_eval_set(cfg)
    schedule = schedule if schedule is not None else cfg.eval_schedule
    if not schedule:
        raise ValueError("evaluation schedule is empty")
    return [(c, d, evaluate_setting(model, seqs, c, d)) for c, d in schedule]


def write_sweep(results, out_dir: str | Path, subset_mode: str) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    keys = list(MetricsReport().to_dict())
    with open(out / "sweep.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["camera_pct", "depth_pct"] + keys)
        for c, d, rep in results:
            vals = rep.to_dict()
            w.writerow([c, d] + [repr(vals[k]) for k in keys])
            (out / f"metrics_cam{c:03d}_dep{d:03d}.json").write_text(
                rep.to_json(camera_pct=c, depth_pct=d, depth_subset=subset_mode, camera_subset="prefix"))
    return out / "sweep.csv"


# -- ablation --------------------------------------------------------------------------

ABLATION_VARIANTS = (AdapterVariant.DEFAULT, AdapterVariant.REPLACE, AdapterVariant.ONE_LAYER,
                     AdapterVariant.DEPTH_ZERO_CONV)
ABLATION_METRICS = ("abs_rel", "delta_125", "rra5", "rta5", "auc30")


def ablate(cfg: RunConfig, scenes: list[SceneSample] | None = None,
           seqs: Sequence[EvalSequence] | None = None) -> list[dict]:
    """Train every adapter variant with the same seed and budget, then score each without and with full aux."""
    scenes = scenes if scenes is not None else build_scene_pool(cfg, cfg.train_scenes, cfg.scene_seed)
    seqs = seqs if seqs is not None else build_eval_set(cfg)
    rows = []
    for variant in ABLATION_VARIANTS:
        vcfg = cfg.replace(variant=variant.value)
        model, _ = train(vcfg, scenes=scenes)
        for aux, pct in (("none", 0), ("full", 100)):
            rep = evaluate_setting(model, seqs, pct, pct)
            rows.append({"variant": variant.value, "aux": aux,
                         **{k: getattr(rep, k) for k in ABLATION_METRICS}})
    return rows


def write_ablation(rows: list[dict], path: str | Path) -> Path:
    p = Path(path)
    with open(p, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["variant", "aux", *ABLATION_METRICS])
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return p


def zero_injection_report(state: dict[str, np.ndarray]) -> list[tuple[str, float]]:
    """Frobenius norm of every zero-initialised gate, i.e. how far training moved it."""
    return [(name, float(np.linalg.norm(arr.astype(np.float64))))
            for name, arr in state.items() if "zero_injections" in name or "zero_conv" in name]


def first_last_mean(rows: list[dict], key: str = "total", window: int = 10) -> tuple[float, float]:
    return rows[0][key], float(np.mean([r[key] for r in rows[-window:]]))


__all__ = [
    "TrainingDivergedError", "train", "build_model", "build_scene_pool", "build_eval_set",
    "evaluate_setting", "run_sweep", "write_sweep", "ablate", "write_ablation",
    "zero_injection_report", "sequence_metrics", "first_last_mean",
]
