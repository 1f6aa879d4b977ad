"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line (visible even
without ``-s``) and then asserts. Criteria 8 and 9 train real models and
take several minutes each; they share one trained default model.
"""

import time

import numpy as np
import pytest

from auxrecon import harness
from auxrecon.backbone import ReconModel
from auxrecon.bundle import FrameBundle
from auxrecon.checkpoint import CorruptCheckpointError, decode, encode, load_checkpoint, save_checkpoint
from auxrecon.config import RunConfig
from auxrecon.fusion import ModalityAssignment, SamplerConfig, apply_assignment, sample_assignment, worker_rng
from auxrecon.geometry import CameraPose, normalize_poses, quaternion_to_rotation
from auxrecon.losses import LossConfig, LossBreakdown, build_targets, dense_loss, total_loss
from auxrecon.metrics import depth_metrics, nearest_neighbors, rra_rta_auc
from auxrecon.synthscene import generate
from auxrecon.tensor import Tensor

from loss_oracle import dense_loss_reference

SCHEDULE_PCTS = (0, 30, 50, 70, 100)
# desk-scale recipe for the trend and ablation checks; plain SGD at 1e-4 is
# too slow to separate the injection settings within 2k steps
TREND_CONFIG = RunConfig(optimizer="adam", lr=1e-3, steps=2000, train_scenes=100)


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {n} failed: {detail}"
    return emit


def random_rotation(rng) -> np.ndarray:
    q = rng.normal(size=4)
    return quaternion_to_rotation(q / np.linalg.norm(q))


def small_config(**kw) -> RunConfig:
    base = dict(dim=16, layers=1, heads=2, patch=4, registers=1, image_height=16, image_width=16,
                camera_head_layers=1, dtype="float64")
    base.update(kw)
    return RunConfig(**base)


# -- 1 -----------------------------------------------------------------------------------

def test_criterion_1_zero_init_transparency(report):
    start = time.perf_counter()
    cfg = RunConfig(dtype="float64")
    bare = ReconModel(cfg.backbone_config(), variant=None, seed=3)
    adapted = {v: ReconModel(cfg.backbone_config(), variant=v, seed=3) for v in harness.ABLATION_VARIANTS}
    rng = np.random.default_rng(1)
    worst = 0.0
    for i in range(20):
        s = int(rng.integers(1, 5))
        scene = generate(cfg.scene_spec(7000 + i, num_frames=s))
        bundle = FrameBundle.images_only(scene.images)
        ref = bare(bundle).arrays()
        for model in adapted.values():
            got = model(bundle).arrays()
            worst = max(worst, max(float(np.abs(got[k] - ref[k]).max()) for k in ref))
    elapsed = time.perf_counter() - start
    report(1, worst == 0.0 and elapsed < 10, f"max |diff| {worst:.1e} over 20 bundles x 4 variants, {elapsed:.1f}s")


# -- 2 -----------------------------------------------------------------------------------

def test_criterion_2_gradient_integrity(report):
    start = time.perf_counter()
    cfg = small_config()
    model = harness.build_model(cfg)
    rng = np.random.default_rng(2)
    # move the zero gates off zero so both adapters sit on the gradient path
    for name, p in model.named_parameters():
        if "zero_injections" in name or "zero_conv" in name:
            p.data[...] = rng.normal(scale=0.1, size=p.shape)
    scene = generate(cfg.scene_spec(321, num_frames=2))
    bundle = apply_assignment(scene, ModalityAssignment([1, 1], [1, 1]))
    targets = build_targets(scene)

    def loss():
        return total_loss(model(bundle), targets, LossConfig()).total

    model.zero_grad()
    loss().backward()
    params = dict(model.named_parameters())
    groups = {
        "embed": ["backbone.patch_weight", "backbone.pos_embed", "backbone.camera_token"],
        "aa_block": ["backbone.blocks.0.frame.attn.q.weight", "backbone.blocks.0.glob.fc1.weight"],
        "camera_adapter": ["adapter.camera.encoders.0.weight", "adapter.camera.zero_injections.1.weight"],
        "depth_adapter": ["adapter.depth.weight"],
        "camera_head": ["backbone.camera_head.out.weight"],
        "depth_head": ["backbone.depth_head.out.weight"],
        "pmap_head": ["backbone.pmap_head.out.weight"],
    }
    h = 1e-5
    worst, checked, smallest = 0.0, 0, np.inf
    for names in groups.values():
        for name in names:
            p = params[name]
            idx = tuple(int(rng.integers(n)) for n in p.shape)
            old = p.data[idx]
            p.data[idx] = old + h
            up = loss().item()
            p.data[idx] = old - h
            down = loss().item()
            p.data[idx] = old
            fd = (up - down) / (2 * h)
            ad = float(p.grad[idx])
            worst = max(worst, abs(fd - ad) / max(abs(fd), abs(ad), 1e-12))
            smallest = min(smallest, abs(ad))
            checked += 1
    elapsed = time.perf_counter() - start
    # a vanishing gradient would make the relative check vacuous
    ok = checked >= 10 and worst < 1e-4 and smallest > 0 and elapsed < 60
    report(2, ok, f"{checked} entries over {len(groups)} modules, max rel err {worst:.2e}, "
                  f"min |grad| {smallest:.1e}, {elapsed:.1f}s")


# -- 3 -----------------------------------------------------------------------------------

def test_criterion_3_pose_normalization_invariance(report):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 9))
        poses = [CameraPose(random_rotation(rng), rng.normal(size=3) * 3) for _ in range(n)]
        # world change x = c R x' + d seen from camera-from-world poses
        r, d, c = random_rotation(rng), rng.normal(size=3) * 5, float(rng.uniform(0.1, 10))
        moved = [CameraPose(p.rotation @ r, (p.rotation @ d + p.translation) / c) for p in poses]
        a, _ = normalize_poses(poses)
        b, _ = normalize_poses(moved)
        worst = max(worst, max(float(np.abs(pa.matrix - pb.matrix).max()) for pa, pb in zip(a, b)))
    elapsed = time.perf_counter() - start
    report(3, worst < 1e-9 and elapsed < 1, f"max |diff| {worst:.1e} over 100 sets, {elapsed:.2f}s")


# -- 4 -----------------------------------------------------------------------------------

def test_criterion_4_loss_oracle(report):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        channels = int(rng.choice([1, 3]))
        pred = rng.normal(size=(channels, 4, 4))
        gt = rng.normal(size=(channels, 4, 4))
        mask = (rng.random((4, 4)) > 0.3).astype(float)
        conf = 1 + rng.exponential(size=(4, 4))
        alpha = float(rng.uniform(0, 1))
        p = Tensor(pred[0]) if channels == 1 else Tensor(pred)
        g = gt[0] if channels == 1 else gt
        got = dense_loss(p, g, mask, Tensor(conf), LossConfig(alpha)).item()
        worst = max(worst, abs(got - dense_loss_reference(pred, gt, mask, conf, alpha)))

    cfg = small_config()
    model = harness.build_model(cfg)
    sum_err = 0.0
    for seed in range(5):
        scene = generate(cfg.scene_spec(900 + seed, num_frames=3))
        b: LossBreakdown = total_loss(model(FrameBundle.images_only(scene.images)), build_targets(scene))
        v = b.values()
        sum_err = max(sum_err, abs(v["total"] - (v["camera"] + v["depth"] + v["pmap"])))
    ok = worst <= 1e-12 and sum_err <= 1e-12
    report(4, ok, f"max |dense - reference| {worst:.1e} on 100 instances, |total - sum| {sum_err:.1e}")


# -- 5 -----------------------------------------------------------------------------------

def test_criterion_5_metric_oracles(report):
    rng = np.random.default_rng(5)
    samples = 100_000
    ts = (np.arange(samples) + 0.5) * 30.0 / samples
    auc_err = 0.0
    for _ in range(10):
        rot, trans = rng.uniform(0, 40, 60), rng.uniform(0, 40, 60)
        worst = np.maximum(rot, trans)
        riemann = (worst[None, :] < ts[:, None]).mean(axis=1).mean()
        auc_err = max(auc_err, abs(rra_rta_auc(rot, trans)[2] - riemann))

    a, b = rng.normal(size=(200, 3)), rng.normal(size=(200, 3))
    dist, _ = nearest_neighbors(a, b)
    brute = np.array([min(float(np.sqrt(((q - r) ** 2).sum())) for r in b) for q in a])
    nn_exact = bool(np.array_equal(dist, brute))

    gt = rng.uniform(0.5, 5, (4, 8, 8))
    scale_ok = True
    for c in (0.5, 2.0, 10.0):
        abs_rel, delta = depth_metrics(c * gt, gt)
        scale_ok &= abs(abs_rel) < 1e-12 and delta == 1.0
    ok = auc_err < 1e-4 and nn_exact and scale_ok
    report(5, ok, f"AUC err {auc_err:.1e}, NN exact {nn_exact}, depth scale invariant {scale_ok}")


# -- 6 -----------------------------------------------------------------------------------

def test_criterion_6_sampler_distribution(report):
    rng = worker_rng(6)
    cfg = SamplerConfig(0.1)
    draws = [sample_assignment(4, cfg, rng) for _ in range(50_000)]
    rgb = np.mean([d.rgb_only for d in draws])
    mixed = [d for d in draws if not d.rgb_only]
    q = np.bincount([d.num_cameras for d in mixed], minlength=5) / len(mixed)
    prefix = all(np.array_equal(d.camera_flags, np.arange(4) < d.num_cameras) for d in draws)
    depth = np.mean([d.depth_flags for d in mixed], axis=0)
    ok = abs(rgb - 0.1) <= 0.01 and np.all(np.abs(q - 0.2) <= 0.02) and prefix and np.all(np.abs(depth - 0.5) <= 0.02)
    report(6, bool(ok), f"rgb_only {rgb:.4f}, Q freqs {np.round(q, 4).tolist()}, prefix {prefix}, "
                        f"depth marginals {np.round(depth, 4).tolist()}")


# -- 7 -----------------------------------------------------------------------------------

def test_criterion_7_training_sanity(report):
    cfg = RunConfig(optimizer="sgd", steps=200, train_scenes=20)
    scenes = harness.build_scene_pool(cfg, cfg.train_scenes, cfg.scene_seed)
    _, log_a = harness.train(cfg, scenes=scenes)
    _, log_b = harness.train(cfg, scenes=scenes)
    first, last = harness.first_last_mean(log_a.rows)
    reduction = 1 - last / first
    same = log_a.rows == log_b.rows
    report(7, reduction >= 0.5 and same,
           f"step-1 loss {first:.1f} -> last-10 mean {last:.1f} ({reduction:.0%} reduction), deterministic {same}")


# -- 8 / 9 -------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def trend_setup():
    start = time.perf_counter()
    cfg = TREND_CONFIG
    scenes = harness.build_scene_pool(cfg, cfg.train_scenes, cfg.scene_seed)
    seqs = harness.build_eval_set(cfg)
    model, _ = harness.train(cfg, scenes=scenes)
    return cfg, scenes, seqs, model, time.perf_counter() - start


def monotone_with_one_inversion(values, increasing: bool) -> bool:
    steps = np.diff(values) if increasing else -np.diff(values)
    return int((steps < 0).sum()) <= 1


@pytest.mark.slow
def test_criterion_8_injection_trend(report, trend_setup):
    cfg, _, seqs, model, train_time = trend_setup
    start = time.perf_counter()
    depth_curve = [harness.evaluate_setting(model, seqs, 0, d).abs_rel for d in SCHEDULE_PCTS]
    cam_curve = [harness.evaluate_setting(model, seqs, c, 0).auc30 for c in SCHEDULE_PCTS]
    elapsed = train_time + time.perf_counter() - start
    ok = (depth_curve[-1] <= depth_curve[0] and cam_curve[-1] >= cam_curve[0]
          and monotone_with_one_inversion(depth_curve, increasing=False)
          and monotone_with_one_inversion(cam_curve, increasing=True)
          and elapsed < 30 * 60)
    report(8, ok, f"{cfg.steps} steps / {cfg.train_scenes} scenes; abs_rel by depth% "
                  f"{np.round(depth_curve, 4).tolist()}; auc30 by camera% {np.round(cam_curve, 4).tolist()}; "
                  f"{elapsed / 60:.1f} min")


@pytest.mark.slow
def test_criterion_9_ablation_direction(report, trend_setup):
    cfg, scenes, seqs, default_model, _ = trend_setup
    default_full = harness.evaluate_setting(default_model, seqs, 100, 100).abs_rel
    default_none = harness.evaluate_setting(default_model, seqs, 0, 0).auc30
    dzc, _ = harness.train(cfg.replace(variant="depth_zero_conv"), scenes=scenes)
    dzc_full = harness.evaluate_setting(dzc, seqs, 100, 100).abs_rel
    rep, _ = harness.train(cfg.replace(variant="replace"), scenes=scenes)
    rep_none = harness.evaluate_setting(rep, seqs, 0, 0).auc30
    ok = dzc_full >= default_full and rep_none <= default_none
    report(9, ok, f"full-aux abs_rel depth_zero_conv {dzc_full:.5f} vs default {default_full:.5f}; "
                  f"no-aux auc30 replace {rep_none:.4f} vs default {default_none:.4f}")


# -- 10 ----------------------------------------------------------------------------------

def test_criterion_10_persistence(report, tmp_path):
    cfg = small_config(dtype="float32", steps=3, train_scenes=2, scene_frames=4, frames=3, top_n=3)
    model, _ = harness.train(cfg)
    first = save_checkpoint(model, tmp_path / "a.ckpt").read_bytes()
    reloaded = harness.build_model(cfg)
    reloaded.load_state_dict(load_checkpoint(tmp_path / "a.ckpt"))
    second = save_checkpoint(reloaded, tmp_path / "b.ckpt").read_bytes()
    identical = first == second and encode(decode(first).items()) == first
    missed = 0
    blob = bytearray(first)
    for i in range(len(blob)):
        blob[i] ^= 0xFF
        try:
            decode(bytes(blob))
            missed += 1
        except CorruptCheckpointError:
            pass
        blob[i] ^= 0xFF
    report(10, identical and missed == 0,
           f"re-save byte-identical {identical}, undetected flips {missed} of {len(blob)} bytes")
