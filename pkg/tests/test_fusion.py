import numpy as np
import pytest
from scipy.stats import chi2_contingency

from auxrecon.fusion import (ModalityAssignment, SamplerConfig, apply_assignment, fixed_assignment,
                             sample_assignment, worker_rng)
from auxrecon.synthscene import SceneSpec, generate


def draws(n, s, p, seed=0):
    rng = np.random.default_rng(seed)
    cfg = SamplerConfig(p, seed)
    return [sample_assignment(s, cfg, rng) for _ in range(n)]


def test_p_one_is_always_rgb_only():
    for a in draws(500, 4, 1.0):
        assert a.rgb_only and not a.camera_flags.any() and not a.depth_flags.any()


def test_single_frame_camera_coin():
    q = np.array([a.num_cameras for a in draws(10000, 1, 0.0)])
    assert abs(q.mean() - 0.5) < 0.02


def test_four_frame_marginals():
    out = draws(50000, 4, 0.0, seed=3)
    q = np.array([a.num_cameras for a in out])
    for v in range(5):
        assert abs((q == v).mean() - 0.2) < 0.02
    dep = np.stack([a.depth_flags for a in out])
    np.testing.assert_allclose(dep.mean(axis=0), 0.5, atol=0.02)
    for a in out:
        k = a.num_cameras
        assert a.camera_flags[:k].all() and not a.camera_flags[k:].any()


def test_depth_subset_exchangeable_chi_square():
    dep = np.stack([a.depth_flags for a in draws(50000, 4, 0.0, seed=8)])
    ones = dep.sum(axis=0)
    table = np.stack([ones, len(dep) - ones])
    assert chi2_contingency(table)[1] > 0.01


def test_rgb_only_frequency():
    out = draws(50000, 4, 0.1, seed=1)
    assert abs(np.mean([a.rgb_only for a in out]) - 0.1) < 0.01


def test_streams_are_deterministic_and_worker_distinct():
    a = [x.describe() for x in draws(50, 4, 0.1, seed=5)]
    b = [x.describe() for x in draws(50, 4, 0.1, seed=5)]
    assert a == b
    assert worker_rng(1, 0).random() == worker_rng(1, 0).random()
    assert worker_rng(1, 0).random() != worker_rng(1, 1).random()


def test_sampler_config_bounds():
    with pytest.raises(ValueError):
        SamplerConfig(1.5)
    with pytest.raises(ValueError):
        sample_assignment(0, SamplerConfig(), np.random.default_rng())


def test_fixed_assignment_counts():
    a = fixed_assignment(4, 30, 70, np.array([2, 0, 3, 1]))
    np.testing.assert_array_equal(a.camera_flags, [1, 1, 0, 0])
    np.testing.assert_array_equal(a.depth_flags, [1, 0, 1, 1])
    assert fixed_assignment(10, 30, 50).num_cameras == 3
    assert fixed_assignment(10, 0, 100).num_depths == 10


@pytest.fixture(scope="module")
def scene():
    return generate(SceneSpec(seed=2, num_frames=4, height=16, width=16))


def test_apply_all_and_nothing(scene):
    empty = apply_assignment(scene, ModalityAssignment([0] * 4, [0] * 4))
    assert not empty.has_aux
    full = apply_assignment(scene, ModalityAssignment([1] * 4, [1] * 4))
    assert full.camera_flags.all() and full.depth_flags.all()
    assert full.poses[2] is scene.poses[2] and full.depths[3] is scene.depths[3]


def test_apply_mixed_pattern(scene):
    a = ModalityAssignment([1, 1, 0, 0], [0, 1, 0, 1])
    b = apply_assignment(scene, a)
    np.testing.assert_array_equal(b.camera_flags, a.camera_flags)
    np.testing.assert_array_equal(b.depth_flags, a.depth_flags)
    assert b.intrinsics[2] is None and b.intrinsics[1] is scene.intrinsics[1]


def test_apply_rejects_length_mismatch(scene):
    with pytest.raises(ValueError):
        apply_assignment(scene, ModalityAssignment([1, 0], [0, 0]))
