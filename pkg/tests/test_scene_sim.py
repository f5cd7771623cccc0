import numpy as np
import pytest

from tempofuse.errors import FrameOutOfRange, InvalidConfig
from tempofuse.geometry import apply_se3_field, lift
from tempofuse.io import read_pfm, read_pgm
from tempofuse.motion import _bilinear
from tempofuse.scene_sim import (NoiseModel, SceneConfig, SceneObject, build_scene, perturb_disparity,
                                 random_scene_config, render_sample, save_sample)

from scenes import RIG, plane_scene, poses, texture, two_object_scene


def test_same_config_bit_identical():
    a = render_sample(build_scene(random_scene_config(7, RIG, 3)), 2)
    b = render_sample(build_scene(random_scene_config(7, RIG, 3)), 2)
    for name in ("left", "right", "gt_disparity", "gt_flow", "gt_scene_flow", "labels"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_background_only_scene():
    s = render_sample(build_scene(random_scene_config(3, RIG, 2, num_objects=0)), 1)
    assert np.all(s.labels == 0)


def test_depth_range_enforced():
    bg = SceneObject("plane", (), poses([0, 0, 0.2], [0, 0, 0], 2), texture(0, 1.0), infinite=True)
    with pytest.raises(InvalidConfig):
        build_scene(SceneConfig(RIG, bg, (), poses([0, 0, 0], [0, 0, 0], 2)))
    bg = SceneObject("plane", (), poses([0, 0, 60.0], [0, 0, 0], 2), texture(0, 1.0), infinite=True)
    with pytest.raises(InvalidConfig):
        build_scene(SceneConfig(RIG, bg, (), poses([0, 0, 0], [0, 0, 0], 2)))
    with pytest.raises(InvalidConfig):
        plane_scene(T=1)


def test_frame_out_of_range():
    with pytest.raises(FrameOutOfRange):
        render_sample(plane_scene(T=2), 2)


def test_static_scene_has_no_motion():
    cfg = random_scene_config(11, RIG, 2, static=True)
    s = render_sample(build_scene(cfg), 1)
    assert np.all(s.gt_flow == 0)
    np.testing.assert_allclose(s.gt_se3_field.rotation, np.broadcast_to(np.eye(3), s.gt_se3_field.rotation.shape),
                               atol=1e-12)
    np.testing.assert_allclose(s.gt_se3_field.translation, 0, atol=1e-12)


def test_plane_disparity_is_fb_over_z():
    s = render_sample(plane_scene(5.0), 0)
    np.testing.assert_allclose(s.gt_disparity, 10.0, atol=1e-9)


def test_approaching_plane_disparity_increases():
    scene = plane_scene(6.0, (0, 0, 0.1), T=3)
    prev = render_sample(scene, 0)
    for t in (1, 2):
        s = render_sample(scene, t)
        np.testing.assert_allclose(s.gt_disparity, RIG.fb / (6.0 - 0.1 * t), atol=1e-9)
        assert np.all(s.gt_disparity > prev.gt_disparity)
        assert np.all(s.gt_disparity_change[prev.valid] > 0)
        prev = s


def test_photometric_stereo_consistency():
    s = render_sample(two_object_scene(T=2), 0)
    u, v = RIG.pixel_grid()
    x = u - s.gt_disparity
    ok = s.valid & ~s.occluded & (x >= 0)
    err = np.abs(s.left - _bilinear(s.right, x, v))[ok]
    assert np.mean(err < 0.02) >= 0.95


def test_flow_and_disparity_change_consistent_with_field():
    scene = two_object_scene(T=2)
    s0, s1 = render_sample(scene, 0), render_sample(scene, 1)
    u, v = RIG.pixel_grid()
    Q = apply_se3_field(lift(u, v, np.where(s0.valid, s0.gt_disparity, 1.0), RIG), s1.gt_se3_field)
    u1 = RIG.fx * Q[..., 0] / Q[..., 2] + RIG.cx
    v1 = RIG.fy * Q[..., 1] / Q[..., 2] + RIG.cy
    m = s1.covisible
    assert np.abs(u1 - u - s1.gt_flow[..., 0])[m].max() < 1e-6
    assert np.abs(v1 - v - s1.gt_flow[..., 1])[m].max() < 1e-6
    traced = _bilinear(s1.gt_disparity, u + s1.gt_flow[..., 0], v + s1.gt_flow[..., 1])
    # bilinear sampling of a piecewise analytic disparity: compare on planes away from edges
    interior = m & (np.abs(traced - RIG.fb / Q[..., 2]) < 1e-3)
    assert interior.mean() > 0.5 * m.mean()
    assert np.abs(traced - s0.gt_disparity - s1.gt_disparity_change)[interior].max() < 1e-6


def test_noise_model_statistics():
    gt = np.full((316, 317), 20.0)
    assert np.array_equal(perturb_disparity(gt, NoiseModel(0.0, 0.0, 8.0, 0.0)), gt)
    jitter = perturb_disparity(gt, NoiseModel(0.5, 0.0, 8.0, 0.0, seed=1)) - gt
    assert 0.49 <= jitter.std() <= 0.51
    out = perturb_disparity(gt, NoiseModel(0.5, 0.01, 8.0, 0.0, seed=2)) - gt
    assert 0.008 <= np.mean(np.abs(out) > 5) <= 0.012
    with pytest.raises(InvalidConfig):
        NoiseModel(outlier_rate=1.5)


def test_save_sample_layout(tmp_path):
    s = render_sample(two_object_scene(T=2), 1)
    save_sample(s, tmp_path)
    np.testing.assert_allclose(read_pfm(tmp_path / "disp_0001.pfm"), s.gt_disparity.astype(np.float32))
    assert read_pfm(tmp_path / "flow_0001.pfm").shape == (120, 160, 3)
    assert read_pgm(tmp_path / "left_0001.pgm").shape == (120, 160)
    assert set(np.unique(read_pgm(tmp_path / "mask_0001.pgm"))) <= {0, 255}
