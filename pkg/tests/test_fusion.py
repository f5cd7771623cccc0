import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from tempofuse.errors import ChannelOrderMismatch, DimensionMismatch, NonFiniteLoss, NonPositiveVariance
from tempofuse.fusion import (CUE_CHANNELS, CUE_NAMES, CueStack, KalmanState, LogisticWeightModel, TrainConfig,
                              TrainingSample, VarianceCalibration, WeightMaps, build_cues, cross_correlation,
                              empirical_best, fuse, kalman_update, load_model, model_bytes, predict_weights,
                              save_model, self_correlation, train_weight_model)
from tempofuse.geometry import MemoryState
from tempofuse.losses import LossConfig
from tempofuse.motion import FrameObs, align_previous, estimate_field
from tempofuse.scene_sim import render_sample
from tempofuse.stereo import noisy_oracle
from tempofuse.scene_sim import NoiseModel

from scenes import RIG, plane_scene, two_object_scene

OFFS = [(dy, dx) for dy in (-2, 0, 2) for dx in (-2, 0, 2)]


def naive_corr(a, b, offsets, kind, vis=None, sentinel=0.0):
    a = a[..., None] if a.ndim == 2 else a
    b = b[..., None] if b.ndim == 2 else b
    h, w, c = a.shape
    out = np.zeros((h, w, len(offsets)))
    for i in range(h):
        for j in range(w):
            for k, (dy, dx) in enumerate(offsets):
                y, x = min(max(i + dy, 0), h - 1), min(max(j + dx, 0), w - 1)
                if vis is not None and not vis[y, x]:
                    out[i, j, k] = sentinel
                    continue
                vals = [abs(a[i, j, q] - b[y, x, q]) if kind == "l1" else a[i, j, q] * b[y, x, q] for q in range(c)]
                out[i, j, k] = sum(vals) / c
    return out


def test_self_correlation_examples():
    assert np.all(self_correlation(np.full((6, 7), 12.0)) == 0)
    step = np.zeros((10, 10))
    step[:, 5:] = 5.0
    sc = self_correlation(step)
    ring = [o for o in OFFS if o != (0, 0)]
    j = 4  # left of the edge: neighbours at dx=+2 cross it
    for k, (dy, dx) in enumerate(ring):
        assert sc[5, j, k] == (5.0 if dx == 2 else 0.0)


def test_correlations_match_naive_reference():
    rng = np.random.default_rng(0)
    d = rng.uniform(1, 50, (32, 32))
    f, g = rng.random((32, 32, 4)), rng.random((32, 32, 4))
    vis = rng.random((32, 32)) > 0.2
    ring = [o for o in OFFS if o != (0, 0)]
    np.testing.assert_allclose(self_correlation(d, kind="l1"), naive_corr(d, d, ring, "l1"), atol=1e-6)
    np.testing.assert_allclose(self_correlation(f, kind="dot"), naive_corr(f, f, ring, "dot"), atol=1e-6)
    np.testing.assert_allclose(cross_correlation(d, d[::-1], vis, kind="l1"),
                               naive_corr(d, d[::-1], OFFS, "l1", vis, 210.0), atol=1e-6)
    np.testing.assert_allclose(cross_correlation(f, g, vis, kind="dot"),
                               naive_corr(f, g, OFFS, "dot", vis, 0.0), atol=1e-6)


def test_cross_correlation_examples():
    rng = np.random.default_rng(1)
    f = rng.random((12, 12, 3))
    assert np.all(cross_correlation(f[..., 0], f[..., 0])[..., 4] == 0)
    # unnormalised dot: the centre is the maximum for equal-norm features
    unit = f / np.linalg.norm(f, axis=2, keepdims=True)
    dot = cross_correlation(unit, unit, kind="dot")
    assert np.all(dot[..., 4] >= dot.max(axis=2) - 1e-12)
    none = cross_correlation(f[..., 0], f[..., 0], np.zeros((12, 12)))
    assert np.all(none == 210.0)
    with pytest.raises(ValueError):
        self_correlation(f, window=2)


@pytest.fixture(scope="module")
def static_cues():
    scene = plane_scene(6.0, T=2)
    s0, s1 = render_sample(scene, 0), render_sample(scene, 1)
    exact = NoiseModel(0.0, 0.0)
    st0 = noisy_oracle(s0.left, s0.right, s0.gt_disparity, s0.valid, exact)
    st1 = noisy_oracle(s1.left, s1.right, s1.gt_disparity, s1.valid, exact)
    est = estimate_field(FrameObs(s0.left, st0.disparity, st0.valid), FrameObs(s1.left, st1.disparity, st1.valid),
                         RIG, "oracle", gt_field=s1.gt_se3_field)
    prev = MemoryState.from_disparity(st0.disparity, st0.left_features, st0.valid)
    return build_cues(align_previous(prev, est, RIG), st1), s1


def test_build_cues_static_scene(static_cues):
    cues, _ = static_cues
    assert cues.data.shape == (120, 160, CUE_CHANNELS) and CUE_CHANNELS == 53
    assert len(set(CUE_NAMES)) == 53
    assert np.abs(cues.channel("cross_disp_0_0")).max() < 1e-9
    assert cues.channel("visibility").mean() > 0.99


def test_build_cues_occlusion_sentinel():
    scene = two_object_scene(T=2)
    s0, s1 = render_sample(scene, 0), render_sample(scene, 1)
    exact = NoiseModel(0.0, 0.0)
    st0 = noisy_oracle(s0.left, s0.right, s0.gt_disparity, s0.valid, exact)
    st1 = noisy_oracle(s1.left, s1.right, s1.gt_disparity, s1.valid, exact)
    est = estimate_field(FrameObs(s0.left, st0.disparity, st0.valid), FrameObs(s1.left, st1.disparity, st1.valid),
                         RIG, "oracle", gt_field=s1.gt_se3_field)
    aligned = align_previous(MemoryState.from_disparity(st0.disparity, st0.left_features), est, RIG)
    cues = build_cues(aligned, st1)
    hole = ~aligned.visibility
    assert hole.sum() > 20
    assert np.all(cues.channel("visibility")[hole] == 0)
    assert np.all(cues.channel("cross_disp_0_0")[hole] == 210.0)
    assert np.all(cues.channel("cross_feat_0_0")[hole] == 0.0)


def test_fuse_examples():
    one, zero = np.ones((2, 2)), np.zeros((2, 2))
    d_s, d_m = np.full((2, 2), 10.0), np.full((2, 2), 12.0)
    assert np.all(fuse(d_s, d_m, WeightMaps(one, one)) == d_m)
    assert np.all(fuse(d_s, d_m, WeightMaps(zero, np.full((2, 2), 0.7))) == d_s)
    assert np.all(fuse(d_s, d_m, WeightMaps(one, one * 0.5)) == 11.0)
    assert np.all(fuse(d_s, d_m, WeightMaps(one, one), visibility=zero) == d_s)
    with pytest.raises(DimensionMismatch):
        fuse(d_s, d_m[:1], WeightMaps(one, one))


maps = arrays(np.float64, (4, 4), elements=st.floats(-1e3, 1e3))
unit = arrays(np.float64, (4, 4), elements=st.floats(0, 1))


@given(maps, maps, unit, unit)
def test_fuse_is_convex(d_s, d_m, w_r, w_f):
    out = fuse(d_s, d_m, WeightMaps(w_r, w_f))
    assert np.all(out >= np.minimum(d_s, d_m)) and np.all(out <= np.maximum(d_s, d_m))


@given(maps, maps, maps)
def test_empirical_best_properties(d_s, d_m, d_gt):
    out = empirical_best(d_s, d_m, d_gt)
    assert np.all(np.abs(out - d_gt) <= np.minimum(np.abs(d_s - d_gt), np.abs(d_m - d_gt)))
    assert np.array_equal(empirical_best(d_s, d_s.copy(), d_gt), d_s)
    assert np.array_equal(empirical_best(d_s, d_gt, d_gt), d_gt)


def test_kalman_examples():
    prior = KalmanState(np.full(3, 10.0), np.full(3, 2.0))
    post, gain = kalman_update(prior, np.full(3, 14.0), 2.0, 0.0)
    assert np.all(post.mean == 12.0) and np.all(gain == 0.5)
    post, _ = kalman_update(prior, np.full(3, 14.0), 1e300, 0.0)
    np.testing.assert_allclose(post.mean, prior.mean)
    state, last = prior, np.inf
    for _ in range(20):
        state, _ = kalman_update(state, np.full(3, 11.0), 1.0, 0.0)
        assert np.all(state.variance < last)
        last = state.variance.max()
    assert last < 0.06
    post, gain = kalman_update(prior, np.full(3, 14.0), 1.0, 0.25, visible=np.array([1, 0, 1]))
    assert post.mean[1] == 14.0 and gain[1] == 1.0
    with pytest.raises(NonPositiveVariance):
        KalmanState(np.zeros(2), np.array([1.0, 0.0]))


@given(arrays(np.float64, 5, elements=st.floats(1e-3, 1e3)), arrays(np.float64, 5, elements=st.floats(1e-3, 1e3)))
def test_kalman_variance_bound(prior_var, meas_var):
    post, _ = kalman_update(KalmanState(np.zeros(5), prior_var), np.ones(5), meas_var, 0.0)
    assert np.all(post.variance <= np.maximum(prior_var, meas_var) * (1 + 1e-12))


def test_variance_calibration_fit():
    c = np.linspace(0, 1, 50)
    cal = VarianceCalibration.fit(c, 0.3 + 2.0 * c)
    assert cal.offset == pytest.approx(0.3) and cal.slope == pytest.approx(2.0)
    assert VarianceCalibration(-5.0, 0.0)(0.5) > 0


def random_cues(rng, h=16, w=16):
    return CueStack(rng.normal(0, 3, (h, w, CUE_CHANNELS)))


def test_zero_model_outputs_half_and_range():
    rng = np.random.default_rng(2)
    cues = random_cues(rng)
    wm = predict_weights(LogisticWeightModel.zeros(), cues)
    assert np.all(wm.w_reset == 0.5) and np.all(wm.w_fusion == 0.5)
    m = LogisticWeightModel.initial(rng)
    m.a_r, m.a_f = rng.normal(0, 5, 16), rng.normal(0, 5, 16)
    wm = predict_weights(m, cues)
    assert np.all((wm.w_reset > 0) & (wm.w_reset < 1)) and np.all((wm.w_fusion > 0) & (wm.w_fusion < 1))
    with pytest.raises(ChannelOrderMismatch):
        predict_weights(m, CueStack(cues.data, order_hash=1))


def dataset(rng, e_m_of, n_frames=4, h=16, w=16):
    """Frames whose motion errors follow ``e_m_of(e_s)``; cues carry the errors so the model can learn."""
    out = []
    for _ in range(n_frames):
        d_gt = rng.uniform(5, 40, (h, w))
        e_s = rng.uniform(0, 1.5, (h, w))
        e_m = e_m_of(e_s)
        d_s, d_m = d_gt + e_s, d_gt - e_m
        data = rng.normal(0, 1, (h, w, CUE_CHANNELS))
        out.append(TrainingSample(CueStack(data), e_m, e_s, d_s, d_m, d_gt, np.ones((h, w), bool)))
    return out


CFG = TrainConfig(epochs=60, batch_size=256, learning_rate=0.05, pixels_per_frame=0, seed=0)


def mean_weights(model, samples):
    wm = [predict_weights(model, s.cues) for s in samples]
    return np.mean([m.w_reset for m in wm]), np.mean([m.w_fusion for m in wm])


def test_training_learns_to_reset_bad_motion():
    samples = dataset(np.random.default_rng(3), lambda e_s: e_s + 20.0)
    w_r, _ = mean_weights(train_weight_model(samples, LossConfig(), CFG), samples)
    assert w_r < 0.1


def test_training_learns_to_trust_good_motion():
    samples = dataset(np.random.default_rng(4), lambda e_s: np.zeros_like(e_s) + 0.0 * e_s)
    for s in samples:
        s.e_s += 8.0
        s.d_s += 8.0
    w_r, w_f = mean_weights(train_weight_model(samples, LossConfig(), CFG), samples)
    assert w_r > 0.9 and w_f > 0.9


def test_training_dead_zone_keeps_fusion_near_half():
    samples = dataset(np.random.default_rng(5), lambda e_s: e_s)
    _, w_f = mean_weights(train_weight_model(samples, LossConfig(), CFG), samples)
    assert 0.4 <= w_f <= 0.6


def test_zero_epochs_keeps_initialisation():
    samples = dataset(np.random.default_rng(6), lambda e_s: e_s + 20.0)
    model = train_weight_model(samples, LossConfig(), TrainConfig(epochs=0))
    w_r, w_f = mean_weights(model, samples)
    assert w_r == 0.5 and w_f == 0.5
    assert len(model.loss_curve) == 2


def test_divergence_raises():
    samples = dataset(np.random.default_rng(7), lambda e_s: e_s + 20.0)
    for s in samples:
        s.cues.data[:] = np.nan
    with pytest.raises(NonFiniteLoss):
        train_weight_model(samples, LossConfig(), TrainConfig(epochs=1))


def test_model_file_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    samples = dataset(rng, lambda e_s: e_s + 20.0)
    model = train_weight_model(samples, LossConfig(), TrainConfig(epochs=2, seed=1))
    assert model.num_params == 53 * 2 + 16 * 53 + 16 + 17 * 2
    save_model(model, tmp_path / "m.tfw")
    blob = (tmp_path / "m.tfw").read_bytes()
    assert blob[:4] == b"TFW1" and len(blob) == 16 + 4 * model.num_params
    back = load_model(tmp_path / "m.tfw")
    np.testing.assert_array_equal(back.to_vector(), model.to_vector())
    assert model_bytes(back) == blob
    again = train_weight_model(samples, LossConfig(), TrainConfig(epochs=2, seed=1))
    assert model_bytes(again) == blob
    with pytest.raises(ChannelOrderMismatch):
        load_model(tmp_path / "m.tfw", expected_hash=123)
