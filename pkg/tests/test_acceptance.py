"""Acceptance criteria, one test each.

Every test records a ``PASS``/``FAIL`` line with the measured numbers; the
lines are printed in the pytest terminal summary and when the module is run
as a script (``python tests/test_acceptance.py``).
"""
import filecmp
import os
import sys
import time

import numpy as np
import pytest

from tempofuse.geometry import SE3, lift, project, rotation_angle
from tempofuse.harness import pipeline
from tempofuse.harness.config import ExperimentConfig
from tempofuse.losses import (combine_terms, fusion_loss, huber, reset_loss, total_loss, LossConfig)
from tempofuse.metrics import epe, fepe, tepe, trace, validity_mask
from tempofuse.motion import FrameObs, align_previous, estimate_field, estimate_rigid_gn, Correspondences
from tempofuse.geometry import MemoryState
from tempofuse.scene_sim import NoiseModel, build_scene, perturb_disparity, random_scene_config, render_sample

sys.path.insert(0, os.path.dirname(__file__))
import oracles  # noqa: E402
from test_losses import max_fd_error, off_kink_points  # noqa: E402

LINES = {}


def record(n, title, ok, detail):
    line = f"criterion {n} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    LINES[n] = line
    print(line)
    assert ok, line


# --- 1 ----------------------------------------------------------------------

def test_c1_geometry_round_trip():
    rig = ExperimentConfig().scene.rig()
    rng = np.random.default_rng(1)
    n = 100_000
    u, v = rng.uniform(0, rig.width, n), rng.uniform(0, rig.height, n)
    d = rng.uniform(1, 210, n)
    t = time.perf_counter()
    pu, pv, pd = project(lift(u, v, d, rig), rig)
    elapsed = time.perf_counter() - t
    err = max(np.abs(pu - u).max(), np.abs(pv - v).max(), np.abs(pd - d).max())
    record(1, "lift/project round trip", err < 1e-9 and elapsed < 1.0,
           f"max error {err:.2e} (< 1e-9) over {n} points in {elapsed:.3f} s (< 1 s)")


# --- 2 ----------------------------------------------------------------------

def test_c2_gauss_newton_recovery():
    rig = ExperimentConfig().scene.rig()
    rng = np.random.default_rng(2)
    worst_r = worst_t = 0.0
    t = time.perf_counter()
    for _ in range(100):
        n = 64
        z = rng.uniform(3, 8, n)
        pts = lift(rng.uniform(0, rig.width, n), rng.uniform(0, rig.height, n), rig.fb / z, rig)
        axis = rng.normal(size=3)
        omega = axis / np.linalg.norm(axis) * rng.uniform(0, np.deg2rad(10))
        tdir = rng.normal(size=3)
        trans = tdir / np.linalg.norm(tdir) * rng.uniform(0, 0.1 * z.mean())
        true = SE3.exp(omega, trans)
        su, sv, sd = project(pts, rig)
        du, dv, dd = project(true.apply(pts), rig)
        T = estimate_rigid_gn(Correspondences(su, sv, sd, du, dv, dd, np.ones(n)), rig, K=16)
        worst_r = max(worst_r, rotation_angle(T.rotation.T @ true.rotation))
        worst_t = max(worst_t, float(np.linalg.norm(T.translation - true.translation)))
    elapsed = time.perf_counter() - t
    record(2, "Gauss-Newton recovery", worst_r < 1e-6 and worst_t < 1e-6 and elapsed < 5.0,
           f"worst rotation {worst_r:.2e} rad, worst translation {worst_t:.2e} m over 100 trials "
           f"in {elapsed:.2f} s (< 1e-6, < 1e-6, < 5 s)")


# --- 3 ----------------------------------------------------------------------

def test_c3_loss_suite():
    t = time.perf_counter()
    checks = [
        huber(1.0, 1.0) == 0, huber(0.5, 0.0, 1.0) == 0.125, huber(3.0, 0.0, 1.0) == 2.5,
        np.isclose(reset_loss(0.3, 10, 2, 5), 0.3), np.isclose(reset_loss(0.3, 1, 8, 5), 0.7),
        reset_loss(0.3, 4, 2, 5) == 0, reset_loss(0.9, 4, 2, 5) == 0,
        np.isclose(fusion_loss(0.8, 3, 1, 1), 0.8), np.isclose(fusion_loss(0.8, 1, 3, 1), 0.2),
        np.isclose(fusion_loss(0.7, 1.5, 1.2, 1, 0.2), 0.04),
        total_loss(4.0, 4.0, 0.3, 0.5, 2.0, 1.5) == 0,
        total_loss(1.0, 9.0, 0.3, 0.9, 40.0, 1.0, LossConfig(alpha_reg=0, alpha_disp=0, alpha_fusion=0, alpha_reset=0)) == 0,
        np.isclose(combine_terms(0.125, 0.04, 0.3), 0.465),
    ]
    fd = max_fd_error(off_kink_points(1000, seed=3))
    elapsed = time.perf_counter() - t
    record(3, "loss suite", all(checks) and fd < 1e-6 and elapsed < 1.0,
           f"{sum(map(bool, checks))}/{len(checks)} worked examples, max |subgradient - FD| {fd:.2e} "
           f"at 1000 points (< 1e-6), {elapsed:.2f} s (< 1 s)")


# --- 4 ----------------------------------------------------------------------

def test_c4_metric_oracle_equivalence():
    rng = np.random.default_rng(4)
    worst, ours = 0.0, 0.0
    for _ in range(20):
        g_prev, g_curr, sf, p_prev, p_curr, flow_pred, m_curr = oracles.random_frame(rng, 64)
        t = time.perf_counter()
        m_prev = validity_mask(g_prev, sf)
        m_c = m_curr & validity_mask(g_curr, sf)
        pairs = trace(sf[..., :2], p_prev, p_curr, g_prev, g_curr, m_prev, m_c)
        got = [*tepe(pairs), *epe(p_curr, g_curr, m_c), *fepe(flow_pred, sf, m_prev, "optical"),
               *fepe(flow_pred, sf, m_prev, "scene")]
        ours += time.perf_counter() - t
        ref_pairs = oracles.naive_pairs(sf, p_prev, p_curr, g_prev, g_curr, m_prev, m_c)
        ref = [*oracles.naive_tepe(ref_pairs), *oracles.naive_epe(p_curr, g_curr, m_c),
               *oracles.naive_fepe(flow_pred, sf, m_prev, 2), *oracles.naive_fepe(flow_pred, sf, m_prev, 3)]
        worst = max(worst, float(np.max(np.abs(np.subtract(got, ref)))),
                    float(not np.array_equal(m_prev, oracles.naive_validity(g_prev, sf))),
                    abs(len(pairs) - len(ref_pairs)))
    record(4, "metric oracle equivalence", worst < 1e-6 and ours < 5.0,
           f"max deviation from naive reference {worst:.2e} on 20 frames of 64x64 (< 1e-6), "
           f"library time {ours:.2f} s (< 5 s)")


# --- 5, 6, 8 -----------------------------------------------------------------

@pytest.fixture(scope="module")
def default_suite(tmp_path_factory):
    old = os.environ.get("TEMPOFUSE_THREADS")
    os.environ["TEMPOFUSE_THREADS"] = "1"
    try:
        cfg = ExperimentConfig()
        t = time.perf_counter()
        result = pipeline.run_suite(cfg, keep_maps=cfg.output.save_maps)
        out = tmp_path_factory.mktemp("run_a")
        paths = pipeline.write_artifacts(result, out)
        elapsed = time.perf_counter() - t
    finally:
        if old is None:
            del os.environ["TEMPOFUSE_THREADS"]
        else:
            os.environ["TEMPOFUSE_THREADS"] = old
    return result, out, paths, elapsed


def test_c5_trend_reproduction(default_suite):
    result, _, _, elapsed = default_suite
    r = {m: result.report(m) for m in result.methods}
    a = r["kalman"].tepe <= 0.9 * r["per_frame"].tepe
    b = r["learned"].tepe <= r["kalman"].tepe
    c = r["learned"].epe <= r["per_frame"].epe
    record(5, "trend reproduction", a and b and c and elapsed < 300,
           f"TEPE kalman {r['kalman'].tepe:.4f} <= 0.9 x per_frame {r['per_frame'].tepe:.4f} [{a}]; "
           f"TEPE learned {r['learned'].tepe:.4f} <= kalman [{b}]; EPE learned {r['learned'].epe:.4f} <= "
           f"per_frame {r['per_frame'].epe:.4f} [{c}]; suite + training {elapsed:.0f} s single-threaded (< 300 s)")


def test_c6_empirical_best_dominance(default_suite):
    result = default_suite[0]
    eb, pf, mo = (result.report(m) for m in ("empirical_best", "per_frame", "motion_only"))
    a = eb.tepe <= min(pf.tepe, mo.tepe)
    b = eb.epe <= min(pf.epe, mo.epe)
    record(6, "empirical-best dominance", a and b,
           f"TEPE {eb.tepe:.4f} <= min({pf.tepe:.4f}, {mo.tepe:.4f}) [{a}]; "
           f"EPE {eb.epe:.4f} <= min({pf.epe:.4f}, {mo.epe:.4f}) [{b}]")


# --- 7 ----------------------------------------------------------------------

def test_c7_oracle_motion_consistency():
    cfg = ExperimentConfig()
    rig = cfg.scene.rig()
    aligned_err, aligned_n, noisy_err, noisy_n = 0.0, 0, 0.0, 0
    for seed in pipeline.eval_seeds(cfg)[:3]:
        scene = build_scene(random_scene_config(seed, rig, 8))
        prev = render_sample(scene, 0)
        noisy_prev = perturb_disparity(prev.gt_disparity, cfg.noise.model(seed))
        for t in range(1, scene.num_frames):
            cur = render_sample(scene, t)
            est = estimate_field(FrameObs(prev.left, prev.gt_disparity, prev.valid),
                                 FrameObs(cur.left, cur.gt_disparity, cur.valid), rig, "oracle",
                                 gt_field=cur.gt_se3_field, gt_flow=cur.gt_flow)
            aligned = align_previous(MemoryState.from_disparity(prev.gt_disparity, valid=prev.valid), est, rig)
            pm = prev.valid & cur.covisible & validity_mask(prev.gt_disparity, cur.scene_flow_px)
            pairs = trace(cur.gt_flow, prev.gt_disparity, aligned.disparity, prev.gt_disparity, cur.gt_disparity,
                          pm, aligned.visibility & cur.valid)
            aligned_err += tepe(pairs)[0] * len(pairs)
            aligned_n += len(pairs)
            noisy_cur = perturb_disparity(cur.gt_disparity, cfg.noise.model(seed * 100 + t))
            pairs = trace(cur.gt_flow, noisy_prev, noisy_cur, prev.gt_disparity, cur.gt_disparity, pm, cur.valid)
            noisy_err += tepe(pairs)[0] * len(pairs)
            noisy_n += len(pairs)
            prev, noisy_prev = cur, noisy_cur
    a, n = aligned_err / aligned_n, noisy_err / noisy_n
    record(7, "oracle-motion consistency", a < 0.05 and n >= 0.5,
           f"aligned-stream TEPE {a:.4f} px (< 0.05) vs noisy per-frame TEPE {n:.4f} px (>= 0.5)")


# --- 8 ----------------------------------------------------------------------

def test_c8_determinism(default_suite, tmp_path):
    _, out_a, paths_a, _ = default_suite
    cfg = ExperimentConfig()
    again = pipeline.run_suite(cfg, keep_maps=cfg.output.save_maps)
    paths_b = pipeline.write_artifacts(again, tmp_path)
    rel_a = [os.path.relpath(p, out_a) for p in paths_a]
    rel_b = [os.path.relpath(p, tmp_path) for p in paths_b]
    differing = [r for r in rel_a if r not in rel_b or not filecmp.cmp(out_a / r, tmp_path / r, shallow=False)]
    ok = rel_a == rel_b and not differing
    record(8, "determinism", ok,
           f"{len(rel_a)} artifact files compared byte for byte, {len(differing)} differ"
           + (f" (first: {differing[0]})" if differing else ""))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
