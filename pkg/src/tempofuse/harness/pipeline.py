"""Online experiment pipeline: synthetic sequences, per-method fusion loops, training and reports.

Every sequence is processed strictly frame by frame through ``FrameProvider``,
which refuses out-of-order access.  Motion between consecutive frames is
estimated once from the stereo stream and shared by all stateful methods;
each method keeps its own memory state.
"""
from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import CausalityError, ConfigError
from ..fusion import (KalmanState, LogisticWeightModel, TrainConfig, TrainingSample, VarianceCalibration,
                      build_cues, empirical_best, fuse, kalman_update, load_model, motion_disparity,
                      predict_weights, train_weight_model)
from ..geometry import MemoryState
from ..io import write_pfm
from ..metrics import (FrameReport, MetricReport, aggregate, epe, fepe, tepe, to_csv, to_json, trace,
                       validity_mask)
from ..motion import FrameObs, MotionEstimate, align_previous, estimate_field, flow_from_field
from ..scene_sim import Scene, SceneSample, build_scene, random_scene_config, render_sample
from ..stereo import StereoResult, block_match, disparity_confidence, noisy_oracle
from .config import ExperimentConfig

MOTION_METHODS = ("motion_only", "kalman", "learned", "empirical_best")
TEST_MODULUS = 5


# --- seeds ----------------------------------------------------------------

def eval_seeds(cfg: ExperimentConfig) -> list[int]:
    """Scene seeds of the test split (all congruent to 0 mod 5)."""
    base = cfg.seed * 1000
    return [base + TEST_MODULUS * i for i in range(cfg.scene.num_sequences)]


def train_seeds(cfg: ExperimentConfig) -> list[int]:
    base = cfg.seed * 1000
    out, k = [], 0
    while len(out) < cfg.train.num_sequences:
        if (base + k) % TEST_MODULUS:
            out.append(base + k)
        k += 1
    return out


def _frame_seed(scene_seed: int, t: int) -> int:
    return int(np.random.SeedSequence([scene_seed, t]).generate_state(1)[0])


def make_scene(cfg: ExperimentConfig, scene_seed: int, num_frames: int | None = None) -> Scene:
    s = cfg.scene
    return build_scene(random_scene_config(scene_seed, s.rig(), num_frames or s.num_frames, s.num_objects,
                                           s.camera_speed, s.object_speed, s.static))


# --- online frame access --------------------------------------------------

@dataclass(eq=False)
class Frame:
    sample: SceneSample
    stereo: StereoResult

    @property
    def obs(self) -> FrameObs:
        return FrameObs(self.sample.left, self.stereo.disparity, self.stereo.valid, self.sample.labels)


class FrameProvider:
    """Yields frames of one sequence in order; any other access raises ``CausalityError``."""

    def __init__(self, cfg: ExperimentConfig, scene: Scene, scene_seed: int):
        self.cfg = cfg
        self.scene = scene
        self.scene_seed = scene_seed
        self._next = 0

    def __len__(self):
        return self.scene.num_frames

    def get(self, t: int) -> Frame:
        if t != self._next:
            raise CausalityError(f"frame {t} requested, but the online cursor is at {self._next}")
        if t >= self.scene.num_frames:
            raise CausalityError(f"frame {t} is past the end of the sequence ({self.scene.num_frames} frames)")
        self._next += 1
        sample = render_sample(self.scene, t)
        return Frame(sample, compute_stereo(self.cfg, sample, _frame_seed(self.scene_seed, t)))

    def __iter__(self):
        for t in range(self._next, self.scene.num_frames):
            yield self.get(t)


def compute_stereo(cfg: ExperimentConfig, sample: SceneSample, seed: int) -> StereoResult:
    if cfg.stereo.source == "noisy_oracle":
        return noisy_oracle(sample.left, sample.right, sample.gt_disparity, sample.valid, cfg.noise.model(seed),
                            sample.labels)
    res = block_match(sample.left, sample.right, cfg.stereo.max_disparity)
    res.valid &= sample.valid
    return res


def estimate_motion(cfg: ExperimentConfig, prev: Frame, curr: Frame) -> MotionEstimate:
    return estimate_field(prev.obs, curr.obs, cfg.scene.rig(), cfg.motion.mode, cfg.motion.K,
                          gt_field=curr.sample.gt_se3_field, gt_flow=curr.sample.gt_flow)


def _stereo_state(stereo: StereoResult, disparity=None) -> MemoryState:
    d = stereo.disparity if disparity is None else disparity
    return MemoryState.from_disparity(d, stereo.left_features, stereo.valid & (d > 0))


# --- methods --------------------------------------------------------------

@dataclass(eq=False)
class MethodContext:
    model: LogisticWeightModel | None = None
    calibration: VarianceCalibration | None = None
    process_noise: float = 0.25


@dataclass(eq=False)
class StepOutput:
    disparity: np.ndarray
    state: MemoryState
    maps: dict = field(default_factory=dict)


def step_method(method: str, frame: Frame, prev_state: MemoryState | None, estimate: MotionEstimate | None,
                ctx: MethodContext, rig) -> StepOutput:
    """Advance one method by one frame.  ``prev_state`` is that method's memory at t-1."""
    s = frame.stereo
    d_s = s.disparity
    if method == "per_frame":
        return StepOutput(d_s, _stereo_state(s))
    if method == "motion_only":
        # previous stereo prediction carried into the current frame
        if prev_state is None:
            return StepOutput(d_s, _stereo_state(s))
        aligned = align_previous(prev_state, estimate, rig)
        return StepOutput(motion_disparity(aligned, d_s), _stereo_state(s))
    if method == "kalman":
        meas_var = ctx.calibration(disparity_confidence(s.left_features, s.right_features, d_s)[..., 1])
        if prev_state is None:
            state = KalmanState(d_s, meas_var)
            gain = np.ones_like(d_s)
        else:
            aligned = align_previous(prev_state, estimate, rig)
            vis = aligned.visibility.astype(bool)
            prior = KalmanState(np.where(vis, aligned.disparity, d_s),
                                np.where(vis, aligned.features[..., 0], meas_var))
            state, gain = kalman_update(prior, d_s, meas_var, ctx.process_noise, vis)
        mem = MemoryState.from_disparity(state.mean, state.variance[..., None], s.valid)
        return StepOutput(state.mean, mem, {"gain": gain})
    if method == "learned":
        if prev_state is None:
            return StepOutput(d_s, _stereo_state(s))
        aligned = align_previous(prev_state, estimate, rig)
        weights = predict_weights(ctx.model, build_cues(aligned, s))
        d_f = fuse(d_s, aligned.disparity, weights, aligned.visibility)
        return StepOutput(d_f, _stereo_state(s, d_f), {"w_reset": weights.w_reset, "w_fusion": weights.w_fusion})
    if method == "empirical_best":
        if prev_state is None:
            return StepOutput(d_s, _stereo_state(s))
        aligned = align_previous(prev_state, estimate, rig)
        d_f = empirical_best(d_s, motion_disparity(aligned, d_s), frame.sample.gt_disparity)
        return StepOutput(d_f, _stereo_state(s, d_f))
    raise ConfigError(f"unknown fusion method {method!r}")


# --- metrics --------------------------------------------------------------

def _epe_mask(sample: SceneSample) -> np.ndarray:
    return sample.valid & (sample.gt_disparity >= 1.0) & (sample.gt_disparity <= 210.0)


def _pair_mask(prev: SceneSample, curr: SceneSample) -> np.ndarray:
    return prev.valid & curr.covisible & validity_mask(prev.gt_disparity, curr.scene_flow_px)


def frame_report(t: int, pred, prev_pred, curr: SceneSample, prev: SceneSample | None,
                 flow_stats: dict | None) -> FrameReport:
    rep = FrameReport(frame=t)
    m = _epe_mask(curr)
    if m.any():
        rep.epe, rep.d3px = epe(pred, curr.gt_disparity, m)
        rep.n_pixels = int(m.sum())
    if prev is not None:
        pairs = trace(curr.gt_flow, prev_pred, pred, prev.gt_disparity, curr.gt_disparity,
                      _pair_mask(prev, curr), m)
        if len(pairs):
            rep.tepe, rep.tepe_3px, rep.tepe_r, rep.tepe_r_100pct = tepe(pairs)
            rep.n_pairs = len(pairs)
    if flow_stats:
        for k, v in flow_stats.items():
            setattr(rep, k, v)
    return rep


def flow_stats(estimate: MotionEstimate, prev: Frame, curr: Frame, rig) -> dict:
    mask = _pair_mask(prev.sample, curr.sample)
    if not mask.any():
        return {}
    flow, sflow = flow_from_field(prev.stereo.disparity, prev.stereo.valid, estimate.field, rig)
    d0 = prev.stereo.disparity
    z1 = np.where(mask, rig.fb / np.maximum(d0, 1e-9), 1.0) + sflow[..., 2]
    d1 = rig.fb / np.where(z1 > 0, z1, np.inf)
    sf_px = np.concatenate([flow, (d1 - d0)[..., None]], axis=-1)
    of, of1 = fepe(estimate.flow, curr.sample.gt_flow, mask, "optical")
    sf, sf1 = fepe(sf_px, curr.sample.scene_flow_px, mask, "scene")
    sfm, _ = fepe(sflow, curr.sample.gt_scene_flow, mask, "scene")
    return {"fepe_of": of, "fepe_of_1px": of1, "fepe_sf": sf, "fepe_sf_1px": sf1, "fepe_sf_m": sfm,
            "n_flow": int(mask.sum())}


# --- one sequence ---------------------------------------------------------

@dataclass(eq=False)
class SequenceResult:
    seed: int
    reports: dict  # method -> MetricReport
    maps: dict = field(default_factory=dict)  # relative path -> array (only when saving)


def run_sequence(cfg: ExperimentConfig, scene_seed: int, ctx: MethodContext, keep_maps: bool = False,
                 provider: FrameProvider | None = None) -> SequenceResult:
    """Online loop over one sequence for every configured method."""
    rig = cfg.scene.rig()
    methods = cfg.fusion.methods
    provider = provider or FrameProvider(cfg, make_scene(cfg, scene_seed), scene_seed)
    states = {m: None for m in methods}
    prev_pred = {m: None for m in methods}
    frames = {m: [] for m in methods}
    maps = {}
    prev = None
    for t in range(len(provider)):
        frame = provider.get(t)
        estimate = estimate_motion(cfg, prev, frame) if prev is not None else None
        fstats = flow_stats(estimate, prev, frame, rig) if estimate is not None else None
        for m in methods:
            out = step_method(m, frame, states[m], estimate, ctx, rig)
            frames[m].append(frame_report(t, out.disparity, prev_pred[m], frame.sample,
                                          prev.sample if prev is not None else None,
                                          fstats if m in MOTION_METHODS else None))
            if keep_maps:  # float32 is what PFM stores anyway
                maps[f"{m}/disp_{t:04d}.pfm"] = out.disparity.astype(np.float32)
                for name, arr in out.maps.items():
                    maps[f"{m}/{name}_{t:04d}.pfm"] = np.asarray(arr, dtype=np.float32)
            states[m] = out.state
            prev_pred[m] = out.disparity
        prev = frame
    return SequenceResult(scene_seed, {m: aggregate(frames[m]) for m in methods}, maps)


# --- training -------------------------------------------------------------

def collect_training_samples(cfg: ExperimentConfig, model: LogisticWeightModel | None = None,
                             length: int = 2) -> list[TrainingSample]:
    """Supervised frames from the training split.

    Memory restarts from the stereo estimate every ``length - 1`` frames;
    in between, history is produced by ``model`` (needed when length > 2).
    """
    rig = cfg.scene.rig()
    ctx = MethodContext(model=model)
    samples = []
    for seed in train_seeds(cfg):
        provider = FrameProvider(cfg, make_scene(cfg, seed, cfg.train.frames_per_sequence), seed)
        prev, state = None, None
        for t in range(len(provider)):
            frame = provider.get(t)
            s = frame.stereo
            restart = t % (length - 1) == 0
            if prev is not None:
                estimate = estimate_motion(cfg, prev, frame)
                aligned = align_previous(state, estimate, rig)
                cues = build_cues(aligned, s)
                mask = _epe_mask(frame.sample) & s.valid
                samples.append(TrainingSample.from_maps(cues, s.disparity, aligned.disparity, aligned.visibility,
                                                        frame.sample.gt_disparity, mask))
                if not restart and model is not None:
                    w = predict_weights(model, cues)
                    d_f = fuse(s.disparity, aligned.disparity, w, aligned.visibility)
                    state = _stereo_state(s, d_f)
                else:
                    state = _stereo_state(s)
            else:
                state = _stereo_state(s)
            prev = frame
    return samples


def fit_calibration(cfg: ExperimentConfig, frames_per_sequence: int = 4) -> VarianceCalibration:
    """Affine map from the stereo confidence centre channel to squared error, on the training split."""
    conf, err = [], []
    for seed in train_seeds(cfg):
        provider = FrameProvider(cfg, make_scene(cfg, seed, frames_per_sequence), seed)
        for frame in provider:
            s = frame.stereo
            m = _epe_mask(frame.sample) & s.valid
            c = disparity_confidence(s.left_features, s.right_features, s.disparity)[..., 1]
            conf.append(c[m])
            err.append((s.disparity - frame.sample.gt_disparity)[m] ** 2)
    return VarianceCalibration.fit(np.concatenate(conf), np.concatenate(err))


@dataclass(eq=False)
class TrainResult:
    model: LogisticWeightModel
    curves: list  # (stage sequence length, [losses])


def train(cfg: ExperimentConfig) -> TrainResult:
    tc = TrainConfig(cfg.train.epochs, cfg.train.batch_size, cfg.train.learning_rate, cfg.train.pixels_per_frame,
                     cfg.seed)
    model = train_weight_model(collect_training_samples(cfg, None, 2), cfg.loss, tc)
    curves = [(2, list(model.loss_curve))]
    for length in range(3, cfg.train.sequence_length + 1):
        model = train_weight_model(collect_training_samples(cfg, model, length), cfg.loss, tc, init=model)
        curves.append((length, list(model.loss_curve)))
    return TrainResult(model, curves)


def loss_curve_csv(result: TrainResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sequence_length", "epoch", "loss"])
    for length, curve in result.curves:
        for i, loss in enumerate(curve):
            # epoch 0 = before training; the last row is the full-data loss after rounding
            w.writerow([length, i if i < len(curve) - 1 else "final", repr(loss)])
    return buf.getvalue()


# --- suites ---------------------------------------------------------------

def worker_count(n_jobs: int) -> int:
    raw = os.environ.get("TEMPOFUSE_THREADS", "")
    if raw.strip():
        try:
            cap = int(raw)
        except ValueError as exc:
            raise ConfigError(f"TEMPOFUSE_THREADS must be a positive integer, got {raw!r}") from exc
        if cap < 1:
            raise ConfigError(f"TEMPOFUSE_THREADS must be a positive integer, got {raw!r}")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_jobs))


def _run_job(args):
    cfg, seed, ctx, keep_maps = args
    return run_sequence(cfg, seed, ctx, keep_maps)


@dataclass(eq=False)
class SuiteResult:
    config: ExperimentConfig
    sequences: list  # SequenceResult in seed order
    train_result: TrainResult | None = None

    @property
    def methods(self):
        return self.config.fusion.methods

    def report(self, method: str) -> MetricReport:
        frames = [fr for seq in self.sequences for fr in seq.reports[method].frames]
        return aggregate(frames)

    def reports(self) -> dict:
        return {m: self.report(m) for m in self.methods}


def prepare_context(cfg: ExperimentConfig) -> tuple[MethodContext, TrainResult | None]:
    ctx = MethodContext(process_noise=cfg.fusion.process_noise)
    trained = None
    if "kalman" in cfg.fusion.methods:
        ctx.calibration = fit_calibration(cfg)
    if "learned" in cfg.fusion.methods:
        if cfg.fusion.model_path:
            ctx.model = load_model(cfg.fusion.model_path)
        else:
            trained = train(cfg)
            ctx.model = trained.model
    return ctx, trained


def run_suite(cfg: ExperimentConfig, keep_maps: bool = False) -> SuiteResult:
    ctx, trained = prepare_context(cfg)
    seeds = eval_seeds(cfg)
    jobs = [(cfg, s, ctx, keep_maps) for s in seeds]
    n = worker_count(len(jobs))
    if n == 1:
        results = [_run_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n) as ex:
            results = list(ex.map(_run_job, jobs))
    return SuiteResult(cfg, results, trained)


def comparison_rows(result: SuiteResult) -> list[tuple[str, MetricReport]]:
    """Methods sorted by TEPE ascending (NaN last, then by name)."""
    rows = [(m, result.report(m)) for m in result.methods]
    return sorted(rows, key=lambda r: (math.isnan(r[1].tepe), r[1].tepe if not math.isnan(r[1].tepe) else 0, r[0]))


TABLE_COLUMNS = ("tepe", "tepe_3px", "tepe_r", "tepe_r_100pct", "epe", "d3px", "fepe_of", "fepe_sf")


def comparison_markdown(rows) -> str:
    head = "| method | " + " | ".join(TABLE_COLUMNS) + " |"
    sep = "|---" * (len(TABLE_COLUMNS) + 1) + "|"
    lines = [head, sep]
    for method, rep in rows:
        vals = [getattr(rep, c) for c in TABLE_COLUMNS]
        lines.append(f"| {method} | " + " | ".join("-" if math.isnan(v) else f"{v:.4f}" for v in vals) + " |")
    return "\n".join(lines) + "\n"


def comparison_csv(rows) -> str:
    return to_csv((m, "all", rep) for m, rep in rows)


def write_artifacts(result: SuiteResult, out_dir) -> list[str]:
    """Reports, config echo, maps and (if trained here) the loss curve.  Returns written paths."""
    import json

    os.makedirs(out_dir, exist_ok=True)
    written = []

    def put(rel, text):
        path = os.path.join(out_dir, rel)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        written.append(path)

    cfg_echo = result.config.to_dict()
    put("config.json", json.dumps(cfg_echo, indent=2, sort_keys=True) + "\n")
    reports = {m: result.report(m) for m in result.methods}
    for seq in result.sequences:
        for m in result.methods:
            reports[f"{m}/seq_{seq.seed}"] = seq.reports[m]
    payload = to_json(reports)
    put("report.json", '{\n  "config": ' + json.dumps(cfg_echo, sort_keys=True) + ',\n  "reports": '
        + payload.replace("\n", "\n  ") + "\n}\n")
    rows = [(m, "all", result.report(m)) for m in result.methods]
    rows += [(m, f"seq_{seq.seed}", seq.reports[m]) for seq in result.sequences for m in result.methods]
    put("report.csv", to_csv(rows))
    if result.train_result is not None:
        put("loss_curve.csv", loss_curve_csv(result.train_result))
    for seq in result.sequences:
        for rel, arr in sorted(seq.maps.items()):
            path = os.path.join(out_dir, f"seq_{seq.seed}", rel)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            write_pfm(path, arr)
            written.append(path)
    return written
