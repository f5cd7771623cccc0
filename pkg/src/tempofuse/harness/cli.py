"""Command line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import glob
import json
import os
import re
import sys

from ..errors import ConfigError, NumericError, TempofuseError
from ..fusion import save_model
from ..io import read_pfm, read_pgm
from ..metrics import FrameReport, aggregate, epe, fepe, tepe, to_json, trace, validity_mask
from . import pipeline
from .config import load_config

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _load(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "out", None):
        cfg = cfg.replace(out_dir=args.out)
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    result = pipeline.run_suite(cfg, keep_maps=cfg.output.save_maps)
    pipeline.write_artifacts(result, cfg.out_dir)
    print(pipeline.comparison_markdown(pipeline.comparison_rows(result)), end="")
    print(f"artifacts written to {cfg.out_dir}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load(args)
    if len(cfg.fusion.methods) < 2:
        raise ConfigError(f"{cfg.source}: fusion.methods: compare needs at least two methods")
    result = pipeline.run_suite(cfg, keep_maps=False)
    rows = pipeline.comparison_rows(result)
    table = pipeline.comparison_markdown(rows)
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "table.md"), "w", encoding="utf-8") as f:
        f.write(table)
    with open(os.path.join(cfg.out_dir, "table.csv"), "w", encoding="utf-8", newline="\n") as f:
        f.write(pipeline.comparison_csv(rows))
    print(table, end="")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load(args)
    result = pipeline.train(cfg)
    out_dir = os.path.dirname(os.path.abspath(args.out_model))
    os.makedirs(out_dir, exist_ok=True)
    save_model(result.model, args.out_model)
    curve_path = os.path.splitext(args.out_model)[0] + "_loss.csv"
    with open(curve_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(pipeline.loss_curve_csv(result))
    curve = result.model.loss_curve
    print(f"model written to {args.out_model} ({result.model.num_params} parameters); "
          f"loss {curve[0]:.5f} -> {curve[-1]:.5f}")
    return EXIT_OK


def _frames(directory, prefix):
    pat = re.compile(rf"{prefix}_(\d+)\.pfm$")
    out = {}
    for path in glob.glob(os.path.join(directory, f"{prefix}_*.pfm")):
        m = pat.search(os.path.basename(path))
        if m:
            out[int(m.group(1))] = path
    return out


def evaluate_dirs(pred_dir, gt_dir):
    """Metrics of externally produced ``disp_NNNN.pfm`` (and optional ``flow_NNNN.pfm``) files.

    Ground truth uses the layout written by ``scene_sim.save_sample``: flow files
    hold (u, v, disparity change) indexed by previous-frame pixels and
    ``mask_NNNN.pgm`` (optional) marks pixels still visible at frame NNNN.
    """
    for d in (pred_dir, gt_dir):
        if not os.path.isdir(d):
            raise ConfigError(f"{d}: directory not found")
    pred, gt = _frames(pred_dir, "disp"), _frames(gt_dir, "disp")
    pred_flow, gt_flow = _frames(pred_dir, "flow"), _frames(gt_dir, "flow")
    common = sorted(set(pred) & set(gt))
    if not common:
        raise ConfigError(f"no matching disp_NNNN.pfm frames between {pred_dir} and {gt_dir}")
    reports = []
    prev = None
    for t in common:
        d_pred, d_gt = read_pfm(pred[t]), read_pfm(gt[t])
        if d_pred.shape != d_gt.shape:
            raise ConfigError(f"{pred[t]}: shape {d_pred.shape} differs from ground truth {d_gt.shape}")
        rep = FrameReport(frame=t)
        mask = (d_gt >= 1.0) & (d_gt <= 210.0)
        if mask.any():
            rep.epe, rep.d3px = epe(d_pred, d_gt, mask)
            rep.n_pixels = int(mask.sum())
        if prev is not None and prev[0] == t - 1 and t in gt_flow:
            sf = read_pfm(gt_flow[t])
            keep = validity_mask(prev[2], sf)
            mask_path = os.path.join(gt_dir, f"mask_{t:04d}.pgm")
            if os.path.exists(mask_path):
                keep &= read_pgm(mask_path) > 0
            pairs = trace(sf[..., :2], prev[1], d_pred, prev[2], d_gt, keep, mask)
            if len(pairs):
                rep.tepe, rep.tepe_3px, rep.tepe_r, rep.tepe_r_100pct = tepe(pairs)
                rep.n_pairs = len(pairs)
            if t in pred_flow and keep.any():
                pf = read_pfm(pred_flow[t])
                rep.fepe_of, rep.fepe_of_1px = fepe(pf, sf, keep, "optical")
                if pf.shape[-1] == 3:
                    rep.fepe_sf, rep.fepe_sf_1px = fepe(pf, sf, keep, "scene")
                rep.n_flow = int(keep.sum())
        reports.append(rep)
        prev = (t, d_pred, d_gt)
    return aggregate(reports)


def cmd_eval(args) -> int:
    report = evaluate_dirs(args.pred_dir, args.gt_dir)
    text = to_json({"eval": report}) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tempofuse", description="Temporally consistent stereo fusion experiments")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the configured suite and write artifacts")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)
    c = sub.add_parser("compare", help="print a method comparison table")
    c.add_argument("--config", required=True)
    c.add_argument("--seed", type=int)
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)
    t = sub.add_parser("train", help="train the weight model")
    t.add_argument("--config", required=True)
    t.add_argument("--out-model", required=True)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)
    e = sub.add_parser("eval", help="metrics for externally produced PFM files")
    e.add_argument("--pred-dir", required=True)
    e.add_argument("--gt-dir", required=True)
    e.add_argument("--out", help="write the JSON report here instead of stdout")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except TempofuseError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
