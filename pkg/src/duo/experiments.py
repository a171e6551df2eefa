"""Experiment runners: adaptation streams, comparisons, ablation, sweep.

Every runner is a pure function of (config, checkpoint): scene and
corruption streams derive from the config seed alone, independent of the
objective, so method comparisons share byte-identical inputs and reruns
reproduce artifacts byte for byte. Directional findings are written into
each report as explicit assertion booleans; the CLI turns a false
assertion into exit code 1.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np

from .adapt import AdaptState, tta_step
from .config import ExperimentConfig
from .detector import ToyDetector, source_train
from .rng import Rng
from .world import (
    corrupt,
    dump_scene,
    evaluate,
    generate_scene,
    match_detections,
    precision_recall_f1,
)

CSV_COLUMNS = (
    "step",
    "objective",
    "n_dets",
    "mean_entropy",
    "mean_cfl",
    "mean_ncl",
    "logsig_head0",
    "logsig_head1",
    "logsig_head2",
    "f1_running",
    "mae_running",
    "skipped",
)


class CheckpointMissing(FileNotFoundError):
    """No usable detector checkpoint at the configured path; CLI exit 2."""


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if math.isnan(v):
        return "nan"
    return format(v, ".12g")


def _jsonable(obj):
    """Recursively convert to JSON-safe types; NaN becomes null."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return None if math.isnan(v) or math.isinf(v) else v
    return obj


def write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(cfg: ExperimentConfig) -> ToyDetector:
    try:
        return ToyDetector.load(cfg.checkpoint)
    except FileNotFoundError:
        raise CheckpointMissing(
            f"no checkpoint at {cfg.checkpoint!r}; run `duo train` first"
        ) from None


def stream_batch(cfg: ExperimentConfig, step: int):
    """Scenes and corrupted images for one step; pure in (cfg.seed, step)."""
    base = Rng(cfg.seed)
    scenes = []
    images = []
    for b in range(cfg.batch_size):
        idx = step * cfg.batch_size + b
        scene = generate_scene(
            base.fork(2 * idx), min_objects=cfg.min_objects, max_objects=cfg.max_objects
        )
        scenes.append(scene)
        images.append(corrupt(scene.image, cfg.corruption, cfg.severity, base.fork(2 * idx + 1)))
    return scenes, np.stack(images)


def run_stream(cfg: ExperimentConfig, objective: str | None = None,
               outdir: str | None = None, detector: ToyDetector | None = None,
               **adapt_overrides) -> dict:
    """One adaptation stream: CSV per step, summary JSON, returned summary.

    The summary carries stream-cumulative F1 and depth MAE, the mean of
    the per-step entropy means, per-head log-sigma trajectory endpoints,
    and the matched detection scores from the final quarter of the stream
    (the adapted regime) for the observation studies.
    """
    objective = cfg.objective if objective is None else objective
    outdir = cfg.outdir if outdir is None else outdir
    det = detector.clone() if detector is not None else load_checkpoint(cfg)
    acfg = cfg.adapt_config(objective=objective, **adapt_overrides)
    state = AdaptState.create(det, acfg)
    os.makedirs(outdir, exist_ok=True)

    n_steps = cfg.stream_scenes // cfg.batch_size
    tail_start = n_steps - max(1, n_steps // 4)
    tp = fp = fn = 0
    depth_err_sum = 0.0
    depth_err_n = 0
    ent_means = []
    first_logsig = None
    last_logsig = None
    tail_matched_scores = []
    rows = []
    for step in range(n_steps):
        scenes, images = stream_batch(cfg, step)
        if cfg.dump_scenes and step == 0:
            dump_scene(scenes[0], os.path.join(outdir, "scene0"))
        dets, rec = tta_step(state, images)
        for si, scene in enumerate(scenes):
            res = match_detections([d for d in dets if d.image_index == si], scene)
            tp, fp, fn = tp + res.tp, fp + res.fp, fn + res.fn
            depth_err_sum += sum(res.matched_depth_errors)
            depth_err_n += len(res.matched_depth_errors)
            if step >= tail_start:
                tail_matched_scores.extend(res.matched_scores)
        _, _, f1 = precision_recall_f1(tp, fp, fn)
        mae = depth_err_sum / depth_err_n if depth_err_n else float("nan")
        rec["f1_running"] = f1
        rec["mae_running"] = mae
        if not math.isnan(rec["mean_entropy"]):
            ent_means.append(rec["mean_entropy"])
        logsig = (rec["logsig_head0"], rec["logsig_head1"], rec["logsig_head2"])
        if first_logsig is None:
            first_logsig = logsig
        last_logsig = logsig
        rows.append(rec)

    csv_path = os.path.join(outdir, "metrics.csv")
    with open(csv_path, "w") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for rec in rows:
            fh.write(",".join(_fmt(rec[c]) for c in CSV_COLUMNS) + "\n")

    summary = {
        "objective": objective,
        "corruption": cfg.corruption,
        "severity": cfg.severity,
        "steps": n_steps,
        "f1": rows[-1]["f1_running"] if rows else float("nan"),
        "depth_mae": rows[-1]["mae_running"] if rows else float("nan"),
        "mean_entropy": float(np.mean(ent_means)) if ent_means else float("nan"),
        "logsig_start": list(first_logsig) if first_logsig else None,
        "logsig_end": list(last_logsig) if last_logsig else None,
        "skipped_steps": int(sum(r["skipped"] for r in rows)),
        "tail_matched_scores": sorted(tail_matched_scores),
    }
    write_json(os.path.join(outdir, "summary.json"), summary)
    return summary


def _score_quantiles(scores) -> tuple:
    if not scores:
        return float("nan"), float("nan")
    q = np.quantile(np.asarray(scores, dtype=np.float64), [0.25, 0.75])
    return float(q[0]), float(q[1])


def run_observation1(cfg: ExperimentConfig) -> dict:
    """Score-quartile comparison of {none, entropy_min, duo} on one stream.

    Reports per-method q25/q75 of tail matched scores, their deltas
    against the none baseline, and the skew ratio dq75/dq25.
    """
    det = load_checkpoint(cfg)
    methods = ("none", "entropy_min", "duo")
    per_method = {}
    for m in methods:
        summary = run_stream(
            cfg, objective=m, outdir=os.path.join(cfg.outdir, f"obs1_{m}"), detector=det
        )
        q25, q75 = _score_quantiles(summary.pop("tail_matched_scores"))
        per_method[m] = {"q25": q25, "q75": q75, "f1": summary["f1"]}
    base = per_method["none"]
    for m in methods:
        dq25 = per_method[m]["q25"] - base["q25"]
        dq75 = per_method[m]["q75"] - base["q75"]
        per_method[m]["dq25"] = dq25
        per_method[m]["dq75"] = dq75
        per_method[m]["skew"] = dq75 / dq25 if dq25 != 0 else float("inf")
    report = {
        "methods": per_method,
        "assertions": {
            "dq25_duo_gt_entropy_min": per_method["duo"]["dq25"]
            > per_method["entropy_min"]["dq25"],
            "skew_duo_lt_entropy_min": per_method["duo"]["skew"]
            < per_method["entropy_min"]["skew"],
        },
    }
    write_json(os.path.join(cfg.outdir, "obs1_report.json"), report)
    return report


# log-sigma drop floor for the collapse diagnostic denominator: keeps the
# ratio stable when the geometric heads barely move
COLLAPSE_EPS = 0.02


def _collapse_ratio(summary: dict) -> float:
    start, end = summary["logsig_start"], summary["logsig_end"]
    reg_drop = start[0] - end[0]
    geo_drop = 0.5 * ((start[1] - end[1]) + (start[2] - end[2]))
    return reg_drop / max(geo_drop, COLLAPSE_EPS)


def run_observation2(cfg: ExperimentConfig) -> dict:
    """Uncertainty-collapse comparison of {depth_unc_min, duo}.

    Collapse ratio is the regression head's log-sigma drop over the mean
    geometric-head drop (denominator floored). Also checks that no head's
    sigma under duo ends below 10% of its source value.
    """
    det = load_checkpoint(cfg)
    per_method = {}
    for m in ("depth_unc_min", "duo"):
        summary = run_stream(
            cfg, objective=m, outdir=os.path.join(cfg.outdir, f"obs2_{m}"), detector=det
        )
        summary.pop("tail_matched_scores")
        per_method[m] = {
            "logsig_start": summary["logsig_start"],
            "logsig_end": summary["logsig_end"],
            "collapse_ratio": _collapse_ratio(summary),
            "f1": summary["f1"],
        }
    duo = per_method["duo"]
    sigma_floor_ok = all(
        duo["logsig_end"][k] - duo["logsig_start"][k] >= math.log(0.1) for k in range(3)
    )
    report = {
        "methods": per_method,
        "assertions": {
            "collapse_dum_gt_2x_duo": per_method["depth_unc_min"]["collapse_ratio"]
            > 2.0 * duo["collapse_ratio"],
            "duo_sigma_above_10pct": sigma_floor_ok,
        },
    }
    write_json(os.path.join(cfg.outdir, "obs2_report.json"), report)
    return report


ABLATION_ROWS = (
    ("src", None, {}),
    ("cfl", "duo", {"use_cfl": True, "use_ncl": False, "use_mask": False}),
    ("ncl", "duo", {"use_cfl": False, "use_ncl": True, "use_mask": False}),
    ("ncl_mask", "duo", {"use_cfl": False, "use_ncl": True, "use_mask": True}),
    ("cfl_ncl", "duo", {"use_cfl": True, "use_ncl": True, "use_mask": False}),
    ("full", "duo", {"use_cfl": True, "use_ncl": True, "use_mask": True}),
)


def run_ablation(cfg: ExperimentConfig) -> dict:
    """Component grid {CFL} x {NCL} x {mask}, collapsed to its 6 distinct rows."""
    det = load_checkpoint(cfg)
    rows = {}
    for label, objective, overrides in ABLATION_ROWS:
        summary = run_stream(
            cfg,
            objective="none" if objective is None else objective,
            outdir=os.path.join(cfg.outdir, f"ablate_{label}"),
            detector=det,
            **overrides,
        )
        rows[label] = {"f1": summary["f1"], "depth_mae": summary["depth_mae"]}
    report = {
        "rows": rows,
        "assertions": {
            "full_ge_cfl": rows["full"]["f1"] >= rows["cfl"]["f1"],
            "full_ge_ncl": rows["full"]["f1"] >= rows["ncl"]["f1"],
            "full_ge_ncl_mask": rows["full"]["f1"] >= rows["ncl_mask"]["f1"],
            "masked_ge_unmasked_ncl": rows["ncl_mask"]["f1"] >= rows["ncl"]["f1"],
        },
    }
    write_json(os.path.join(cfg.outdir, "ablation_report.json"), report)
    return report


def run_sweep(cfg: ExperimentConfig) -> dict:
    """Small grid over lambda and alpha with the duo objective."""
    det = load_checkpoint(cfg)
    rows = []
    for lam in cfg.sweep_lambda:
        for alpha in cfg.sweep_alpha:
            tag = f"sweep_l{_fmt(lam)}_a{_fmt(alpha)}"
            summary = run_stream(
                cfg,
                objective="duo",
                outdir=os.path.join(cfg.outdir, tag),
                detector=det,
                lambda_weight=float(lam),
                alpha=float(alpha),
            )
            rows.append(
                {
                    "lambda": float(lam),
                    "alpha": float(alpha),
                    "f1": summary["f1"],
                    "depth_mae": summary["depth_mae"],
                }
            )
    os.makedirs(cfg.outdir, exist_ok=True)
    path = os.path.join(cfg.outdir, "sweep.csv")
    with open(path, "w") as fh:
        fh.write("lambda,alpha,f1,depth_mae\n")
        for r in rows:
            fh.write(
                f"{_fmt(r['lambda'])},{_fmt(r['alpha'])},{_fmt(r['f1'])},{_fmt(r['depth_mae'])}\n"
            )
    report = {"rows": rows}
    write_json(os.path.join(cfg.outdir, "sweep_report.json"), report)
    return report


def run_train(cfg: ExperimentConfig) -> dict:
    """Source training plus the clean-stream quality gate."""
    det, records = source_train(
        steps=cfg.train_steps,
        batch=cfg.train_batch,
        lr=cfg.train_lr,
        momentum=cfg.momentum,
        seed=cfg.train_seed,
    )
    bad = [r for r in records if math.isnan(r.loss)]
    if bad:
        raise RuntimeError(f"training diverged at step {bad[0].step}")
    det.save(cfg.checkpoint)
    os.makedirs(cfg.outdir, exist_ok=True)
    with open(os.path.join(cfg.outdir, "train_log.csv"), "w") as fh:
        fh.write("step,loss,cls,obj,box,dep,dense\n")
        for r in records:
            fh.write(
                ",".join(
                    _fmt(v) for v in (r.step, r.loss, r.cls, r.obj, r.box, r.dep, r.dense)
                )
                + "\n"
            )

    # clean-stream gate on fresh scenes
    rng = Rng(cfg.seed)
    all_dets = []
    scenes = []
    for i in range(cfg.eval_scenes):
        scene = generate_scene(
            rng.fork(7_000_000 + i), min_objects=cfg.min_objects, max_objects=cfg.max_objects
        )
        scenes.append(scene)
    batch = 16
    for start in range(0, len(scenes), batch):
        chunk = scenes[start : start + batch]
        images = np.stack([s.image for s in chunk])
        fw = det.forward(images, grad=False)
        for d in det.decode(fw, threshold=cfg.obj_threshold):
            d.image_index += start
            all_dets.append(d)
    metrics = evaluate(all_dets, scenes)
    rel_errors = []
    for si, scene in enumerate(scenes):
        res = match_detections([d for d in all_dets if d.image_index == si], scene)
        rel_errors.extend(
            e / z for e, z in zip(res.matched_depth_errors, res.matched_gt_depths)
        )
    rel = float(np.mean(rel_errors)) if rel_errors else float("nan")
    report = {
        "clean_f1": metrics["f1"],
        "clean_depth_mae": metrics["depth_mae"],
        "clean_depth_rel": rel,
        "final_loss": records[-1].loss,
        "assertions": {
            "f1_gate": metrics["f1"] >= 0.85,
            "depth_rel_gate": rel <= 0.15,
        },
    }
    write_json(os.path.join(cfg.outdir, "train_report.json"), report)
    return report
