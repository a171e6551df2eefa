"""Synthetic detection scenes, their corruptions, and evaluation.

A scene is a 64x96 RGB image of colored rectangles over a sky/ground
background. Every object's depth follows the size-depth law
z = f_scale / box_height_px, and the dense ground-truth depth map is the
object depth inside each box over a planar background ramp. Corruptions
are six severity-laddered image perturbations, deterministic given the
scene's RNG stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractViolation
from .fusion import fuse_headset
from .rng import Rng

IMAGE_H = 64
IMAGE_W = 96
CELL = 8
GRID_H = IMAGE_H // CELL
GRID_W = IMAGE_W // CELL
NUM_CLASSES = 3
F_SCALE = 160.0

# per class: base RGB color and width/height aspect
CLASS_COLORS = np.array(
    [[0.85, 0.20, 0.18], [0.16, 0.75, 0.24], [0.22, 0.30, 0.88]]
)
CLASS_ASPECTS = np.array([1.6, 1.0, 0.6])

BACKGROUND_DEPTH_NEAR = 16.0
BACKGROUND_DEPTH_FAR = 24.0

CORRUPTION_KINDS = (
    "gaussian_noise",
    "shot_noise",
    "brightness",
    "contrast",
    "pixelate",
    "fog_haze",
)

_GAUSS_STD = (0.04, 0.08, 0.12, 0.18, 0.26)
_SHOT_LAM = (200.0, 120.0, 70.0, 40.0, 20.0)
_BRIGHT_SHIFT = (0.10, 0.18, 0.26, 0.34, 0.42)
_CONTRAST_FACTOR = (0.75, 0.60, 0.45, 0.30, 0.20)
_PIXELATE_BLOCK = (2, 4, 8, 16, 32)
_FOG_BLEND = (0.12, 0.22, 0.32, 0.45, 0.60)
_FOG_COLOR = 0.82


@dataclass
class Scene:
    """One rendered scene with full ground truth."""

    image: np.ndarray
    boxes: np.ndarray
    classes: np.ndarray
    depths: np.ndarray
    depth_map: np.ndarray
    f_scale: float = F_SCALE


def generate_scene(rng: Rng, min_objects: int = 1, max_objects: int = 4) -> Scene:
    """Render a scene with min..max objects; deterministic in the rng stream."""
    image = _background(rng)
    depth_map = _background_depth()
    n_target = int(rng.integers(min_objects, max_objects + 1))

    boxes, classes, depths = [], [], []
    taken_cells: set = set()
    attempts = 0
    while len(boxes) < n_target and attempts < 60:
        attempts += 1
        cls = int(rng.integers(0, NUM_CLASSES))
        h = 10.0 + 16.0 * float(rng.uniform(()))
        aspect = CLASS_ASPECTS[cls] * (0.9 + 0.2 * float(rng.uniform(())))
        w = h * aspect
        if w > IMAGE_W - 6 or h > IMAGE_H - 6:
            continue
        cx = 3.0 + w / 2.0 + (IMAGE_W - 6.0 - w) * float(rng.uniform(()))
        cy = 3.0 + h / 2.0 + (IMAGE_H - 6.0 - h) * float(rng.uniform(()))
        cell = (int(cy / CELL), int(cx / CELL))
        if cell in taken_cells:
            continue
        box = np.array([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2])
        if any(_iou(box, b) > 0.35 for b in boxes):
            continue
        taken_cells.add(cell)
        boxes.append(box)
        classes.append(cls)
        depths.append(F_SCALE / h)

    order = np.argsort(-np.asarray(depths)) if depths else np.array([], dtype=int)
    for idx in order:
        _draw_object(image, depth_map, boxes[idx], classes[idx], depths[idx], rng)

    return Scene(
        image=np.clip(image, 0.0, 1.0),
        boxes=np.asarray(boxes, dtype=np.float64).reshape(-1, 4),
        classes=np.asarray(classes, dtype=np.int64),
        depths=np.asarray(depths, dtype=np.float64),
        depth_map=depth_map,
    )


def _background(rng: Rng) -> np.ndarray:
    img = np.empty((IMAGE_H, IMAGE_W, 3), dtype=np.float64)
    v = np.arange(IMAGE_H, dtype=np.float64)[:, None] / (IMAGE_H - 1)
    sky = np.array([0.62, 0.72, 0.84])
    ground = np.array([0.48, 0.44, 0.38])
    horizon = 0.35
    t = np.clip((v - horizon) / (1.0 - horizon), 0.0, 1.0)
    for c in range(3):
        img[:, :, c] = sky[c] * (1.0 - t) + ground[c] * t
    img += 0.02 * rng.normal((IMAGE_H, IMAGE_W, 3))
    return img


def _background_depth() -> np.ndarray:
    v = np.arange(IMAGE_H, dtype=np.float64)[:, None] / (IMAGE_H - 1)
    ramp = BACKGROUND_DEPTH_FAR + (BACKGROUND_DEPTH_NEAR - BACKGROUND_DEPTH_FAR) * v
    return np.broadcast_to(ramp, (IMAGE_H, IMAGE_W)).copy()


def _draw_object(image, depth_map, box, cls, depth, rng: Rng) -> None:
    u0, v0, u1, v1 = box
    iu0, iv0 = max(0, int(np.ceil(u0))), max(0, int(np.ceil(v0)))
    iu1, iv1 = min(IMAGE_W, int(np.ceil(u1))), min(IMAGE_H, int(np.ceil(v1)))
    if iu1 <= iu0 or iv1 <= iv0:
        return
    color = CLASS_COLORS[cls] + 0.08 * (rng.uniform((3,)) - 0.5)
    shade = np.linspace(0.94, 1.06, iv1 - iv0)[:, None, None]
    patch = np.clip(color[None, None, :] * shade, 0.0, 1.0)
    image[iv0:iv1, iu0:iu1, :] = patch
    depth_map[iv0:iv1, iu0:iu1] = depth


def _iou(a, b) -> float:
    iu0 = max(a[0], b[0])
    iv0 = max(a[1], b[1])
    iu1 = min(a[2], b[2])
    iv1 = min(a[3], b[3])
    inter = max(0.0, iu1 - iu0) * max(0.0, iv1 - iv0)
    if inter == 0.0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


# -- corruptions -------------------------------------------------------------


def corrupt(image: np.ndarray, kind: str, severity: int, rng: Rng) -> np.ndarray:
    """Apply one corruption at severity 1..5; output clipped to [0, 1]."""
    if kind not in CORRUPTION_KINDS:
        raise ContractViolation(f"unknown corruption {kind!r}")
    if not 1 <= severity <= 5:
        raise ContractViolation(f"severity must be 1..5, got {severity}")
    x = np.asarray(image, dtype=np.float64)
    s = severity - 1
    if kind == "gaussian_noise":
        out = x + _GAUSS_STD[s] * rng.normal(x.shape)
    elif kind == "shot_noise":
        lam = _SHOT_LAM[s]
        out = x + np.sqrt(np.maximum(x, 0.0) / lam) * rng.normal(x.shape)
    elif kind == "brightness":
        out = x + _BRIGHT_SHIFT[s]
    elif kind == "contrast":
        out = 0.5 + (x - 0.5) * _CONTRAST_FACTOR[s]
    elif kind == "pixelate":
        b = _PIXELATE_BLOCK[s]
        h, w = x.shape[0], x.shape[1]
        blocks = x.reshape(h // b, b, w // b, b, 3).mean(axis=(1, 3))
        out = np.repeat(np.repeat(blocks, b, axis=0), b, axis=1)
    else:
        t = _FOG_BLEND[s]
        out = (1.0 - t) * x + t * _FOG_COLOR
    return np.clip(out, 0.0, 1.0)


# -- evaluation --------------------------------------------------------------


@dataclass
class MatchResult:
    """Counts and per-match values from one scene's greedy matching."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    matched_scores: list = field(default_factory=list)
    matched_depth_errors: list = field(default_factory=list)
    matched_gt_depths: list = field(default_factory=list)
    unmatched_scores: list = field(default_factory=list)


def match_detections(detections, scene: Scene) -> MatchResult:
    """Greedy score-sorted matching on center distance within half diagonal.

    A detection may claim one unmatched ground-truth object of its predicted
    class whose center lies within 0.5 x that object's diagonal; ties on
    score break on detection index, ties on distance on object index.
    """
    res = MatchResult()
    n_gt = scene.boxes.shape[0]
    used = np.zeros(n_gt, dtype=bool)
    order = sorted(
        range(len(detections)), key=lambda i: (-detections[i].score, i)
    )
    gt_centers = (
        np.stack(
            [
                (scene.boxes[:, 0] + scene.boxes[:, 2]) * 0.5,
                (scene.boxes[:, 1] + scene.boxes[:, 3]) * 0.5,
            ],
            axis=1,
        )
        if n_gt
        else np.zeros((0, 2))
    )
    gt_diag = (
        np.sqrt(
            (scene.boxes[:, 2] - scene.boxes[:, 0]) ** 2
            + (scene.boxes[:, 3] - scene.boxes[:, 1]) ** 2
        )
        if n_gt
        else np.zeros(0)
    )
    for di in order:
        det = detections[di]
        cx = 0.5 * (det.box[0] + det.box[2])
        cy = 0.5 * (det.box[1] + det.box[3])
        cls = int(np.argmax(det.probs))
        best = -1
        best_dist = np.inf
        for gi in range(n_gt):
            if used[gi] or int(scene.classes[gi]) != cls:
                continue
            dist = float(np.hypot(cx - gt_centers[gi, 0], cy - gt_centers[gi, 1]))
            if dist <= 0.5 * gt_diag[gi] and dist < best_dist:
                best = gi
                best_dist = dist
        if best >= 0:
            used[best] = True
            res.tp += 1
            res.matched_scores.append(float(det.score))
            z_hat = fuse_headset(det.heads)
            res.matched_depth_errors.append(abs(z_hat - float(scene.depths[best])))
            res.matched_gt_depths.append(float(scene.depths[best]))
        else:
            res.fp += 1
            res.unmatched_scores.append(float(det.score))
    res.fn = int(n_gt - used.sum())
    return res


def precision_recall_f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Micro P/R/F1 with the zero-detection convention precision = 1."""
    precision = 1.0 if (tp + fp) == 0 else tp / (tp + fp)
    recall = 1.0 if (tp + fn) == 0 else tp / (tp + fn)
    f1 = 0.0 if (precision + recall) == 0 else 2 * precision * recall / (
        precision + recall
    )
    return precision, recall, f1


def evaluate(detections, scenes) -> dict:
    """Aggregate metrics for a batch of scenes.

    Detections carry image_index into the scene list. Reports micro
    precision/recall/F1, depth MAE over matched pairs, matched-score
    quantiles (linear interpolation), mean prediction entropy, and mean
    per-head log sigma over all detections.
    """
    from .conjugate import entropy

    tp = fp = fn = 0
    matched_scores: list = []
    depth_errors: list = []
    for si, scene in enumerate(scenes):
        dets = [d for d in detections if d.image_index == si]
        res = match_detections(dets, scene)
        tp, fp, fn = tp + res.tp, fp + res.fp, fn + res.fn
        matched_scores.extend(res.matched_scores)
        depth_errors.extend(res.matched_depth_errors)
    precision, recall, f1 = precision_recall_f1(tp, fp, fn)
    if matched_scores:
        q25, q50, q75 = (
            float(q) for q in np.quantile(np.asarray(matched_scores), [0.25, 0.5, 0.75])
        )
    else:
        q25 = q50 = q75 = float("nan")
    if detections:
        mean_entropy = float(np.mean([entropy(d.probs) for d in detections]))
        head_logsig = np.stack(
            [np.log(d.heads.sigma) for d in detections]
        ).mean(axis=0)
    else:
        mean_entropy = float("nan")
        head_logsig = np.full(3, np.nan)
    return {
        "tp": tp,
        "fp": fp,
        "fn": fn,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "depth_mae": float(np.mean(depth_errors)) if depth_errors else float("nan"),
        "score_q25": q25,
        "score_q50": q50,
        "score_q75": q75,
        "mean_entropy": mean_entropy,
        "logsig_head0": float(head_logsig[0]),
        "logsig_head1": float(head_logsig[1]),
        "logsig_head2": float(head_logsig[2]),
    }


def dump_scene(scene: Scene, dirpath: str) -> None:
    """Write a scene's grids as tensor files plus a JSON sidecar."""
    import json
    import os

    from .tensor import write_tensor_dir

    write_tensor_dir(
        dirpath,
        {"image": scene.image, "depth_map": scene.depth_map},
        meta={"f_scale": scene.f_scale},
    )
    sidecar = {
        "boxes": [[float(v) for v in b] for b in scene.boxes],
        "classes": [int(c) for c in scene.classes],
        "depths": [float(z) for z in scene.depths],
    }
    with open(os.path.join(dirpath, "scene.json"), "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
