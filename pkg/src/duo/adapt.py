"""Online test-time adaptation: reliability gating and the update step.

Per batch the detector runs forward, detections are emitted from the
pre-update parameters, and one SGD-with-momentum step follows on the
configured objective: the dual objective (per-object conjugate focal loss
plus a masked normal-consistency term), plain entropy minimization, or
direct depth-uncertainty minimization. Object reliability is judged
against an exponential moving average of the per-object semantic
uncertainty; reliable boxes stamp a score-weighted region mask that gates
where the geometric term applies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import conjugate as cj
from .autodiff import Var
from .detector import Detection, ForwardPass, ToyDetector
from .normals import luma, normal_consistency_loss
from .world import IMAGE_H, IMAGE_W

OBJECTIVES = ("duo", "entropy_min", "depth_unc_min", "none")


@dataclass(frozen=True)
class EmaThreshold:
    """Moving-average cutoff on per-object uncertainty."""

    u_bar: float = 0.0
    beta: float = 0.1
    initialized: bool = False


def ema_update(ema: EmaThreshold, us) -> EmaThreshold:
    """Fold a batch of uncertainties into the threshold.

    First non-empty batch initializes the average outright; empty input is
    a no-op (the caller treats it as a skip event).
    """
    us = [float(u) for u in us]
    if not us:
        return ema
    m = sum(us) / len(us)
    if not ema.initialized:
        return EmaThreshold(u_bar=m, beta=ema.beta, initialized=True)
    return replace(ema, u_bar=ema.beta * m + (1.0 - ema.beta) * ema.u_bar)


def select_reliable(us, ema: EmaThreshold) -> list:
    """Indices whose uncertainty does not exceed the threshold; ties kept."""
    if not ema.initialized:
        raise ad.ContractViolation("threshold queried before first update")
    return [i for i, u in enumerate(us) if float(u) <= ema.u_bar]


def region_mask(dets, selected, h: int = IMAGE_H, w: int = IMAGE_W) -> np.ndarray:
    """Score-weighted union of the selected boxes, (h, w) in [0, 1].

    Pixel (u, v) lies inside a box iff u_min <= u < u_max and likewise for
    v; each covered pixel takes the max score among covering boxes.
    """
    m = np.zeros((h, w))
    for i in selected:
        d = dets[i]
        u0, v0, u1, v1 = d.box
        ua, ub = math.ceil(u0), math.ceil(u1)
        va, vb = math.ceil(v0), math.ceil(v1)
        ua, va = max(ua, 0), max(va, 0)
        ub, vb = min(ub, w), min(vb, h)
        if ua < ub and va < vb:
            patch = m[va:vb, ua:ub]
            np.maximum(patch, d.score, out=patch)
    return m


@dataclass
class AdaptConfig:
    objective: str = "duo"
    lr: float = 0.001
    momentum: float = 0.9
    beta: float = 0.1
    lambda_weight: float = 0.7
    alpha: float = 4.0
    gamma: float = 2.0
    batch_size: int = 16
    obj_threshold: float = 0.3
    use_cfl: bool = True
    use_ncl: bool = True
    use_mask: bool = True
    ncl_pixel_mode: str = "mean"
    cfl_grad_mode: str = "pseudo_label"
    matrix_mode: str = "outer"
    adapt_scope: str = "all"

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ad.ContractViolation(f"unknown objective {self.objective!r}")
        if self.lambda_weight < 0:
            raise ad.ContractViolation("lambda_weight must be >= 0")
        if self.lr < 0:
            raise ad.ContractViolation("lr must be >= 0")
        if self.ncl_pixel_mode not in ("mean", "sum"):
            raise ad.ContractViolation(f"bad ncl_pixel_mode {self.ncl_pixel_mode!r}")
        if self.adapt_scope not in ("all", "norm_heads"):
            raise ad.ContractViolation(f"bad adapt_scope {self.adapt_scope!r}")

    @property
    def focal(self) -> cj.FocalParams:
        return cj.FocalParams(self.alpha, self.gamma)


def adapt_param_names(scope: str) -> list:
    """Parameter subset receiving updates: everything, or norm-affine + heads."""
    from .detector import PARAM_SHAPES

    names = list(PARAM_SHAPES)
    if scope == "all":
        return names
    return [n for n in names if not n.startswith("conv")]


@dataclass
class AdaptState:
    """Single-writer adaptation context: model, momentum, threshold, counter."""

    detector: ToyDetector
    velocity: dict
    ema: EmaThreshold
    config: AdaptConfig
    step_count: int = 0

    @classmethod
    def create(cls, detector: ToyDetector, config: AdaptConfig) -> "AdaptState":
        return cls(
            detector=detector,
            velocity={k: np.zeros_like(v) for k, v in detector.params.items()},
            ema=EmaThreshold(beta=config.beta),
            config=config,
        )

    @property
    def params(self) -> dict:
        return self.detector.params

    @property
    def momentum_buffers(self) -> dict:
        return self.velocity


def _det_prob_var(fw: ForwardPass, det: Detection) -> Var:
    n, (ci, cjj) = det.image_index, det.cell
    logits = fw.cls_logits[n, :, ci, cjj]
    return cj.softmax(logits)


def duo_objective(fw: ForwardPass, dets, lumas, state: AdaptState):
    """Combined objective: sum of per-object CFL plus the masked NCL term.

    The batch's uncertainties refresh the EMA threshold first, then
    reliable objects stamp the region mask. The mask and the threshold are
    constants to the gradient; only class logits (semantic branch) and the
    dense depth (geometric branch) receive updates. Zero detections yield
    (None, info) and the caller records a skip.

    Returns (loss Var or None, info dict).
    """
    cfg = state.config
    info = {"n_selected": 0, "us": []}
    if not dets:
        return None, info
    fp = cfg.focal

    cfl_terms = []
    us = []
    for det in dets:
        p = _det_prob_var(fw, det)
        c = cj.conjugate_focal_loss(
            p, fp, grad_mode=cfg.cfl_grad_mode, matrix_mode=cfg.matrix_mode
        )
        cfl_terms.append(c)
        us.append(float(c.value))
    info["us"] = us

    state.ema = ema_update(state.ema, us)
    selected = select_reliable(us, state.ema)
    info["n_selected"] = len(selected)

    loss = None
    if cfg.use_cfl:
        for c in cfl_terms:
            loss = c if loss is None else loss + c

    if cfg.use_ncl and cfg.lambda_weight > 0.0:
        by_image: dict = {}
        for idx in selected:
            by_image.setdefault(dets[idx].image_index, []).append(dets[idx])
        # with the mask disabled the gate is identically one everywhere,
        # so every image in the batch carries the geometric term
        image_range = sorted(by_image) if cfg.use_mask else range(fw.batch)
        for n in image_range:
            if cfg.use_mask:
                chosen = by_image[n]
                mask = region_mask(chosen, range(len(chosen)))
                if not mask.any():
                    continue
            else:
                mask = np.ones((IMAGE_H, IMAGE_W))
            grid = normal_consistency_loss(fw.dense_up[n], lumas[n])
            masked = grid * ad.const(mask)
            term = masked.mean() if cfg.ncl_pixel_mode == "mean" else masked.sum()
            term = cfg.lambda_weight * term
            loss = term if loss is None else loss + term

    if loss is None:
        loss = ad.const(0.0)
    return loss, info


def entropy_min_objective(fw: ForwardPass, dets, lumas, state: AdaptState):
    """Sum of per-object prediction entropies; None when nothing detected."""
    if not dets:
        return None, {}
    loss = None
    for det in dets:
        p = _det_prob_var(fw, det)
        e = cj.entropy(p)
        loss = e if loss is None else loss + e
    return loss, {}


def depth_unc_min_objective(fw: ForwardPass, dets, lumas, state: AdaptState):
    """Sum of per-object self-fused uncertainty regression losses."""
    from .fusion import self_fused_regression_loss

    if not dets:
        return None, {}
    loss = None
    for det in dets:
        n, (ci, cjj) = det.image_index, det.cell
        z = ad.stack_scalars([fw.z0[n, ci, cjj], fw.z1[n, ci, cjj], fw.z2[n, ci, cjj]])
        sigma = fw.logsig[n, :, ci, cjj].exp()
        term = self_fused_regression_loss(z, sigma)
        loss = term if loss is None else loss + term
    return loss, {}


_OBJECTIVE_FNS = {
    "duo": duo_objective,
    "entropy_min": entropy_min_objective,
    "depth_unc_min": depth_unc_min_objective,
}


def _quantiles(values) -> tuple:
    if len(values) == 0:
        return float("nan"), float("nan"), float("nan")
    q = np.quantile(np.asarray(values, dtype=np.float64), [0.25, 0.5, 0.75])
    return float(q[0]), float(q[1]), float(q[2])


def step_metrics(fw: ForwardPass, dets, lumas, cfg: AdaptConfig) -> dict:
    """Diagnostics from the emitted detections (values only, no graph).

    Per-head log sigma averages over the detected objects, falling back to
    all cells on empty batches so the trajectory has no holes; mean_ncl is
    the unmasked per-pixel average over the batch.
    """
    fp = cfg.focal
    if dets:
        ents = [float(cj.entropy(d.probs)) for d in dets]
        cfls = [cj.semantic_uncertainty(d.probs, fp) for d in dets]
        logsigs = np.stack([np.log(d.heads.sigma) for d in dets])
        head_means = logsigs.mean(axis=0)
        scores = [d.score for d in dets]
    else:
        ents, cfls, scores = [], [], []
        head_means = fw.logsig.value.mean(axis=(0, 2, 3))
    ncl_vals = []
    for n in range(fw.batch):
        grid = normal_consistency_loss(fw.dense_up[n].value, lumas[n])
        ncl_vals.append(float(np.mean(grid)))
    q25, q50, q75 = _quantiles(scores)
    return {
        "n_dets": len(dets),
        "mean_entropy": float(np.mean(ents)) if ents else float("nan"),
        "mean_cfl": float(np.mean(cfls)) if cfls else float("nan"),
        "mean_ncl": float(np.mean(ncl_vals)),
        "logsig_head0": float(head_means[0]),
        "logsig_head1": float(head_means[1]),
        "logsig_head2": float(head_means[2]),
        "score_q25": q25,
        "score_q50": q50,
        "score_q75": q75,
    }


def tta_step(state: AdaptState, images: np.ndarray):
    """One online step: emit detections, then update on the configured objective.

    Detections are decoded from the pre-update parameters. Any adapting
    objective runs the norm layers on the statistics of the incoming batch
    (refreshing the running buffers); the none baseline keeps the frozen
    source statistics. Updates follow v <- momentum * v + grad,
    theta <- theta - lr * v over the configured parameter scope. A step
    with no detections or a non-finite gradient is skipped: the optimizer
    is not invoked and parameters and momentum buffers stay bit-identical.

    Returns (detections, metrics dict).
    """
    cfg = state.config
    det_model = state.detector
    adapting = cfg.objective != "none"
    need_grad = adapting and cfg.lr > 0.0
    # adaptation runs the norm layers on test-batch statistics; the frozen
    # source statistics stay in place only for the none baseline
    fw = det_model.forward(images, train=adapting, grad=need_grad)
    dets = det_model.decode(fw, threshold=cfg.obj_threshold)

    lumas = [luma(images[n]) for n in range(fw.batch)]
    record = step_metrics(fw, dets, lumas, cfg)
    record["step"] = state.step_count
    record["objective"] = cfg.objective
    record["skipped"] = 0

    if cfg.objective != "none":
        loss, _info = _OBJECTIVE_FNS[cfg.objective](fw, dets, lumas, state)
        if loss is None:
            record["skipped"] = 1
        else:
            gm = ad.backward(loss)
            if gm.saw_nan:
                record["skipped"] = 1
            elif cfg.lr > 0.0:
                names = adapt_param_names(cfg.adapt_scope)
                for name in names:
                    pvar = fw.param_vars[name]
                    g = gm.get(pvar)
                    if g is None:
                        continue
                    state.velocity[name] = cfg.momentum * state.velocity[name] + g
                    det_model.params[name] -= cfg.lr * state.velocity[name]

    state.step_count += 1
    return dets, record
