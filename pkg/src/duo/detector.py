"""A small dense detector for the synthetic scenes.

A two-conv trunk at two scales: the first 3x3 conv runs at image
resolution, its output is average-pooled to the 8x12 cell grid (8px
cells), and the second 3x3 conv runs on that grid so every cell feature
sees a three-cell neighborhood, wide enough to cover the largest scene
objects. Per cell the heads predict class logits, objectness, a box
(center offsets via tanh, sizes via bounded exp), and three depth
hypotheses: one free regressor and two geometric heads that invert the
size-depth law from the predicted box height and width, each with its own
log-sigma head. A dense depth branch reads the first-conv features at
half resolution and is upsampled bilinearly to image size for the
geometric consistency loss.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import conjugate as cj
from .autodiff import Var
from .fusion import HeadSet
from .rng import Rng
from .tensor import read_tensor_dir, write_tensor_dir
from .world import CELL, F_SCALE, GRID_H, GRID_W, IMAGE_H, IMAGE_W, NUM_CLASSES

NORM_EPS = 1e-5
NORM_MOMENTUM = 0.1

# cell center coordinates, (GRID_H, GRID_W)
_CELL_CY = ((np.arange(GRID_H) + 0.5) * CELL)[:, None] * np.ones((1, GRID_W))
_CELL_CX = np.ones((GRID_H, 1)) * ((np.arange(GRID_W) + 0.5) * CELL)[None, :]


@dataclass
class Detection:
    """One decoded object hypothesis."""

    box: np.ndarray
    probs: np.ndarray
    score: float
    heads: HeadSet
    cell: tuple
    image_index: int

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ad.ContractViolation(f"score {self.score} outside [0, 1]")


@dataclass
class ForwardPass:
    """Graph handles from one forward call; everything downstream hangs here."""

    param_vars: dict
    cls_logits: Var
    obj_logit: Var
    cx: Var
    cy: Var
    bw: Var
    bh: Var
    z0: Var
    z1: Var
    z2: Var
    logsig: Var
    dense_up: list
    batch: int


def _tanh_scaled(x, lim: float):
    """Soft clamp to (-lim, lim) with unit slope at the origin."""
    if isinstance(x, Var):
        return lim * (x * (1.0 / lim)).tanh()
    return lim * np.tanh(x / lim)


PARAM_SHAPES = {
    "conv1.w": (8, 3, 3, 3),
    "conv1.b": (8,),
    "norm1.gamma": (8,),
    "norm1.beta": (8,),
    "conv2.w": (16, 8, 3, 3),
    "conv2.b": (16,),
    "norm2.gamma": (16,),
    "norm2.beta": (16,),
    "cls.w": (NUM_CLASSES, 16),
    "cls.b": (NUM_CLASSES,),
    "obj.w": (1, 16),
    "obj.b": (1,),
    "box.w": (4, 16),
    "box.b": (4,),
    "zdir.w": (1, 16),
    "zdir.b": (1,),
    "logsig.w": (3, 16),
    "logsig.b": (3,),
    "geo1.c": (1,),
    "geo2.c": (1,),
    "dense.w": (1, 8),
    "dense.b": (1,),
}

BUFFER_SHAPES = {
    "norm1.mean": (8,),
    "norm1.var": (8,),
    "norm2.mean": (16,),
    "norm2.var": (16,),
}


class ToyDetector:
    def __init__(self, params: dict, buffers: dict, f_scale: float = F_SCALE):
        self.params = params
        self.buffers = buffers
        self.f_scale = float(f_scale)

    @classmethod
    def create(cls, rng: Rng | None = None, init: str = "random") -> "ToyDetector":
        """Fresh detector; init 'random' (He-style) or 'zeros'."""
        params = {}
        for name, shape in PARAM_SHAPES.items():
            if init == "zeros":
                params[name] = np.zeros(shape)
                continue
            if name.endswith(".w") and "conv" in name:
                fan_in = shape[1] * shape[2] * shape[3]
                params[name] = rng.normal(shape) * np.sqrt(2.0 / fan_in)
            elif name.endswith(".w"):
                params[name] = rng.normal(shape) * 0.15
            elif "gamma" in name:
                params[name] = np.ones(shape)
            else:
                params[name] = np.zeros(shape)
        if init != "zeros":
            params["obj.b"][:] = -2.0
            params["zdir.b"][:] = np.log(12.0)
            params["dense.b"][:] = np.log(18.0)
        buffers = {
            "norm1.mean": np.zeros(8),
            "norm1.var": np.ones(8),
            "norm2.mean": np.zeros(16),
            "norm2.var": np.ones(16),
        }
        return cls(params, buffers)

    # -- persistence --------------------------------------------------------

    def save(self, dirpath: str) -> None:
        tensors = dict(self.params)
        tensors.update({"buf." + k: v for k, v in self.buffers.items()})
        write_tensor_dir(dirpath, tensors, meta={"f_scale": self.f_scale, "arch": "toy-v1"})

    @classmethod
    def load(cls, dirpath: str) -> "ToyDetector":
        if not os.path.isfile(os.path.join(dirpath, "manifest.json")):
            raise FileNotFoundError(f"no checkpoint at {dirpath}")
        tensors, meta = read_tensor_dir(dirpath)
        params = {k: v for k, v in tensors.items() if not k.startswith("buf.")}
        buffers = {k[4:]: v for k, v in tensors.items() if k.startswith("buf.")}
        for name, shape in PARAM_SHAPES.items():
            if name not in params or params[name].shape != shape:
                raise ad.ContractViolation(f"checkpoint missing or misshaped {name}")
        return cls(params, buffers, f_scale=float(meta.get("f_scale", F_SCALE)))

    def clone(self) -> "ToyDetector":
        return ToyDetector(
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            self.f_scale,
        )

    # -- forward ------------------------------------------------------------

    def _norm(self, x: Var, tag: str, pv: dict, train: bool):
        gamma = pv[f"{tag}.gamma"].reshape(1, -1, 1, 1)
        beta = pv[f"{tag}.beta"].reshape(1, -1, 1, 1)
        if train:
            mu = x.mean(axis=(0, 2, 3), keepdims=True)
            var = ((x - mu) ** 2).mean(axis=(0, 2, 3), keepdims=True)
            m = NORM_MOMENTUM
            self.buffers[f"{tag}.mean"] = (1 - m) * self.buffers[
                f"{tag}.mean"
            ] + m * mu.value.reshape(-1)
            self.buffers[f"{tag}.var"] = (1 - m) * self.buffers[
                f"{tag}.var"
            ] + m * var.value.reshape(-1)
        else:
            mu = ad.const(self.buffers[f"{tag}.mean"].reshape(1, -1, 1, 1))
            var = ad.const(self.buffers[f"{tag}.var"].reshape(1, -1, 1, 1))
        xn = (x - mu) / (var + NORM_EPS) ** 0.5
        return xn * gamma + beta

    def forward(self, images: np.ndarray, train: bool = False, grad: bool = True) -> ForwardPass:
        """Run the net on (N, H, W, 3) images.

        train=True uses batch statistics in the norm layers and refreshes
        the running buffers; otherwise the frozen buffers are used. With
        grad=False no gradient graph is kept (cheaper, values identical).
        """
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 4 or images.shape[1:] != (IMAGE_H, IMAGE_W, 3):
            raise ad.ContractViolation(f"expected (N, {IMAGE_H}, {IMAGE_W}, 3), got {images.shape}")
        n = images.shape[0]
        pv = {
            name: Var(val, requires_grad=grad, name=name)
            for name, val in self.params.items()
        }
        x = ad.const(np.ascontiguousarray(images.transpose(0, 3, 1, 2)))
        h1 = ad.conv2d3x3(x, pv["conv1.w"], pv["conv1.b"])
        h1 = self._norm(h1, "norm1", pv, train).relu()
        h2 = ad.conv2d3x3(ad.avg_pool(h1, CELL), pv["conv2.w"], pv["conv2.b"])
        feat_cell = self._norm(h2, "norm2", pv, train).relu()
        feat_half = ad.avg_pool(h1, 2)

        cls_logits = ad.channel_linear(feat_cell, pv["cls.w"], pv["cls.b"])
        obj_logit = ad.channel_linear(feat_cell, pv["obj.w"], pv["obj.b"])[:, 0]
        box_t = ad.channel_linear(feat_cell, pv["box.w"], pv["box.b"])
        cx = ad.const(_CELL_CX) + (CELL / 2.0) * box_t[:, 0].tanh()
        cy = ad.const(_CELL_CY) + (CELL / 2.0) * box_t[:, 1].tanh()
        bw = CELL * _tanh_scaled(box_t[:, 2], 2.0).exp()
        bh = CELL * _tanh_scaled(box_t[:, 3], 2.0).exp()

        z0 = _tanh_scaled(ad.channel_linear(feat_cell, pv["zdir.w"], pv["zdir.b"])[:, 0], 6.0).exp()
        # depth residuals in this world are near-homoscedastic per head, so the
        # uncertainty head is bias-dominated: a damped feature term leaves the
        # per-head calibration constants to carry most of the prediction
        logsig = _tanh_scaled(
            ad.channel_linear(feat_cell * 0.1, pv["logsig.w"], pv["logsig.b"]), 4.0
        )
        z1 = pv["geo1.c"][0].exp() * self.f_scale / bh
        z2 = pv["geo2.c"][0].exp() * self.f_scale / bw

        dense_t = ad.channel_linear(feat_half, pv["dense.w"], pv["dense.b"])[:, 0]
        dense = _tanh_scaled(dense_t, 6.0).exp()
        dense_up = [ad.bilinear(dense[i], IMAGE_H, IMAGE_W) for i in range(n)]

        return ForwardPass(
            param_vars=pv,
            cls_logits=cls_logits,
            obj_logit=obj_logit,
            cx=cx,
            cy=cy,
            bw=bw,
            bh=bh,
            z0=z0,
            z1=z1,
            z2=z2,
            logsig=logsig,
            dense_up=dense_up,
            batch=n,
        )

    def decode(self, fw: ForwardPass, threshold: float = 0.3) -> list:
        """Detections from cells whose objectness clears the threshold and
        is a 3x3 local maximum of the objectness field.

        The peak condition is non-strict, so a constant field (fresh
        detector, blank input) emits every cell; after training it keeps
        one cell per objectness bump, which is what suppresses duplicate
        boxes from the cells flanking an object center. Thresholding gates
        emission only; the returned cells stay tied to the forward graph
        through their (image, cell) indices.
        """
        obj_prob = 1.0 / (1.0 + np.exp(-fw.obj_logit.value))
        logits = fw.cls_logits.value
        cx, cy = fw.cx.value, fw.cy.value
        bw, bh = fw.bw.value, fw.bh.value
        z0, z1, z2 = fw.z0.value, fw.z1.value, fw.z2.value
        logsig = fw.logsig.value
        dets = []
        for n in range(fw.batch):
            keep = np.argwhere(_peaks(obj_prob[n]) & (obj_prob[n] >= threshold))
            for i, j in keep:
                probs = cj.softmax(logits[n, :, i, j])
                score = float(obj_prob[n, i, j] * probs.max())
                box = np.array(
                    [
                        cx[n, i, j] - bw[n, i, j] / 2,
                        cy[n, i, j] - bh[n, i, j] / 2,
                        cx[n, i, j] + bw[n, i, j] / 2,
                        cy[n, i, j] + bh[n, i, j] / 2,
                    ]
                )
                box[0::2] = np.clip(box[0::2], 0.0, IMAGE_W)
                box[1::2] = np.clip(box[1::2], 0.0, IMAGE_H)
                heads = HeadSet(
                    z=np.array([z0[n, i, j], z1[n, i, j], z2[n, i, j]]),
                    sigma=np.exp(logsig[n, :, i, j]),
                )
                dets.append(
                    Detection(
                        box=box,
                        probs=probs,
                        score=score,
                        heads=heads,
                        cell=(int(i), int(j)),
                        image_index=int(n),
                    )
                )
        return dets


def _peaks(field: np.ndarray) -> np.ndarray:
    """Non-strict 3x3 local-maximum mask of a 2-d field."""
    padded = np.pad(field, 1, constant_values=-np.inf)
    peak = np.ones_like(field, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            shifted = padded[1 + di : 1 + di + field.shape[0],
                             1 + dj : 1 + dj + field.shape[1]]
            peak &= field >= shifted
    return peak


# -- source training ----------------------------------------------------------


@dataclass
class TrainRecord:
    step: int
    loss: float
    cls: float
    obj: float
    box: float
    dep: float
    dense: float


def _softplus(x: Var) -> Var:
    return x.relu() + (1.0 + (-abs(x)).exp()).log()


def source_losses(det: ToyDetector, fw: ForwardPass, scenes: list, fp: cj.FocalParams,
                  pos_weight: float = 6.0):
    """The five supervised loss terms for a batch of clean scenes."""
    n = fw.batch
    obj_target = np.zeros((n, GRID_H, GRID_W))
    ns, iis, jjs, clss = [], [], [], []
    cxs, cys, ws, hs, zs = [], [], [], [], []
    for si, scene in enumerate(scenes):
        for k in range(scene.boxes.shape[0]):
            u0, v0, u1, v1 = scene.boxes[k]
            ccx, ccy = 0.5 * (u0 + u1), 0.5 * (v0 + v1)
            ci, cjj = int(ccy / CELL), int(ccx / CELL)
            obj_target[si, ci, cjj] = 1.0
            ns.append(si)
            iis.append(ci)
            jjs.append(cjj)
            clss.append(int(scene.classes[k]))
            cxs.append(ccx)
            cys.append(ccy)
            ws.append(u1 - u0)
            hs.append(v1 - v0)
            zs.append(float(scene.depths[k]))

    o = fw.obj_logit
    t = ad.const(obj_target)
    obj_loss = (
        pos_weight * t * _softplus(-o) + (1.0 - t) * _softplus(o)
    ).mean()

    if ns:
        ns_a, iis_a, jjs_a = np.array(ns), np.array(iis), np.array(jjs)
        sel = (ns_a, slice(None), iis_a, jjs_a)
        logits_sel = fw.cls_logits[sel]
        onehot = np.zeros((len(ns), NUM_CLASSES))
        onehot[np.arange(len(ns)), clss] = 1.0
        cls_loss = cj.focal_loss(logits_sel, onehot, fp) * (1.0 / len(ns))

        cx_t, cy_t = np.array(cxs), np.array(cys)
        w_t, h_t = np.array(ws), np.array(hs)
        box_loss = (
            abs(fw.cx[ns_a, iis_a, jjs_a] - cx_t) * (1.0 / CELL)
            + abs(fw.cy[ns_a, iis_a, jjs_a] - cy_t) * (1.0 / CELL)
            + abs(fw.bw[ns_a, iis_a, jjs_a].log() - np.log(w_t))
            + abs(fw.bh[ns_a, iis_a, jjs_a].log() - np.log(h_t))
        ).mean()

        z_t = np.array(zs)
        ls_sel = fw.logsig[sel]
        sig = ls_sel.exp()
        dep_terms = None
        for hi, zgrid in enumerate((fw.z0, fw.z1, fw.z2)):
            resid = abs(zgrid[ns_a, iis_a, jjs_a] - z_t)
            term = resid / sig[:, hi] + ls_sel[:, hi]
            dep_terms = term if dep_terms is None else dep_terms + term
        dep_loss = dep_terms.mean()
    else:
        cls_loss = ad.const(0.0)
        box_loss = ad.const(0.0)
        dep_loss = ad.const(0.0)

    dense_loss = None
    for si, scene in enumerate(scenes):
        gt = ad.const(scene.depth_map)
        term = abs(fw.dense_up[si] - gt).mean() * (1.0 / n)
        dense_loss = term if dense_loss is None else dense_loss + term

    return cls_loss, obj_loss, box_loss, dep_loss, dense_loss


def source_train(
    steps: int = 3000,
    batch: int = 8,
    lr: float = 0.02,
    momentum: float = 0.9,
    seed: int = 1234,
    fp: cj.FocalParams | None = None,
    log_every: int = 0,
) -> tuple:
    """Train a fresh detector on clean scenes; returns (detector, records)."""
    fp = fp or cj.FocalParams(4.0, 2.0)
    rng = Rng(seed)
    det = ToyDetector.create(rng.fork(1))
    scene_rng = rng.fork(2)
    velocity = {k: np.zeros_like(v) for k, v in det.params.items()}
    records = []
    from .world import generate_scene

    for step in range(steps):
        scenes = [generate_scene(scene_rng.fork(step * batch + b)) for b in range(batch)]
        images = np.stack([s.image for s in scenes])
        fw = det.forward(images, train=True)
        cls_l, obj_l, box_l, dep_l, dense_l = source_losses(det, fw, scenes, fp)
        loss = cls_l + obj_l + 0.5 * box_l + 0.2 * dep_l + 0.5 * dense_l
        gm = ad.backward(loss)
        if gm.saw_nan:
            records.append(TrainRecord(step, float("nan"), 0, 0, 0, 0, 0))
            continue
        for name, pvar in fw.param_vars.items():
            g = gm.get(pvar)
            if g is None:
                continue
            velocity[name] = momentum * velocity[name] + g
            det.params[name] -= lr * velocity[name]
        records.append(
            TrainRecord(
                step,
                float(loss.value),
                float(cls_l.value),
                float(obj_l.value),
                float(box_l.value),
                float(dep_l.value),
                float(dense_l.value),
            )
        )
        if log_every and step % log_every == 0:
            r = records[-1]
            print(
                f"step {r.step:5d} loss {r.loss:8.4f} cls {r.cls:7.4f} obj {r.obj:7.4f} "
                f"box {r.box:7.4f} dep {r.dep:8.4f} dense {r.dense:7.4f}",
                flush=True,
            )
    return det, records
