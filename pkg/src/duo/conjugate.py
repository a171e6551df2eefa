"""Focal loss, its convex-pair split, and the conjugate focal loss.

The focal loss -alpha (1-p_t)^gamma log p_t over softmax probabilities
splits as L(h, y) = f(h) - y . g(h) with f(h) = alpha log sum exp(h) and
g(h) = alpha h + alpha ((1-p)^gamma - 1) log p. Inverting the linearized
optimality condition of that split around the current prediction gives a
label-free self-target y0, and plugging y0 back into the focal form yields
the conjugate focal loss used as the semantic uncertainty score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .linalg import SingularMatrixError, solve_linear

PROB_FLOOR = 1e-12


class DegenerateProbabilityError(ValueError):
    """A probability entry sits at or below the floor where logs blow up."""


@dataclass(frozen=True)
class FocalParams:
    """Focusing parameters: alpha > 0 scales, gamma >= 0 sharpens."""

    alpha: float = 4.0
    gamma: float = 2.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ad.ContractViolation(f"alpha must be positive, got {self.alpha}")
        if self.gamma < 0:
            raise ad.ContractViolation(f"gamma must be >= 0, got {self.gamma}")


def softmax(h, axis: int = -1):
    """Softmax along an axis, renormalized and then floored at PROB_FLOOR.

    Accepts a Var (differentiable, max-shift held out of the graph) or a
    plain array. The floor leaves the sum above 1 by at most (c-1) times
    PROB_FLOOR; callers treating the output as a simplex point tolerate
    that slack.
    """
    # flooring must come after the renormalize: dividing a floored entry by
    # a sum > 1 would push it back below the floor
    if isinstance(h, Var):
        shift = np.max(h.value, axis=axis, keepdims=True)
        z = (h - ad.const(shift)).exp()
        p = z / z.sum(axis=axis, keepdims=True)
        return p.clamp_min(PROB_FLOOR)
    h = np.asarray(h, dtype=np.float64)
    z = np.exp(h - np.max(h, axis=axis, keepdims=True))
    p = z / z.sum(axis=axis, keepdims=True)
    return np.maximum(p, PROB_FLOOR)


def _check_one_hot(y: np.ndarray, c: int) -> None:
    if y.shape[-1] != c:
        raise ad.ContractViolation(f"label length {y.shape[-1]} != classes {c}")
    ones = np.sum(y == 1.0, axis=-1)
    zeros = np.sum(y == 0.0, axis=-1)
    if not np.all(ones == 1) or not np.all(zeros == y.shape[-1] - 1):
        raise ad.ContractViolation("labels must be one-hot rows")


def focal_loss(h, y, fp: FocalParams):
    """Focal loss of logits h against one-hot y, summed over rows.

    h: (c,) or (n, c) logits, Var or array. y: matching one-hot array.
    """
    y = np.asarray(y, dtype=np.float64)
    hv = h.value if isinstance(h, Var) else np.asarray(h)
    _check_one_hot(y, hv.shape[-1])
    p = softmax(h)
    yk = ad.const(y) if isinstance(h, Var) else y
    term = yk * (1.0 - p) ** fp.gamma * ad.log(p)
    return -fp.alpha * term.sum()


def lf_decompose(h, fp: FocalParams):
    """The split (f, g) with focal_loss(h, y) = f(h) - y . g(h).

    Returns (f, g): f a scalar, g a vector matching h. Accepts Var or array.
    """
    p = softmax(h)
    hv = h.value if isinstance(h, Var) else np.asarray(h, dtype=np.float64)
    shift = float(np.max(hv))
    if isinstance(h, Var):
        f = fp.alpha * ((h - shift).exp().sum().log() + shift)
    else:
        f = fp.alpha * (np.log(np.sum(np.exp(hv - shift))) + shift)
    g = fp.alpha * h + fp.alpha * ((1.0 - p) ** fp.gamma - 1.0) * ad.log(p)
    return f, g


def _check_interior(p: np.ndarray) -> None:
    if p.ndim != 1:
        raise ad.ContractViolation(f"expected a probability vector, got shape {p.shape}")
    if abs(float(p.sum()) - 1.0) > 1e-6:
        raise ad.ContractViolation(f"probabilities sum to {p.sum():.6f}, not 1")
    # entries exactly at the floor are legal: they are what clamping emits
    if np.any(p < PROB_FLOOR):
        raise DegenerateProbabilityError(
            f"probability {p.min():.3e} below floor {PROB_FLOOR:g}"
        )


def jacobian_g(p: np.ndarray, fp: FocalParams) -> np.ndarray:
    """Jacobian of g through the softmax, as a function of probabilities.

    Equals alpha (I + diag(s) H) with H = diag(p) - p p^T and
    s_i = ((1-p_i)^gamma - 1)/p_i - gamma (1-p_i)^(gamma-1) log p_i.
    """
    p = np.asarray(p, dtype=np.float64)
    _check_interior(p)
    one_m = 1.0 - p
    s = (one_m**fp.gamma - 1.0) / p
    if fp.gamma > 0:
        s = s - fp.gamma * one_m ** (fp.gamma - 1.0) * np.log(p)
    hmat = np.diag(p) - np.outer(p, p)
    return fp.alpha * (np.eye(p.size) + s[:, None] * hmat)


def y0_exact(p: np.ndarray, fp: FocalParams) -> np.ndarray:
    """Self-target from the exact linearization: (jacobian_g/alpha)^-1 p."""
    p = np.asarray(p, dtype=np.float64)
    bracket = jacobian_g(p, fp) / fp.alpha
    try:
        return solve_linear(bracket, p)
    except SingularMatrixError as err:
        raise SingularMatrixError(f"exact self-target system singular: {err}") from err


def approx_matrix(p: np.ndarray, fp: FocalParams, mode: str = "outer") -> np.ndarray:
    """The simplified system matrix A of the practical self-target.

    mode "outer": A = I + gamma diag(1 - log p) p p^T - gamma diag(p log p).
    mode "scalar": the p^T p reading, which collapses A to a diagonal.
    """
    p = np.asarray(p, dtype=np.float64)
    _check_interior(p)
    c = p.size
    logp = np.log(p)
    if mode == "outer":
        return (
            np.eye(c)
            + fp.gamma * (1.0 - logp)[:, None] * np.outer(p, p)
            - fp.gamma * np.diag(logp * p)
        )
    if mode == "scalar":
        s = float(p @ p)
        return np.eye(c) + fp.gamma * np.diag((1.0 - logp) * s) - fp.gamma * np.diag(
            logp * p
        )
    raise ad.ContractViolation(f"unknown matrix mode {mode!r}")


def y0_approx(p: np.ndarray, fp: FocalParams, mode: str = "outer") -> np.ndarray:
    """Practical self-target: solve A y0 = p with the simplified A."""
    p = np.asarray(p, dtype=np.float64)
    a = approx_matrix(p, fp, mode)
    try:
        return solve_linear(a, p)
    except SingularMatrixError as err:
        raise SingularMatrixError(f"self-target system singular: {err}") from err


def _approx_matrix_var(p: Var, fp: FocalParams, mode: str) -> Var:
    c = p.value.size
    logp = p.log()
    eye = ad.const(np.eye(c))
    if mode == "outer":
        outer = p.reshape(c, 1) * p.reshape(1, c)
        rows = (1.0 - logp).reshape(c, 1)
        return eye + fp.gamma * rows * outer - ad.diag(fp.gamma * logp * p)
    if mode == "scalar":
        s = (p * p).sum()
        return eye + ad.diag(fp.gamma * (1.0 - logp) * s) - ad.diag(
            fp.gamma * logp * p
        )
    raise ad.ContractViolation(f"unknown matrix mode {mode!r}")


def conjugate_focal_loss(
    p,
    fp: FocalParams,
    grad_mode: str = "pseudo_label",
    matrix_mode: str = "outer",
):
    """Label-free focal loss against the self-target y0.

    L = -alpha sum_i (1 - p_i)^gamma y0_i log p_i, with y0 = A^-1 p.

    grad_mode "pseudo_label" (default): the focusing weight and A are held
    out of the gradient, so gradients flow through p and log p only.
    grad_mode "full": everything flows, including through A via the solve.
    Plain arrays just get the value.
    """
    if not isinstance(p, Var):
        p = np.asarray(p, dtype=np.float64)
        y0 = y0_approx(p, fp, matrix_mode)
        return float(-fp.alpha * np.sum((1.0 - p) ** fp.gamma * y0 * np.log(p)))
    pbar = p.value
    _check_interior(pbar)
    if grad_mode == "pseudo_label":
        weight = ad.const((1.0 - pbar) ** fp.gamma)
        a = ad.const(approx_matrix(pbar, fp, matrix_mode))
        y0 = ad.solve(a, p)
    elif grad_mode == "full":
        weight = (1.0 - p) ** fp.gamma
        a = _approx_matrix_var(p, fp, matrix_mode)
        y0 = ad.solve(a, p)
    else:
        raise ad.ContractViolation(f"unknown grad mode {grad_mode!r}")
    return -fp.alpha * (weight * y0 * p.log()).sum()


def semantic_uncertainty(p, fp: FocalParams, matrix_mode: str = "outer") -> float:
    """Scalar uncertainty of one prediction: the conjugate focal loss value."""
    p = np.asarray(p.value if isinstance(p, Var) else p, dtype=np.float64)
    return float(conjugate_focal_loss(p, fp, matrix_mode=matrix_mode))


def entropy(p, axis: int = -1):
    """Shannon entropy along an axis, in nats. Var or array."""
    return -(p * ad.log(p)).sum(axis=axis)
