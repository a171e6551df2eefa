"""Reverse-mode engine: every op against central differences, plus the
adjoint identities for the structured grid operators."""

import numpy as np
import pytest

from duo import autodiff as ad
from duo.autodiff import ContractViolation, Var
from duo.rng import Rng


def _check_grad(build, x0, rtol=1e-6, step=1e-6, atol=1e-8):
    """build(Var) -> scalar Var; compares backward against central diff.

    The absolute term absorbs probe noise where the true gradient is zero.
    """
    v = Var(x0.copy(), requires_grad=True)
    gm = ad.backward(build(v))
    g = gm[v]
    fd = ad.finite_difference(lambda x: float(build(Var(x, requires_grad=False)).value), x0, step=step)
    scale = max(float(np.max(np.abs(fd))), float(np.max(np.abs(g))))
    assert np.max(np.abs(g - fd)) <= rtol * scale + atol, f"grad mismatch: {g} vs {fd}"


def test_elementwise_ops_gradients():
    r = Rng(41)
    x0 = r.uniform((5,)) * 2.0 + 0.5
    cases = [
        lambda v: (v * 3.0 + 1.0).sum(),
        lambda v: (v - 2.0).sum() + (3.0 - v).sum(),
        lambda v: (v / 2.0).sum() + (2.0 / v).sum(),
        lambda v: (-v).sum(),
        lambda v: (v**3).sum(),
        lambda v: abs(v - 1.2).sum(),
        lambda v: v.exp().sum(),
        lambda v: v.log().sum(),
        lambda v: v.sqrt().sum(),
        lambda v: v.tanh().sum(),
        lambda v: v.sigmoid().sum(),
        lambda v: (v * v).mean(),
        lambda v: ad.exp(-ad.sqrt(v * v + 1.0)).sum(),
    ]
    for build in cases:
        _check_grad(build, x0)


def test_relu_and_clamp_gradients_away_from_kinks():
    x0 = np.array([-2.0, -0.5, 0.4, 1.7])
    _check_grad(lambda v: v.relu().sum(), x0)
    _check_grad(lambda v: v.clamp_min(0.1).sum(), x0)
    # subgradient convention at the kink: relu'(0) = 0, clamp pass-through off
    v = Var(np.array([0.0]), requires_grad=True)
    assert ad.backward(v.relu().sum())[v][0] == 0.0


def test_broadcasting_gradients():
    r = Rng(42)
    a0 = r.normal((3, 4))
    b0 = r.normal((4,))

    va, vb = Var(a0.copy()), Var(b0.copy())
    gm = ad.backward(((va + vb) * 2.0).sum())
    assert gm[va].shape == (3, 4)
    assert gm[vb].shape == (4,)
    assert np.allclose(gm[vb], 6.0)

    va, vb = Var(a0.copy()), Var(b0.copy())
    gm = ad.backward((va * vb).sum())
    assert np.allclose(gm[vb], a0.sum(axis=0))


def test_reductions_and_reshape_gradients():
    r = Rng(43)
    x0 = r.normal((4, 6))
    _check_grad(lambda v: v.sum(axis=0).mean() * 2.0, x0)
    _check_grad(lambda v: v.mean(axis=1, keepdims=True).sum(), x0)
    _check_grad(lambda v: v.reshape(24).sum(), x0)
    _check_grad(lambda v: v.transpose().mean(), x0)
    _check_grad(lambda v: (v.reshape(2, 12) ** 2).sum(), x0)


def test_indexing_gradients():
    r = Rng(44)
    x0 = r.normal((5, 7))
    _check_grad(lambda v: v[2].sum(), x0)
    _check_grad(lambda v: v[1:4, 2:5].sum(), x0)
    idx = (np.array([0, 2, 2]), np.array([1, 3, 3]))
    # repeated fancy indices must accumulate
    _check_grad(lambda v: (v[idx] ** 2).sum(), x0)


def test_matmul_gradients():
    r = Rng(45)
    a0 = r.normal((3, 4))
    b0 = r.normal((4, 2))
    va, vb = Var(a0.copy()), Var(b0.copy())
    gm = ad.backward((va @ vb).sum())
    assert np.allclose(gm[va], np.ones((3, 2)) @ b0.T)
    assert np.allclose(gm[vb], a0.T @ np.ones((3, 2)))


def test_stack_scalars_gradient():
    r = Rng(46)
    x0 = r.uniform((3,)) + 0.5

    def build(v):
        s = ad.stack_scalars([v[0] * 2.0, v[1].exp(), v[2] * v[0]])
        return (s * s).sum()

    _check_grad(build, x0)


def test_stop_gradient_and_const_block_flow():
    x0 = np.array([1.5, 2.5])
    v = Var(x0.copy())
    root = (ad.stop_gradient(v * 3.0) * v).sum()
    g = ad.backward(root)[v]
    assert np.allclose(g, 3.0 * x0)
    c = ad.const(np.ones(2))
    assert not c.requires_grad


def test_pad_replicate_and_correlate_gradients():
    r = Rng(47)
    x0 = r.normal((5, 6))
    _check_grad(lambda v: ad.pad_replicate(v).sum(), x0)
    k = np.array([[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]])
    _check_grad(lambda v: (ad.correlate3x3(ad.pad_replicate(v), k) ** 2).sum(), x0)


def test_conv2d3x3_gradients_both_inputs():
    r = Rng(48)
    x0 = r.normal((2, 3, 5, 6))
    w0 = r.normal((4, 3, 3, 3))
    b0 = r.normal((4,))

    vx, vw, vb = Var(x0.copy()), Var(w0.copy()), Var(b0.copy())
    root = (ad.conv2d3x3(vx, vw, vb) ** 2).sum()
    gm = ad.backward(root)

    fd_x = ad.finite_difference(
        lambda x: float((ad.conv2d3x3(Var(x, False), Var(w0, False), Var(b0, False)).value ** 2).sum()),
        x0,
    )
    fd_w = ad.finite_difference(
        lambda w: float((ad.conv2d3x3(Var(x0, False), Var(w, False), Var(b0, False)).value ** 2).sum()),
        w0,
    )
    fd_b = ad.finite_difference(
        lambda b: float((ad.conv2d3x3(Var(x0, False), Var(w0, False), Var(b, False)).value ** 2).sum()),
        b0,
    )
    for got, want in ((gm[vx], fd_x), (gm[vw], fd_w), (gm[vb], fd_b)):
        scale = max(float(np.max(np.abs(want))), 1e-10)
        assert np.max(np.abs(got - want)) / scale < 1e-5


def test_channel_linear_and_avg_pool_gradients():
    r = Rng(49)
    x0 = r.normal((2, 3, 4, 6))
    w0 = r.normal((5, 3))
    b0 = r.normal((5,))
    vx, vw, vb = Var(x0.copy()), Var(w0.copy()), Var(b0.copy())
    gm = ad.backward((ad.channel_linear(vx, vw, vb) ** 2).sum())
    fd_w = ad.finite_difference(
        lambda w: float((ad.channel_linear(Var(x0, False), Var(w, False), Var(b0, False)).value ** 2).sum()),
        w0,
    )
    assert np.allclose(gm[vw], fd_w, rtol=1e-5, atol=1e-7)

    _check_grad(lambda v: (ad.avg_pool(v, 2) ** 2).sum(), x0)


def test_bilinear_adjoint_identity():
    # <R x, y> == <x, R^T y> for random pairs
    r = Rng(50)
    for _ in range(20):
        x = r.normal((6, 9))
        y = r.normal((24, 36))
        up = ad.bilinear(Var(x, False), 24, 36).value
        vx = Var(x.copy())
        g = ad.backward((ad.bilinear(vx, 24, 36) * ad.const(y)).sum())[vx]
        assert abs(float((up * y).sum()) - float((x * g).sum())) < 1e-9


def test_bilinear_constant_field_preserved():
    x = np.full((5, 7), 3.25)
    up = ad.bilinear(Var(x, False), 20, 21).value
    assert np.allclose(up, 3.25)


def test_solve_op_value_and_gradients():
    r = Rng(51)
    for _ in range(30):
        n = 2 + int(r.integers(0, 4))
        a0 = r.normal((n, n)) + 3.0 * np.eye(n)
        b0 = r.normal((n,))
        va, vb = Var(a0.copy()), Var(b0.copy())
        x = ad.solve(va, vb)
        assert np.allclose(x.value, np.linalg.solve(a0, b0))
        gm = ad.backward((x**2).sum())
        fd_a = ad.finite_difference(
            lambda a: float((np.linalg.solve(a, b0) ** 2).sum()), a0
        )
        fd_b = ad.finite_difference(
            lambda b: float((np.linalg.solve(a0, b) ** 2).sum()), b0
        )
        assert np.allclose(gm[va], fd_a, rtol=1e-4, atol=1e-7)
        assert np.allclose(gm[vb], fd_b, rtol=1e-4, atol=1e-7)


def test_diag_gradient():
    r = Rng(52)
    v0 = r.uniform((4,)) + 0.5

    def build(v):
        m = ad.diag(v)
        return (m @ m).sum()

    _check_grad(build, v0)


def test_graph_reuse_accumulates():
    v = Var(np.array([2.0]))
    y = v * v  # used twice below
    root = (y + y).sum()
    assert np.allclose(ad.backward(root)[v], 8.0)


def test_backward_flags_nonfinite():
    v = Var(np.array([0.0]))
    gm = ad.backward((1.0 / v).sum())
    assert gm.saw_nan or not np.all(np.isfinite(gm[v]))
    assert not gm.finite()


def test_backward_requires_scalar_root():
    v = Var(np.ones(3))
    with pytest.raises(ContractViolation):
        ad.backward(v * 2.0)


def test_shape_mismatch_raises():
    with pytest.raises(ContractViolation):
        ad.solve(Var(np.ones((2, 3))), Var(np.ones(2)))
