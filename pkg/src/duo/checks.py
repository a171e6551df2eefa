"""Property checks shared by `duo selftest` and the acceptance tests.

Each check draws its own seeded random samples, evaluates one contract of
the numerical core, and returns a record with the worst observed deviation
so failures are diagnosable from the printed line alone.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import conjugate as cj
from .fusion import fuse_depth, uncertainty_regression_loss
from .linalg import min_eigen_sym, solve_linear
from .normals import edge_weight, normal_consistency_loss, normal_field
from .rng import Rng


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _result(name, passed, detail, t0) -> CheckResult:
    return CheckResult(name, bool(passed), detail, time.time() - t0)


def check_lf_identity(samples: int = 1000, seed: int = 101) -> CheckResult:
    """Split-form identity f(h) - y^T g(h) against the direct focal loss."""
    t0 = time.time()
    rng = Rng(seed)
    worst = 0.0
    for i in range(samples):
        c = int(rng.integers(2, 11))
        gamma = float((0, 1, 2, 3)[int(rng.integers(0, 4))])
        alpha = float((1.0, 4.0)[int(rng.integers(0, 2))])
        fp = cj.FocalParams(alpha, gamma)
        h = rng.uniform((c,)) * 10.0 - 5.0
        y = np.zeros(c)
        y[int(rng.integers(0, c))] = 1.0
        direct = cj.focal_loss(h, y, fp)
        f, g = cj.lf_decompose(h, fp)
        worst = max(worst, abs(float(f - y @ g) - float(direct)))
    return _result("lf_identity", worst <= 1e-10, f"max |dev| {worst:.3e}", t0)


def check_psd(samples: int = 10000, seed: int = 202) -> CheckResult:
    """Symmetrized Jacobian of g over alpha stays PSD at gamma=2."""
    t0 = time.time()
    rng = Rng(seed)
    fp = cj.FocalParams(4.0, 2.0)
    worst = np.inf
    for i in range(samples):
        c = 2 + i % 9
        p = rng.simplex(c)
        jg = cj.jacobian_g(p, fp) / fp.alpha
        worst = min(worst, min_eigen_sym(0.5 * (jg + jg.T)))
    return _result("psd_gamma2", worst >= -1e-8, f"min eigenvalue {worst:.3e}", t0)


def check_reductions(seed: int = 303) -> CheckResult:
    """Entropy reduction at gamma=0, uniform fixed point, y0 oracle match."""
    t0 = time.time()
    rng = Rng(seed)
    dev_ent = 0.0
    for i in range(1000):
        c = 2 + i % 9
        p = rng.simplex(c)
        fp0 = cj.FocalParams(4.0, 0.0)
        dev_ent = max(
            dev_ent,
            abs(float(cj.conjugate_focal_loss(p, fp0)) - 4.0 * float(cj.entropy(p))),
        )
    dev_fix = 0.0
    for c in range(2, 11):
        for gamma in (0.0, 2.0):
            u = np.ones(c) / c
            y0 = cj.y0_exact(u, cj.FocalParams(4.0, gamma))
            dev_fix = max(dev_fix, float(np.max(np.abs(y0 - u))))
    dev_y0 = 0.0
    fp = cj.FocalParams(4.0, 2.0)
    for i in range(100):
        c = 2 + i % 9
        p = rng.simplex(c)
        a = cj.approx_matrix(p, fp)
        brute = solve_linear(a.copy(), p.copy())
        dev_y0 = max(dev_y0, float(np.max(np.abs(cj.y0_approx(p, fp) - brute))))
    ok = dev_ent <= 1e-10 and dev_fix <= 1e-12 and dev_y0 <= 1e-10
    return _result(
        "conjugate_reductions",
        ok,
        f"entropy dev {dev_ent:.3e}, fixed-point dev {dev_fix:.3e}, y0 dev {dev_y0:.3e}",
        t0,
    )


def check_gradients(samples: int = 200, seed: int = 404) -> CheckResult:
    """Backward pass against central differences for both loss branches."""
    t0 = time.time()
    rng = Rng(seed)
    fp = cj.FocalParams(4.0, 2.0)
    worst_cfl = 0.0
    for i in range(samples):
        c = 2 + i % 4
        h0 = rng.uniform((c,)) * 6.0 - 3.0
        hv = ad.Var(h0, requires_grad=True)
        root = cj.conjugate_focal_loss(cj.softmax(hv), fp, grad_mode="full")
        g = ad.backward(root)[hv]
        fd = ad.finite_difference(
            lambda h: float(cj.conjugate_focal_loss(cj.softmax(h), fp)), h0
        )
        denom = max(float(np.max(np.abs(fd))), 1e-8)
        worst_cfl = max(worst_cfl, float(np.max(np.abs(g - fd))) / denom)

    worst_ncl = 0.0
    ncl_samples = max(10, samples // 10)
    for i in range(ncl_samples):
        depth = 5.0 + rng.uniform((8, 10)) * 2.0
        image = rng.uniform((8, 10))

        def ncl_mean(d):
            return normal_consistency_loss(d, image).mean()

        dv = ad.Var(depth, requires_grad=True)
        gm = ad.backward(ncl_mean(dv))
        g = gm.get(dv)
        fd = ad.finite_difference(lambda d: float(ncl_mean(d)), depth, step=1e-5)
        denom = max(float(np.max(np.abs(fd))), 1e-8)
        worst_ncl = max(worst_ncl, float(np.max(np.abs(g - fd))) / denom)
    ok = worst_cfl <= 1e-4 and worst_ncl <= 1e-4
    return _result(
        "gradient_checks",
        ok,
        f"cfl rel dev {worst_cfl:.3e} ({samples} pts), ncl rel dev {worst_ncl:.3e} "
        f"({ncl_samples} grids)",
        t0,
    )


def check_geometric_nulls(seed: int = 505) -> CheckResult:
    """Planar-depth null, unit normals, edge-weight range."""
    t0 = time.time()
    rng = Rng(seed)
    u = np.arange(12)[None, :] * np.ones((10, 1))
    v = np.arange(10)[:, None] * np.ones((1, 12))
    planar = 3.0 + 0.25 * u + 0.125 * v
    image = rng.uniform((10, 12))
    grid = normal_consistency_loss(planar, image)
    interior = float(np.max(np.abs(grid[2:-2, 2:-2])))

    worst_norm = 0.0
    worst_w = (np.inf, -np.inf)
    for i in range(50):
        depth = 4.0 + rng.uniform((9, 11)) * 3.0
        nf = normal_field(depth)
        norms = np.sqrt((nf**2).sum(axis=-1))
        worst_norm = max(worst_norm, float(np.max(np.abs(norms - 1.0))))
        img = rng.uniform((9, 11))
        w = edge_weight(img)
        worst_w = (min(worst_w[0], float(w.min())), max(worst_w[1], float(w.max())))
    ok = interior <= 1e-10 and worst_norm <= 1e-6 and worst_w[0] > 0 and worst_w[1] <= 1.0
    return _result(
        "geometric_nulls",
        ok,
        f"planar interior {interior:.3e}, unit-norm dev {worst_norm:.3e}, "
        f"weight range ({worst_w[0]:.3e}, {worst_w[1]:.6f}]",
        t0,
    )


def check_fusion_oracles(seed: int = 606) -> CheckResult:
    """Hand fusion case, equal-sigma mean identity, L_dep stationarity."""
    t0 = time.time()
    rng = Rng(seed)
    hand = abs(fuse_depth(np.array([10.0, 20.0]), np.array([1.0, 2.0])) - 40.0 / 3.0)

    dev_mean = 0.0
    for i in range(200):
        k = 2 + i % 4
        z = rng.uniform((k,)) * 20.0 + 1.0
        sig = np.full(k, float(rng.uniform(())) * 3.0 + 0.5)
        dev_mean = max(dev_mean, abs(fuse_depth(z, sig) - float(z.mean())))

    # stationarity of |z - z*|/sigma + log sigma at sigma = |residual|
    dev_stat = 0.0
    for i in range(200):
        k = 2 + i % 4
        z = rng.uniform((k,)) * 20.0 + 1.0
        zs = float(rng.uniform(())) * 20.0 + 1.0
        resid = np.abs(z - zs)
        resid = np.maximum(resid, 1e-3)
        base = float(uncertainty_regression_loss(z, resid, zs))
        for scale in (1.0 + 1e-6, 1.0 - 1e-6):
            perturbed = float(uncertainty_regression_loss(z, resid * scale, zs))
            dev_stat = max(dev_stat, base - perturbed)
    ok = hand <= 1e-9 and dev_mean <= 1e-9 and dev_stat <= 1e-9
    return _result(
        "fusion_oracles",
        ok,
        f"hand case dev {hand:.3e}, equal-sigma dev {dev_mean:.3e}, "
        f"stationarity dev {dev_stat:.3e}",
        t0,
    )


ALL_CHECKS = (
    check_lf_identity,
    check_psd,
    check_reductions,
    check_gradients,
    check_geometric_nulls,
    check_fusion_oracles,
)

_FAST_SAMPLES = {
    "check_lf_identity": {"samples": 200},
    "check_psd": {"samples": 1000},
    "check_gradients": {"samples": 40},
}


def run_selftest(fast: bool = False) -> bool:
    """Run every check, print one line each; True when all pass."""
    all_ok = True
    for fn in ALL_CHECKS:
        kwargs = _FAST_SAMPLES.get(fn.__name__, {}) if fast else {}
        res = fn(**kwargs)
        mark = "pass" if res.passed else "FAIL"
        print(f"[{mark}] {res.name}: {res.detail} ({res.seconds:.2f}s)")
        all_ok = all_ok and res.passed
    return all_ok
