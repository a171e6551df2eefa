"""Dense solver and Jacobi minimum eigenvalue against numpy oracles."""

import numpy as np
import pytest

from duo.linalg import SingularMatrixError, min_eigen_sym, solve_linear
from duo.rng import Rng


def test_solve_matches_numpy_on_random_systems():
    r = Rng(31)
    for i in range(300):
        n = 1 + i % 9
        a = r.normal((n, n)) + 3.0 * np.eye(n)
        b = r.normal((n,))
        x = solve_linear(a.copy(), b.copy())
        assert np.allclose(x, np.linalg.solve(a, b), rtol=1e-10, atol=1e-12)


def test_solve_recovers_known_solution():
    r = Rng(32)
    for i in range(100):
        n = 2 + i % 6
        a = r.normal((n, n)) + 3.0 * np.eye(n)
        x_true = r.normal((n,))
        x = solve_linear(a.copy(), a @ x_true)
        assert np.allclose(x, x_true, rtol=1e-9, atol=1e-11)


def test_solve_needs_pivoting():
    # leading zero forces a row swap
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    b = np.array([2.0, 3.0])
    assert np.allclose(solve_linear(a, b), [3.0, 2.0])


def test_singular_matrix_raises():
    a = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(SingularMatrixError):
        solve_linear(a, np.ones(2))


def test_min_eigen_matches_numpy():
    r = Rng(33)
    worst = 0.0
    for i in range(500):
        n = 1 + i % 10
        m = r.normal((n, n))
        s = 0.5 * (m + m.T)
        mine = min_eigen_sym(s.copy())
        ref = float(np.linalg.eigvalsh(s)[0])
        worst = max(worst, abs(mine - ref))
    assert worst < 1e-9


def test_min_eigen_scale_invariance():
    r = Rng(34)
    for scale in (1e-8, 1.0, 1e8):
        m = r.normal((6, 6))
        s = 0.5 * (m + m.T) * scale
        ref = float(np.linalg.eigvalsh(s)[0])
        assert abs(min_eigen_sym(s.copy()) - ref) < 1e-12 * max(1.0, abs(scale))


def test_min_eigen_diagonal_and_identity():
    assert min_eigen_sym(np.diag([3.0, -2.0, 7.0])) == -2.0
    assert min_eigen_sym(np.eye(4)) == 1.0
    assert min_eigen_sym(np.zeros((3, 3))) == 0.0


def test_min_eigen_psd_gram_matrices_nonnegative():
    r = Rng(35)
    for i in range(200):
        n = 2 + i % 6
        b = r.normal((n, n + 1))
        g = b @ b.T
        assert min_eigen_sym(g) >= -1e-10
