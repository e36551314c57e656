import itertools

import numpy as np
import pytest

from sbpnet.analysis import SrbmData, analyze
from sbpnet.srbm import NoBoundaryMass, simulate_srbm, solve_lcp, srbm_bar_residual


def brute_force_lcp(M, q):
    n = len(q)
    for k in range(n + 1):
        for S in itertools.combinations(range(n), k):
            z = np.zeros(n)
            if S:
                idx = list(S)
                try:
                    z[idx] = np.linalg.solve(M[np.ix_(idx, idx)], -q[idx])
                except np.linalg.LinAlgError:
                    continue
            w = q + M @ z
            if (z >= -1e-10).all() and (w >= -1e-10).all():
                return z
    return None


def test_lcp_random_p_matrices():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = rng.integers(1, 5)
        A = rng.normal(size=(n, n))
        M = A @ A.T + n * np.eye(n) + rng.normal(scale=0.5, size=(n, n))
        q = rng.normal(size=n)
        z = solve_lcp(M, q)
        w = q + M @ z
        assert (z >= -1e-9).all() and (w >= -1e-9).all()
        assert abs(z @ w) < 1e-8
        np.testing.assert_allclose(z, brute_force_lcp(M, q), atol=1e-8)


def test_lcp_m_matrix_projection():
    M = np.array([[2.5, -1.5], [-5.0, 5.0]])
    q = np.array([-1.0, -0.5])
    z = solve_lcp(M, q, allow_projection=True)
    np.testing.assert_allclose(np.minimum(z, q + M @ z), 0.0, atol=1e-10)


def test_one_dimensional_mean():
    data = SrbmData([[1.0]], [[1.0]], [1.0])
    st = simulate_srbm(data, h=1e-2, horizon=2e4, seed=2, thetas=[[-1.0]])
    # exponential stationary law with mean 1; Euler bias is O(sqrt(h))
    assert st.mean().value[0] == pytest.approx(1.0, rel=0.15)
    assert st.pushing_rate().value[0] == pytest.approx(1.0, rel=0.15)
    assert abs(srbm_bar_residual(st)[0]) < 0.1
    assert st.violations.sum() == 0


def test_2s5c_runs(fam_2s5c):
    data = analyze(fam_2s5c).srbm()
    st = simulate_srbm(data, h=1e-2, horizon=2e3, seed=0)
    assert (st.mean().value > 0).all()
    assert st.violations.sum() == 0


def test_no_boundary_mass():
    data = SrbmData([[1.0]], [[1.0]], [1.0])
    st = simulate_srbm(data, h=1e-2, horizon=10.0, seed=0, thetas=[[-1.0]], batches=4)
    st.dy[:] = 0.0
    with pytest.raises(NoBoundaryMass):
        srbm_bar_residual(st)


def test_deterministic_seed():
    data = SrbmData([[1.0]], [[1.0]], [1.0])
    a = simulate_srbm(data, h=1e-2, horizon=100.0, seed=5)
    b = simulate_srbm(data, h=1e-2, horizon=100.0, seed=5)
    np.testing.assert_array_equal(a.w, b.w)


def test_bad_arguments():
    data = SrbmData([[1.0]], [[1.0]], [1.0])
    with pytest.raises(ValueError):
        simulate_srbm(data, h=1e-2, horizon=1.0, warmup=2.0)
