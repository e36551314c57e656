import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbpnet.distributions import deterministic, erlang, exponential, hyperexp, lognormal, uniform
from sbpnet.transforms import (
    NoConvergence,
    eta_star,
    expansion_residual,
    solve_eta,
    solve_root,
    solve_xi,
    taylor_expansions,
    xi_argument,
    xi_star,
)

DISTS = [exponential(), deterministic(), uniform(0.5), erlang(2), hyperexp(3.0), lognormal(0.5)]


@pytest.mark.parametrize("theta", np.linspace(-2, 0.5, 11))
def test_exponential_eta_closed_form(theta):
    assert solve_eta(exponential(), theta) == pytest.approx(math.expm1(theta), abs=1e-12)


def test_deterministic_root_is_identity():
    assert solve_root(deterministic(), -0.37) == -0.37


@settings(max_examples=60, deadline=None)
@given(d=st.sampled_from(DISTS), x=st.floats(-1.5, 0.3), t=st.sampled_from([0.0, 0.2, 0.8]))
def test_root_residual(d, x, t):
    if d.kind == "lognormal" and t == 0.0 and x < 0:
        # heavy right tail: no finite transform for negative arguments
        with pytest.raises(NoConvergence):
            solve_root(d, x, t)
        return
    y = solve_root(d, x, t)
    m, _ = d.laplace(y, t)
    assert abs(math.expm1(x + math.log(m))) < 1e-12
    assert y == 0.0 or math.copysign(1, y) == math.copysign(1, x)


def test_xi_matches_exponential_closed_form():
    row = np.array([0.0, 0.6, 0.0])
    theta = np.array([-0.4, -0.1, -0.3])
    x = xi_argument(row, theta, 0)
    assert x == pytest.approx(0.4 + math.log(0.6 * math.exp(-0.1) + 0.4))
    assert solve_xi(exponential(), row, theta, 0) == pytest.approx(math.expm1(x), abs=1e-12)


def test_expansions_agree_to_second_order():
    row = np.array([0.0, 1.0])
    theta = np.array([-1.0, -0.5])
    for d in (exponential(), erlang(3)):
        for r in (1e-2, 1e-3):
            th = r * theta
            assert abs(solve_eta(d, th[0]) - eta_star(th[0], d.scv)) < 5 * r ** 3
            assert abs(solve_xi(d, row, th, 0) - xi_star(th, row, 0, d.scv)) < 5 * r ** 3


def test_taylor_expansions_keys():
    out = taylor_expansions(np.array([-0.1, -0.2]), np.array([0.0, 1.0]), 0, 1.0, 1.0)
    assert {"eta_bar", "eta_tilde", "eta_star", "xi_bar", "xi_tilde", "xi_star"} <= set(out)
    assert out["eta_star"] == pytest.approx(out["eta_bar"] + out["eta_tilde"])


@pytest.mark.parametrize("d", [exponential(), erlang(2)], ids=str)
def test_expansion_residual_shrinks(d):
    rows = expansion_residual(d, np.array([0.0, 1.0]), np.array([-1.0, -0.4]), [0.1, 0.03, 0.01])
    eta = [r["eta_res"] for r in rows]
    xi = [r["xi_res"] for r in rows]
    assert eta[0] > eta[1] > eta[2]
    assert xi[0] > xi[1] > xi[2]
