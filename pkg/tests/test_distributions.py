import math

import numpy as np
import pytest
from scipy import integrate

from sbpnet.distributions import (
    DistributionError,
    DistributionModel,
    deterministic,
    erlang,
    exponential,
    hyperexp,
    lognormal,
    parse_distribution,
    uniform,
)

ALL = [exponential(), deterministic(), uniform(0.5), erlang(3), hyperexp(4.0), lognormal(0.5)]
SCV = [1.0, 0.0, 0.25 / 3, 1 / 3, 4.0, 0.5]


@pytest.mark.parametrize("d,scv", list(zip(ALL, SCV)))
def test_unit_mean_and_scv(d, scv):
    assert d.moment(1) == pytest.approx(1.0, rel=1e-12)
    assert d.scv == pytest.approx(scv, rel=1e-10, abs=1e-14)


@pytest.mark.parametrize("d", ALL, ids=str)
def test_sampling_matches_moments(d):
    x = d.sample(np.random.default_rng(3), 400_000)
    assert (x >= 0).all()
    assert x.mean() == pytest.approx(1.0, abs=5 * math.sqrt(d.scv / len(x)) + 1e-12)
    if d.scv > 0:
        assert x.var() == pytest.approx(d.scv, rel=0.05)


def test_laplace_closed_forms():
    for s in (-0.5, 0.3, 2.0):
        m, dm = exponential().laplace(s)
        assert m == pytest.approx(1 / (1 + s))
        assert dm == pytest.approx(-1 / (1 + s) ** 2)
        m, _ = erlang(4).laplace(s)
        assert m == pytest.approx((1 + s / 4) ** -4)
        assert deterministic().laplace(s)[0] == pytest.approx(math.exp(-s))


@pytest.mark.parametrize("d", ALL, ids=str)
@pytest.mark.parametrize("t", [0.0, 0.5])
def test_laplace_derivative(d, t):
    s, h = 0.4, 1e-6
    _, dm = d.laplace(s, t)
    fd = (d.laplace(s + h, t)[0] - d.laplace(s - h, t)[0]) / (2 * h)
    assert dm == pytest.approx(fd, rel=1e-5)


@pytest.mark.parametrize("d", [uniform(0.5), lognormal(0.5), erlang(2)], ids=str)
def test_truncated_laplace_by_quadrature(d):
    # E[exp(-s min(T, cap))] against Monte Carlo with common random numbers
    s, t = -0.3, 0.4
    cap = 1 / t
    x = d.sample(np.random.default_rng(0), 2_000_000)
    mc = np.exp(-s * np.minimum(x, cap))
    assert d.laplace(s, t)[0] == pytest.approx(mc.mean(), abs=4 * mc.std() / math.sqrt(len(x)))


def test_trunc_mean_and_tails():
    e = exponential()
    assert e.trunc_mean(2.0) == pytest.approx(1 - math.exp(-2.0))
    assert e.sf(1.5) == pytest.approx(math.exp(-1.5))
    # E[(T^2 - d^2) 1(T >= d)] for exponential
    d = 0.7
    val, _ = integrate.quad(lambda x: (x * x - d * d) * math.exp(-x), d, math.inf)
    assert e.partial_moment(2, d) == pytest.approx(val)
    assert uniform(0.5).trunc_mean(math.inf) == pytest.approx(1.0)


@pytest.mark.parametrize("text", ["exponential", "deterministic", "uniform(a=0.3)", "erlang(k=4)",
                                  "hyperexp(scv=2)", "lognormal(scv=0.25)"])
def test_parse_roundtrip(text):
    d = parse_distribution(text)
    assert parse_distribution(str(d)) == d


@pytest.mark.parametrize("text", ["gamma(k=2)", "erlang(k=1.5)", "hyperexp(scv=0.5)", "uniform(a=1.2)",
                                  "exponential(scv=1)", "erlang(scv=2)", "??"])
def test_parse_rejects(text):
    with pytest.raises(DistributionError):
        parse_distribution(text)


def test_model_rejects_unknown_kind():
    with pytest.raises(DistributionError):
        DistributionModel("pareto", 2.0)
