
import numpy as np
import pytest

from sbpnet import pilots
from sbpnet.ctmc import (
    NotExponential,
    StateSpaceTooLarge,
    build_generator,
    exact_functionals,
    solve_ctmc,
    stationary,
)


def test_mm1_geometric():
    c = solve_ctmc(pilots.single_class(0.5, 1.0), 80)
    f = exact_functionals(c, max_z=5)
    np.testing.assert_allclose(f["marginal"][0], 0.5 * 0.5 ** np.arange(6), atol=1e-12)
    assert f["mean"][0] == pytest.approx(1.0, abs=1e-10)
    assert f["boundary_mass"] < 1e-20


def test_generator_rows_sum_to_zero(prio_net):
    c = build_generator(prio_net, 20)
    np.testing.assert_allclose(np.asarray(c.generator.sum(axis=1)).ravel(), 0.0, atol=1e-12)
    assert (c.states[0] == 0).all()


def test_priority_station_exact(prio_net):
    c = solve_ctmc(prio_net, 80)
    f = exact_functionals(c, theta=[-0.2, -0.3])
    np.testing.assert_allclose(f["beta"], [0.6, 0.3], atol=1e-9)
    # high class is M/M/1 with load 0.4; the total is M/M/1 with load 0.7
    assert f["mean"][0] == pytest.approx(0.4 / 0.6, abs=1e-8)
    assert f["mean"].sum() == pytest.approx(0.7 / 0.3, abs=1e-6)
    assert f["phi_k"][0] == pytest.approx(
        c.expect(lambda Z: np.exp(-0.2 * Z[:, 0] - 0.3 * Z[:, 1]) * (Z[:, 0] == 0)) / 0.6)


def test_direct_and_iterative_agree(prio_net):
    c = build_generator(prio_net, 40)
    p1 = stationary(c, method="direct").copy()
    p2 = stationary(c, method="iterative")
    np.testing.assert_allclose(p1, p2, atol=1e-9)


def test_network_with_routing():
    # tandem of two exponential stations: product form
    net = pilots.reentrant_2s5c(lam=0.5)
    c = solve_ctmc(net, 14)
    f = exact_functionals(c)
    assert f["boundary_mass"] < 1e-3
    np.testing.assert_allclose(f["beta"], net.traffic.beta, atol=2e-3)


def test_errors(prio_net):
    with pytest.raises(StateSpaceTooLarge):
        build_generator(pilots.reentrant_2s5c(lam=0.5), 30)
    with pytest.raises(NotExponential):
        build_generator(pilots.priority_station(service_dist="erlang(k=2)"), 10)
