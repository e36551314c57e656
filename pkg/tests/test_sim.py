import math

import numpy as np
import pytest

from sbpnet import pilots
from sbpnet.network import NetworkSpec, validate_spec
from sbpnet.sim import (
    DivergenceWarning,
    collect_palm,
    estimate_mgf,
    estimate_rates,
    remaining_time_tail,
    simulate,
    test_function,
)


def within(est, exact, k=4.0, floor=0.0):
    return abs(est.value - exact) <= max(k * est.std_error, floor)


@pytest.fixture(scope="module")
def mm1_stats(mm1):
    return simulate(mm1, 2e5, seed=11, tails=[(1, 0.5), (2, 1.0)],
                    test_functions=[test_function(mm1, [-0.4], transforms=False)])


def test_mm1_queue_length(mm1_stats):
    m = mm1_stats.mean()
    assert within(Estimate1(m), 1.0)
    p0 = mm1_stats.marginal()
    assert abs(p0.value[0, 0] - 0.5) <= 4 * p0.std_error[0, 0]
    assert within(Estimate1(mm1_stats.beta()), 0.5)


def Estimate1(e):
    # first component of a vector estimate
    return type(e)(float(np.atleast_1d(e.value)[0]), float(np.atleast_1d(e.std_error)[0]), e.batches)


def test_mm1_transform(mm1_stats):
    rho, th = 0.5, -0.4
    exact = (1 - rho) / (1 - rho * math.exp(th))
    est = estimate_mgf(mm1_stats)
    assert within(est["value"], exact)


def test_mm1_remaining_time_tails(mm1_stats, mm1):
    for n, c in [(1, 0.5), (2, 1.0)]:
        out = remaining_time_tail(mm1_stats, mm1, 0, c, n)
        for est, exact in out.values():
            assert within(Estimate1(est), exact)
    with pytest.raises(ValueError):
        remaining_time_tail(mm1_stats, mm1, 0, 3.0, 1)


def test_determinism(prio_net):
    a = simulate(prio_net, 5e3, seed=4)
    b = simulate(prio_net, 5e3, seed=4)
    c = simulate(prio_net, 5e3, seed=5)
    np.testing.assert_array_equal(a.z, b.z)
    np.testing.assert_array_equal(a.n_srv, b.n_srv)
    assert not np.array_equal(a.z, c.z)


def test_merge(prio_net):
    a = simulate(prio_net, 5e3, seed=1, batches=8)
    b = simulate(prio_net, 5e3, seed=2, batches=8)
    m = a.merge(b)
    assert m.batches == 16
    np.testing.assert_allclose(m.mean().value, (a.z.sum(0) + b.z.sum(0)) / (a.total_time + b.total_time))
    other = simulate(prio_net, 5e3, seed=2, batches=8, zmax=50)
    with pytest.raises(ValueError):
        a.merge(other)


def test_event_log_consistency(net_2s5c):
    net = pilots.reentrant_2s5c(lam=0.8)
    s = simulate(net, 2e3, seed=3, log_events=500)
    assert len(s.events) == 500
    K = net.K
    for ev in s.events:
        d = ev.post_state.Z - ev.pre_state.Z
        e = np.zeros(K, dtype=int)
        if ev.kind == "external_arrival":
            e[ev.k] = 1
        else:
            e[ev.k] = -1
            if ev.routed_to is not None:
                e[ev.routed_to] += 1
        np.testing.assert_array_equal(d, e)
    times = [ev.time for ev in s.events]
    assert times == sorted(times)


def test_rates_and_idle_probabilities():
    net = pilots.reentrant_2s5c(lam=0.8)
    s = simulate(net, 1e5, seed=8)
    rates = estimate_rates(s)
    assert abs(rates["arrival"].value[0] - 0.8) < 0.02 * 0.8
    np.testing.assert_allclose(rates["completion"].value, 0.8, rtol=0.02)
    beta = s.beta()
    assert (np.abs(beta.value - net.traffic.beta) <= np.maximum(4 * beta.std_error, 0.01)).all()
    assert s.violations.sum() == 0


def test_preemptive_priority_respected(prio_net):
    # class 2 is served exactly when Z_1 = 0 and Z_2 > 0
    s = simulate(prio_net, 2e4, seed=2)
    np.testing.assert_allclose(s.busy[:, 1], s.idle[:, 0] - s.idle[:, 1], rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(s.busy[:, 0], s.time - s.idle[:, 0], rtol=1e-9, atol=1e-9)


def _dd1(m):
    spec = NetworkSpec(1, (0,), ((0,),), np.zeros((1, 1)), [1.0], [m], ["deterministic"],
                       ["deterministic"])
    return validate_spec(spec)


def test_deterministic_collisions():
    # arrivals every 1.0, services of length 1.0: completion and next arrival coincide
    s = simulate(_dd1(1.0), 1000.0, warmup=10.0, seed=0, batches=10)
    assert s.mean().value[0] == pytest.approx(1.0, abs=1e-9)
    assert s.beta().value[0] == pytest.approx(0.0, abs=1e-9)
    assert s.violations.sum() == 0
    s = simulate(_dd1(0.5), 1000.0, warmup=10.0, seed=0, batches=10)
    assert s.mean().value[0] == pytest.approx(0.5, abs=1e-9)


def test_palm_jumps_telescope(prio_net):
    # without clock terms, event-weighted jumps of g(Z) sum to f(end) - f(start)
    tf = test_function(prio_net, [-0.3, -0.2], transforms=False, palm=True)
    s = simulate(prio_net, 5e4, seed=9, test_functions=[tf])
    palm = collect_palm(s, index=0)
    arr, srv = s.event_rates()
    total = sum(palm[("external_arrival", k)].value * arr.value[k] for k in range(2))
    total += sum(palm[("service_completion", k)].value * srv.value[k] for k in range(2))
    assert abs(total) < 1e-3


def test_palm_functional_from_log(prio_net):
    s = simulate(prio_net, 2e3, seed=9, log_events=2000)
    out = collect_palm(s, functional=lambda ev: ev.pre_state.Z.sum())
    assert ("external_arrival", 0) in out and ("service_completion", 1) in out


def test_divergence_warning():
    net = pilots.single_class(1.5, 1.0)
    with pytest.warns(DivergenceWarning):
        simulate(net, 2e4, seed=0)


def test_bad_horizon(mm1):
    with pytest.raises(ValueError):
        simulate(mm1, 10.0, warmup=20.0)
