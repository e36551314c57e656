import math

import numpy as np
import pytest

from sbpnet import pilots
from sbpnet.ctmc import solve_ctmc
from sbpnet.network import HeavyTrafficFamily
from sbpnet.verify import (
    AnalysisFailed,
    abar_terms,
    horizon_for,
    palm_identity_check,
    rows_to_csv,
    run_sweep,
    ssc_diagnostics,
)
from sbpnet.sim import simulate, test_function


def test_horizon_budget(fam_2s5c):
    net = fam_2s5c.instantiate_at(0.1)
    T = horizon_for(net, 0.1, 1e4)
    assert T * (net.lam.sum() + net.traffic.alpha.sum()) == pytest.approx(1e6)


def test_palm_identity_priority_station(prio_net):
    orc = solve_ctmc(prio_net, 60)
    st = simulate(prio_net, 5e4, seed=3, cvals=(math.inf, 0.8))
    for k in (0, 1):
        d = palm_identity_check(prio_net, k, 1, stats=st, oracle=orc)
        assert abs(d["left"] - d["right"]) <= 4 * d["pooled_se"]
        assert abs(d["right"] - d["left_exact"]) <= 4 * d["right_se"] + 1e-3
        d = palm_identity_check(prio_net, k, 2, c=0.8, stats=st)
        assert abs(d["left"] - d["right"]) <= 4 * d["pooled_se"]


def test_palm_identity_general_distributions():
    net = pilots.reentrant_2s5c(lam=0.7, arrival_dist="uniform(a=0.5)", service_dist="erlang(k=2)")
    st = simulate(net, 5e4, seed=1, cvals=(0.3,))
    for k in (0, 2, 4):
        d = palm_identity_check(net, k, 1, c=0.3, stats=st)
        assert abs(d["left"] - d["right"]) <= 4 * d["pooled_se"]


def test_palm_identity_arguments(prio_net):
    with pytest.raises(ValueError):
        palm_identity_check(prio_net, 0, 0, horizon=100.0)
    st = simulate(prio_net, 1e3, seed=0)
    with pytest.raises(ValueError):
        palm_identity_check(prio_net, 0, 1, c=2.0, stats=st)


def test_abar_exact_for_exponential_ctmc():
    # with the exact stationary law of the truncated chain and no clock
    # truncation the exponential identity has no residual
    net = pilots.priority_station(lam=(0.45, 0.45), m=(1.0, 1.0))
    theta = np.array([-0.05, -0.3])
    orc = solve_ctmc(net, 150)
    Z = orc.states
    g = np.exp(Z @ theta)
    psi = orc.expect(g)
    idle = [(Z[:, sorted(net.structure.H[k])] == 0).all(axis=1) for k in range(2)]
    beta = np.array([orc.expect(m) for m in idle])
    cond = np.array([orc.expect(g * m) / b for m, b in zip(idle, beta)])
    tf = test_function(net, theta)
    assert abs(abar_terms(net, theta, 1.0, psi, cond, beta=beta, tf=tf)) < 1e-8


def test_sweep_small(fam_2s5c):
    rep = run_sweep(fam_2s5c, [0.3, 0.2], budget=300, srbm_horizon=200.0, srbm_h=1e-2)
    assert [row.r for row in rep.rows] == [0.3, 0.2]
    rows = rep.to_rows()
    csv = rows_to_csv(rows)
    assert csv.splitlines()[0] == "estimator,value,std_error,batches"
    assert any(r[0].startswith("srbm:") for r in rows)


def test_sweep_gated():
    # m5 > m4 gives a reflection matrix that fails the preconditions
    m = [0.2, 0.6, 0.2, 0.4, 0.6]
    fam = HeavyTrafficFamily(pilots.reentrant_2s5c(m), [1.0, 0, 0, 0, 0], np.zeros(5))
    with pytest.raises(AnalysisFailed):
        run_sweep(fam, [0.2], budget=100)


def test_ssc_diagnostics(fam_2s5c):
    net = fam_2s5c.instantiate_at(0.2)
    d = ssc_diagnostics(net, 0.2, 2e4, seed=0, a_grid=(5, 200))
    assert d["r_mean_H"].value == pytest.approx(0.2 * d["mean_H"].value)
    assert d["ui_tail"][5][0].value >= d["ui_tail"][200][0].value >= 0
