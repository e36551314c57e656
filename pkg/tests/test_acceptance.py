"""Acceptance criteria A1-A10.

Each test records one ``A<n> PASS|FAIL: ...`` line; the lines are echoed in
the terminal summary.  Tolerances are the ones stated for each criterion.
"""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from sbpnet import pilots
from sbpnet.analysis import analyze, check_tight, classify_2x2_tight, closed_form_2s5c
from sbpnet.ctmc import exact_functionals, solve_ctmc
from sbpnet.distributions import erlang, exponential
from sbpnet.sim import simulate, test_function
from sbpnet.srbm import simulate_srbm
from sbpnet.transforms import expansion_residual, solve_eta
from sbpnet.verify import abar_residual, palm_identity_check, run_sweep

pytestmark = pytest.mark.slow


def report(tag, ok, detail):
    line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-300))


# ----------------------------------------------------------------------
def test_A1_closed_form_srbm_data():
    cases = [
        ((0.3, 0.5, 0.4, 0.5, 0.3), "exponential", ["exponential"] * 5),
        ((0.2, 0.3, 0.5, 0.7, 0.3), "erlang(k=3)",
         ["hyperexp(scv=2.5)", "deterministic", "uniform(a=0.4)", "lognormal(scv=0.8)", "erlang(k=2)"]),
        ((0.5, 0.6, 0.3, 0.4, 0.2), "hyperexp(scv=4)",
         ["erlang(k=5)", "lognormal(scv=1.5)", "exponential", "uniform(a=0.9)", "deterministic"]),
    ]
    t0 = time.perf_counter()
    worst = 0.0
    for m, adist, sdists in cases:
        fam = pilots.reentrant_2s5c_family(m, arrival_dist=adist, service_dist=sdists)
        rep = analyze(fam)
        net = fam.network
        R, S, b = closed_form_2s5c(m, net.c2_e[0], net.c2_s)
        worst = max(worst, rel_err(rep.reflection.R, R), rel_err(rep.diffusion.Sigma, S),
                    rel_err(rep.b, b), rel_err(-rep.reflection.R @ rep.b, -R @ b))
    elapsed = time.perf_counter() - t0
    report("A1", worst <= 1e-10 and elapsed < 1.0,
           f"max relative error {worst:.2e} over 3 m-vectors (tol 1e-10), {elapsed:.2f} s (< 1 s)")


# ----------------------------------------------------------------------
@pytest.fixture(scope="module")
def run_r02():
    fam = pilots.reentrant_2s5c_family()
    net = fam.instantiate_at(0.2)
    return net, simulate(net, 1.1e6, warmup=1e5, seed=2024)


def test_A2_idle_probabilities(run_r02):
    net, st = run_r02
    b = st.beta()
    exact = net.traffic.beta
    tol = np.maximum(3 * b.std_error, 0.01)
    dev = np.abs(b.value - exact)
    report("A2", bool((dev <= tol).all()),
           f"beta_hat={np.round(b.value, 4).tolist()} exact={np.round(exact, 4).tolist()} "
           f"max |dev|/tol={float((dev / tol).max()):.3f}")


def test_A3_palm_rates(run_r02):
    net, st = run_r02
    arr, srv = st.event_rates()
    errs = [abs(arr.value[0] / net.lam[0] - 1)]
    errs += list(np.abs(srv.value / net.traffic.alpha - 1))
    report("A3", max(errs) <= 0.01,
           f"max relative rate error {max(errs):.2e} (tol 1e-2) over 1 arrival and 5 completion processes")


# ----------------------------------------------------------------------
def test_A4_transforms():
    t0 = time.perf_counter()
    thetas = np.linspace(-3.0, 0.9, 20)
    err = max(abs(solve_eta(exponential(), th) - math.expm1(th)) for th in thetas)
    row = np.array([0.0, 1.0])
    theta = np.array([-1.0, -0.4])
    ratios = {}
    for d in (exponential(), erlang(2)):
        res = expansion_residual(d, row, theta, [0.1, 0.01])
        ratios[str(d)] = (res[0]["eta_res"] / res[1]["eta_res"], res[0]["xi_res"] / res[1]["xi_res"])
    elapsed = time.perf_counter() - t0
    ok = err <= 1e-12 and all(min(v) >= 5 for v in ratios.values()) and elapsed < 1.0
    detail = ", ".join(f"{k}: eta x{v[0]:.0f} xi x{v[1]:.0f}" for k, v in ratios.items())
    report("A4", ok, f"exponential eta error {err:.1e} (tol 1e-12); residual decrease r=0.1->0.01 "
                     f"{detail} (need >= 5); {elapsed:.2f} s")


# ----------------------------------------------------------------------
@pytest.fixture(scope="module")
def prio_oracle():
    net = pilots.priority_station(lam=(0.4, 0.3))
    return net, solve_ctmc(net, 400)


THETAS_A5 = [(-0.1, -0.1), (-0.5, -0.2), (-0.2, -0.3), (-1.0, -0.5), (-0.05, -0.4)]


def test_A5_oracle_equivalence(prio_oracle):
    net, orc = prio_oracle
    tfs = [test_function(net, th, transforms=False) for th in THETAS_A5]
    st = simulate(net, 4e5, seed=77, test_functions=tfs)
    worst = 0.0
    mg = st.marginal()
    ex = exact_functionals(orc, max_z=10)
    for k in range(2):
        for z in range(11):
            tol = max(3 * mg.std_error[k, z], 1e-2)
            worst = max(worst, abs(mg.value[k, z] - ex["marginal"][k, z]) / tol)
    b = st.beta()
    worst = max(worst, float((np.abs(b.value - ex["beta"]) / np.maximum(3 * b.std_error, 1e-2)).max()))
    for i, th in enumerate(THETAS_A5):
        phi = exact_functionals(orc, theta=th)["phi"]
        e = st.ratio(st.mgf[:, i])
        worst = max(worst, abs(e.value - phi) / max(3 * e.std_error, 1e-2))
    report("A5", worst <= 1.0,
           f"{orc.num_states} CTMC states; worst |sim - exact| / max(3 s.e., 1e-2) = {worst:.3f} "
           "over marginals z<=10, beta and phi at 5 points")


# ----------------------------------------------------------------------
def test_A6_one_dimensional_heavy_traffic():
    fam = pilots.single_class_family()
    r = 0.05
    net = fam.instantiate_at(r)
    st = simulate(net, 4e6, seed=6)
    m = st.mean()
    val, se = r * m.value[0], r * m.std_error[0]
    rep = analyze(fam)
    data = rep.srbm()
    analytic = float(data.Sigma[0, 0] / (data.R[0, 0] * data.b[0]))
    sr = simulate_srbm(data, h=1e-3, horizon=1e5, seed=6)
    w = sr.mean().value[0]
    ok1 = abs(val - 0.95) <= 3 * se
    ok2 = abs(w / analytic - 1) <= 0.05
    report("A6", ok1 and ok2,
           f"rE[Z]={val:.4f}+-{se:.4f} vs 0.95 ({abs(val - 0.95) / se:.2f} s.e., need <= 3); "
           f"SRBM mean {w:.4f} vs Sigma/(Rb)={analytic:.4f} ({100 * abs(w / analytic - 1):.1f}%, need <= 5%)")


# ----------------------------------------------------------------------
def test_A7_heavy_traffic_consistency():
    fam = pilots.reentrant_2s5c_family()
    # about 6e4 / r^2 events per r: 4e6 time units at r = 0.05
    rep = run_sweep(fam, [0.2, 0.1, 0.05], budget=6e4, seed=7, srbm_h=2.5e-4, srbm_horizon=4e4)
    hs = [(row.r, row.mean_H.value, row.mean_H.std_error) for row in rep.rows]
    ssc_ok = all(a[1] - b[1] > math.hypot(a[2], b[2]) for a, b in zip(hs, hs[1:]))
    last = rep.rows[-1]
    W = rep.srbm_mean.value
    rel = np.abs(last.mean_L.value / W - 1)
    close_ok = bool((rel <= 0.10).all())
    ssc = " > ".join(f"{v:.4f}+-{s:.4f}" for _, v, s in hs)
    report("A7", ssc_ok and close_ok,
           f"SSC rE[Z2+Z3+Z5] over r=0.2,0.1,0.05: {ssc} ({'strictly decreasing' if ssc_ok else 'NOT decreasing'}); "
           f"r=0.05 (rE[Z1], rE[Z4])={np.round(last.mean_L.value, 3).tolist()} vs SRBM "
           f"{np.round(W, 3).tolist()}: rel. diff {np.round(100 * rel, 1).tolist()}% (need <= 10%)")


# ----------------------------------------------------------------------
def test_A8_tight_system_checker():
    rng = np.random.default_rng(8)
    ident = all(check_tight(np.eye(n), rng.uniform(0.05, 5.0, n)).tight for n in (1, 2, 3, 4) for _ in range(5))
    mism = 0
    for _ in range(100):
        R = np.diag(rng.uniform(0.2, 3.0, 2))
        R[0, 1], R[1, 0] = rng.uniform(-2.0, 2.0, 2)
        b = rng.uniform(0.1, 3.0, 2)
        mism += check_tight(R, b).tight != classify_2x2_tight(R)
    pilot_ok = True
    n_pilot = 0
    while n_pilot < 20:
        m1, m4 = rng.uniform(0.05, 0.9, 2)
        m5 = rng.uniform(0.01, min(m4, 1 - m1) - 0.005)
        m = (m1, 1 - m4, 1 - m1 - m5, m4, m5)
        if min(m) <= 0.005:
            continue
        n_pilot += 1
        rep = analyze(pilots.reentrant_2s5c_family(m))
        pilot_ok &= bool(rep.tight.tight and rep.M_matrix)
    report("A8", ident and mism == 0 and pilot_ok,
           f"identity tight: {ident}; 2x2 rule mismatches: {mism}/100; "
           f"2s5c tight and M-matrix for {n_pilot} random m with m5 < m4: {pilot_ok}")


# ----------------------------------------------------------------------
def test_A9_palm_identity(prio_oracle):
    net, orc = prio_oracle
    st = simulate(net, 4e5, seed=99)
    worst = 0.0
    parts = []
    for k in (0, 1):
        for n in (1, 2):
            d = palm_identity_check(net, k, n, stats=st, oracle=orc)
            g1 = abs(d["left"] - d["right"]) / d["pooled_se"]
            g2 = abs(d["left"] - d["left_exact"]) / d["pooled_se"]
            g3 = abs(d["right"] - d["left_exact"]) / d["pooled_se"]
            worst = max(worst, g1, g2, g3)
            parts.append(f"k={k + 1},n={n}: {d['left']:.4f}/{d['right']:.4f}/{d['left_exact']:.4f}")
    report("A9", worst <= 3.0,
           f"left/right/exact {'; '.join(parts)}; worst gap {worst:.2f} pooled s.e. (need <= 3)")


# ----------------------------------------------------------------------
def test_A10_asymptotic_bar():
    fam = pilots.reentrant_2s5c_family()
    theta_L = [(-1.0, -0.1), (-1.0, -0.25), (-0.5, -0.2)]
    res = abar_residual(fam, theta_L, [0.2, 0.1, 0.05], budget=1e4, seeds=range(10))
    by_theta = {}
    for d in res:
        key = (round(d["theta"][0], 6), round(d["theta"][3], 6))
        by_theta.setdefault(key, {})[d["r"]] = d
    ok = True
    parts = []
    for th, rows in by_theta.items():
        a, c = abs(rows[0.2]["residual_over_r2"]), abs(rows[0.05]["residual_over_r2"])
        ok &= c < a
        parts.append(f"theta_L={list(th)}: " + " -> ".join(
            f"{rows[r]['residual_over_r2']:+.4f}" for r in (0.2, 0.1, 0.05)))
    report("A10", ok, "residual/r^2 (mean of 10 seeds) at r=0.2,0.1,0.05: " + "; ".join(parts)
           + " (soft check: |residual| at 0.05 below 0.2)")
