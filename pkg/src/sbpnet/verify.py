"""Experiment harness: heavy-traffic sweeps, BAR residuals, Palm identities, SSC."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import AnalysisReport, analyze, build_reflection, full_theta
from .network import HeavyTrafficFamily, ValidatedNetwork
from .sim import Estimate, NoEvents, SteadyStats, simulate, test_function
from .srbm import simulate_srbm
from .transforms import EPS0

__all__ = [
    "AnalysisFailed",
    "SweepRow",
    "SweepReport",
    "horizon_for",
    "run_sweep",
    "abar_terms",
    "abar_residual",
    "palm_identity_check",
    "ssc_diagnostics",
    "rows_to_csv",
]


class AnalysisFailed(RuntimeError):
    """A precondition of the heavy-traffic comparison does not hold."""


def event_rate(net: ValidatedNetwork) -> float:
    """Mean number of events per unit time (arrivals plus completions)."""
    return float(net.lam.sum() + net.traffic.alpha.sum())


def horizon_for(net: ValidatedNetwork, r: float, budget: float = 1e4) -> float:
    """Time horizon giving about ``budget / r^2`` events."""
    return budget / (r * r) / event_rate(net)


@dataclass
class SweepRow:
    r: float
    mean_L: Estimate  # r E[Z_L]
    mean_H: Estimate  # r E[sum Z_H]
    beta: Estimate
    horizon: float


@dataclass
class SweepReport:
    L: tuple
    H: tuple
    rows: list
    srbm_mean: Estimate | None
    analysis: AnalysisReport | None = None
    notes: list = field(default_factory=list)

    def to_rows(self):
        out = []
        for row in self.rows:
            for i, l in enumerate(self.L):
                out.append((f"r={row.r:g}:rE[Z{l + 1}]", row.mean_L.value[i], row.mean_L.std_error[i],
                            row.mean_L.batches))
            out.append((f"r={row.r:g}:rE[Z_H]", row.mean_H.value, row.mean_H.std_error,
                        row.mean_H.batches))
            for k, (v, s) in enumerate(zip(row.beta.value, row.beta.std_error)):
                out.append((f"r={row.r:g}:beta{k + 1}", v, s, row.beta.batches))
        if self.srbm_mean is not None:
            for i, l in enumerate(self.L):
                out.append((f"srbm:E[W{l + 1}]", self.srbm_mean.value[i], self.srbm_mean.std_error[i],
                            self.srbm_mean.batches))
        return out


def rows_to_csv(rows) -> str:
    """Format ``(estimator, value, std_error, batches)`` tuples as CSV."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["estimator", "value", "std_error", "batches"])
    for name, v, s, b in rows:
        w.writerow([name, f"{float(v):.10g}", f"{float(s):.10g}", int(b)])
    return buf.getvalue()


def _scaled_sum(stats: SteadyStats, classes, r) -> Estimate:
    e = stats.mean_sum(classes) if classes else Estimate(0.0, 0.0, stats.batches)
    return Estimate(r * float(e.value), r * float(e.std_error), e.batches)


def run_sweep(family: HeavyTrafficFamily, r_grid, budget: float = 1e4, seed: int = 0,
              replications: int = 1, srbm: bool = True, srbm_horizon: float = 1e5,
              srbm_h: float | None = None, batches: int = 32) -> SweepReport:
    """Simulate the family along ``r_grid`` and the limiting SRBM once.

    Raises
    ------
    AnalysisFailed
        If ``A_H`` is singular, ``R`` is not completely-S, ``(R, b)`` is not
        tight, or Sigma is not positive definite.
    """
    rep = analyze(family)
    if not rep.ok:
        raise AnalysisFailed("; ".join(rep.failures))
    r_grid = sorted((float(r) for r in r_grid), reverse=True)
    L, H = rep.reflection.L, rep.reflection.H
    rows = []
    for r in r_grid:
        net = family.instantiate_at(r)
        T = horizon_for(net, r, budget)
        stats = None
        for rep_i in range(replications):
            s = simulate(net, T, seed=seed + 1000 * rep_i, batches=batches)
            stats = s if stats is None else stats.merge(s)
        m = stats.mean()
        mean_L = Estimate(r * m.value[list(L)], r * m.std_error[list(L)], m.batches)
        rows.append(SweepRow(r, mean_L, _scaled_sum(stats, H, r), stats.beta(), T))
    srbm_mean = None
    if srbm:
        st = simulate_srbm(rep.srbm(), h=srbm_h, horizon=srbm_horizon, seed=seed, batches=batches)
        srbm_mean = st.mean()
    return SweepReport(L, H, rows, srbm_mean, rep)


# ----------------------------------------------------------------------
def abar_terms(net: ValidatedNetwork, theta, r: float, psi: float, psi_cond, beta=None,
               eps0: float = EPS0, tf=None) -> float:
    """Left side of the asymptotic BAR at ``r`` for estimated transforms.

    Parameters
    ----------
    net : ValidatedNetwork
        The ``r``-th network.
    theta : array_like
        Unscaled K-vector; the test function uses ``r * theta``.
    psi, psi_cond : float, array_like
        ``psi(r theta)`` and its versions conditioned on ``Z_{H(l)} = 0``.
    beta : array_like, optional
        Idle probabilities (default: from the traffic equations).
    """
    if tf is None:
        tf = test_function(net, r * np.asarray(theta, dtype=float), s=r, t=r ** (1 - eps0))
    eta, xi = tf.eta, tf.xi
    beta = net.traffic.beta if beta is None else np.asarray(beta)
    alpha = net.traffic.alpha
    mu = net.mu
    psi_cond = np.asarray(psi_cond, dtype=float)
    q = float(net.lam @ eta + alpha @ xi)
    val = q * psi
    ps = net.structure
    for l in range(net.K):
        km = ps.k_minus[l]
        coef = -mu[l] * xi[l] + (mu[km] * xi[km] if km >= 0 else 0.0)
        val += beta[l] * coef * (psi_cond[l] - psi)
    return val


def abar_residual(family: HeavyTrafficFamily, theta_L, r_grid, budget: float = 1e4,
                  seeds=(0,), eps0: float = EPS0, batches: int = 32) -> list:
    """Residual of the asymptotic BAR divided by ``r^2``.

    ``theta_L`` is one L-vector or a list of them; each ``theta_H`` is derived
    through the critical network's reflection data.  All points share one
    simulation per seed and ``r``.

    Returns
    -------
    list of dict
        One entry per ``(theta, r)`` with ``residual_over_r2`` (mean over
        seeds), its standard error across seeds and the per-seed values.
    """
    data = build_reflection(family.network)
    tl = np.atleast_2d(np.asarray(theta_L, dtype=float))
    thetas = [full_theta(data, t) for t in tl]
    out = []
    for r in sorted(r_grid, reverse=True):
        net = family.instantiate_at(r)
        tfs = [test_function(net, r * th, s=r, t=r ** (1 - eps0)) for th in thetas]
        T = horizon_for(net, r, budget)
        vals = np.zeros((len(seeds), len(thetas)))
        for i, sd in enumerate(seeds):
            st = simulate(net, T, seed=sd, test_functions=tfs, batches=batches)
            for g, (th, tf) in enumerate(zip(thetas, tfs)):
                psi = float(st.ratio(st.mgf[:, g]).value)
                cond = st.ratio(st.mgf_idle[:, g, :], st.idle).value
                vals[i, g] = abar_terms(net, th, r, psi, cond, eps0=eps0, tf=tf) / r ** 2
        n = len(seeds)
        for g, th in enumerate(thetas):
            v = vals[:, g]
            se = v.std(ddof=1) / math.sqrt(n) if n > 1 else float("nan")
            out.append({"r": r, "theta": th.tolist(), "residual_over_r2": float(v.mean()),
                        "std_error": float(se), "per_seed": v.tolist()})
    return out


# ----------------------------------------------------------------------
def _palm_rhs_batches(stats: SteadyStats, net: ValidatedNetwork, k: int, n: int, ci: int):
    """Per-batch right side of the tail identity for class ``k``."""
    K = net.K
    c = stats.cvals[ci]
    P = net.P
    mk = net.m[k]
    gam = net.traffic.gamma[k]
    alpha = net.traffic.alpha
    pz = stats.palm_zmax
    if n + 1 > pz + 1 or n - 1 > pz:
        raise ValueError("n beyond the recorded Palm range")
    cnt = np.concatenate([stats.n_arr, stats.n_srv], axis=1)  # (B, 2K)
    with np.errstate(invalid="ignore", divide="ignore"):
        hs = stats.p_hist[:, K + k, k, :]  # completions of k, histogram of Z_k
        p_ge1 = hs[:, n + 1:].sum(axis=1) / cnt[:, K + k]
        p_ge0 = hs[:, n:].sum(axis=1) / cnt[:, K + k]
        tm = net.spec.service_dist[k].trunc_mean(c / mk)
        rhs = gam * tm * ((1 - P[k, k]) * p_ge1 + P[k, k] * p_ge0)
        if net.lam[k] > 0:
            rhs = rhs + net.lam[k] * stats.p_rw[:, ci, k, k, n - 1] / cnt[:, k]
        for l in range(K):
            if l != k and P[l, k] > 0:
                rhs = rhs + alpha[l] * P[l, k] * stats.p_rw[:, ci, K + l, k, n - 1] / cnt[:, K + l]
    return rhs, cnt


def palm_identity_check(net: ValidatedNetwork, k: int, n: int, c: float = math.inf,
                        horizon: float = 1e5, seed: int = 0, stats: SteadyStats | None = None,
                        oracle=None, batches: int = 32) -> dict:
    """Both sides of the Palm tail identity for ``P(R_{s,k} <= c, Z_k >= n, Z_{H+(k)} = 0)``.

    The right side combines service-completion and arrival event averages
    with exact constants; the left side is a time average.  With ``oracle``
    (a solved :class:`~sbpnet.ctmc.TruncatedCTMC`, ``c = inf`` only) the
    exact left side is reported too.

    Raises
    ------
    NoEvents
        If class ``k`` never completed service.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if stats is None:
        stats = simulate(net, horizon, seed=seed, cvals=(c,), batches=batches)
    if float(c) not in stats.cvals:
        raise ValueError("cutoff c was not accumulated")
    ci = stats.cvals.index(float(c))
    if stats.n_srv[:, k].sum() == 0:
        raise NoEvents(f"class {k} never completed service")
    left = stats.prob_ge_hp_idle(k, n, None if math.isinf(c) else ci)
    rhs_b, cnt = _palm_rhs_batches(stats, net, k, n, ci)
    ok = np.isfinite(rhs_b)
    B = int(ok.sum())
    # pooled estimate from totals, batch spread for the standard error
    tot = cnt.sum(axis=0)
    K = net.K
    hs = stats.p_hist[:, K + k, k, :].sum(axis=0)
    mk = net.m[k]
    tm = net.spec.service_dist[k].trunc_mean(c / mk)
    P = net.P
    right = net.traffic.gamma[k] * tm * ((1 - P[k, k]) * hs[n + 1:].sum() / tot[K + k]
                                          + P[k, k] * hs[n:].sum() / tot[K + k])
    if net.lam[k] > 0:
        right += net.lam[k] * stats.p_rw[:, ci, k, k, n - 1].sum() / tot[k]
    for l in range(K):
        if l != k and P[l, k] > 0 and tot[K + l] > 0:
            right += net.traffic.alpha[l] * P[l, k] * stats.p_rw[:, ci, K + l, k, n - 1].sum() / tot[K + l]
    se_right = float(np.std(rhs_b[ok], ddof=1) / math.sqrt(B)) if B > 1 else float("nan")
    se_left = float(left.std_error)
    out = {
        "left": float(left.value),
        "left_se": se_left,
        "right": float(right),
        "right_se": se_right,
        "pooled_se": math.hypot(se_left, se_right),
        "batches": B,
    }
    if oracle is not None and math.isinf(c):
        Z = oracle.states
        mask = Z[:, k] >= n
        for h in net.structure.H_plus[k]:
            mask &= Z[:, h] == 0
        out["left_exact"] = oracle.expect(mask)
    return out


def ssc_diagnostics(net: ValidatedNetwork, r: float, horizon: float, seed: int = 0,
                    a_grid=(5, 10, 20, 50), stats: SteadyStats | None = None) -> dict:
    """State-space-collapse and uniform-integrability probes at one ``r``."""
    if stats is None:
        stats = simulate(net, horizon, seed=seed)
    H = net.structure.high
    m = stats.mean()
    ui = {a: [stats.tail_mean(k, a) for k in range(net.K)] for a in a_grid}
    return {
        "r": r,
        "mean": m,
        "mean_H": stats.mean_sum(H) if H else Estimate(0.0, 0.0, stats.batches),
        "r_mean_H": _scaled_sum(stats, H, r),
        "ui_tail": ui,
    }
