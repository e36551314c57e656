"""Arrival/service transforms eta, xi and their quadratic expansions.

``eta(theta, t)`` is the root of ``exp(theta) * E[exp(-eta * T_t)] = 1`` and
``xi(theta, t)`` the root of
``sum_l P[k, l] exp(theta_l - theta_k) * E[exp(-xi * T_t)] = 1`` where the sum
includes the exit (``theta_0 = 0``) and ``T_t = min(T, 1/t)``.  Both reduce to
the same scalar problem ``exp(x) * M_t(y) = 1`` which is solved by a
safeguarded Newton iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distributions import DistributionModel

__all__ = [
    "NoConvergence",
    "EPS0",
    "solve_root",
    "solve_eta",
    "solve_xi",
    "xi_argument",
    "eta_bar",
    "eta_tilde",
    "eta_star",
    "xi_bar",
    "xi_tilde",
    "xi_star",
    "taylor_expansions",
    "TransformPair",
    "expansion_residual",
]

EPS0 = 0.4
ROOT_TOL = 1e-12


class NoConvergence(RuntimeError):
    """Root solver failed; the distribution model admits no root here."""


def solve_root(dist: DistributionModel, x: float, t: float = 0.0, max_iter: int = 200) -> float:
    """Solve ``exp(x) * E[exp(-y * min(T, 1/t))] = 1`` for ``y``.

    The map ``h(y) = x + log M_t(y)`` is strictly decreasing, so the root is
    unique; it has the sign of ``x``.
    """
    x = float(x)
    if x == 0.0:
        return 0.0
    if dist.kind == "deterministic" and (t <= 0 or t <= 1.0):
        return x

    def h(y):
        m, dm = dist.laplace(y, t)
        if not math.isfinite(m) or m <= 0:
            return math.inf, 0.0
        return x + math.log(m), dm / m

    # bracket [lo, hi] with h(lo) > 0 > h(hi)
    dom = dist.mgf_domain(t)
    if x > 0:
        lo, hi = 0.0, max(x, 1e-300)
        while h(hi)[0] > 0:
            lo, hi = hi, 2 * hi
            if hi > 1e300:
                raise NoConvergence("cannot bracket positive root")
    else:
        hi = 0.0
        lo = min(x, -1e-300)
        if lo <= dom:
            lo = 0.5 * dom
        for _ in range(2000):
            if h(lo)[0] > 0:
                break
            hi = lo
            lo = 2 * lo if not math.isfinite(dom) else 0.5 * (lo + dom)
        else:
            raise NoConvergence("cannot bracket negative root (transform blows up)")

    y = x + 0.5 * x * x * max(dist.scv, 0.0)  # expansion as initial guess
    if not lo < y < hi:
        y = 0.5 * (lo + hi)
    for _ in range(max_iter):
        hv, dh = h(y)
        if hv > 0:
            lo = y
        else:
            hi = y
        if abs(math.expm1(hv)) < 1e-15 if math.isfinite(hv) else False:
            return y
        step_ok = False
        if math.isfinite(hv) and dh < 0:
            yn = y - hv / dh
            if lo < yn < hi:
                step_ok = True
        if not step_ok:
            yn = 0.5 * (lo + hi)
        if yn == y or hi - lo <= 4 * np.finfo(float).eps * max(1.0, abs(y)):
            y = yn
            break
        y = yn
    hv = h(y)[0]
    if not (math.isfinite(hv) and abs(math.expm1(hv)) < ROOT_TOL):
        raise NoConvergence(f"root residual {hv!r} at y={y!r}")
    return y


def solve_eta(dist: DistributionModel, theta_k: float, t: float = 0.0) -> float:
    """Arrival transform ``eta_k(theta_k, t)``.

    Examples
    --------
    >>> from sbpnet.distributions import exponential
    >>> round(solve_eta(exponential(), 0.3), 6)
    0.349859
    """
    return solve_root(dist, theta_k, t)


def xi_argument(routing_row, theta, k: int) -> float:
    """``log(exp(-theta_k) * (sum_l P[k,l] exp(theta_l) + P[k,0]))``."""
    row = np.asarray(routing_row, dtype=float)
    theta = np.asarray(theta, dtype=float)
    p_exit = max(0.0, 1.0 - row.sum())
    return -theta[k] + math.log(float(row @ np.exp(theta)) + p_exit)


def solve_xi(dist: DistributionModel, routing_row, theta, k: int, t: float = 0.0) -> float:
    """Service transform ``xi_k(theta, t)`` for class ``k`` with routing row ``P[k]``."""
    return solve_root(dist, xi_argument(routing_row, theta, k), t)


def eta_bar(theta_k):
    return theta_k


def eta_tilde(theta_k, c2):
    return 0.5 * c2 * theta_k ** 2


def eta_star(theta_k, c2):
    return eta_bar(theta_k) + eta_tilde(theta_k, c2)


def xi_bar(theta, routing_row, k):
    theta = np.asarray(theta, dtype=float)
    return -theta[k] + float(np.asarray(routing_row) @ theta)


def xi_tilde(theta, routing_row, k, c2):
    theta = np.asarray(theta, dtype=float)
    row = np.asarray(routing_row, dtype=float)
    mean = float(row @ theta)
    return 0.5 * (float(row @ theta ** 2) - mean ** 2 + c2 * (mean - theta[k]) ** 2)


def xi_star(theta, routing_row, k, c2):
    return xi_bar(theta, routing_row, k) + xi_tilde(theta, routing_row, k, c2)


def taylor_expansions(theta, routing_row, k: int, c2_e: float, c2_s: float) -> dict:
    """Closed-form first/second order terms of eta_k and xi_k."""
    theta = np.asarray(theta, dtype=float)
    out = {
        "eta_bar": eta_bar(theta[k]),
        "eta_tilde": eta_tilde(theta[k], c2_e),
        "xi_bar": xi_bar(theta, routing_row, k),
        "xi_tilde": xi_tilde(theta, routing_row, k, c2_s),
    }
    out["eta_star"] = out["eta_bar"] + out["eta_tilde"]
    out["xi_star"] = out["xi_bar"] + out["xi_tilde"]
    return out


@dataclass(frozen=True)
class TransformPair:
    """Transforms of one class: its arrival/service models and routing row."""

    k: int
    routing_row: np.ndarray
    service_dist: DistributionModel
    arrival_dist: DistributionModel | None = None

    def eta(self, theta_k: float, t: float = 0.0) -> float:
        if self.arrival_dist is None:
            return 0.0
        return solve_eta(self.arrival_dist, theta_k, t)

    def xi(self, theta, t: float = 0.0) -> float:
        return solve_xi(self.service_dist, self.routing_row, theta, self.k, t)

    def eta_star(self, theta_k):
        if self.arrival_dist is None:
            return 0.0
        return eta_star(theta_k, self.arrival_dist.scv)

    def xi_star(self, theta):
        return xi_star(theta, self.routing_row, self.k, self.service_dist.scv)


def expansion_residual(dist: DistributionModel, routing_row, theta, r_grid, eps0: float = EPS0,
                       k: int = 0, arrival_dist: DistributionModel | None = None):
    """Normalised expansion errors over a grid of scales.

    Returns
    -------
    list of dict
        One row per ``r`` with ``|eta(r theta_k, r^(1-eps0)) - eta*(r theta_k)| / r^2``
        (``eta_res``, using ``arrival_dist`` or ``dist``) and the analogous
        ``xi_res`` for the service transform with routing row ``routing_row``.
    """
    theta = np.asarray(theta, dtype=float)
    adist = dist if arrival_dist is None else arrival_dist
    rows = []
    for r in r_grid:
        t = r ** (1.0 - eps0)
        th = r * theta
        e = solve_eta(adist, th[k], t)
        xi = solve_xi(dist, routing_row, th, k, t)
        rows.append({
            "r": r,
            "eta_res": abs(e - eta_star(th[k], adist.scv)) / r ** 2,
            "xi_res": abs(xi - xi_star(th, routing_row, k, dist.scv)) / r ** 2,
        })
    return rows
