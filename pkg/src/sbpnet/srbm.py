"""Euler scheme for an SRBM with data (R, Sigma, b) and its BAR residual.

With the BAR ``<theta, Sigma theta> phi + sum_l b_l <theta, R^(l)> (phi_l - phi) = 0``
the Brownian part has covariance ``2 Sigma`` (generator ``sum Sigma_ij d_ij``),
so each step adds ``sqrt(h) (2 Sigma)^{1/2} xi``.  The reflection increment
solves a linear complementarity problem per step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .analysis import SrbmData, check_M_matrix
from .sim import Estimate

__all__ = [
    "LcpFailure",
    "NoBoundaryMass",
    "SrbmStats",
    "solve_lcp",
    "simulate_srbm",
    "srbm_bar_residual",
    "default_step",
]


class LcpFailure(RuntimeError):
    pass


class NoBoundaryMass(ValueError):
    pass


@njit(cache=True)
def _lemke(M, q, z, max_iter):
    """Lemke's method with covering vector e for ``w = q + M z``.

    Returns True on success with the solution in ``z``.
    """
    n = q.shape[0]
    for i in range(n):
        z[i] = 0.0
    qmin = 0
    for i in range(1, n):
        if q[i] < q[qmin]:
            qmin = i
    if q[qmin] >= 0.0:
        return True
    # tableau columns: w (n), z (n), z0 (1), rhs
    T = np.zeros((n, 2 * n + 2))
    for i in range(n):
        T[i, i] = 1.0
        for j in range(n):
            T[i, n + j] = -M[i, j]
        T[i, 2 * n] = -1.0
        T[i, 2 * n + 1] = q[i]
    basis = np.empty(n, dtype=np.int64)
    for i in range(n):
        basis[i] = i
    # pivot z0 in at row qmin
    r = qmin
    entering = 2 * n
    for it in range(max_iter):
        piv = T[r, entering]
        for c in range(2 * n + 2):
            T[r, c] /= piv
        for i in range(n):
            if i != r and T[i, entering] != 0.0:
                f = T[i, entering]
                for c in range(2 * n + 2):
                    T[i, c] -= f * T[r, c]
        leaving = basis[r]
        basis[r] = entering
        if leaving == 2 * n:
            for i in range(n):
                if basis[i] >= n and basis[i] < 2 * n:
                    z[basis[i] - n] = T[i, 2 * n + 1]
            return True
        # complement of the leaving variable enters
        entering = leaving + n if leaving < n else leaving - n
        r = -1
        best = np.inf
        for i in range(n):
            if T[i, entering] > 1e-12:
                ratio = T[i, 2 * n + 1] / T[i, entering]
                if ratio < best - 1e-15 or (abs(ratio - best) <= 1e-15 and basis[i] == 2 * n):
                    best = ratio
                    r = i
        if r < 0:
            return False  # ray termination
    return False


@njit(cache=True)
def _pgs(M, q, z, max_iter, tol):
    """Projected Gauss-Seidel; converges for M-matrices."""
    n = q.shape[0]
    for i in range(n):
        z[i] = 0.0
    for it in range(max_iter):
        delta = 0.0
        for i in range(n):
            s = q[i]
            for j in range(n):
                s += M[i, j] * z[j]
            zi = max(0.0, z[i] - s / M[i, i])
            delta = max(delta, abs(zi - z[i]))
            z[i] = zi
        if delta < tol:
            return True
    return False


@njit(cache=True)
def _lcp(M, q, z, use_pgs):
    n = q.shape[0]
    if n == 1:
        z[0] = max(0.0, -q[0] / M[0, 0])
        return True
    ok = _lemke(M, q, z, 50 * n + 50)
    if not ok and use_pgs:
        ok = _pgs(M, q, z, 10000, 1e-14)
    return ok


def solve_lcp(M, q, allow_projection: bool | None = None) -> np.ndarray:
    """Solve ``w = q + M z >= 0, z >= 0, w.z = 0``.

    Raises
    ------
    LcpFailure
        If no complementary solution is found.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if allow_projection is None:
        allow_projection = check_M_matrix(M)
    z = np.zeros(len(q))
    if not _lcp(M, q, z, allow_projection):
        raise LcpFailure("no complementary solution found")
    return z


@njit(cache=True)
def _srbm_run(seed, W, R, chol, drift, h, n_steps, n_warm, nb, thetas, use_pgs,
              a_n, a_w, a_w2, a_phi, a_dy, a_phib, a_viol):
    np.random.seed(seed)
    n = W.shape[0]
    G = thetas.shape[0]
    sq = math.sqrt(h)
    q = np.empty(n)
    z = np.empty(n)
    xi = np.empty(n)
    per = (n_steps - n_warm) // nb
    for step in range(n_steps):
        for i in range(n):
            xi[i] = np.random.standard_normal()
        for i in range(n):
            s = 0.0
            for j in range(i + 1):
                s += chol[i, j] * xi[j]
            q[i] = W[i] + drift[i] * h + sq * s
        neg = False
        for i in range(n):
            if q[i] < 0.0:
                neg = True
        if neg:
            if not _lcp(R, q, z, use_pgs):
                return step + 1
            for i in range(n):
                s = q[i]
                for j in range(n):
                    s += R[i, j] * z[j]
                W[i] = max(s, 0.0) if s > -1e-9 else s
        else:
            for i in range(n):
                W[i] = q[i]
                z[i] = 0.0
        if step < n_warm:
            continue
        b = (step - n_warm) // per
        if b >= nb:
            b = nb - 1
        a_n[b] += 1.0
        for i in range(n):
            if W[i] < -1e-12:
                a_viol[b] += 1.0
            a_w[b, i] += W[i]
            a_w2[b, i] += W[i] * W[i]
            a_dy[b, i] += z[i]
            if z[i] > 0.0 and W[i] * z[i] > 1e-10:
                a_viol[b] += 1.0
        for g in range(G):
            e = 0.0
            for i in range(n):
                e += thetas[g, i] * W[i]
            v = math.exp(e)
            a_phi[b, g] += v
            for i in range(n):
                if z[i] > 0.0:
                    a_phib[b, g, i] += z[i] * v
    return 0


@dataclass(eq=False)
class SrbmStats:
    """Batch accumulators of an SRBM run.

    ``dy`` holds the pushing per face and ``phib`` the pushing-weighted sums
    of ``exp(<theta, W>)``, which estimate the boundary transforms.
    """

    data: SrbmData
    h: float
    thetas: np.ndarray
    n: np.ndarray
    w: np.ndarray
    w2: np.ndarray
    phi_sum: np.ndarray
    dy: np.ndarray
    phib: np.ndarray
    violations: np.ndarray

    def _ratio(self, num, den):
        num = np.asarray(num, dtype=float)
        den = np.asarray(den, dtype=float)
        while den.ndim < num.ndim:
            den = den[..., None]
        B = len(num)
        D = den.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            val = num.sum(axis=0) / D
            dev = num - val * den
            se = np.sqrt((dev ** 2).sum(axis=0) / (B * (B - 1))) / (D / B)
        return Estimate(val, se, B)

    def mean(self) -> Estimate:
        return self._ratio(self.w, self.n)

    def second_moment(self) -> Estimate:
        return self._ratio(self.w2, self.n)

    def phi(self) -> Estimate:
        """``E[exp(<theta, W>)]`` per registered theta."""
        return self._ratio(self.phi_sum, self.n)

    def phi_boundary(self) -> Estimate:
        """Boundary transforms ``phi_l(theta)``, shape (thetas, faces)."""
        den = np.broadcast_to(self.dy[:, None, :], self.phib.shape)
        return self._ratio(self.phib, den)

    def pushing_rate(self) -> Estimate:
        """Pushing per unit time on each face."""
        return self._ratio(self.dy, self.n * self.h)


def default_step(data: SrbmData) -> float:
    return 1e-3 / max(np.linalg.norm(data.drift), 1e-12) if np.linalg.norm(data.drift) > 0 else 1e-3


def simulate_srbm(data: SrbmData, h: float | None = None, horizon: float = 1e5,
                  warmup: float | None = None, seed: int = 0, thetas=None,
                  batches: int = 32) -> SrbmStats:
    """Euler-LCP simulation from the origin.

    Parameters
    ----------
    data : SrbmData
    h : float, optional
        Step size; default ``1e-3 / |R b|``.
    horizon, warmup : float
        Simulated time and discarded initial part (default 10%).
    thetas : array_like, optional
        Points (rows, each ``<= 0``) at which transforms are accumulated.

    Raises
    ------
    LcpFailure
    """
    n = data.dim
    if h is None:
        h = default_step(data)
    if warmup is None:
        warmup = 0.1 * horizon
    if not (h > 0 and horizon > warmup >= 0):
        raise ValueError("need h > 0 and horizon > warmup >= 0")
    thetas = np.zeros((0, n)) if thetas is None else np.atleast_2d(np.asarray(thetas, dtype=float))
    n_steps = int(round(horizon / h))
    n_warm = int(round(warmup / h))
    B = int(batches)
    if n_steps - n_warm < B:
        raise ValueError("horizon too short for the number of batches")
    chol = np.linalg.cholesky(2.0 * data.Sigma)
    G = thetas.shape[0]
    acc = dict(n=np.zeros(B), w=np.zeros((B, n)), w2=np.zeros((B, n)), phi_sum=np.zeros((B, G)),
               dy=np.zeros((B, n)), phib=np.zeros((B, G, n)), violations=np.zeros(B))
    W = np.zeros(n)
    ss = np.random.SeedSequence(seed, spawn_key=(7,))
    kseed = int(ss.generate_state(1)[0] % (2 ** 31 - 1))
    code = _srbm_run(kseed, W, data.R, chol, data.drift, h, n_steps, n_warm, B, thetas,
                     check_M_matrix(data.R), acc["n"], acc["w"], acc["w2"], acc["phi_sum"],
                     acc["dy"], acc["phib"], acc["violations"])
    if code:
        raise LcpFailure(f"LCP failed at step {code - 1}")
    return SrbmStats(data, h, thetas, **acc)


def srbm_bar_residual(stats: SrbmStats, data: SrbmData | None = None) -> np.ndarray:
    """Residual of the SRBM BAR at each registered theta.

    The boundary transform ``phi_l`` is the pushing-weighted average of
    ``exp(<theta, W>)`` on face ``l``; the weights ``b_l`` carry the face
    masses.

    Raises
    ------
    NoBoundaryMass
        If some face was never pushed.
    """
    data = stats.data if data is None else data
    if (stats.dy.sum(axis=0) <= 0).any():
        raise NoBoundaryMass("a face was never pushed")
    phi = stats.phi().value
    phib = stats.phi_boundary().value
    res = np.zeros(len(stats.thetas))
    for g, th in enumerate(stats.thetas):
        val = float(th @ data.Sigma @ th) * phi[g]
        for l in range(data.dim):
            val += data.b[l] * float(th @ data.R[:, l]) * (phib[g, l] - phi[g])
        res[g] = val
    return res
