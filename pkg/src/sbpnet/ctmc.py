"""Exact stationary analysis of all-exponential networks on a truncated lattice."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import breadth_first_order

from .network import ValidatedNetwork

__all__ = [
    "StateSpaceTooLarge",
    "SolverFailure",
    "NotExponential",
    "TruncatedCTMC",
    "build_generator",
    "stationary",
    "exact_functionals",
    "solve_ctmc",
]

MAX_STATES = 10 ** 7
DIRECT_LIMIT = 10 ** 5


class StateSpaceTooLarge(ValueError):
    pass


class SolverFailure(RuntimeError):
    pass


class NotExponential(ValueError):
    pass


@dataclass(eq=False)
class TruncatedCTMC:
    """Generator on ``{0..cap}^K`` restricted to the states reachable from 0.

    Arrivals that would push a count above ``cap`` are lost; so are jobs
    routed into a full buffer.
    """

    net: ValidatedNetwork
    cap: int
    states: np.ndarray  # (N, K) int
    generator: sp.csr_matrix
    pi: np.ndarray | None = field(default=None)

    @property
    def num_states(self) -> int:
        return self.states.shape[0]

    def expect(self, values) -> float:
        """``sum_z pi(z) values(z)``; ``values`` is an array over states or a callable."""
        if self.pi is None:
            raise SolverFailure("call stationary() first")
        v = values(self.states) if callable(values) else values
        return float(self.pi @ np.asarray(v, dtype=float))

    def boundary_mass(self) -> float:
        return self.expect((self.states == self.cap).any(axis=1))


def build_generator(net: ValidatedNetwork, cap: int) -> TruncatedCTMC:
    """Assemble the sparse generator of the loss-truncated chain."""
    if not net.spec.all_exponential:
        raise NotExponential("oracle needs exponential arrival and service times")
    K = net.K
    n_all = (cap + 1) ** K
    if n_all > MAX_STATES:
        raise StateSpaceTooLarge(f"(cap+1)^K = {n_all} > {MAX_STATES}")
    radix = (cap + 1) ** np.arange(K)
    idx = np.arange(n_all)
    Z = (idx[:, None] // radix[None, :]) % (cap + 1)
    rows, cols, vals = [], [], []

    def add(mask, dest, rate):
        src = idx[mask]
        rows.append(src)
        cols.append(dest[mask] if dest is not None else src)
        vals.append(np.broadcast_to(rate, src.shape).astype(float))

    lam, mu, P = net.lam, net.mu, net.P
    Hp = net.structure.H_plus
    for k in range(K):
        if lam[k] > 0:
            m = Z[:, k] < cap
            add(m, idx + radix[k], lam[k])
        busy = Z[:, k] > 0
        for h in Hp[k]:
            busy &= Z[:, h] == 0
        exit_p = max(0.0, 1.0 - P[k].sum())
        lost = exit_p
        for l in range(K):
            if P[k, l] <= 0:
                continue
            if l == k:
                continue  # self-routing leaves the state unchanged
            ok = busy & (Z[:, l] < cap)
            add(ok, idx - radix[k] + radix[l], mu[k] * P[k, l])
            full = busy & (Z[:, l] >= cap)
            add(full, idx - radix[k], mu[k] * P[k, l])
        if lost > 0:
            add(busy, idx - radix[k], mu[k] * lost)
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    Q = sp.csr_matrix((v, (r, c)), shape=(n_all, n_all))
    Q.sum_duplicates()
    # reachable component of the empty state
    reach = np.sort(breadth_first_order(Q, 0, directed=True, return_predecessors=False))
    Q = Q[reach][:, reach].tocsr()
    Q = Q - sp.diags(np.asarray(Q.sum(axis=1)).ravel())
    return TruncatedCTMC(net, cap, Z[reach], Q.tocsr())


def _solve_direct(Q):
    A = Q.T.tolil()
    A[0, :] = 1.0
    rhs = np.zeros(Q.shape[0])
    rhs[0] = 1.0
    return spla.spsolve(A.tocsc(), rhs)


def _solve_iterative(Q, tol):
    n = Q.shape[0]
    A = Q.T.tolil()
    A[0, :] = 1.0
    A = A.tocsc()
    rhs = np.zeros(n)
    rhs[0] = 1.0
    try:
        ilu = spla.spilu(A, drop_tol=1e-6, fill_factor=20)
        M = spla.LinearOperator(A.shape, ilu.solve)
    except RuntimeError:
        M = None
    x, info = spla.gmres(A, rhs, M=M, rtol=tol * 1e-2, restart=100, maxiter=200)
    return x, info


def _power(Q, tol, max_iter=200000):
    q = -Q.diagonal().min() * 1.01
    Pu = (sp.identity(Q.shape[0], format="csr") + Q / q).T.tocsr()
    x = np.full(Q.shape[0], 1.0 / Q.shape[0])
    for _ in range(max_iter):
        xn = Pu @ x
        xn /= xn.sum()
        if np.abs(xn - x).max() < tol * 1e-3:
            return xn
        x = xn
    return x


def stationary(ctmc: TruncatedCTMC, tol: float = 1e-10, method: str = "auto") -> np.ndarray:
    """Solve ``pi Q = 0``, ``sum(pi) = 1``.

    ``method`` is ``direct`` (sparse LU), ``iterative`` (ILU-preconditioned
    GMRES with a power-iteration fallback) or ``auto`` (direct below 10^5
    states).
    """
    Q = ctmc.generator
    n = Q.shape[0]
    if method == "auto":
        method = "direct" if n < DIRECT_LIMIT else "iterative"
    if method == "direct":
        pi = _solve_direct(Q)
    else:
        pi, info = _solve_iterative(Q, tol)
        if info != 0 or not np.isfinite(pi).all():
            warnings.warn("GMRES did not converge; falling back to power iteration", RuntimeWarning)
            pi = _power(Q, tol)
    pi = np.where(np.abs(pi) < 1e-300, 0.0, pi)
    pi = np.maximum(pi, 0.0)
    pi /= pi.sum()
    res = np.abs(Q.T @ pi).max()
    if not res < tol * max(1.0, np.abs(Q.diagonal()).max()):
        raise SolverFailure(f"balance residual {res:.3g}")
    ctmc.pi = pi
    return pi


def solve_ctmc(net: ValidatedNetwork, cap: int, **kw) -> TruncatedCTMC:
    c = build_generator(net, cap)
    stationary(c, **kw)
    return c


def _g(states, theta, L, H, s):
    z = states.astype(float)
    e = z[:, list(L)] @ theta[list(L)]
    if H:
        zh = z[:, list(H)]
        if s > 0:
            zh = np.minimum(zh, 1.0 / s)
        e = e + zh @ theta[list(H)]
    return np.exp(e)


def exact_functionals(ctmc: TruncatedCTMC, theta=None, s: float = 0.0, max_z: int = 10) -> dict:
    """Exact stationary functionals.

    Parameters
    ----------
    theta : array_like, optional
        K-vector; adds ``phi = E[g_{theta,s}(Z)]`` and the conditional
        versions ``phi_k = E[g | Z_{H(k)} = 0]``.
    s : float
        Truncation of the high-priority counts at ``1/s`` (0: none).
    max_z : int
        Marginals ``P(Z_k = z)`` are reported for ``z <= max_z``.
    """
    net = ctmc.net
    Z = ctmc.states
    ps = net.structure
    K = net.K
    out = {
        "mean": np.array([ctmc.expect(Z[:, k]) for k in range(K)]),
        "second_moment": np.array([ctmc.expect(Z[:, k].astype(float) ** 2) for k in range(K)]),
        "marginal": np.array([[ctmc.expect(Z[:, k] == z) for z in range(max_z + 1)] for k in range(K)]),
        "boundary_mass": ctmc.boundary_mass(),
    }
    idle = [(Z[:, sorted(ps.H[k])] == 0).all(axis=1) for k in range(K)]
    out["beta"] = np.array([ctmc.expect(m) for m in idle])
    if theta is not None:
        theta = np.asarray(theta, dtype=float)
        g = _g(Z, theta, ps.lowest, ps.high, s)
        out["phi"] = ctmc.expect(g)
        out["phi_k"] = np.array([ctmc.expect(g * m) / b if b > 0 else np.nan
                                 for m, b in zip(idle, out["beta"])])
    return out
