"""Heavy-traffic SRBM data (R, Sigma, b) and matrix condition checkers."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linprog

from .network import HeavyTrafficFamily, ValidatedNetwork

__all__ = [
    "AHSingular",
    "DimensionTooLarge",
    "BadNormalization",
    "ReflectionData",
    "DiffusionData",
    "TightSystemResult",
    "SrbmData",
    "AnalysisReport",
    "build_reflection",
    "theta_H",
    "q_form",
    "extract_sigma",
    "check_completely_S",
    "check_M_matrix",
    "check_tight",
    "classify_2x2_tight",
    "verify_2s5c_region",
    "closed_form_2s5c",
    "analyze",
]


class AHSingular(ValueError):
    """The high-priority block A_H is singular."""


class DimensionTooLarge(ValueError):
    pass


class BadNormalization(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ReflectionData:
    A: np.ndarray
    B: np.ndarray
    L: tuple
    H: tuple
    A_L: np.ndarray
    A_LH: np.ndarray
    A_HL: np.ndarray
    A_H: np.ndarray
    R: np.ndarray | None
    a_H_invertible: bool


@dataclass(frozen=True, eq=False)
class DiffusionData:
    theta_H_map: np.ndarray  # |H| x |L|
    Sigma: np.ndarray
    q_eval: Callable = field(repr=False)


@dataclass(frozen=True, eq=False)
class TightSystemResult:
    verdict: str  # "tight", "not_tight" or "undecided"
    witness: dict  # (frozenset A, j or None) -> value
    message: str = ""

    @property
    def tight(self) -> bool:
        return self.verdict == "tight"


@dataclass(frozen=True, eq=False)
class SrbmData:
    """Data of an SRBM on the orthant: reflection ``R``, covariance ``Sigma``, ``b``.

    The drift is ``-R b``.
    """

    R: np.ndarray
    Sigma: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        S = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        n = len(b)
        if R.shape != (n, n) or S.shape != (n, n):
            raise ValueError("R, Sigma must be square with the size of b")
        if not (b > 0).all():
            raise ValueError("b must be positive")
        if np.abs(S - S.T).max() > 1e-12 * max(1.0, abs(S).max()):
            raise ValueError("Sigma must be symmetric")
        np.linalg.cholesky(S)  # raises if not positive definite
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "Sigma", S)
        object.__setattr__(self, "b", b)

    @property
    def drift(self) -> np.ndarray:
        return -self.R @ self.b

    @property
    def dim(self) -> int:
        return len(self.b)


# ----------------------------------------------------------------------
def successor_matrix(net: ValidatedNetwork) -> np.ndarray:
    K = net.K
    B = np.zeros((K, K))
    for k, kp in enumerate(net.structure.k_plus):
        if kp >= 0:
            B[k, kp] = 1.0
    return B


def build_reflection(net: ValidatedNetwork, tol: float = 1e-12) -> ReflectionData:
    """Assemble ``A = (I - P^T) diag(mu) (I - B)`` and the Schur complement ``R``.

    ``net`` should be the critical network of a family.  ``R`` is ``None``
    (and ``a_H_invertible`` False) when ``A_H`` is singular.
    """
    K = net.K
    B = successor_matrix(net)
    A = (np.eye(K) - net.P.T) @ np.diag(net.mu) @ (np.eye(K) - B)
    L = tuple(net.structure.lowest)
    H = tuple(net.structure.high)
    A_L = A[np.ix_(L, L)]
    A_LH = A[np.ix_(L, H)]
    A_HL = A[np.ix_(H, L)]
    A_H = A[np.ix_(H, H)]
    ok = True
    R = A_L.copy()
    if H:
        s = np.linalg.svd(A_H, compute_uv=False)
        ok = bool(s[-1] > tol * max(1.0, s[0]))
        R = A_L - A_LH @ np.linalg.solve(A_H, A_HL) if ok else None
    return ReflectionData(A, B, L, H, A_L, A_LH, A_HL, A_H, R, ok)


def _theta_H_matrix(data: ReflectionData) -> np.ndarray:
    if not data.a_H_invertible:
        raise AHSingular("A_H is singular")
    if not data.H:
        return np.zeros((0, len(data.L)))
    return -np.linalg.solve(data.A_H.T, data.A_LH.T)


def theta_H(data: ReflectionData, theta_L) -> np.ndarray:
    """``theta_H = -(A_H^{-1})^T (A_LH)^T theta_L``."""
    return _theta_H_matrix(data) @ np.asarray(theta_L, dtype=float)


def full_theta(data: ReflectionData, theta_L) -> np.ndarray:
    """K-vector with the given L part and the matching H part."""
    theta_L = np.asarray(theta_L, dtype=float)
    th = np.zeros(len(data.L) + len(data.H))
    th[list(data.L)] = theta_L
    if data.H:
        th[list(data.H)] = theta_H(data, theta_L)
    return th


def q_form(theta, alpha, lam, P, c2_e, c2_s) -> float:
    """Nonnegative quadratic form ``q(theta)`` of the diffusion covariance."""
    theta = np.asarray(theta, dtype=float)
    Pt = P @ theta
    Pt2 = P @ theta ** 2
    arr = 0.5 * float(np.sum(lam * c2_e * theta ** 2))
    srv = 0.5 * float(np.sum(alpha * (Pt2 - Pt ** 2 + c2_s * (theta - Pt) ** 2)))
    return arr + srv


def extract_sigma(net: ValidatedNetwork, data: ReflectionData) -> DiffusionData:
    """Recover Sigma by polarisation of ``theta_L -> q(theta_L, theta_H(theta_L))``."""
    alpha = net.traffic.alpha
    lam, P, c2e, c2s = net.lam, net.P, net.c2_e, net.c2_s
    M = _theta_H_matrix(data)
    nL = len(data.L)

    def q(theta):
        return q_form(theta, alpha, lam, P, c2e, c2s)

    def q_L(tl):
        return q(full_theta(data, tl))

    E = np.eye(nL)
    S = np.zeros((nL, nL))
    for i in range(nL):
        S[i, i] = q_L(E[i])
    for i, j in itertools.combinations(range(nL), 2):
        S[i, j] = S[j, i] = 0.5 * (q_L(E[i] + E[j]) - S[i, i] - S[j, j])
    return DiffusionData(M, S, q)


# ----------------------------------------------------------------------
def _margin(M) -> tuple[float, np.ndarray]:
    n = M.shape[0]
    # variables (u, delta); maximise delta s.t. M u >= delta e, 0 <= u <= 1
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-M, np.ones((n, 1))])
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(n), bounds=[(0, 1)] * n + [(None, None)],
                  method="highs")
    if res.status != 0:
        return -np.inf, np.zeros(n)
    return float(res.x[-1]), res.x[:n]


def check_completely_S(M, tol: float = 1e-9, max_dim: int = 16):
    """Check every principal submatrix for an ``S`` witness.

    Returns
    -------
    (bool, dict)
        Verdict and, per index subset, ``(margin, u)`` from the LP.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n = M.shape[0]
    if n > max_dim:
        raise DimensionTooLarge(f"{n} > {max_dim}")
    out = {}
    ok = True
    for size in range(1, n + 1):
        for sub in itertools.combinations(range(n), size):
            d, u = _margin(M[np.ix_(sub, sub)])
            out[sub] = (d, u)
            if not d > tol:
                ok = False
    return ok, out


def check_M_matrix(M, tol: float = 1e-10) -> bool:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    off = M - np.diag(np.diag(M))
    if (off > tol).any() or not (np.diag(M) > 0).all():
        return False
    try:
        inv = np.linalg.inv(M)
    except np.linalg.LinAlgError:
        return False
    if not np.isfinite(inv).all() or np.linalg.cond(M) > 1e14:
        return False
    return bool((inv >= -tol).all())


def coupling_components(R) -> list:
    """Index groups of ``R`` linked by nonzero off-diagonal entries."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = R.shape[0]
    adj = (R != 0) | (R.T != 0)
    seen, comps = set(), []
    for s in range(n):
        if s in seen:
            continue
        stack, comp = [s], []
        seen.add(s)
        while stack:
            i = stack.pop()
            comp.append(i)
            for j in np.flatnonzero(adj[i]):
                if j not in seen:
                    seen.add(int(j))
                    stack.append(int(j))
        comps.append(tuple(sorted(comp)))
    return comps


def check_tight(R, b, tol: float = 1e-7) -> TightSystemResult:
    """Decide whether ``(R, b)`` is a tight system.

    An M-matrix with ``b > 0`` is tight outright.  Otherwise ``R`` is split
    into uncoupled blocks (the reflected process splits into independent
    lower-dimensional ones) and the linear system is checked per block: all
    variables lie in ``[0, 1]`` and the all-ones vector is feasible, so the
    solution is unique iff the minimum of the sum of all variables equals
    the number of variables.  The system leaves cross terms such as
    ``x_{ij}`` undetermined when ``R_ij = R_ji = 0``; a non-unique solution
    in a block containing such a pair is reported as ``undecided``.
    """
    R = np.atleast_2d(np.asarray(R, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    n = len(b)
    if n > 12:
        raise DimensionTooLarge(f"|L| = {n} > 12")
    if not (b > 0).all():
        raise ValueError("b must be positive")
    if check_M_matrix(R):
        return TightSystemResult("tight", {}, "M-matrix with b > 0")
    parts = []
    for c in coupling_components(R):
        sub = R[np.ix_(c, c)]
        res = _tight_block(sub, b[list(c)], tol)
        if res.verdict == "not_tight":
            off = (sub == 0) & (sub.T == 0)
            np.fill_diagonal(off, False)
            if off.any():
                res = TightSystemResult("undecided", res.witness,
                                        res.message + " (uncoupled pair in block)")
        parts.append((c, res))
    if len(parts) == 1:
        return parts[0][1]
    witness = {}
    for c, res in parts:
        for (S, j), v in res.witness.items():
            witness[(frozenset(c[i] for i in S), None if j is None else c[j])] = v
    verdicts = [res.verdict for _, res in parts]
    verdict = ("not_tight" if "not_tight" in verdicts else
               "undecided" if "undecided" in verdicts else "tight")
    msg = "; ".join(f"block {c}: {res.message}" for c, res in parts)
    return TightSystemResult(verdict, witness, msg)


def _tight_block(R, b, tol):
    n = len(b)
    nA = 1 << n
    # x_A at A*(n+1), x_A^(j) at A*(n+1) + 1 + j
    N = nA * (n + 1)

    def ix(A, j=None):
        return A * (n + 1) + (0 if j is None else 1 + j)

    eq_rows, eq_rhs, ub_rows = [], [], []

    def row():
        return np.zeros(N)

    for A in range(nA):
        for i in range(n):
            if A >> i & 1:
                r_ = row()
                for j in range(n):
                    r_[ix(A, j)] += b[j] * R[i, j]
                    r_[ix(A)] -= b[j] * R[i, j]
                eq_rows.append(r_)
                eq_rhs.append(0.0)
        for j in range(n):
            if A >> j & 1:
                r_ = row()
                r_[ix(A, j)] = 1.0
                r_[ix(A & ~(1 << j), j)] = -1.0
                eq_rows.append(r_)
                eq_rhs.append(0.0)
        for i in range(n):
            if not A >> i & 1:
                Ap = A | (1 << i)
                for j in [None] + list(range(n)):
                    r_ = row()
                    r_[ix(Ap, j)] = 1.0
                    r_[ix(A, j)] = -1.0
                    ub_rows.append(r_)
    bounds = [(0.0, 1.0)] * N
    for j in [None] + list(range(n)):
        bounds[ix(0, j)] = (1.0, 1.0)
    res = linprog(np.ones(N), A_ub=np.array(ub_rows) if ub_rows else None,
                  b_ub=np.zeros(len(ub_rows)) if ub_rows else None,
                  A_eq=np.array(eq_rows) if eq_rows else None,
                  b_eq=np.array(eq_rhs) if eq_rows else None,
                  bounds=bounds, method="highs")
    if res.status != 0:
        return TightSystemResult("undecided", {}, res.message)
    x = res.x
    witness = {}
    for A in range(nA):
        S = frozenset(i for i in range(n) if A >> i & 1)
        witness[(S, None)] = float(x[ix(A)])
        for j in range(n):
            witness[(S, j)] = float(x[ix(A, j)])
    verdict = "tight" if res.fun >= N - tol * N else "not_tight"
    return TightSystemResult(verdict, witness, f"min sum {res.fun:.9g} of {N}")


def classify_2x2_tight(R) -> bool:
    """Tightness rule for ``2 x 2`` matrices with positive diagonal."""
    r12, r21 = R[0][1], R[1][0]
    return (r12 <= 0 and r21 <= 0) or (r12 < 0 and r21 >= 0) or (r12 >= 0 and r21 < 0)


# ----------------------------------------------------------------------
def _check_2s5c_m(m):
    m = np.asarray(m, dtype=float)
    if m.shape != (5,) or (m <= 0).any():
        raise BadNormalization("m must be a positive 5-vector")
    if abs(m[0] + m[2] + m[4] - 1) > 1e-10 or abs(m[1] + m[3] - 1) > 1e-10:
        raise BadNormalization("need m1 + m3 + m5 = m2 + m4 = 1")
    if not m[4] < m[3]:
        raise BadNormalization("need m5 < m4")
    return m


def closed_form_2s5c(m, c2_e1=1.0, c2_s=(1.0,) * 5):
    """Closed-form ``(R, Sigma, b)`` of the two-station reentrant line family.

    Used as an independent oracle for the general pipeline.
    """
    m = _check_2s5c_m(m)
    m1, m2, m3, m4, m5 = m
    mu4, mu5 = 1 / m4, 1 / m5
    cs1, cs2, cs3, cs4, cs5 = c2_s
    R = np.array([[m4, -m5], [-1.0, 1.0]]) / (m4 - m5)
    d2 = (mu5 - mu4) ** 2
    s11 = (d2 * c2_e1 + m1 ** 2 * mu5 ** 2 * cs1 + (mu4 - 1) ** 2 * cs2
           + m3 ** 2 * mu5 ** 2 * cs3 + cs4 + cs5) / (2 * d2)
    s44 = (m1 ** 2 * mu5 ** 2 * mu4 ** 2 * cs1 + (mu4 - 1) ** 2 * mu5 ** 2 * cs2
           + m3 ** 2 * mu5 ** 2 * mu4 ** 2 * cs3 + mu5 ** 2 * cs4 + mu4 ** 2 * cs5) / (2 * d2)
    s14 = -(m1 ** 2 * mu5 ** 2 * mu4 * cs1 + (mu4 - 1) ** 2 * mu5 * cs2
            + m3 ** 2 * mu5 ** 2 * mu4 * cs3 + mu5 * cs4 + mu4 * cs5) / (2 * d2)
    Sigma = np.array([[s11, s14], [s14, s44]])
    return R, Sigma, np.ones(2)


def verify_2s5c_region(m, theta_L):
    """Membership of ``theta_L = (theta_1, theta_4)`` in the region Theta_L.

    Returns
    -------
    (bool, ndarray)
        Membership and ``(theta_2, theta_3, theta_5)``.
    """
    m = _check_2s5c_m(m)
    m1, m2, m3, m4, m5 = m
    mu5 = 1 / m5
    t1, t4 = map(float, theta_L)
    t5 = (m4 * t1 - t4) / (mu5 * m4 - 1)
    t2 = t1 - m1 * mu5 * t5
    t3 = t4 + m3 * mu5 * t5
    member = False
    if t1 < 0 and t4 < 0:
        ratio = t4 / t1
        member = m4 - (mu5 * m4 - 1) / (m1 * mu5) < ratio < m4
    return member, np.array([t2, t3, t5])


# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class AnalysisReport:
    reflection: ReflectionData
    diffusion: DiffusionData | None
    b: np.ndarray
    completely_S: bool | None
    M_matrix: bool | None
    tight: TightSystemResult | None
    sigma_pd: bool | None

    @property
    def failures(self) -> list:
        out = []
        if not self.reflection.a_H_invertible:
            out.append("A_H singular")
        if self.completely_S is False:
            out.append("R not completely-S")
        if self.tight is not None and not self.tight.tight:
            out.append(f"(R, b) not tight ({self.tight.verdict})")
        if self.sigma_pd is False:
            out.append("Sigma not positive definite")
        return out

    @property
    def ok(self) -> bool:
        return not self.failures

    def srbm(self) -> SrbmData:
        return SrbmData(self.reflection.R, self.diffusion.Sigma, self.b)


def analyze(family: HeavyTrafficFamily) -> AnalysisReport:
    """Run the whole pipeline and every checker on a family."""
    net = family.network
    data = build_reflection(net)
    b = family.b
    if not data.a_H_invertible:
        return AnalysisReport(data, None, b, None, None, None, None)
    diff = extract_sigma(net, data)
    cs, _ = check_completely_S(data.R)
    mm = check_M_matrix(data.R)
    tight = check_tight(data.R, b) if len(b) <= 12 else None
    ev = np.linalg.eigvalsh(diff.Sigma)
    return AnalysisReport(data, diff, b, cs, mm, tight, bool(ev.min() > 1e-12 * max(1.0, ev.max())))
