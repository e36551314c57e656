"""Unit-mean distribution models for inter-arrival and service times.

Every model has mean one; the actual time is ``a_k * T`` (arrivals) or
``m_k * T`` (services).  Besides moments and sampling, each model evaluates
the truncated Laplace transform ``E[exp(-s * min(T, cap))]`` and its
derivative, which the transform solvers rely on.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy import special

__all__ = [
    "DistributionModel",
    "DistributionError",
    "parse_distribution",
    "exponential",
    "deterministic",
    "uniform",
    "erlang",
    "hyperexp",
    "lognormal",
]

KINDS = ("exponential", "deterministic", "uniform", "erlang", "hyperexp", "lognormal")

_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)


class DistributionError(ValueError):
    """Bad distribution specification."""


def _gl_nodes(lo, hi):
    half = 0.5 * (hi - lo)
    return lo + half * (_GL_X + 1.0), half * _GL_W


@dataclass(frozen=True)
class DistributionModel:
    """A unit-mean nonnegative distribution.

    Parameters
    ----------
    kind : str
        One of ``exponential``, ``deterministic``, ``uniform``, ``erlang``,
        ``hyperexp``, ``lognormal``.
    param : float
        Shape parameter: half-width ``a`` for uniform (support ``[1-a, 1+a]``),
        number of phases ``k`` for erlang, squared coefficient of variation
        for hyperexp (``> 1``) and lognormal.  Ignored otherwise.
    """

    kind: str
    param: float = 0.0
    _mix: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        kind, p = self.kind, float(self.param)
        if kind not in KINDS:
            raise DistributionError(f"unknown distribution kind {kind!r}")
        mix = ()
        if kind == "exponential":
            mix = ((1.0, 1, 1.0),)
        elif kind == "erlang":
            if p < 1 or p != int(p):
                raise DistributionError("erlang needs an integer k >= 1")
            mix = ((1.0, int(p), p),)
        elif kind == "hyperexp":
            if p <= 1.0:
                raise DistributionError("hyperexp needs scv > 1")
            # balanced means: p1/nu1 = p2/nu2 = 1/2
            q = 0.5 * (1.0 + math.sqrt((p - 1.0) / (p + 1.0)))
            mix = ((q, 1, 2.0 * q), (1.0 - q, 1, 2.0 * (1.0 - q)))
        elif kind == "uniform":
            if not 0.0 < p < 1.0:
                raise DistributionError("uniform needs half-width 0 < a < 1")
        elif kind == "lognormal":
            if p <= 0.0:
                raise DistributionError("lognormal needs scv > 0")
        object.__setattr__(self, "_mix", mix)

    # ------------------------------------------------------------------
    def __str__(self):
        if self.kind in ("exponential", "deterministic"):
            return self.kind
        key = {"uniform": "a", "erlang": "k", "hyperexp": "scv", "lognormal": "scv"}[self.kind]
        val = int(self.param) if self.kind == "erlang" else self.param
        return f"{self.kind}({key}={val:g})"

    @property
    def _ln_sigma2(self):
        return math.log1p(self.param)

    @property
    def scv(self) -> float:
        """Squared coefficient of variation (equals the variance)."""
        return self.moment(2) - 1.0

    @property
    def is_exponential(self) -> bool:
        return self.kind == "exponential"

    @property
    def support_max(self) -> float:
        if self.kind == "deterministic":
            return 1.0
        if self.kind == "uniform":
            return 1.0 + self.param
        return math.inf

    def moment(self, p: int) -> float:
        """Raw moment ``E[T^p]``."""
        if self._mix:
            return sum(w * math.exp(special.gammaln(k + p) - special.gammaln(k)) / nu ** p
                       for w, k, nu in self._mix)
        if self.kind == "deterministic":
            return 1.0
        if self.kind == "uniform":
            a = self.param
            return ((1 + a) ** (p + 1) - (1 - a) ** (p + 1)) / (2 * a * (p + 1))
        s2 = self._ln_sigma2
        return math.exp(-0.5 * p * s2 + 0.5 * p * p * s2)

    def sf(self, x: float) -> float:
        """Survival function ``P(T > x)``."""
        if x < 0:
            return 1.0
        if self._mix:
            return sum(w * special.gammaincc(k, nu * x) for w, k, nu in self._mix)
        if self.kind == "deterministic":
            return 1.0 if x < 1.0 else 0.0
        if self.kind == "uniform":
            a = self.param
            return float(np.clip((1 + a - x) / (2 * a), 0.0, 1.0))
        if x == 0:
            return 1.0
        s = math.sqrt(self._ln_sigma2)
        return float(special.ndtr(-(math.log(x) + 0.5 * s * s) / s))

    def partial_moment(self, p: float, d: float) -> float:
        """``E[(T^p - d^p) 1(T >= d)]`` for ``p >= 1``, ``d >= 0``."""
        d = max(float(d), 0.0)
        if math.isinf(d):
            return 0.0
        if self._mix:
            upper = sum(w * math.exp(special.gammaln(k + p) - special.gammaln(k)) / nu ** p
                        * special.gammaincc(k + p, nu * d) for w, k, nu in self._mix)
            return upper - d ** p * self.sf(d)
        if self.kind == "deterministic":
            return 1.0 - d ** p if d <= 1.0 else 0.0
        if self.kind == "uniform":
            a = self.param
            lo, hi = max(1 - a, d), 1 + a
            if lo >= hi:
                return 0.0
            return ((hi ** (p + 1) - lo ** (p + 1)) / (p + 1) - d ** p * (hi - lo)) / (2 * a)
        s2 = self._ln_sigma2
        s = math.sqrt(s2)
        mu = -0.5 * s2
        if d == 0:
            return self.moment(p)
        upper = math.exp(p * mu + 0.5 * p * p * s2) * special.ndtr(-(math.log(d) - mu - p * s2) / s)
        return upper - d ** p * self.sf(d)

    def trunc_mean(self, cap: float) -> float:
        """``E[min(T, cap)]``."""
        if math.isinf(cap):
            return 1.0
        return 1.0 - self.partial_moment(1, cap)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` variates from ``rng``."""
        kind = self.kind
        if kind == "exponential":
            return rng.standard_exponential(n)
        if kind == "deterministic":
            return np.ones(n)
        if kind == "uniform":
            return rng.uniform(1 - self.param, 1 + self.param, n)
        if kind == "erlang":
            k = int(self.param)
            return rng.standard_gamma(k, n) / k
        if kind == "hyperexp":
            (w1, _, nu1), (_, _, nu2) = self._mix
            phase1 = rng.random(n) < w1
            return rng.standard_exponential(n) / np.where(phase1, nu1, nu2)
        s2 = self._ln_sigma2
        return rng.lognormal(-0.5 * s2, math.sqrt(s2), n)

    # ------------------------------------------------------------------
    def mgf_domain(self, t: float) -> float:
        """Infimum of ``s`` where the transform at truncation ``t`` is finite."""
        if t > 0 or self.kind in ("deterministic", "uniform"):
            return -math.inf
        if self._mix:
            return -min(nu for _, _, nu in self._mix)
        return 0.0

    def laplace(self, s: float, t: float = 0.0) -> tuple[float, float]:
        """Truncated transform and its derivative in ``s``.

        Parameters
        ----------
        s : float
            Argument; may be negative.
        t : float
            Truncation level, the time is ``min(T, 1/t)``; ``t = 0`` means
            no truncation.

        Returns
        -------
        (M, dM) : tuple of float
            ``M = E[exp(-s T_t)]`` and ``dM = -E[T_t exp(-s T_t)]``; ``inf``
            outside the domain.
        """
        cap = math.inf if t <= 0 else 1.0 / t
        if s == 0.0:
            return 1.0, -self.trunc_mean(cap)
        if s <= self.mgf_domain(t) or (self.kind == "lognormal" and math.isinf(cap) and s < 0):
            return math.inf, -math.inf
        if self.kind == "deterministic":
            x = min(1.0, cap)
            e = math.exp(-s * x)
            return e, -x * e
        if self.kind == "uniform":
            a = self.param
            lo, hi = 1 - a, 1 + a
            u = min(hi, cap)
            m = dm = 0.0
            if u > lo:
                x, w = _gl_nodes(lo, u)
                e = np.exp(-s * x) * w / (2 * a)
                m, dm = float(e.sum()), -float((x * e).sum())
            tail = (hi - u) / (2 * a)
            if tail > 0:
                e = math.exp(-s * cap)
                m += tail * e
                dm -= tail * cap * e
            return m, dm
        if self._mix:
            return self._laplace_mix(s, cap)
        return self._laplace_lognormal(s, cap)

    def _laplace_mix(self, s, cap):
        m = dm = 0.0
        for w, k, nu in self._mix:
            a = nu + s
            if math.isinf(cap):
                m += w * (nu / a) ** k
                dm -= w * (nu / a) ** k * k / a
                continue
            if a > 0:
                body = (nu / a) ** k * special.gammainc(k, a * cap)
                body1 = (nu / a) ** k * (k / a) * special.gammainc(k + 1, a * cap)
            else:
                x, wq = _gl_nodes(0.0, cap)
                dens = np.exp(k * math.log(nu) - special.gammaln(k) + (k - 1) * np.log(x) - a * x)
                body = float((dens * wq).sum())
                body1 = float((x * dens * wq).sum())
            sf = special.gammaincc(k, nu * cap)
            e = math.exp(-s * cap)
            m += w * (body + e * sf)
            dm -= w * (body1 + cap * e * sf)
        return m, dm

    def _laplace_lognormal(self, s, cap):
        s2 = self._ln_sigma2
        sig = math.sqrt(s2)
        mu = -0.5 * s2
        zc = 12.0 if math.isinf(cap) else min((math.log(cap) - mu) / sig, 12.0)
        m = dm = 0.0
        if zc > -12.0:
            z, w = _gl_nodes(-12.0, zc)
            x = np.exp(mu + sig * z)
            e = np.exp(-s * x - 0.5 * z * z) * w / math.sqrt(2 * math.pi)
            m, dm = float(e.sum()), -float((x * e).sum())
        if not math.isinf(cap):
            tail = self.sf(cap)
            e = math.exp(-s * cap)
            m += tail * e
            dm -= tail * cap * e
        return m, dm

    def mgf_truncated(self, s: float, t: float = 0.0) -> float:
        """``E[exp(-s * min(T, 1/t))]`` (``t = 0``: no truncation)."""
        return self.laplace(s, t)[0]


def exponential():
    return DistributionModel("exponential")


def deterministic():
    return DistributionModel("deterministic")


def uniform(a):
    return DistributionModel("uniform", a)


def erlang(k):
    return DistributionModel("erlang", k)


def hyperexp(scv):
    return DistributionModel("hyperexp", scv)


def lognormal(scv):
    return DistributionModel("lognormal", scv)


_SPEC_RE = re.compile(r"^\s*([a-z_]+)\s*(?:\(\s*([a-z]+)\s*=\s*([-+0-9.eE]+)\s*\))?\s*$")
_PARAM_KEYS = {"uniform": "a", "erlang": "k", "hyperexp": "scv", "lognormal": "scv"}
_ALIASES = {"uniform_bounded": "uniform", "hyperexponential": "hyperexp", "exp": "exponential",
            "det": "deterministic"}


def parse_distribution(text) -> DistributionModel:
    """Parse a distribution string such as ``erlang(k=4)``.

    Grammar: ``exponential | deterministic | uniform(a=<0..1>) | erlang(k=<int>)
    | hyperexp(scv=<>1>) | lognormal(scv=<>0>)``.
    """
    if isinstance(text, DistributionModel):
        return text
    mt = _SPEC_RE.match(str(text))
    if not mt:
        raise DistributionError(f"cannot parse distribution {text!r}")
    kind, key, val = mt.groups()
    kind = _ALIASES.get(kind, kind)
    if kind not in KINDS:
        raise DistributionError(f"unknown distribution kind {kind!r}")
    want = _PARAM_KEYS.get(kind)
    if want is None:
        if key is not None:
            raise DistributionError(f"{kind} takes no parameter")
        return DistributionModel(kind)
    if key != want:
        raise DistributionError(f"{kind} needs parameter {want}=...")
    return DistributionModel(kind, float(val))
