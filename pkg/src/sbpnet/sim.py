"""Discrete-event simulation of the network state ``X = (Z, R_e, R_s)``.

The driver owns random streams and accumulators; the event loop itself is
compiled (see ``_kernel``).  Estimates come with batch-means standard
errors over equal-length time batches after the warmup.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.stats import linregress as stats_linregress

from . import _kernel
from .network import ValidatedNetwork
from .transforms import solve_eta, solve_xi

__all__ = [
    "Estimate",
    "TestFunction",
    "test_function",
    "SimState",
    "EventRecord",
    "SteadyStats",
    "NoEvents",
    "ConditioningEventEmpty",
    "DivergenceWarning",
    "simulate",
    "estimate_rates",
    "estimate_mgf",
    "collect_palm",
    "remaining_time_tail",
    "stream_seed",
]

CHUNK = 1 << 16


class NoEvents(ValueError):
    pass


class ConditioningEventEmpty(ValueError):
    pass


class DivergenceWarning(RuntimeWarning):
    pass


class Estimate(NamedTuple):
    value: float
    std_error: float
    batches: int


@dataclass(frozen=True, eq=False)
class TestFunction:
    """Exponential test function ``g_{theta,s}(z) exp(-<eta, lam u ^ 1/t> - <xi, mu v ^ 1/t>)``.

    ``s = 0`` leaves the high-priority counts untruncated and ``t = 0`` the
    clocks.  With ``eta = xi = 0`` this is ``g_{theta,s}`` alone.
    """

    theta: np.ndarray
    s: float = 0.0
    t: float = 0.0
    eta: np.ndarray | None = None
    xi: np.ndarray | None = None
    time_average: bool = True
    palm: bool = False


def test_function(net: ValidatedNetwork, theta, s: float = 0.0, t: float = 0.0,
                  transforms: bool = True, palm: bool = False) -> TestFunction:
    """Build a test function with the network's eta/xi roots at ``(theta, t)``."""
    theta = np.asarray(theta, dtype=float)
    K = net.K
    eta = np.zeros(K)
    xi = np.zeros(K)
    if transforms:
        for k in range(K):
            if net.lam[k] > 0:
                eta[k] = solve_eta(net.spec.arrival_dist[k], theta[k], t)
            xi[k] = solve_xi(net.spec.service_dist[k], net.P[k], theta, k, t)
    return TestFunction(theta, s, t, eta, xi, True, palm)


# make pytest ignore the dataclass/factory despite their names
TestFunction.__test__ = False
test_function.__test__ = False


@dataclass(frozen=True, eq=False)
class SimState:
    Z: np.ndarray
    R_e: np.ndarray
    R_s: np.ndarray


@dataclass(frozen=True, eq=False)
class EventRecord:
    """One event; ``kind`` is ``external_arrival`` or ``service_completion``.

    ``routed_to`` is the next class, or ``None`` for exit (arrivals: ``None``).
    """

    kind: str
    k: int
    time: float
    pre_state: SimState
    post_state: SimState
    routed_to: int | None


def stream_seed(seed: int, kind: int, k: int) -> np.random.SeedSequence:
    """Seed of the primitive sequence ``kind`` (0 arrivals, 1 services, 2 routing) of class ``k``."""
    return np.random.SeedSequence(seed, spawn_key=(kind, k))


class _Streams:
    def __init__(self, net: ValidatedNetwork, seed: int, chunk: int):
        K = net.K
        self.net = net
        self.chunk = chunk
        self.rngs = [np.random.Generator(np.random.PCG64(stream_seed(seed, kind, k)))
                     for kind in range(3) for k in range(K)]
        self.bufs = np.ones((2 * K, chunk))
        self.route = np.full((K, chunk), K, dtype=np.int64)
        self.pos = np.zeros(3 * K, dtype=np.int64)
        rows = np.hstack([net.P, np.clip(1.0 - net.P.sum(axis=1), 0.0, None)[:, None]])
        self.route_p = rows / rows.sum(axis=1, keepdims=True)
        for s in range(3 * K):
            self.refill(s)

    def refill(self, s):
        net, K, n = self.net, self.net.K, self.chunk
        kind, k = divmod(s, K)
        rng = self.rngs[s]
        if kind == 0:
            d = net.spec.arrival_dist[k]
            self.bufs[k] = d.sample(rng, n) if d is not None else 1.0
        elif kind == 1:
            self.bufs[K + k] = net.spec.service_dist[k].sample(rng, n)
        else:
            self.route[k] = rng.choice(K + 1, size=n, p=self.route_p[k])
        self.pos[s] = 0

    def draw(self, s):
        """Take one value outside the compiled loop (initial clocks)."""
        if self.pos[s] >= self.chunk:
            self.refill(s)
        v = self.bufs[s, self.pos[s]]
        self.pos[s] += 1
        return v


@dataclass(eq=False)
class SteadyStats:
    """Batch accumulators of one or more runs (batches concatenated by ``merge``).

    Attributes are arrays with the batch index first; ``time`` holds the
    batch lengths.  Unnormalised integrals are kept so that merging is a
    plain concatenation.
    """

    K: int
    zmax: int
    palm_zmax: int
    tails: tuple
    cvals: tuple
    specs: tuple
    time: np.ndarray
    idle: np.ndarray
    busy: np.ndarray
    z: np.ndarray
    z2: np.ndarray
    hist: np.ndarray
    zover: np.ndarray
    hist_hp: np.ndarray
    hist_hpc: np.ndarray
    tail_e: np.ndarray
    tail_s: np.ndarray
    mgf: np.ndarray
    mgf_idle: np.ndarray
    n_arr: np.ndarray
    n_srv: np.ndarray
    routes: np.ndarray
    p_hist: np.ndarray
    p_rw: np.ndarray
    p_df: np.ndarray
    p_df2: np.ndarray
    violations: np.ndarray
    events: list = field(default_factory=list)
    final_state: SimState | None = None

    _BATCHED = ("time", "idle", "busy", "z", "z2", "hist", "zover", "hist_hp", "hist_hpc",
                "tail_e", "tail_s", "mgf", "mgf_idle", "n_arr", "n_srv", "routes", "p_hist",
                "p_rw", "p_df", "p_df2", "violations")

    @property
    def batches(self) -> int:
        return len(self.time)

    @property
    def total_time(self) -> float:
        return float(self.time.sum())

    def merge(self, other: "SteadyStats") -> "SteadyStats":
        """Concatenate the batches of two runs with the same configuration."""
        for key in ("K", "zmax", "palm_zmax", "tails", "cvals"):
            if getattr(self, key) != getattr(other, key):
                raise ValueError(f"cannot merge: {key} differs")
        if len(self.specs) != len(other.specs):
            raise ValueError("cannot merge: test functions differ")
        kw = {k: np.concatenate([getattr(self, k), getattr(other, k)]) for k in self._BATCHED}
        return SteadyStats(self.K, self.zmax, self.palm_zmax, self.tails, self.cvals, self.specs,
                           events=self.events + other.events, final_state=other.final_state, **kw)

    # -- estimators ----------------------------------------------------
    def ratio(self, num, den=None) -> Estimate:
        """Ratio of totals with a batch-means (delta-method) standard error.

        ``num`` and ``den`` are per-batch arrays (batch axis first); ``den``
        defaults to the batch lengths.
        """
        num = np.asarray(num, dtype=float)
        den = self.time if den is None else np.asarray(den, dtype=float)
        if den.ndim < num.ndim:
            den = den.reshape(den.shape + (1,) * (num.ndim - den.ndim))
        B = len(num)
        D = den.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            val = num.sum(axis=0) / D
            if B > 1:
                dev = num - val * den
                se = np.sqrt((dev ** 2).sum(axis=0) / (B * (B - 1))) / (D / B)
            else:
                se = np.full_like(val, np.nan)
        return Estimate(val, se, B)

    def beta(self) -> Estimate:
        """``P(Z_{H(k)} = 0)`` per class."""
        return self.ratio(self.idle)

    def busy_fraction(self) -> Estimate:
        return self.ratio(self.busy)

    def mean(self) -> Estimate:
        return self.ratio(self.z)

    def marginal(self) -> Estimate:
        """``P(Z_k = z)`` for ``z <= zmax`` (last column: ``z > zmax``)."""
        return self.ratio(self.hist)

    def mean_sum(self, classes) -> Estimate:
        return self.ratio(self.z[:, list(classes)].sum(axis=1))

    def tail_mean(self, k: int, a: float) -> Estimate:
        """``E[Z_k 1(Z_k > a)]`` (exact for ``a < zmax``, else from the overflow part)."""
        a = int(math.floor(a))
        if a >= self.zmax:
            return self.ratio(self.zover[:, k])
        zs = np.arange(a + 1, self.zmax + 1)
        return self.ratio(self.hist[:, k, a + 1:self.zmax + 1] @ zs + self.zover[:, k])

    def prob_ge_hp_idle(self, k: int, n: int, c_index: int | None = None) -> Estimate:
        """``P(Z_k >= n, Z_{H+(k)} = 0)``, optionally also ``R_{s,k} <= cvals[c_index]``."""
        if n > self.zmax + 1:
            raise ValueError("n beyond the recorded range")
        h = self.hist_hp[:, k] if c_index is None else self.hist_hpc[:, c_index, k]
        return self.ratio(h[:, n:].sum(axis=1))

    def event_rates(self):
        """``(arrival rates, completion rates)`` per class."""
        return self.ratio(self.n_arr), self.ratio(self.n_srv)


def _spec_arrays(specs, K):
    S = len(specs)
    th = np.zeros((S, K))
    hcap = np.full(S, np.inf)
    eta = np.zeros((S, K))
    xi = np.zeros((S, K))
    tcap = np.full(S, np.inf)
    st = np.zeros(S, dtype=np.bool_)
    sp = np.zeros(S, dtype=np.bool_)
    for i, f in enumerate(specs):
        th[i] = f.theta
        if f.s > 0:
            hcap[i] = 1.0 / f.s
        if f.eta is not None:
            eta[i] = f.eta
        if f.xi is not None:
            xi[i] = f.xi
        if f.t > 0:
            tcap[i] = 1.0 / f.t
        st[i] = f.time_average
        sp[i] = f.palm
    return th, hcap, eta, xi, tcap, st, sp


def simulate(net: ValidatedNetwork, horizon: float, warmup: float | None = None, seed: int = 0,
             batches: int = 32, test_functions: Sequence[TestFunction] = (), tails=(),
             cvals=(math.inf,), zmax: int = 100, palm_zmax: int = 10, log_events: int = 0,
             tie_tol: float = 1e-12, chunk: int = CHUNK) -> SteadyStats:
    """Simulate the network from empty and accumulate stationary statistics.

    Parameters
    ----------
    net : ValidatedNetwork
    horizon : float
        End time; statistics cover ``(warmup, horizon]``.
    warmup : float, optional
        Defaults to 10% of the horizon.
    seed : int
        Master seed; each primitive sequence gets its own stream.
    batches : int
        Number of equal-length time batches for standard errors.
    test_functions : sequence of TestFunction
        Time averages (and, if flagged, Palm jump averages) to accumulate.
    tails : sequence of (n, c)
        Remaining-time moments ``E[R^n 1(R >= c)]`` to accumulate.
    cvals : sequence of float
        Cutoffs for ``min(R_{s,k}, c)`` Palm sums and the ``R_{s,k} <= c``
        occupation histogram.
    zmax, palm_zmax : int
        Ranges of the count histograms.
    log_events : int
        Keep the first ``log_events`` post-warmup events as EventRecords.
    tie_tol : float
        Clocks within this of the next event time fire in the same block.

    Returns
    -------
    SteadyStats
    """
    if warmup is None:
        warmup = 0.1 * horizon
    if not horizon > warmup >= 0:
        raise ValueError("need horizon > warmup >= 0")
    spec, ps = net.spec, net.structure
    K, J = net.K, net.J
    B = int(batches)
    specs = tuple(test_functions)
    tails = tuple((int(n), float(c)) for n, c in tails)
    cv = tuple(float(c) for c in cvals)
    streams = _Streams(net, seed, chunk)

    isE = net.lam > 0
    a = np.where(isE, 1.0 / np.where(isE, net.lam, 1.0), np.inf)
    m = net.m.astype(float).copy()
    Z = np.zeros(K, dtype=np.int64)
    Re = np.full(K, np.inf)
    Rs = np.zeros(K)
    for k in range(K):
        if isE[k]:
            Re[k] = a[k] * streams.draw(k)
        Rs[k] = m[k] * streams.draw(K + k)

    width = max(len(p) for p in spec.priority)
    prio = np.full((J, width), -1, dtype=np.int64)
    for j, order in enumerate(spec.priority):
        prio[j, :len(order)] = order
    Hm = np.zeros((K, K), dtype=np.bool_)
    Hpm = np.zeros((K, K), dtype=np.bool_)
    for k in range(K):
        Hm[k, list(ps.H[k])] = True
        Hpm[k, list(ps.H_plus[k])] = True
    isL = np.zeros(K, dtype=np.bool_)
    isL[list(ps.lowest)] = True
    th, hcap, eta, xi, tcap, st, sp = _spec_arrays(specs, K)
    S, P, C = len(specs), len(tails), len(cv)
    tail_n = np.array([n for n, _ in tails], dtype=np.float64)
    tail_c = np.array([c for _, c in tails], dtype=np.float64)
    zb, pb = zmax + 2, palm_zmax + 2
    acc = dict(
        time=np.zeros(B), idle=np.zeros((B, K)), busy=np.zeros((B, K)), z=np.zeros((B, K)),
        z2=np.zeros((B, K)), hist=np.zeros((B, K, zb)), zover=np.zeros((B, K)),
        hist_hp=np.zeros((B, K, zb)), hist_hpc=np.zeros((B, C, K, zb)),
        tail_e=np.zeros((B, P, K)), tail_s=np.zeros((B, P, K)), mgf=np.zeros((B, S)),
        mgf_idle=np.zeros((B, S, K)), n_arr=np.zeros((B, K)), n_srv=np.zeros((B, K)),
        routes=np.zeros((B, K, K + 1)), p_hist=np.zeros((B, 2 * K, K, pb)),
        p_rw=np.zeros((B, C, 2 * K, K, pb)), p_df=np.zeros((B, S, 2 * K)),
        p_df2=np.zeros((B, S, 2 * K)), violations=np.zeros(B, dtype=np.int64),
    )
    L = max(int(log_events), 0)
    log = dict(t=np.zeros(L), kind=np.zeros(L, dtype=np.int64), cls=np.zeros(L, dtype=np.int64),
               route=np.zeros(L, dtype=np.int64), zpre=np.zeros((L, K), dtype=np.int64),
               zpost=np.zeros((L, K), dtype=np.int64), repre=np.zeros((L, K)),
               rspre=np.zeros((L, K)), repost=np.zeros((L, K)), rspost=np.zeros((L, K)))
    fs = np.array([0.0, warmup, horizon, (horizon - warmup) / B, tie_tol])
    is_ = np.array([B, 0, L], dtype=np.int64)
    while True:
        code = _kernel.run(
            fs, is_, Z, Re, Rs,
            np.asarray(spec.station_of, dtype=np.int64), prio, Hm, Hpm, isL, isE, a, m,
            net.lam.astype(float), net.mu.astype(float),
            streams.bufs, streams.pos, streams.route,
            zmax, palm_zmax, tail_n, tail_c, np.array(cv),
            th, hcap, eta, xi, tcap, st, sp,
            acc["time"], acc["idle"], acc["busy"], acc["z"], acc["z2"], acc["hist"], acc["zover"],
            acc["hist_hp"], acc["hist_hpc"], acc["tail_e"], acc["tail_s"], acc["mgf"],
            acc["mgf_idle"], acc["n_arr"], acc["n_srv"], acc["routes"], acc["p_hist"],
            acc["p_rw"], acc["p_df"], acc["p_df2"], acc["violations"],
            log["t"], log["kind"], log["cls"], log["route"], log["zpre"], log["zpost"],
            log["repre"], log["rspre"], log["repost"], log["rspost"])
        if code == 0:
            break
        streams.refill(code - 1)
    events = []
    for i in range(int(is_[1])):
        kind = "external_arrival" if log["kind"][i] == 0 else "service_completion"
        r = int(log["route"][i])
        events.append(EventRecord(
            kind, int(log["cls"][i]), float(log["t"][i]),
            SimState(log["zpre"][i].copy(), log["repre"][i].copy(), log["rspre"][i].copy()),
            SimState(log["zpost"][i].copy(), log["repost"][i].copy(), log["rspost"][i].copy()),
            None if (kind == "external_arrival" or r >= K) else r))
    stats = SteadyStats(K, zmax, palm_zmax, tails, cv, specs, events=events,
                        final_state=SimState(Z.copy(), Re.copy(), Rs.copy()), **acc)
    _check_divergence(stats.z.sum(axis=1) / np.where(stats.time > 0, stats.time, 1.0))
    return stats


def _check_divergence(tot):
    """Warn when batch means of the total count trend upwards."""
    B = len(tot)
    if B < 8:
        return
    q = B // 4
    first, last = tot[:q].mean(), tot[-q:].mean()
    fit = stats_linregress(np.arange(B), tot)
    t = fit.slope / fit.stderr if fit.stderr > 0 else (np.inf if fit.slope > 0 else 0.0)
    if t > 5 and last > 2 * first:
        warnings.warn(f"mean total count grew from {first:.3g} to {last:.3g} across batches; "
                      "the network may be unstable", DivergenceWarning)


def estimate_rates(stats: SteadyStats) -> dict:
    """Event rates of every counting process with standard errors."""
    arr, srv = stats.event_rates()
    return {"arrival": arr, "completion": srv}


def estimate_mgf(stats: SteadyStats, index: int = 0) -> dict:
    """Time-average MGF estimates of a registered test function.

    Returns
    -------
    dict
        ``value`` (unconditional), ``conditional`` (given ``Z_{H(k)} = 0``, per
        class) and ``beta`` (empirical probability of each conditioning event).

    Raises
    ------
    ConditioningEventEmpty
        If some conditioning event never occurred.
    """
    if stats.idle.sum(axis=0).min() <= 0:
        raise ConditioningEventEmpty("a conditioning event Z_{H(k)} = 0 was never observed")
    return {
        "value": stats.ratio(stats.mgf[:, index]),
        "conditional": stats.ratio(stats.mgf_idle[:, index, :], stats.idle),
        "beta": stats.beta(),
    }


def collect_palm(stats: SteadyStats, functional: Callable | None = None, index: int | None = None):
    """Event averages per counting process.

    With ``functional`` (a map ``(EventRecord) -> float``) the averages use
    the logged events; with ``index`` they are the jump averages
    ``E[f(X+) - f(X-)]`` of a test function registered with ``palm=True``.

    Returns
    -------
    dict
        ``{("external_arrival" | "service_completion", k): Estimate}``; event
        types without occurrences are omitted.

    Raises
    ------
    NoEvents
        If no event at all is available.
    """
    K = stats.K
    out = {}
    if functional is not None:
        if not stats.events:
            raise NoEvents("no logged events; pass log_events to simulate")
        groups: dict = {}
        for ev in stats.events:
            groups.setdefault((ev.kind, ev.k), []).append(float(functional(ev)))
        for key, vals in groups.items():
            v = np.asarray(vals)
            se = v.std(ddof=1) / math.sqrt(len(v)) if len(v) > 1 else np.nan
            out[key] = Estimate(float(v.mean()), float(se), len(v))
        return out
    if index is None:
        raise ValueError("need a functional or a test-function index")
    counts = np.concatenate([stats.n_arr, stats.n_srv], axis=1)
    if counts.sum() == 0:
        raise NoEvents("no events recorded")
    est = stats.ratio(stats.p_df[:, index, :], counts)
    for ev in range(2 * K):
        if counts[:, ev].sum() == 0:
            continue
        key = ("external_arrival", ev) if ev < K else ("service_completion", ev - K)
        out[key] = Estimate(float(est.value[ev]), float(est.std_error[ev]), est.batches)
    return out


def remaining_time_tail(stats: SteadyStats, net: ValidatedNetwork, k: int, c: float, n: int) -> dict:
    """Both sides of the remaining-time tail identities for class ``k``.

    ``arrival``: ``E[R_e^n 1(R_e >= c)] = a^n/(n+1) E[(T^{n+1} - (c/a)^{n+1}) 1(aT >= c)]``;
    ``service``: ``E[R_s^n 1(R_s >= c) 1(k in service)]`` with ``gamma_k m_k^n`` in front.
    The pair ``(n, c)`` must have been registered in ``simulate(tails=...)``.
    """
    try:
        p = stats.tails.index((int(n), float(c)))
    except ValueError:
        raise ValueError(f"tail (n={n}, c={c}) was not accumulated") from None
    out = {}
    mk = net.m[k]
    gam = net.traffic.gamma[k]
    out["service"] = (stats.ratio(stats.tail_s[:, p, k]),
                      gam * mk ** n / (n + 1) * net.spec.service_dist[k].partial_moment(n + 1, c / mk))
    if net.lam[k] > 0:
        ak = 1.0 / net.lam[k]
        out["arrival"] = (stats.ratio(stats.tail_e[:, p, k]),
                          ak ** n / (n + 1) * net.spec.arrival_dist[k].partial_moment(n + 1, c / ak))
    return out
