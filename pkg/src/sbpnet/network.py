"""Multiclass network primitives, priority structure and traffic equations.

Classes and stations are 0-based internally.  Network files use 1-based
labels (see :func:`load_network`).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .distributions import parse_distribution

__all__ = [
    "NetworkError",
    "NonOpenNetwork",
    "NonStrictPriority",
    "BadRates",
    "NegativeRate",
    "FamilyError",
    "NetworkSpec",
    "PriorityStructure",
    "TrafficSolution",
    "ValidatedNetwork",
    "HeavyTrafficFamily",
    "validate_spec",
    "solve_traffic",
    "instantiate_at",
    "network_from_dict",
    "network_to_dict",
    "load_network",
]

UNDEFINED = -1
_TOL = 1e-10


class NetworkError(ValueError):
    """Invalid network; ``violations`` lists every problem found."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class NonOpenNetwork(NetworkError):
    pass


class NonStrictPriority(NetworkError):
    pass


class BadRates(NetworkError):
    pass


class NegativeRate(NetworkError):
    pass


class FamilyError(NetworkError):
    pass


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """Primitives of a multiclass network under static buffer priority.

    Parameters
    ----------
    num_stations : int
    station_of : sequence of int
        Station of each class (length ``K``).
    priority : sequence of sequence of int
        For each station, its classes ordered from highest to lowest priority.
    routing : array_like
        ``K x K`` substochastic routing matrix.
    arrival_rate : array_like
        External arrival rate per class (0 for classes without arrivals).
    mean_service : array_like
        Mean service time per class.
    arrival_dist, service_dist : sequence
        Unit-mean distribution per class (strings are parsed).  Arrival
        entries for classes without arrivals are ignored.
    """

    num_stations: int
    station_of: tuple
    priority: tuple
    routing: np.ndarray
    arrival_rate: np.ndarray
    mean_service: np.ndarray
    arrival_dist: tuple = None
    service_dist: tuple = None

    def __post_init__(self):
        K = len(self.station_of)
        object.__setattr__(self, "station_of", tuple(int(s) for s in self.station_of))
        object.__setattr__(self, "priority", tuple(tuple(int(k) for k in p) for p in self.priority))
        object.__setattr__(self, "routing", _frozen(self.routing))
        object.__setattr__(self, "arrival_rate", _frozen(self.arrival_rate))
        object.__setattr__(self, "mean_service", _frozen(self.mean_service))
        ad = self.arrival_dist if self.arrival_dist is not None else ["exponential"] * K
        sd = self.service_dist if self.service_dist is not None else ["exponential"] * K
        ad = tuple(None if (d is None or self.arrival_rate[k] <= 0) else parse_distribution(d)
                   for k, d in enumerate(ad))
        object.__setattr__(self, "arrival_dist", ad)
        object.__setattr__(self, "service_dist", tuple(parse_distribution(d) for d in sd))

    @property
    def num_classes(self) -> int:
        return len(self.station_of)

    @property
    def external_classes(self) -> tuple:
        return tuple(int(k) for k in np.flatnonzero(self.arrival_rate > 0))

    @property
    def priority_rank(self) -> np.ndarray:
        """Rank per class within its station; larger is served first."""
        rank = np.zeros(self.num_classes, dtype=int)
        for order in self.priority:
            n = len(order)
            for pos, k in enumerate(order):
                if 0 <= k < self.num_classes:
                    rank[k] = n - pos
        return rank

    @property
    def all_exponential(self) -> bool:
        return all(d.is_exponential for d in self.service_dist) and all(
            d is None or d.is_exponential for d in self.arrival_dist)

    def replace(self, **kw) -> "NetworkSpec":
        fields = dict(num_stations=self.num_stations, station_of=self.station_of,
                      priority=self.priority, routing=self.routing,
                      arrival_rate=self.arrival_rate, mean_service=self.mean_service,
                      arrival_dist=self.arrival_dist, service_dist=self.service_dist)
        fields.update(kw)
        return NetworkSpec(**fields)


@dataclass(frozen=True, eq=False)
class PriorityStructure:
    """Sets and maps derived from the per-station priority orders.

    ``k_plus[k]`` is the class just above ``k`` at its station and
    ``k_minus[k]`` the class just below; both are ``-1`` when undefined.
    ``lowest[j]`` is the lowest class at station ``j`` so that L-indexed
    vectors are ordered by station.
    """

    H: tuple
    H_plus: tuple
    k_minus: np.ndarray
    k_plus: np.ndarray
    lowest: tuple
    highest: tuple
    high: tuple
    constituency: np.ndarray

    @property
    def L(self):
        return self.lowest


@dataclass(frozen=True, eq=False)
class TrafficSolution:
    alpha: np.ndarray
    gamma: np.ndarray
    rho: np.ndarray
    beta: np.ndarray


def derive_priority(spec: NetworkSpec) -> PriorityStructure:
    K, J = spec.num_classes, spec.num_stations
    H = [None] * K
    Hp = [None] * K
    kp = np.full(K, UNDEFINED, dtype=int)
    km = np.full(K, UNDEFINED, dtype=int)
    C = np.zeros((J, K))
    for j, order in enumerate(spec.priority):
        for pos, k in enumerate(order):
            H[k] = frozenset(order[:pos + 1])
            Hp[k] = frozenset(order[:pos])
            if pos > 0:
                kp[k] = order[pos - 1]
            if pos + 1 < len(order):
                km[k] = order[pos + 1]
            C[j, k] = 1.0
    lowest = tuple(order[-1] for order in spec.priority)
    highest = tuple(order[0] for order in spec.priority)
    high = tuple(sorted(set(range(K)) - set(lowest)))
    return PriorityStructure(tuple(H), tuple(Hp), _frozen(km, int), _frozen(kp, int),
                             lowest, highest, high, _frozen(C))


def _open_check(P) -> list:
    K = P.shape[0]
    if K == 0:
        return []
    rad = max(abs(np.linalg.eigvals(P))) if K else 0.0
    if rad >= 1.0 - 1e-12:
        return [f"I - P is singular or routing is not transient (spectral radius {rad:.6g})"]
    Minv = np.linalg.solve(np.eye(K) - P, np.eye(K))
    res = np.abs((np.eye(K) - P) @ Minv - np.eye(K)).max()
    if res > _TOL:
        return [f"I - P ill-conditioned (residual {res:.3g})"]
    return []


def validate_spec(spec: NetworkSpec) -> "ValidatedNetwork":
    """Check the structural assumptions and attach the priority structure.

    Raises
    ------
    NonOpenNetwork, NonStrictPriority, BadRates
        The first category found; ``violations`` lists all problems.
    """
    K, J = spec.num_classes, spec.num_stations
    problems = []  # (exception class, message)
    if K < 1 or J < 1:
        problems.append((NetworkError, "need at least one station and one class"))
    for k, s in enumerate(spec.station_of):
        if not 0 <= s < J:
            problems.append((NetworkError, f"class {k} maps to unknown station {s}"))
    if len(spec.priority) != J:
        problems.append((NonStrictPriority, f"expected {J} priority orders, got {len(spec.priority)}"))
    else:
        for j, order in enumerate(spec.priority):
            members = sorted(k for k in range(K) if spec.station_of[k] == j)
            if not members:
                problems.append((NetworkError, f"station {j} has no classes"))
            if len(set(order)) != len(order):
                problems.append((NonStrictPriority, f"station {j}: tie or repeat in ranking {order}"))
            elif sorted(order) != members:
                problems.append((NonStrictPriority,
                                 f"station {j}: ranking {order} does not cover exactly its classes {members}"))
    P = spec.routing
    if P.shape != (K, K):
        problems.append((NetworkError, f"routing must be {K}x{K}, got {P.shape}"))
    else:
        if (P < 0).any():
            problems.append((NetworkError, "routing has negative entries"))
        if (P.sum(axis=1) > 1 + 1e-12).any():
            problems.append((NetworkError, "routing row sums exceed 1"))
        problems += [(NonOpenNetwork, msg) for msg in _open_check(P)]
    lam, m = spec.arrival_rate, spec.mean_service
    if lam.shape != (K,) or m.shape != (K,):
        problems.append((BadRates, "rate vectors must have length K"))
    else:
        if (lam < 0).any() or not np.isfinite(lam).all():
            problems.append((BadRates, "arrival rates must be finite and >= 0"))
        if not (m > 0).all() or not np.isfinite(m).all():
            problems.append((BadRates, "mean service times must be > 0"))
        if not (lam > 0).any():
            problems.append((BadRates, "no external arrivals"))
    if problems:
        order = [NonOpenNetwork, NonStrictPriority, BadRates, NetworkError]
        first = min(problems, key=lambda p: order.index(p[0]))[0]
        raise first([msg for _, msg in problems])
    return ValidatedNetwork(spec, derive_priority(spec))


def solve_traffic(net: "ValidatedNetwork") -> TrafficSolution:
    """Solve ``alpha = lambda + P^T alpha`` and derive gamma, rho, beta."""
    spec, ps = net.spec, net.structure
    K = spec.num_classes
    M = np.eye(K) - spec.routing.T
    alpha = np.linalg.solve(M, spec.arrival_rate)
    if np.abs(M @ alpha - spec.arrival_rate).max() > _TOL * max(1.0, abs(alpha).max()):
        raise NonOpenNetwork("traffic equations residual too large")
    gamma = alpha * spec.mean_service
    rho = ps.constituency @ gamma
    beta = np.array([1.0 - sum(gamma[l] for l in ps.H[k]) for k in range(K)])
    return TrafficSolution(_frozen(alpha), _frozen(gamma), _frozen(rho), _frozen(beta))


@dataclass(frozen=True, eq=False)
class ValidatedNetwork:
    """A network that passed :func:`validate_spec`."""

    spec: NetworkSpec
    structure: PriorityStructure

    @cached_property
    def traffic(self) -> TrafficSolution:
        return solve_traffic(self)

    K = property(lambda self: self.spec.num_classes)
    J = property(lambda self: self.spec.num_stations)
    P = property(lambda self: self.spec.routing)
    lam = property(lambda self: self.spec.arrival_rate)
    m = property(lambda self: self.spec.mean_service)
    mu = property(lambda self: 1.0 / self.spec.mean_service)
    station_of = property(lambda self: self.spec.station_of)

    @property
    def c2_e(self) -> np.ndarray:
        return np.array([0.0 if d is None else d.scv for d in self.spec.arrival_dist])

    @property
    def c2_s(self) -> np.ndarray:
        return np.array([d.scv for d in self.spec.service_dist])


@dataclass(frozen=True, eq=False)
class HeavyTrafficFamily:
    """Networks ``lambda - r lambda*``, ``m - r m*`` around a critical point.

    Parameters
    ----------
    network : ValidatedNetwork
        The critically loaded network (``rho = e``).
    lambda_star, m_star : array_like
        Perturbation directions; ``lambda_star`` must vanish off the
        external classes.
    """

    network: ValidatedNetwork
    lambda_star: np.ndarray
    m_star: np.ndarray

    def __post_init__(self):
        net = self.network
        object.__setattr__(self, "lambda_star", _frozen(self.lambda_star))
        object.__setattr__(self, "m_star", _frozen(self.m_star))
        K = net.K
        bad = []
        if self.lambda_star.shape != (K,) or self.m_star.shape != (K,):
            raise FamilyError("lambda_star and m_star must have length K")
        if (np.abs(self.lambda_star[net.lam <= 0]) > 0).any():
            bad.append("lambda_star must be 0 for classes without external arrivals")
        rho = net.traffic.rho
        if np.abs(rho - 1.0).max() > _TOL:
            bad.append(f"network is not critically loaded: rho = {rho}")
        if not (self.c > 0).all():
            bad.append(f"drift c must be positive, got {self.c}")
        if bad:
            raise FamilyError(bad)

    @cached_property
    def alpha_star(self) -> np.ndarray:
        net = self.network
        return _frozen(np.linalg.solve(np.eye(net.K) - net.P.T, self.lambda_star))

    @cached_property
    def c(self) -> np.ndarray:
        net = self.network
        C = net.structure.constituency
        return _frozen(C @ (self.m_star * net.traffic.alpha + net.m * self.alpha_star))

    @property
    def b(self) -> np.ndarray:
        return self.c.copy()  # L ordered by station, so b_l = c_{s(l)} is c itself

    def rates_at(self, r: float):
        return self.network.lam - r * self.lambda_star, self.network.m - r * self.m_star

    def rho_at(self, r: float) -> np.ndarray:
        """Closed form ``e - r c + r^2 C diag(m*) alpha*``."""
        C = self.network.structure.constituency
        return 1.0 - r * self.c + r * r * (C @ (self.m_star * self.alpha_star))

    def instantiate_at(self, r: float) -> ValidatedNetwork:
        return instantiate_at(self, r)


def instantiate_at(family: HeavyTrafficFamily, r: float) -> ValidatedNetwork:
    """The ``r``-th network of the family.

    Raises
    ------
    NegativeRate
        If some external rate or mean service time is not positive at ``r``.
    """
    if not 0.0 <= r <= 1.0:
        raise ValueError("r must lie in [0, 1]")
    lam, m = family.rates_at(r)
    net = family.network
    bad = [f"class {k}: lambda^(r) = {lam[k]:.6g}" for k in net.spec.external_classes if lam[k] <= 0]
    bad += [f"class {k}: m^(r) = {m[k]:.6g}" for k in range(net.K) if m[k] <= 0]
    if bad:
        raise NegativeRate(bad)
    lam = np.where(net.lam > 0, lam, 0.0)
    spec = net.spec.replace(arrival_rate=lam, mean_service=m)
    return ValidatedNetwork(spec, net.structure)


# ----------------------------------------------------------------------
# network files

_TOP_KEYS = {"stations", "classes", "routing", "arrivals", "heavy_traffic", "name"}
_CLASS_KEYS = {"station", "priority_rank", "mean_service", "service_dist", "name"}
_ARRIVAL_KEYS = {"class", "rate", "dist"}
_HT_KEYS = {"lambda_star", "m_star"}


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise NetworkError(f"{where}: expected a mapping")
    extra = set(d) - allowed
    if extra:
        raise NetworkError(f"{where}: unknown keys {sorted(extra)}")


def network_from_dict(doc: dict):
    """Build a network (and optional family) from a parsed network file.

    Returns
    -------
    (ValidatedNetwork, HeavyTrafficFamily or None)
    """
    _check_keys(doc, _TOP_KEYS, "network file")
    for key in ("stations", "classes", "routing", "arrivals"):
        if key not in doc:
            raise NetworkError(f"network file: missing section {key!r}")
    st = doc["stations"]
    J = int(st) if isinstance(st, int) else len(st)
    classes = doc["classes"]
    K = len(classes)
    station_of, rank, m, sdist = [], [], [], []
    for i, c in enumerate(classes, start=1):
        _check_keys(c, _CLASS_KEYS, f"class {i}")
        for key in ("station", "priority_rank", "mean_service"):
            if key not in c:
                raise NetworkError(f"class {i}: missing {key!r}")
        station_of.append(int(c["station"]) - 1)
        rank.append(float(c["priority_rank"]))
        m.append(float(c["mean_service"]))
        sdist.append(c.get("service_dist", "exponential"))
    priority = []
    for j in range(J):
        members = [k for k in range(K) if station_of[k] == j]
        ranks = [rank[k] for k in members]
        if len(set(ranks)) != len(ranks):
            raise NonStrictPriority(f"station {j + 1}: tied priority ranks")
        priority.append(sorted(members, key=lambda k: -rank[k]))
    lam = np.zeros(K)
    adist = [None] * K
    for a in doc["arrivals"]:
        _check_keys(a, _ARRIVAL_KEYS, "arrival")
        k = int(a["class"]) - 1
        if not 0 <= k < K:
            raise NetworkError(f"arrival for unknown class {k + 1}")
        lam[k] = float(a["rate"])
        adist[k] = a.get("dist", "exponential")
    P = np.array(doc["routing"], dtype=float)
    spec = NetworkSpec(J, station_of, priority, P, lam, m, adist, sdist)
    net = validate_spec(spec)
    fam = None
    if doc.get("heavy_traffic") is not None:
        ht = doc["heavy_traffic"]
        _check_keys(ht, _HT_KEYS, "heavy_traffic")
        ls = np.array(ht.get("lambda_star", np.zeros(K)), dtype=float)
        ms = np.array(ht.get("m_star", np.zeros(K)), dtype=float)
        fam = HeavyTrafficFamily(net, ls, ms)
    return net, fam


def network_to_dict(net: ValidatedNetwork, family: HeavyTrafficFamily | None = None) -> dict:
    spec = net.spec
    rank = spec.priority_rank
    doc = {
        "stations": spec.num_stations,
        "classes": [
            {"station": spec.station_of[k] + 1, "priority_rank": int(rank[k]),
             "mean_service": float(spec.mean_service[k]), "service_dist": str(spec.service_dist[k])}
            for k in range(spec.num_classes)
        ],
        "routing": spec.routing.tolist(),
        "arrivals": [
            {"class": k + 1, "rate": float(spec.arrival_rate[k]), "dist": str(spec.arrival_dist[k])}
            for k in spec.external_classes
        ],
    }
    if family is not None:
        doc["heavy_traffic"] = {"lambda_star": family.lambda_star.tolist(),
                                "m_star": family.m_star.tolist()}
    return doc


def load_network(path):
    """Read a YAML (or JSON) network file; see :func:`network_from_dict`."""
    import yaml

    with open(path) as fh:
        doc = yaml.safe_load(fh)
    return network_from_dict(doc)
