"""Ready-made networks used in tests, the CLI and the acceptance suite."""

from __future__ import annotations

import numpy as np

from .network import HeavyTrafficFamily, NetworkSpec, validate_spec

__all__ = [
    "reentrant_2s5c",
    "reentrant_2s5c_family",
    "priority_station",
    "single_class",
    "single_class_family",
    "DEFAULT_M",
]

DEFAULT_M = (0.3, 0.5, 0.4, 0.5, 0.3)


def reentrant_2s5c(m=DEFAULT_M, lam=1.0, arrival_dist="exponential", service_dist="exponential"):
    """Two-station five-class reentrant line.

    Classes 1..5 (0..4 here) are visited in order; station 1 serves classes
    1, 3, 5 with priority 5 > 3 > 1 and station 2 serves 2, 4 with 2 > 4.
    """
    P = np.zeros((5, 5))
    for k in range(4):
        P[k, k + 1] = 1.0
    lamv = np.array([lam, 0, 0, 0, 0], dtype=float)
    sd = service_dist if isinstance(service_dist, (list, tuple)) else [service_dist] * 5
    spec = NetworkSpec(
        num_stations=2,
        station_of=(0, 1, 0, 1, 0),
        priority=((4, 2, 0), (1, 3)),
        routing=P,
        arrival_rate=lamv,
        mean_service=np.asarray(m, dtype=float),
        arrival_dist=[arrival_dist] + [None] * 4,
        service_dist=sd,
    )
    return validate_spec(spec)


def reentrant_2s5c_family(m=DEFAULT_M, **dists):
    """Family with ``lambda_1^(r) = 1 - r`` and fixed service times.

    ``m`` must satisfy ``m1 + m3 + m5 = m2 + m4 = 1``.
    """
    net = reentrant_2s5c(m, 1.0, **dists)
    return HeavyTrafficFamily(net, [1.0, 0, 0, 0, 0], np.zeros(5))


def priority_station(lam=(0.4, 0.3), m=(1.0, 1.0), arrival_dist="exponential",
                     service_dist="exponential"):
    """One station, two classes with external arrivals; class 1 has priority."""
    spec = NetworkSpec(
        num_stations=1,
        station_of=(0, 0),
        priority=((0, 1),),
        routing=np.zeros((2, 2)),
        arrival_rate=np.asarray(lam, dtype=float),
        mean_service=np.asarray(m, dtype=float),
        arrival_dist=[arrival_dist] * 2,
        service_dist=[service_dist] * 2,
    )
    return validate_spec(spec)


def single_class(lam=0.5, m=1.0, arrival_dist="exponential", service_dist="exponential"):
    spec = NetworkSpec(1, (0,), ((0,),), np.zeros((1, 1)), [lam], [m], [arrival_dist], [service_dist])
    return validate_spec(spec)


def single_class_family(**dists):
    """M/M/1-type family ``lambda^(r) = 1 - r``, ``m = 1``."""
    return HeavyTrafficFamily(single_class(1.0, 1.0, **dists), [1.0], [0.0])
