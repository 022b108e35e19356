import math
from pathlib import Path

import numpy as np
import pytest

from flownet import (
    ExponentialFlow,
    FlowNetwork,
    LogitPolicy,
    NetworkTopology,
)

DATA = Path(__file__).parent / "data"


def two_route_topology():
    return NetworkTopology(2, [(0, 0, 1), (1, 0, 1)])


def two_route_network():
    topo = two_route_topology()
    return FlowNetwork(topo, {0: ExponentialFlow(1.0, 0.75), 1: ExponentialFlow(1.0, 0.75)})


def two_route_policy(topo):
    return LogitPolicy(topo, eta={0: 1.0}, weights={0: 0.6, 1: 6.0})


def two_route_limit_flow(lam0: float) -> np.ndarray:
    """Closed-form limit flow of the two-route fixture.

    Root of 12 f1^2 + (11 - 12 lam) f1 - lam = 0 below total capacity 3/2,
    both links pinned at 3/4 above.  (Derived independently from the
    stationary condition lam * G(mu^-1(f)) = f; see test_dynamics for the
    numeric re-derivation.)
    """
    if lam0 >= 1.5:
        return np.array([0.75, 0.75])
    d = 12.0 * lam0 - 11.0
    f1 = (d + math.sqrt(d * d + 48.0 * lam0)) / 24.0
    return np.array([f1, lam0 - f1])


@pytest.fixture
def two_route():
    """(topology, network, policy) of the two parallel-link fixture."""
    net = two_route_network()
    return net.topology, net, two_route_policy(net.topology)


def diamond_network():
    topo = NetworkTopology(5, [(0, 0, 1), (1, 0, 2), (2, 1, 2), (3, 1, 3), (4, 2, 3), (5, 3, 4)])
    fns = {
        0: ExponentialFlow(1.0, 1.0),
        1: ExponentialFlow(1.0, 1.0),
        2: ExponentialFlow(1.0, 0.5),
        3: ExponentialFlow(1.0, 0.8),
        4: ExponentialFlow(1.0, 1.2),
        5: ExponentialFlow(1.0, 1.6),
    }
    return FlowNetwork(topo, fns)


def diamond_policy(topo):
    return LogitPolicy(
        topo,
        eta={0: 1.0, 1: 1.0, 2: 1.0, 3: 1.0},
        weights={0: 1.0, 1: 1.5, 2: 1.0, 3: 2.0, 4: 1.0, 5: 1.0},
    )


DIAMOND_MIN_CUT = 1.6  # cut {5}: brute-forced in test_topology


@pytest.fixture
def diamond():
    """(topology, network, policy) of the 5-node diamond fixture, C = 1.6."""
    net = diamond_network()
    return net.topology, net, diamond_policy(net.topology)


def chain_network():
    topo = NetworkTopology(3, [(0, 0, 1), (1, 1, 2)])
    return FlowNetwork(topo, {0: ExponentialFlow(1.0, 2.0), 1: ExponentialFlow(1.0, 1.0)})


@pytest.fixture
def chain():
    net = chain_network()
    policy = LogitPolicy(net.topology, eta={0: 1.0, 1: 1.0}, weights={0: 1.0, 1: 1.0})
    return net.topology, net, policy


def random_dag(rng, max_nodes: int = 8):
    """Random valid topology: one origin, one destination, all nodes reach it.

    Built in canonical order (every node gets an incoming link from below
    and an outgoing link above), plus a few extra links and occasionally a
    parallel duplicate.
    """
    n = int(rng.integers(3, max_nodes + 1))
    links = []
    lid = 0
    for v in range(1, n):
        links.append((lid, int(rng.integers(0, v)), v))
        lid += 1
    for v in range(n - 1):
        if not any(t == v for (_, t, _) in links):
            links.append((lid, v, int(rng.integers(v + 1, n))))
            lid += 1
    for _ in range(int(rng.integers(0, n))):
        t = int(rng.integers(0, n - 1))
        links.append((lid, t, int(rng.integers(t + 1, n))))
        lid += 1
    if rng.random() < 0.5:
        _, t, h = links[int(rng.integers(len(links)))]
        links.append((lid, t, h))
    return NetworkTopology(n, links)


def random_exponential_network(rng, max_nodes: int = 8, cap_range=(0.1, 5.0)):
    topo = random_dag(rng, max_nodes)
    fns = {
        l.id: ExponentialFlow(float(rng.uniform(0.5, 2.0)), float(rng.uniform(*cap_range)))
        for l in topo.links
    }
    return FlowNetwork(topo, fns)


def uniform_logit_policy(topo, rng=None, eta: float = 1.0):
    weights = {lid: 1.0 for lid in topo.link_ids}
    if rng is not None:
        weights = {lid: float(rng.uniform(0.5, 2.0)) for lid in topo.link_ids}
    return LogitPolicy(topo, eta={v: eta for v in range(topo.num_nodes) if topo.outgoing[v]},
                       weights=weights)
