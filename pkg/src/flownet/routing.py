"""Distributed routing policies: per-node maps from local densities to flow splits.

A policy assigns every non-destination node a differentiable map from the
densities on its outgoing links to a probability vector over those links.
The built-in family is the logit split
``G_e = a_e exp(-eta * rho_e) / sum_j a_j exp(-eta * rho_j)``,
which shifts flow away from congested links.

The module also houses the checkable "locally responsive" properties:

* property (a): nonnegative cross-partials (raising one link's density
  never lowers the share of the others);
* property (b): links whose density blows up are abandoned, the surviving
  shares converging to a limit split over the remaining links;
* the cooperative gap ``sum_e sgn(sigma_e - zeta_e) (G_e(sigma) - G_e(zeta))``,
  which is nonpositive for any policy satisfying property (a).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .topology import NetworkTopology

__all__ = [
    "RoutingPolicy",
    "LogitPolicy",
    "GenericPolicy",
    "PropertyReport",
    "finite_difference_jacobian",
    "check_property_a",
    "check_property_b",
    "cooperative_gap",
]


def finite_difference_jacobian(fn, x, rel_step: float = 1e-6) -> np.ndarray:
    """Central differences; entry [e, j] approximates d fn_j / d x_e."""
    x = np.asarray(x, dtype=float)
    k = x.size
    out = np.empty((k, k))
    for e in range(k):
        h = rel_step * max(1.0, abs(x[e]))
        up, dn = x.copy(), x.copy()
        up[e] += h
        dn[e] = max(dn[e] - h, 0.0)
        out[e] = (np.asarray(fn(up)) - np.asarray(fn(dn))) / (up[e] - dn[e])
    return out


class RoutingPolicy:
    """Base class; concrete policies fill in ``route``."""

    def __init__(self, topology: NetworkTopology):
        self.topology = topology
        self._index_of = {lid: i for i, lid in enumerate(topology.link_ids)}

    def outgoing_links(self, v: int):
        links = self.topology.outgoing[v]
        if not links:
            raise ValueError(f"node {v} is the destination; it has no outgoing links to route over")
        return links

    def route(self, v: int, rho_v) -> np.ndarray:
        """Split the inflow of node v given its local density vector."""
        raise NotImplementedError

    def route_from_global(self, v: int, rho) -> np.ndarray:
        """Route using the full density vector (ordered like ``topology.links``).

        Only the coordinates of v's outgoing links are read; this is the
        distributedness of the policy.
        """
        rho = np.asarray(rho, dtype=float)
        local = rho[[self._index_of[lid] for lid in self.outgoing_links(v)]]
        return self.route(v, local)

    def jacobian(self, v: int, rho_v) -> np.ndarray:
        """Matrix [e, j] = d G_j / d rho_e (rows sum to 0 on the simplex)."""
        return finite_difference_jacobian(lambda x: self.route(v, x), rho_v)


class LogitPolicy(RoutingPolicy):
    """Logit split with per-link weights a_e > 0 and per-node sensitivity eta.

    eta > 0 is the locally responsive regime.  eta = 0 (a constant split)
    and eta < 0 (a congestion-seeking split) are accepted so that the
    property checks have something to reject; they fail property (b),
    respectively property (a).
    """

    def __init__(self, topology: NetworkTopology, eta: dict, weights: dict):
        super().__init__(topology)
        for v in range(topology.num_nodes):
            if topology.outgoing[v] and v not in eta:
                raise ValueError(f"missing eta for non-destination node {v}")
        for lid in topology.link_ids:
            if lid not in weights:
                raise ValueError(f"missing logit weight for link {lid}")
            if not weights[lid] > 0:
                raise ValueError(f"logit weight of link {lid} must be positive")
        self.eta = dict(eta)
        self.weights = dict(weights)
        self._a = {v: np.array([weights[lid] for lid in topology.outgoing[v]])
                   for v in range(topology.num_nodes) if topology.outgoing[v]}

    def route(self, v: int, rho_v) -> np.ndarray:
        self.outgoing_links(v)
        a = self._a[v]
        rho = np.asarray(rho_v, dtype=float)
        if rho.shape != a.shape:
            raise ValueError(f"node {v} expects {a.size} local densities, got {rho.size}")
        if np.any(rho < 0):
            raise ValueError("negative density")
        ex = -self.eta[v] * rho
        ex -= ex.max()  # shift for overflow/underflow safety; split is shift-invariant
        w = a * np.exp(ex)
        return w / w.sum()

    def jacobian(self, v: int, rho_v) -> np.ndarray:
        g = self.route(v, rho_v)
        eta = self.eta[v]
        jac = eta * np.outer(g, g)
        np.fill_diagonal(jac, -eta * g * (1.0 - g))
        return jac


class GenericPolicy(RoutingPolicy):
    """Wraps arbitrary per-node callables ``rho_v -> simplex vector``."""

    def __init__(self, topology: NetworkTopology, route_fns: dict):
        super().__init__(topology)
        self.route_fns = dict(route_fns)

    def route(self, v: int, rho_v) -> np.ndarray:
        self.outgoing_links(v)
        return np.asarray(self.route_fns[v](np.asarray(rho_v, dtype=float)), dtype=float)


@dataclass
class PropertyReport:
    passed: bool
    detail: dict

    def __bool__(self):
        return self.passed


def _sample_densities(k: int, n_samples: int, rng) -> np.ndarray:
    """Mixed-scale samples: log-uniform over [1e-2, 1e2] with zeros sprinkled in."""
    rho = 10.0 ** rng.uniform(-2, 2, size=(n_samples, k))
    rho[rng.random((n_samples, k)) < 0.1] = 0.0
    return rho


def check_property_a(policy: RoutingPolicy, v: int, n_samples: int = 1000,
                     rng=None, tol: float = 1e-9) -> PropertyReport:
    """Sample local densities and require all cross-partials >= -tol."""
    rng = np.random.default_rng(rng)
    k = len(policy.outgoing_links(v))
    worst = np.inf
    violations = []
    off_mask = ~np.eye(k, dtype=bool)
    for rho in _sample_densities(k, n_samples, rng):
        off = policy.jacobian(v, rho)[off_mask]
        m = float(off.min()) if off.size else 0.0
        worst = min(worst, m)
        if m < -tol and len(violations) < 10:
            violations.append({"rho": rho.tolist(), "min_cross_partial": m})
    return PropertyReport(not violations, {"min_cross_partial": worst, "violations": violations})


def check_property_b(policy: RoutingPolicy, v: int, subset, rho_subset=None,
                     mass_tol: float = 1e-4, cauchy_tol: float = 1e-5) -> PropertyReport:
    """Drive densities outside ``subset`` to 10^2..10^6 and watch the split.

    The share outside the subset must decay below ``mass_tol`` and the
    share inside must settle (successive escalations Cauchy within
    ``cauchy_tol``).  The limit split itself is reported but not compared
    against anything: for a generic policy only its existence is claimed.
    """
    links = policy.outgoing_links(v)
    subset = tuple(subset)
    if not (0 < len(subset) < len(links)) or not set(subset) <= set(links):
        raise ValueError("subset must be a nonempty proper subset of the node's outgoing links")
    inside = np.array([lid in subset for lid in links])
    rho = np.zeros(len(links))
    if rho_subset is not None:
        rho[inside] = np.asarray(rho_subset, dtype=float)
    limits = []
    off_mass = []
    for k in range(2, 7):
        rho[~inside] = 10.0 ** k
        g = policy.route(v, rho)
        off_mass.append(float(g[~inside].sum()))
        limits.append(g[inside])
    gaps = [float(np.abs(limits[i + 1] - limits[i]).max()) for i in range(len(limits) - 1)]
    passed = off_mass[-1] < mass_tol and max(gaps) < cauchy_tol
    return PropertyReport(passed, {
        "off_subset_mass": off_mass[-1],
        "cauchy_gap": max(gaps),
        "limit_split": limits[-1].tolist(),
    })


def cooperative_gap(policy: RoutingPolicy, v: int, sigma, varsigma) -> float:
    """sum_e sgn(sigma_e - zeta_e) (G_e(sigma) - G_e(zeta)); sgn(0) = 0.

    Nonpositive for every policy with nonnegative cross-partials.
    """
    sigma = np.asarray(sigma, dtype=float)
    varsigma = np.asarray(varsigma, dtype=float)
    signs = np.sign(sigma - varsigma)
    return float(np.dot(signs, policy.route(v, sigma) - policy.route(v, varsigma)))
