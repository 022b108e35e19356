"""Adversarial capacity attacks and weak-resilience estimation.

The adversary replaces flow functions with pointwise-smaller ones; the
defender's routing policy is unaware and reacts only through the densities
it observes.  The benchmark is the min-cut capacity C: scaling a minimal
cut down far enough defeats any routing policy with a perturbation of
magnitude C - alpha * inflow / 2, while locally responsive strictly
positive policies survive (keep a positive outflow trickle) under every
scaling attack of magnitude bounded away from C.  The estimator brackets
the critical magnitude between the largest perturbation verified harmless
and the smallest verified fatal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import (
    SimulationConfig,
    alpha_transfer_estimate,
    default_dt,
    network_limit_flow,
    simulate,
)
from .flows import FlowNetwork, PerturbationSpec
from .routing import RoutingPolicy, check_property_a, check_property_b
from .topology import min_cut_capacity

__all__ = [
    "AttackScenario",
    "AttackOutcome",
    "AlphaSweepPoint",
    "ResilienceReport",
    "cut_attack",
    "evaluate_attack",
    "estimate_weak_resilience",
    "require_locally_responsive",
    "sample_scaling_perturbations",
    "initial_densities",
]


@dataclass(frozen=True)
class AttackScenario:
    """A perturbation aimed at a running network, judged at transfer level alpha."""

    network: FlowNetwork
    policy: RoutingPolicy
    inflow: float
    perturbation: PerturbationSpec
    alpha: float
    theta_max: float = math.inf

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if self.perturbation.stretching > self.theta_max + 1e-12:
            raise ValueError(
                f"perturbation stretching {self.perturbation.stretching} exceeds budget {self.theta_max}"
            )


@dataclass(frozen=True)
class AttackOutcome:
    defeated: bool
    tail_min: float
    inconclusive: bool
    magnitude: float


@dataclass(frozen=True)
class AlphaSweepPoint:
    alpha: float
    defeating_delta: float
    defeating_eps: float
    preserved_delta: float
    evaluations: int


@dataclass
class ResilienceReport:
    min_cut: float
    witness_cut: tuple
    alpha_sweep: list
    preserved_delta_max: float
    samples: list
    seed: int
    inflow: float

    @property
    def bracket(self):
        """(largest delta verified preserved, smallest delta verified defeating).

        The defeating end is taken at the smallest alpha swept: the critical
        magnitude is nonincreasing in alpha, so the deepest sweep point is
        the best available stand-in for the alpha -> 0 limit.
        """
        deepest = min(self.alpha_sweep, key=lambda p: p.alpha)
        return (self.preserved_delta_max, deepest.defeating_delta)

    def to_dict(self) -> dict:
        lo, hi = self.bracket
        return {
            "min_cut": self.min_cut,
            "witness_cut": list(self.witness_cut),
            "inflow": self.inflow,
            "alpha_sweep": [
                {
                    "alpha": p.alpha,
                    "defeating_delta": p.defeating_delta,
                    "defeating_eps": p.defeating_eps,
                    "preserved_delta": p.preserved_delta,
                    "evaluations": p.evaluations,
                }
                for p in self.alpha_sweep
            ],
            "preserved_delta_max": self.preserved_delta_max,
            "bracket": [lo, hi],
            "samples": self.samples,
            "seed": self.seed,
        }


def cut_attack(network: FlowNetwork, alpha: float, inflow: float) -> PerturbationSpec:
    """Scale every link of a minimal cut by alpha * inflow / (2 C).

    The resulting magnitude is C - alpha * inflow / 2 and, on exponential
    links, the attack does not move any median density (stretching 1).
    By the cut argument the perturbed network cannot alpha-transfer.
    """
    if inflow <= 0:
        raise ValueError("cut_attack needs a positive inflow")
    if not 0 < alpha <= 1:
        raise ValueError("alpha must be in (0, 1]")
    capacity, cut = min_cut_capacity(network.topology, network.capacities())
    eps = alpha * inflow / (2.0 * capacity)
    if eps >= 1:
        raise ValueError("alpha * inflow >= 2 * min-cut: scaling attack degenerates")
    return PerturbationSpec.scaling(network, {lid: eps for lid in sorted(cut.cut_links)})


def initial_densities(network: FlowNetwork, f_init) -> np.ndarray:
    """Densities realizing the pre-attack flow under the unperturbed functions.

    The attack changes flow functions, not the mass already on the links,
    so the perturbed run starts from the unperturbed preimage of f_init.
    """
    topo = network.topology
    rho0 = []
    for i, lid in enumerate(topo.link_ids):
        ff = network.flow_functions[lid]
        f = float(f_init[i])
        if f >= ff.f_max:
            raise ValueError(
                f"initial flow on link {lid} sits at capacity; no finite initial density"
            )
        rho0.append(ff.inverse(f))
    return np.array(rho0)


def evaluate_attack(scenario: AttackScenario, config: SimulationConfig | None = None,
                    f_init=None, transfer_tol: float | None = None) -> AttackOutcome:
    """Simulate the perturbed network and judge alpha-transfer on the tail.

    The run starts from the unperturbed network's limit flow (or an
    explicit interior ``f_init``) and keeps the time step implied by the
    unperturbed rates, which dominate the perturbed ones.
    """
    network, policy = scenario.network, scenario.policy
    if config is None:
        config = SimulationConfig(inflow=scenario.inflow)
    elif config.inflow != scenario.inflow:
        config = replace(config, inflow=scenario.inflow)
    if config.dt is None:
        config = replace(config, dt=default_dt(network))
    if f_init is None:
        base_limit = network_limit_flow(network, policy, scenario.inflow)
        if any(base_limit.saturated.values()):
            raise ValueError(
                "unperturbed limit flow touches capacity; supply an interior f_init"
            )
        f_init = base_limit.flow_vector(network.topology)
    rho0 = initial_densities(network, f_init)
    traj = simulate(network.perturbed(scenario.perturbation), policy, config, rho0)
    est = alpha_transfer_estimate(traj, scenario.alpha, scenario.inflow,
                                  config.tail_fraction, tol=transfer_tol)
    return AttackOutcome(
        defeated=not est.transferring,
        tail_min=est.tail_min,
        inconclusive=est.inconclusive,
        magnitude=scenario.perturbation.magnitude,
    )


def require_locally_responsive(policy: RoutingPolicy, network: FlowNetwork,
                               n_samples: int = 200, seed: int = 0):
    """Raise unless sampled checks support the locally responsive properties
    and strictly positive splits that the resilience guarantee assumes."""
    topo = network.topology
    rng = np.random.default_rng(seed)
    for v in range(topo.num_nodes):
        links = topo.outgoing[v]
        if not links:
            continue
        rep = check_property_a(policy, v, n_samples=n_samples, rng=rng)
        if not rep.passed:
            raise ValueError(f"node {v}: routing policy violates the cooperative "
                             f"cross-partial property: {rep.detail['violations'][:1]}")
        probe = 10.0 ** rng.uniform(-2, 2, size=(32, len(links)))
        if min(float(policy.route(v, p).min()) for p in probe) <= 0.0:
            raise ValueError(f"node {v}: routing split is not strictly positive")
        if len(links) >= 2:
            rep_b = check_property_b(policy, v, subset=links[:1])
            if not rep_b.passed:
                raise ValueError(f"node {v}: congested links are not abandoned "
                                 f"(limit-split property fails): {rep_b.detail}")


def sample_scaling_perturbations(network: FlowNetwork, budget: float, n_samples: int,
                                 seed: int = 0):
    """Random per-link scaling attacks of total magnitude at most ``budget``.

    The first sample is the deterministic worst shape (the whole budget
    spread uniformly over a minimal cut); the rest pick random link subsets
    with random reduction weights summing to a random fraction of the
    budget.  Scaling factors are floored at 1e-3 so every sample stays an
    admissible (strictly increasing) replacement.
    """
    rng = np.random.default_rng(seed)
    topo = network.topology
    capacity, cut = min_cut_capacity(topo, network.capacities())
    cut_links = sorted(cut.cut_links)
    all_ids = list(topo.link_ids)
    caps = network.capacities()
    if budget >= capacity:
        raise ValueError("budget must stay below the min-cut capacity")
    specs = []
    for i in range(n_samples):
        if i == 0:
            factors = {lid: 1.0 - budget / capacity for lid in cut_links}
        else:
            target = budget * rng.uniform(0.3, 1.0)
            chosen = [lid for lid in all_ids if rng.random() < 0.5] \
                or [all_ids[int(rng.integers(len(all_ids)))]]
            weights = rng.uniform(0.2, 1.0, size=len(chosen))
            weights *= target / weights.sum()
            factors = {lid: max(1.0 - reduction / caps[lid], 1e-3)
                       for lid, reduction in zip(chosen, weights)}
        specs.append(PerturbationSpec.scaling(network, factors))
    return specs


def _sample_worker(payload):
    network, policy, inflow, spec, alpha_floor, config, f_init = payload
    scenario = AttackScenario(network, policy, inflow, spec, alpha_floor)
    return evaluate_attack(scenario, config, f_init=f_init, transfer_tol=0.0)


def estimate_weak_resilience(network: FlowNetwork, policy: RoutingPolicy, inflow: float,
                             config: SimulationConfig | None = None,
                             alphas=(0.5, 0.2, 0.1, 0.05), n_samples: int = 50,
                             seed: int = 0, margin: float = 0.1,
                             alpha_floor: float = 1e-3,
                             bisect_tol_frac: float = 0.01,
                             jobs: int = 1) -> ResilienceReport:
    """Bracket the weak-resilience magnitude against the min-cut capacity.

    Upper side: for each alpha (swept downward), bisect the uniform scaling
    factor on a minimal cut for the smallest magnitude that defeats
    alpha-transfer, to within ``bisect_tol_frac`` of C.  Lower side: random
    scaling perturbations of magnitude up to (1 - margin) C, each of which
    must keep the tail outflow at or above ``alpha_floor * inflow``
    (checked without slack).  The sample evaluations are independent
    simulations and fan out over ``jobs`` worker processes; results are
    aggregated in sampling order, so the report is deterministic for a
    fixed seed regardless of ``jobs``.
    """
    require_locally_responsive(policy, network, seed=seed)
    if inflow <= 0:
        raise ValueError("resilience estimation needs a positive inflow")
    topo = network.topology
    capacity, cut = min_cut_capacity(topo, network.capacities())
    cut_links = sorted(cut.cut_links)
    if config is None:
        config = SimulationConfig(inflow=inflow)
    base_limit = network_limit_flow(network, policy, inflow)
    if any(base_limit.saturated.values()):
        raise ValueError("inflow saturates the unperturbed network; pick inflow < C")
    f_init = base_limit.flow_vector(topo)

    def run(spec: PerturbationSpec, alpha: float, tol):
        scenario = AttackScenario(network, policy, inflow, spec, alpha)
        return evaluate_attack(scenario, config, f_init=f_init, transfer_tol=tol)

    def uniform_cut_spec(eps: float) -> PerturbationSpec:
        return PerturbationSpec.scaling(network, {lid: eps for lid in cut_links})

    delta_tol = bisect_tol_frac * capacity
    sweep = []
    for alpha in sorted(alphas, reverse=True):
        evaluations = 0
        eps_lo = alpha * inflow / (2.0 * capacity)  # the provably fatal scaling
        while True:
            out = run(uniform_cut_spec(eps_lo), alpha, None)
            evaluations += 1
            if out.defeated:
                break
            eps_lo *= 0.5  # should not happen; keep the bracket honest
            if eps_lo < 1e-12:
                raise RuntimeError("failed to find a defeating attack below min-cut scale")
        lo_delta = out.magnitude
        eps_hi = 1.0  # identity: magnitude 0, trivially preserved
        while (eps_hi - eps_lo) * capacity > delta_tol:
            mid = 0.5 * (eps_lo + eps_hi)
            out_mid = run(uniform_cut_spec(mid), alpha, None)
            evaluations += 1
            if out_mid.defeated:
                eps_lo, lo_delta = mid, out_mid.magnitude
            else:
                eps_hi = mid
        preserved_delta = (1.0 - eps_hi) * capacity
        sweep.append(AlphaSweepPoint(alpha=alpha, defeating_delta=lo_delta,
                                     defeating_eps=eps_lo, preserved_delta=preserved_delta,
                                     evaluations=evaluations))

    samples = []
    preserved_max = 0.0
    budget = (1.0 - margin) * capacity
    specs = sample_scaling_perturbations(network, budget, n_samples, seed=seed)
    payloads = [(network, policy, inflow, spec, alpha_floor, config, f_init) for spec in specs]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_sample_worker, payloads))
    else:
        outcomes = [_sample_worker(p) for p in payloads]
    for spec, out in zip(specs, outcomes):
        preserved = not out.defeated
        samples.append({
            "delta": spec.magnitude,
            "tail_min": out.tail_min,
            "preserved": preserved,
            "links": sorted(spec.replacements),
        })
        if preserved:
            preserved_max = max(preserved_max, spec.magnitude)
    return ResilienceReport(
        min_cut=capacity,
        witness_cut=tuple(cut_links),
        alpha_sweep=sweep,
        preserved_delta_max=preserved_max,
        samples=samples,
        seed=seed,
        inflow=inflow,
    )
